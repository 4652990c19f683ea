#pragma once

#include <cmath>

#include "wsd/tensor.hpp"

namespace wsd {

struct Vec3 {
    float x = 0, y = 0, z = 0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    float norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 normalized() const {
        float n = norm();
        return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
    }
};

// Row-major 3x3
struct Mat3 {
    float m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    static Mat3 identity() { return {}; }
    float& at(int r, int c) { return m[r * 3 + c]; }
    float at(int r, int c) const { return m[r * 3 + c]; }
    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                float acc = 0;
                for (int k = 0; k < 3; ++k) acc += at(i, k) * o.at(k, j);
                r.at(i, j) = acc;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
        return r;
    }
    Vec3 row(int i) const { return {m[i * 3], m[i * 3 + 1], m[i * 3 + 2]}; }
};

struct Quat {
    float w = 1, x = 0, y = 0, z = 0;
    float norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const {
        float n = norm();
        if (n <= 0) throw Error("quaternion: zero norm");
        return {w / n, x / n, y / n, z / n};
    }
    // Hamilton product: this applied after o
    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
    }
};

inline Mat3 rotation_from_quat(const Quat& qn) {
    const float w = qn.w, x = qn.x, y = qn.y, z = qn.z;
    Mat3 r;
    r.m[0] = 1 - 2 * (y * y + z * z);
    r.m[1] = 2 * (x * y - w * z);
    r.m[2] = 2 * (x * z + w * y);
    r.m[3] = 2 * (x * y + w * z);
    r.m[4] = 1 - 2 * (x * x + z * z);
    r.m[5] = 2 * (y * z - w * x);
    r.m[6] = 2 * (x * z - w * y);
    r.m[7] = 2 * (y * z + w * x);
    r.m[8] = 1 - 2 * (x * x + y * y);
    return r;
}

inline Quat quat_from_axis_angle(const Vec3& aa) {
    float theta = aa.norm();
    if (theta < 1e-8f) return {1.0f, 0.5f * aa.x, 0.5f * aa.y, 0.5f * aa.z};
    float half = 0.5f * theta;
    float s = std::sin(half) / theta;
    return {std::cos(half), aa.x * s, aa.y * s, aa.z * s};
}

inline Mat3 rotation_from_axis_angle(const Vec3& aa) {
    return rotation_from_quat(quat_from_axis_angle(aa).normalized());
}

// Rigid transform p -> R*p + t
struct Transform {
    Mat3 rot;
    Vec3 trans;
    Vec3 apply(const Vec3& p) const { return rot * p + trans; }
    Transform then_after(const Transform& inner) const {
        // this ∘ inner
        return {rot * inner.rot, rot * inner.trans + trans};
    }
};

}  // namespace wsd
