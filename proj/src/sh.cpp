#include "wsd/sh.hpp"

#include <algorithm>

namespace wsd {

namespace {
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};
}  // namespace

std::array<double, kShBasisCount> sh_basis(const Vec3& dir) {
    const double x = dir.x, y = dir.y, z = dir.z;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    std::array<double, kShBasisCount> b{};
    b[0] = kShDc;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    b[4] = kC2[0] * xy;
    b[5] = kC2[1] * yz;
    b[6] = kC2[2] * (2.0 * zz - xx - yy);
    b[7] = kC2[3] * xz;
    b[8] = kC2[4] * (xx - yy);
    b[9] = kC3[0] * y * (3.0 * xx - yy);
    b[10] = kC3[1] * xy * z;
    b[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    b[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    b[14] = kC3[5] * z * (xx - yy);
    b[15] = kC3[6] * x * (xx - yy);
    return b;
}

Vec3 eval_sh(const float* h48, const Vec3& dir) {
    auto basis = sh_basis(dir);
    Vec3 rgb;
    float* out = &rgb.x;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int b = 0; b < kShBasisCount; ++b) acc += basis[static_cast<size_t>(b)] * h48[b * 3 + c];
        out[c] = static_cast<float>(std::clamp(acc + 0.5, 0.0, 1.0));
    }
    return rgb;
}

}  // namespace wsd
