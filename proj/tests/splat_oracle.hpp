#pragma once

// Independent scalar reference for the compositing equation: pixel-major,
// no bounding boxes, no shared code with the rasterizer internals. Used by
// both the unit tests and the acceptance suite.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "wsd/sh.hpp"
#include "wsd/splat.hpp"

namespace wsd::testutil {

struct OracleImage {
    int h = 0, w = 0;
    std::vector<double> rgb;      // h*w*3
    std::vector<double> opacity;  // h*w
};

inline OracleImage oracle_render(const std::vector<wsd::Gaussian>& gs, const wsd::Camera& cam,
                                 const wsd::Vec3& bg) {
    using wsd::Vec3;
    const int H = cam.height, W = cam.width;
    OracleImage img;
    img.h = H;
    img.w = W;
    img.rgb.assign(static_cast<size_t>(H) * W * 3, 0.0);
    img.opacity.assign(static_cast<size_t>(H) * W, 0.0);

    struct P {
        double mx, my, depth;
        double ia, ib, ic;  // conic
        double alpha;
        double color[3];
    };
    std::vector<P> ps(gs.size());
    Vec3 dir = cam.forward_world().normalized();
    for (size_t i = 0; i < gs.size(); ++i) {
        const wsd::Gaussian& g = gs[i];
        // covariance straight from the definition
        wsd::Mat3 r = wsd::rotation_from_quat(g.rotation.normalized());
        double cov[3][3] = {{0}};
        double s2[3] = {static_cast<double>(g.scale.x) * g.scale.x,
                        static_cast<double>(g.scale.y) * g.scale.y,
                        static_cast<double>(g.scale.z) * g.scale.z};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                for (int k = 0; k < 3; ++k) cov[a][b] += static_cast<double>(r.at(a, k)) * s2[k] * r.at(b, k);
        // world->camera
        double rc[3][3];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) rc[a][b] = cam.rotation.at(a, b);
        double m[3][3] = {{0}};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double acc = 0;
                for (int k = 0; k < 3; ++k)
                    for (int l = 0; l < 3; ++l) acc += rc[a][k] * cov[k][l] * rc[b][l];
                m[a][b] = acc;
            }
        double sp = static_cast<double>(cam.pixel_scale) * cam.pixel_scale;
        double a2 = sp * m[0][0] + wsd::kCovLowPass;
        double b2 = sp * m[0][1];
        double c2 = sp * m[1][1] + wsd::kCovLowPass;
        double det = a2 * c2 - b2 * b2;
        P& p = ps[i];
        p.ia = c2 / det;
        p.ib = -b2 / det;
        p.ic = a2 / det;
        double cx = cam.rotation.at(0, 0) * g.position.x + cam.rotation.at(0, 1) * g.position.y +
                    cam.rotation.at(0, 2) * g.position.z + cam.translation.x;
        double cy = cam.rotation.at(1, 0) * g.position.x + cam.rotation.at(1, 1) * g.position.y +
                    cam.rotation.at(1, 2) * g.position.z + cam.translation.y;
        p.depth = cam.rotation.at(2, 0) * g.position.x + cam.rotation.at(2, 1) * g.position.y +
                  cam.rotation.at(2, 2) * g.position.z + cam.translation.z;
        p.mx = cam.pixel_scale * cx + 0.5 * W;
        p.my = cam.pixel_scale * cy + 0.5 * H;
        p.alpha = g.opacity;
        auto basis = wsd::sh_basis(dir);
        for (int c = 0; c < 3; ++c) {
            double acc = 0.5;
            for (int b = 0; b < wsd::kShBasisCount; ++b) acc += basis[static_cast<size_t>(b)] * g.sh[b * 3 + c];
            p.color[c] = std::clamp(acc, 0.0, 1.0);
        }
    }

    std::vector<size_t> order(gs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (ps[a].depth != ps[b].depth) return ps[a].depth < ps[b].depth;
        return a < b;
    });

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double t = 1.0, col[3] = {0, 0, 0};
            for (size_t oi : order) {
                const P& p = ps[oi];
                double dx = (x + 0.5) - p.mx, dy = (y + 0.5) - p.my;
                double power = -0.5 * (p.ia * dx * dx + 2.0 * p.ib * dx * dy + p.ic * dy * dy);
                double sigma = p.alpha * std::exp(power);
                if (sigma < 1.0 / 255.0) continue;
                sigma = std::min(sigma, 0.999);
                for (int c = 0; c < 3; ++c) col[c] += p.color[c] * sigma * t;
                t *= 1.0 - sigma;
            }
            const double bgc[3] = {bg.x, bg.y, bg.z};
            for (int c = 0; c < 3; ++c)
                img.rgb[(static_cast<size_t>(y) * W + x) * 3 + static_cast<size_t>(c)] = col[c] + bgc[c] * t;
            img.opacity[static_cast<size_t>(y) * W + x] = 1.0 - t;
        }
    }
    return img;
}

// Random scene with depths separated and colors away from the clamp, so the
// finite-difference checks stay off non-differentiable boundaries.
inline std::vector<wsd::Gaussian> random_scene(wsd::Rng& rng, int count) {
    std::vector<wsd::Gaussian> gs(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        wsd::Gaussian& g = gs[static_cast<size_t>(i)];
        g.position = {static_cast<float>(rng.uniform(-0.8, 0.8)),
                      static_cast<float>(rng.uniform(-0.8, 0.8)),
                      static_cast<float>(0.4 * i + rng.uniform(0.0, 0.2))};
        g.scale = {static_cast<float>(rng.uniform(0.1, 0.4)),
                   static_cast<float>(rng.uniform(0.1, 0.4)),
                   static_cast<float>(rng.uniform(0.1, 0.4))};
        wsd::Vec3 aa{static_cast<float>(rng.uniform(-1.5, 1.5)),
                     static_cast<float>(rng.uniform(-1.5, 1.5)),
                     static_cast<float>(rng.uniform(-1.5, 1.5))};
        g.rotation = wsd::quat_from_axis_angle(aa);
        g.opacity = static_cast<float>(rng.uniform(0.3, 0.75));
        for (int b = 0; b < wsd::kShBasisCount; ++b)
            for (int c = 0; c < 3; ++c)
                g.sh[b * 3 + c] = static_cast<float>(
                    b == 0 ? rng.uniform(-0.3, 0.3) : rng.uniform(-0.02, 0.02));
    }
    return gs;
}

}  // namespace wsd::testutil
