#include "wsd/splat.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "wsd/sh.hpp"

#include <fstream>

#include <json.hpp>

namespace wsd {

void Camera::validate() const {
    Mat3 rtr = rotation.transposed() * rotation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            float want = i == j ? 1.0f : 0.0f;
            if (std::abs(rtr.at(i, j) - want) > 1e-5f)
                throw Error("camera: rotation is not orthonormal");
        }
    if (pixel_scale <= 0 || height <= 0 || width <= 0)
        throw Error("camera: invalid pixel scale or image size");
}

Mat3 build_covariance(const Vec3& scale, const Quat& q) {
    if (q.norm() <= 0) throw Error("build_covariance: zero-norm quaternion");
    Mat3 r = rotation_from_quat(q.normalized());
    Mat3 d;
    d.m[0] = scale.x * scale.x;
    d.m[4] = scale.y * scale.y;
    d.m[8] = scale.z * scale.z;
    return r * d * r.transposed();
}

Projected project(const Gaussian& g, const Camera& cam) {
    Mat3 cov = build_covariance(g.scale, g.rotation);
    Mat3 m = cam.rotation * cov * cam.rotation.transposed();
    Vec3 pc = cam.to_camera(g.position);
    const float s2 = cam.pixel_scale * cam.pixel_scale;
    Projected out;
    out.mean_px[0] = cam.pixel_scale * pc.x + 0.5f * static_cast<float>(cam.width);
    out.mean_px[1] = cam.pixel_scale * pc.y + 0.5f * static_cast<float>(cam.height);
    out.cov_px[0] = s2 * m.at(0, 0);
    out.cov_px[1] = s2 * m.at(0, 1);
    out.cov_px[2] = s2 * m.at(1, 1);
    out.depth = pc.z;
    return out;
}

Gaussian unpack_gaussian(const float* r) {
    Gaussian g;
    g.position = {r[0], r[1], r[2]};
    g.scale = {r[3], r[4], r[5]};
    g.rotation = {r[6], r[7], r[8], r[9]};
    g.opacity = r[10];
    std::copy(r + 11, r + 59, g.sh);
    return g;
}

void pack_gaussian(const Gaussian& g, float* r) {
    r[0] = g.position.x;
    r[1] = g.position.y;
    r[2] = g.position.z;
    r[3] = g.scale.x;
    r[4] = g.scale.y;
    r[5] = g.scale.z;
    r[6] = g.rotation.w;
    r[7] = g.rotation.x;
    r[8] = g.rotation.y;
    r[9] = g.rotation.z;
    r[10] = g.opacity;
    std::copy(g.sh, g.sh + 48, r + 11);
}

namespace {

// All rasterizer-internal math runs in double; stored images are f32.
struct Frag {
    double qn[4];        // normalized quaternion (w,x,y,z)
    double qnorm = 1.0;  // original quaternion norm
    double rot[9];       // R(qn)
    double mx = 0, my = 0, depth = 0;
    double conic[3] = {0, 0, 0};  // inverse 2D covariance (xx, xy, yy)
    double cov2[3] = {0, 0, 0};   // low-passed 2D covariance
    double alpha = 0;
    double color[3] = {0, 0, 0};
    bool color_clamped[3] = {false, false, false};
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox, empty if x1<x0
};

struct Contrib {
    int gauss;     // original gaussian index
    double sigma;  // clamped density
};

struct RasterContext {
    int M = 0;
    std::vector<Frag> frags;
    std::vector<int> order;                   // depth-sorted gaussian indices
    std::vector<std::vector<Contrib>> pixels;  // row-major H*W, in depth order
    std::array<double, kShBasisCount> basis{};
    Camera cam;
    Vec3 bg;
};

void mul3(const double a[9], const double b[9], double out[9]) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
            out[i * 3 + j] = acc;
        }
}

void make_frag(const float* row, const Camera& cam, const std::array<double, kShBasisCount>& basis,
               Frag& f) {
    Gaussian g = unpack_gaussian(row);
    double qw = g.rotation.w, qx = g.rotation.x, qy = g.rotation.y, qz = g.rotation.z;
    f.qnorm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (f.qnorm <= 0) throw Error("rasterize: zero-norm quaternion");
    f.qn[0] = qw / f.qnorm;
    f.qn[1] = qx / f.qnorm;
    f.qn[2] = qy / f.qnorm;
    f.qn[3] = qz / f.qnorm;
    const double w = f.qn[0], x = f.qn[1], y = f.qn[2], z = f.qn[3];
    f.rot[0] = 1 - 2 * (y * y + z * z);
    f.rot[1] = 2 * (x * y - w * z);
    f.rot[2] = 2 * (x * z + w * y);
    f.rot[3] = 2 * (x * y + w * z);
    f.rot[4] = 1 - 2 * (x * x + z * z);
    f.rot[5] = 2 * (y * z - w * x);
    f.rot[6] = 2 * (x * z - w * y);
    f.rot[7] = 2 * (y * z + w * x);
    f.rot[8] = 1 - 2 * (x * x + y * y);

    // Sigma3 = R D R^T, then world->camera, then pixel scale + low-pass
    double d[9] = {0};
    d[0] = static_cast<double>(g.scale.x) * g.scale.x;
    d[4] = static_cast<double>(g.scale.y) * g.scale.y;
    d[8] = static_cast<double>(g.scale.z) * g.scale.z;
    double rc[9];
    for (int i = 0; i < 9; ++i) rc[i] = cam.rotation.m[i];
    double rd[9], rt[9], cov3[9];
    mul3(f.rot, d, rd);
    double rot_t[9] = {f.rot[0], f.rot[3], f.rot[6], f.rot[1], f.rot[4], f.rot[7],
                       f.rot[2], f.rot[5], f.rot[8]};
    mul3(rd, rot_t, cov3);
    double rc_t[9] = {rc[0], rc[3], rc[6], rc[1], rc[4], rc[7], rc[2], rc[5], rc[8]};
    double tmp[9];
    mul3(rc, cov3, tmp);
    mul3(tmp, rc_t, rt);

    const double ps = cam.pixel_scale;
    f.cov2[0] = ps * ps * rt[0] + kCovLowPass;
    f.cov2[1] = ps * ps * rt[1];
    f.cov2[2] = ps * ps * rt[4] + kCovLowPass;
    double det = f.cov2[0] * f.cov2[2] - f.cov2[1] * f.cov2[1];
    f.conic[0] = f.cov2[2] / det;
    f.conic[1] = -f.cov2[1] / det;
    f.conic[2] = f.cov2[0] / det;

    double px = rc[0] * g.position.x + rc[1] * g.position.y + rc[2] * g.position.z +
                cam.translation.x;
    double py = rc[3] * g.position.x + rc[4] * g.position.y + rc[5] * g.position.z +
                cam.translation.y;
    f.depth = rc[6] * g.position.x + rc[7] * g.position.y + rc[8] * g.position.z +
              cam.translation.z;
    f.mx = ps * px + 0.5 * cam.width;
    f.my = ps * py + 0.5 * cam.height;

    f.alpha = g.opacity;
    for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int b = 0; b < kShBasisCount; ++b)
            acc += basis[static_cast<size_t>(b)] * g.sh[b * 3 + c];
        acc += 0.5;
        f.color_clamped[c] = acc < 0.0 || acc > 1.0;
        f.color[c] = std::clamp(acc, 0.0, 1.0);
    }

    // pixels beyond the sigma cutoff cannot contribute; bbox from the largest
    // eigenvalue of the 2D covariance
    if (f.alpha * 255.0 <= 1.0) return;  // empty bbox
    double r2 = 2.0 * std::log(255.0 * f.alpha);
    double half_tr = 0.5 * (f.cov2[0] + f.cov2[2]);
    double disc = std::sqrt(std::max(0.0, half_tr * half_tr - det));
    double lmax = half_tr + disc;
    double radius = std::sqrt(r2 * lmax) + 1.0;
    f.x0 = std::max(0, static_cast<int>(std::floor(f.mx - radius)));
    f.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(f.mx + radius)));
    f.y0 = std::max(0, static_cast<int>(std::floor(f.my - radius)));
    f.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(f.my + radius)));
}

std::unique_ptr<RasterContext> rasterize_core(const float* rows, int M, const Camera& cam,
                                              const Vec3& bg, RenderOutput& out) {
    cam.validate();
    auto ctx = std::make_unique<RasterContext>();
    ctx->M = M;
    ctx->cam = cam;
    ctx->bg = bg;
    ctx->basis = sh_basis(cam.forward_world().normalized());
    ctx->frags.resize(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i)
        make_frag(rows + static_cast<int64_t>(i) * kGaussianParams, cam, ctx->basis,
                  ctx->frags[static_cast<size_t>(i)]);

    ctx->order.resize(static_cast<size_t>(M));
    std::iota(ctx->order.begin(), ctx->order.end(), 0);
    std::sort(ctx->order.begin(), ctx->order.end(), [&](int a, int b) {
        double da = ctx->frags[static_cast<size_t>(a)].depth;
        double db = ctx->frags[static_cast<size_t>(b)].depth;
        if (da != db) return da < db;
        return a < b;  // stable tie-break by index
    });

    const int H = cam.height, W = cam.width;
    ctx->pixels.assign(static_cast<size_t>(H) * W, {});
    for (int oi : ctx->order) {
        const Frag& f = ctx->frags[static_cast<size_t>(oi)];
        for (int y = f.y0; y <= f.y1; ++y) {
            double dy = (y + 0.5) - f.my;
            for (int x = f.x0; x <= f.x1; ++x) {
                double dx = (x + 0.5) - f.mx;
                double power =
                    -0.5 * (f.conic[0] * dx * dx + 2.0 * f.conic[1] * dx * dy + f.conic[2] * dy * dy);
                if (power > 0.0) continue;
                double sigma = f.alpha * std::exp(power);
                if (sigma < kSigmaCutoff) continue;
                sigma = std::min(sigma, static_cast<double>(kSigmaClamp));
                ctx->pixels[static_cast<size_t>(y) * W + x].push_back({oi, sigma});
            }
        }
    }

    out.rgb = Tensor::zeros({1, 3, H, W});
    out.opacity = Tensor::zeros({1, 1, H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const auto& lst = ctx->pixels[static_cast<size_t>(y) * W + x];
            double t = 1.0, r = 0.0, g = 0.0, b = 0.0;
            for (const Contrib& c : lst) {
                const Frag& f = ctx->frags[static_cast<size_t>(c.gauss)];
                r += f.color[0] * c.sigma * t;
                g += f.color[1] * c.sigma * t;
                b += f.color[2] * c.sigma * t;
                t *= 1.0 - c.sigma;
            }
            r += bg.x * t;
            g += bg.y * t;
            b += bg.z * t;
            out.rgb.at4(0, 0, y, x) = static_cast<float>(r);
            out.rgb.at4(0, 1, y, x) = static_cast<float>(g);
            out.rgb.at4(0, 2, y, x) = static_cast<float>(b);
            out.opacity.at4(0, 0, y, x) = static_cast<float>(1.0 - t);
        }
    }
    return ctx;
}

// Accumulates d(loss)/d(packed rows) given image gradients.
void rasterize_backward(const RasterContext& ctx, const Tensor& grad_img, const float* rows,
                        float* grad_rows) {
    const int H = ctx.cam.height, W = ctx.cam.width;

    struct GaussGrad {
        double mx = 0, my = 0;
        double conic[3] = {0, 0, 0};
        double alpha = 0;
        double color[3] = {0, 0, 0};
    };
    std::vector<GaussGrad> gg(static_cast<size_t>(ctx.M));

    std::vector<double> tbuf;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const auto& lst = ctx.pixels[static_cast<size_t>(y) * W + x];
            const double go = grad_img.at4(0, 3, y, x);
            const double gr[3] = {grad_img.at4(0, 0, y, x), grad_img.at4(0, 1, y, x),
                                  grad_img.at4(0, 2, y, x)};
            if (lst.empty()) continue;

            tbuf.resize(lst.size() + 1);
            tbuf[0] = 1.0;
            for (size_t i = 0; i < lst.size(); ++i) tbuf[i + 1] = tbuf[i] * (1.0 - lst[i].sigma);
            const double t_final = tbuf[lst.size()];

            // suffix sum of c_k sigma_k T_k plus the background term
            double suffix[3] = {ctx.bg.x * t_final, ctx.bg.y * t_final, ctx.bg.z * t_final};
            for (size_t ii = lst.size(); ii-- > 0;) {
                const Contrib& c = lst[ii];
                const Frag& f = ctx.frags[static_cast<size_t>(c.gauss)];
                GaussGrad& ag = gg[static_cast<size_t>(c.gauss)];
                const double ti = tbuf[ii];
                const double one_m = 1.0 - c.sigma;

                double dsigma = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    ag.color[ch] += gr[ch] * c.sigma * ti;
                    dsigma += gr[ch] * (f.color[ch] * ti - suffix[ch] / one_m);
                }
                dsigma += go * t_final / one_m;

                // through the clamp: no geometry/alpha gradient if saturated
                if (c.sigma < kSigmaClamp) {
                    double gval = c.sigma / f.alpha;
                    double dgval = dsigma * f.alpha;
                    ag.alpha += dsigma * gval;
                    double dpower = dgval * gval;
                    double dx = (x + 0.5) - f.mx;
                    double dy = (y + 0.5) - f.my;
                    double ddx = dpower * -(f.conic[0] * dx + f.conic[1] * dy);
                    double ddy = dpower * -(f.conic[1] * dx + f.conic[2] * dy);
                    ag.mx -= ddx;
                    ag.my -= ddy;
                    ag.conic[0] += dpower * (-0.5 * dx * dx);
                    ag.conic[1] += dpower * (-dx * dy);
                    ag.conic[2] += dpower * (-0.5 * dy * dy);
                }

                for (int ch = 0; ch < 3; ++ch) suffix[ch] += f.color[ch] * c.sigma * ti;
            }
        }
    }

    const double ps = ctx.cam.pixel_scale;
    double rc[9];
    for (int i = 0; i < 9; ++i) rc[i] = ctx.cam.rotation.m[i];

    for (int gi = 0; gi < ctx.M; ++gi) {
        const Frag& f = ctx.frags[static_cast<size_t>(gi)];
        const GaussGrad& ag = gg[static_cast<size_t>(gi)];
        const float* row = rows + static_cast<int64_t>(gi) * kGaussianParams;
        float* gout = grad_rows + static_cast<int64_t>(gi) * kGaussianParams;

        // position: mean_px = ps * (Rc p + t)_xy + principal point
        gout[0] += static_cast<float>(ps * (ag.mx * rc[0] + ag.my * rc[3]));
        gout[1] += static_cast<float>(ps * (ag.mx * rc[1] + ag.my * rc[4]));
        gout[2] += static_cast<float>(ps * (ag.mx * rc[2] + ag.my * rc[5]));

        gout[10] += static_cast<float>(ag.alpha);

        for (int c = 0; c < 3; ++c) {
            if (f.color_clamped[c]) continue;
            for (int b = 0; b < kShBasisCount; ++b)
                gout[11 + b * 3 + c] +=
                    static_cast<float>(ag.color[c] * ctx.basis[static_cast<size_t>(b)]);
        }

        // conic -> 2D covariance: G_cov = -A G_conic A (A = conic, both symmetric)
        const double a00 = f.conic[0], a01 = f.conic[1], a11 = f.conic[2];
        const double q00 = ag.conic[0], q01 = 0.5 * ag.conic[1], q11 = ag.conic[2];
        // B = G_conic * A
        const double b00 = q00 * a00 + q01 * a01;
        const double b01 = q00 * a01 + q01 * a11;
        const double b10 = q01 * a00 + q11 * a01;
        const double b11 = q01 * a01 + q11 * a11;
        // G_cov = -A * B
        const double gc00 = -(a00 * b00 + a01 * b10);
        const double gc01 = -(a00 * b01 + a01 * b11);
        const double gc10 = -(a01 * b00 + a11 * b10);
        const double gc11 = -(a01 * b01 + a11 * b11);

        // cov2 = ps^2 * (Rc Sigma3 Rc^T)[0:2,0:2] + lowpass; lift to 3x3
        double gm[9] = {gc00 * ps * ps, 0.5 * (gc01 + gc10) * ps * ps, 0,
                        0.5 * (gc01 + gc10) * ps * ps, gc11 * ps * ps, 0,
                        0, 0, 0};
        // G_Sigma3 = Rc^T gm Rc
        double rc_t[9] = {rc[0], rc[3], rc[6], rc[1], rc[4], rc[7], rc[2], rc[5], rc[8]};
        double tmp[9], gs3[9];
        mul3(rc_t, gm, tmp);
        mul3(tmp, rc, gs3);

        // Sigma3 = R D R^T: dR = 2 G R D; dD = diag(R^T G R)
        const double sx = row[3], sy = row[4], sz = row[5];
        double d[9] = {sx * static_cast<double>(sx), 0, 0, 0, sy * static_cast<double>(sy), 0,
                       0, 0, sz * static_cast<double>(sz)};
        double gr_[9], rd[9];
        mul3(f.rot, d, rd);   // R D
        mul3(gs3, rd, gr_);   // G R D
        for (int i = 0; i < 9; ++i) gr_[i] *= 2.0;

        double rot_t[9] = {f.rot[0], f.rot[3], f.rot[6], f.rot[1], f.rot[4], f.rot[7],
                           f.rot[2], f.rot[5], f.rot[8]};
        double tg[9], rtgr[9];
        mul3(rot_t, gs3, tg);
        mul3(tg, f.rot, rtgr);
        gout[3] += static_cast<float>(2.0 * sx * rtgr[0]);
        gout[4] += static_cast<float>(2.0 * sy * rtgr[4]);
        gout[5] += static_cast<float>(2.0 * sz * rtgr[8]);

        // dR -> d(qn) via the quaternion-to-rotation jacobian
        const double w = f.qn[0], qx = f.qn[1], qy = f.qn[2], qz = f.qn[3];
        auto dot9 = [&](const double m[9]) {
            double acc = 0;
            for (int i = 0; i < 9; ++i) acc += gr_[i] * m[i];
            return acc;
        };
        const double dRw[9] = {0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0};
        const double dRx[9] = {0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * w, 2 * qz, 2 * w, -4 * qx};
        const double dRy[9] = {-4 * qy, 2 * qx, 2 * w, 2 * qx, 0, 2 * qz, -2 * w, 2 * qz, -4 * qy};
        const double dRz[9] = {-4 * qz, -2 * w, 2 * qx, 2 * w, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0};
        double dqn[4] = {dot9(dRw), dot9(dRx), dot9(dRy), dot9(dRz)};
        // through normalization: dq = (dqn - qn (qn . dqn)) / |q|
        double qdot = dqn[0] * w + dqn[1] * qx + dqn[2] * qy + dqn[3] * qz;
        gout[6] += static_cast<float>((dqn[0] - w * qdot) / f.qnorm);
        gout[7] += static_cast<float>((dqn[1] - qx * qdot) / f.qnorm);
        gout[8] += static_cast<float>((dqn[2] - qy * qdot) / f.qnorm);
        gout[9] += static_cast<float>((dqn[3] - qz * qdot) / f.qnorm);
    }
}

}  // namespace

RenderOutput rasterize(const std::vector<Gaussian>& gaussians, const Camera& cam, const Vec3& bg) {
    Tensor packed = Tensor::zeros({std::max(1, static_cast<int>(gaussians.size())), kGaussianParams});
    for (size_t i = 0; i < gaussians.size(); ++i)
        pack_gaussian(gaussians[i], packed.data.data() + i * kGaussianParams);
    RenderOutput out;
    rasterize_core(packed.data.data(), static_cast<int>(gaussians.size()), cam, bg, out);
    return out;
}

int rasterize_node(Tape& tape, int packed, const Camera& cam, const Vec3& bg) {
    const Tensor& pv = tape.val(packed);
    check_shape(pv.rank() == 2 && pv.dim(1) == kGaussianParams,
                "rasterize: expected [M,59] gaussian tensor, got " + shape_str(pv.shape));
    const int M = pv.dim(0);
    RenderOutput out;
    std::shared_ptr<RasterContext> ctx =
        rasterize_core(pv.data.data(), M, cam, bg, out);

    Tensor img = Tensor::zeros({1, 4, cam.height, cam.width});
    const int64_t hw = static_cast<int64_t>(cam.height) * cam.width;
    std::copy(out.rgb.data.begin(), out.rgb.data.end(), img.data.begin());
    std::copy(out.opacity.data.begin(), out.opacity.data.end(), img.data.begin() + 3 * hw);

    return tape.custom(std::move(img), {packed}, [ctx, packed](Tape& t, int self) {
        if (!t.requires_grad(packed)) return;
        const Tensor& g = t.grad(self);
        Tensor& gp = t.grad_ref(packed);
        rasterize_backward(*ctx, g, t.val(packed).data.data(), gp.data.data());
    });
}

Camera make_orbit_camera(float azimuth_rad, const Vec3& center, float orbit_radius,
                         float pixel_scale, int height, int width) {
    Vec3 pos = center + Vec3{std::sin(azimuth_rad), 0.0f, std::cos(azimuth_rad)} * orbit_radius;
    Vec3 f = (center - pos).normalized();
    Vec3 up{0.0f, 1.0f, 0.0f};
    Vec3 right = up.cross(f).normalized();
    Vec3 down = right.cross(f).normalized();
    Camera cam;
    for (int j = 0; j < 3; ++j) {
        cam.rotation.at(0, j) = (&right.x)[j];
        cam.rotation.at(1, j) = (&down.x)[j];
        cam.rotation.at(2, j) = (&f.x)[j];
    }
    cam.translation = (cam.rotation * pos) * -1.0f;
    cam.pixel_scale = pixel_scale;
    cam.height = height;
    cam.width = width;
    cam.validate();
    return cam;
}

Camera load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("camera: cannot open " + path);
    nlohmann::json j;
    in >> j;
    Camera cam;
    auto rot = j.at("rotation");
    if (rot.size() != 9) throw Error("camera: rotation must have 9 entries in " + path);
    for (int i = 0; i < 9; ++i) cam.rotation.m[i] = rot[static_cast<size_t>(i)].get<float>();
    auto tr = j.at("translation");
    cam.translation = {tr[0].get<float>(), tr[1].get<float>(), tr[2].get<float>()};
    cam.pixel_scale = j.at("pixel_scale").get<float>();
    cam.height = j.at("height").get<int>();
    cam.width = j.at("width").get<int>();
    cam.validate();
    return cam;
}

void save_camera(const Camera& cam, const std::string& path) {
    nlohmann::json j;
    j["rotation"] = std::vector<float>(cam.rotation.m, cam.rotation.m + 9);
    j["translation"] = {cam.translation.x, cam.translation.y, cam.translation.z};
    j["pixel_scale"] = cam.pixel_scale;
    j["height"] = cam.height;
    j["width"] = cam.width;
    std::ofstream out(path);
    if (!out) throw Error("camera: cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace wsd
