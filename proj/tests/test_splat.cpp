#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "fd_check.hpp"
#include "op_suite.hpp"
#include "splat_oracle.hpp"
#include "wsd/rng.hpp"
#include "wsd/sh.hpp"
#include "wsd/splat.hpp"

using namespace wsd;
using namespace wsd::testutil;

namespace {

Camera identity_camera(int res, float pixel_scale) {
    Camera cam;
    cam.rotation = Mat3::identity();
    cam.translation = {0, 0, 0};
    cam.pixel_scale = pixel_scale;
    cam.height = res;
    cam.width = res;
    return cam;
}

// Jacobi eigenvalue iteration for symmetric 3x3, test-local oracle.
std::array<double, 3> sym3_eigenvalues(const Mat3& m_in) {
    double a[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[i][j] = m_in.at(i, j);
    for (int iter = 0; iter < 100; ++iter) {
        int p = 0, q = 1;
        double mx = std::abs(a[0][1]);
        if (std::abs(a[0][2]) > mx) { mx = std::abs(a[0][2]); p = 0; q = 2; }
        if (std::abs(a[1][2]) > mx) { mx = std::abs(a[1][2]); p = 1; q = 2; }
        if (mx < 1e-14) break;
        double theta = 0.5 * std::atan2(2.0 * a[p][q], a[q][q] - a[p][p]);
        double c = std::cos(theta), s = std::sin(theta);
        double app = c * c * a[p][p] - 2 * s * c * a[p][q] + s * s * a[q][q];
        double aqq = s * s * a[p][p] + 2 * s * c * a[p][q] + c * c * a[q][q];
        for (int k = 0; k < 3; ++k) {
            if (k == p || k == q) continue;
            double akp = c * a[k][p] - s * a[k][q];
            double akq = s * a[k][p] + c * a[k][q];
            a[k][p] = a[p][k] = akp;
            a[k][q] = a[q][k] = akq;
        }
        a[p][p] = app;
        a[q][q] = aqq;
        a[p][q] = a[q][p] = 0.0;
    }
    std::array<double, 3> ev{a[0][0], a[1][1], a[2][2]};
    std::sort(ev.begin(), ev.end());
    return ev;
}

}  // namespace

TEST_CASE("build_covariance basics") {
    Mat3 id = build_covariance({1, 1, 1}, {1, 0, 0, 0});
    for (int i = 0; i < 9; ++i) CHECK(id.m[i] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0));

    Mat3 an = build_covariance({2, 1, 1}, {1, 0, 0, 0});
    CHECK(an.at(0, 0) == doctest::Approx(4.0));
    CHECK(an.at(1, 1) == doctest::Approx(1.0));
    CHECK(an.at(2, 2) == doctest::Approx(1.0));

    CHECK_THROWS_AS(build_covariance({1, 1, 1}, {0, 0, 0, 0}), Error);
}

TEST_CASE("covariance eigenvalues are squared scales for random rotations") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Vec3 s{static_cast<float>(rng.uniform(0.2, 2.0)), static_cast<float>(rng.uniform(0.2, 2.0)),
               static_cast<float>(rng.uniform(0.2, 2.0))};
        Vec3 aa{static_cast<float>(rng.uniform(-3, 3)), static_cast<float>(rng.uniform(-3, 3)),
                static_cast<float>(rng.uniform(-3, 3))};
        Quat q = quat_from_axis_angle(aa);
        auto ev = sym3_eigenvalues(build_covariance(s, q));
        std::array<double, 3> want{static_cast<double>(s.x) * s.x, static_cast<double>(s.y) * s.y,
                                   static_cast<double>(s.z) * s.z};
        std::sort(want.begin(), want.end());
        for (int i = 0; i < 3; ++i) CHECK(ev[static_cast<size_t>(i)] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-4));
    }
}

TEST_CASE("project scales covariance by pixel_scale^2 and maps the mean linearly") {
    Camera cam = identity_camera(32, 10.0f);
    Gaussian g;
    g.position = {0, 0, 1};
    g.scale = {1, 1, 1};
    g.rotation = {1, 0, 0, 0};
    Projected p = project(g, cam);
    CHECK(p.cov_px[0] == doctest::Approx(100.0));
    CHECK(p.cov_px[1] == doctest::Approx(0.0));
    CHECK(p.cov_px[2] == doctest::Approx(100.0));
    CHECK(p.depth == doctest::Approx(1.0));

    g.position = {0.3f, -0.2f, 2.0f};
    p = project(g, cam);
    CHECK(p.mean_px[0] == doctest::Approx(10.0 * 0.3 + 16.0));
    CHECK(p.mean_px[1] == doctest::Approx(10.0 * -0.2 + 16.0));
}

TEST_CASE("projected covariance is symmetric positive definite for arbitrary pose") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Camera cam = make_orbit_camera(static_cast<float>(rng.uniform(0, 6.28)), {0, 0.3f, 0}, 2.0f,
                                       12.0f, 24, 24);
        Gaussian g;
        g.position = {static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1)),
                      static_cast<float>(rng.uniform(-1, 1))};
        g.scale = {static_cast<float>(rng.uniform(0.05, 1.0)),
                   static_cast<float>(rng.uniform(0.05, 1.0)),
                   static_cast<float>(rng.uniform(0.05, 1.0))};
        g.rotation = quat_from_axis_angle({static_cast<float>(rng.uniform(-3, 3)),
                                           static_cast<float>(rng.uniform(-3, 3)),
                                           static_cast<float>(rng.uniform(-3, 3))});
        Projected p = project(g, cam);
        // Cholesky of [[a,b],[b,c]] exists iff a>0 and det>0
        CHECK(p.cov_px[0] > 0.0f);
        CHECK(p.cov_px[0] * p.cov_px[2] - p.cov_px[1] * p.cov_px[1] > 0.0f);
    }
}

TEST_CASE("eval_sh closed forms") {
    float h[48] = {0};
    CHECK(eval_sh(h, {0, 0, 1}).x == doctest::Approx(0.5));

    h[0] = 0.7f;  // DC, red channel
    Vec3 rgb = eval_sh(h, {0, 0, 1});
    CHECK(rgb.x == doctest::Approx(0.7 * 0.2820948 + 0.5).epsilon(1e-6));
    CHECK(rgb.y == doctest::Approx(0.5));

    // degree-1 terms flip sign under dir -> -dir
    float h1[48] = {0};
    h1[1 * 3 + 0] = 0.1f;
    h1[2 * 3 + 0] = 0.07f;
    h1[3 * 3 + 0] = -0.05f;
    Vec3 dir = Vec3{0.3f, -0.5f, 0.8f}.normalized();
    float a = eval_sh(h1, dir).x - 0.5f;
    float b = eval_sh(h1, dir * -1.0f).x - 0.5f;
    CHECK(a == doctest::Approx(-b).epsilon(1e-5));
}

TEST_CASE("rasterize: empty scene gives background and zero opacity") {
    Camera cam = identity_camera(8, 4.0f);
    RenderOutput out = rasterize({}, cam, {0.25f, 0.5f, 0.75f});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(out.rgb.at4(0, 0, y, x) == 0.25f);
            CHECK(out.rgb.at4(0, 1, y, x) == 0.5f);
            CHECK(out.rgb.at4(0, 2, y, x) == 0.75f);
            CHECK(out.opacity.at4(0, 0, y, x) == 0.0f);
        }
}

TEST_CASE("rasterize: single gaussian at a pixel center composites 0.8c + 0.2bg") {
    Camera cam = identity_camera(16, 8.0f);
    Gaussian g;
    g.position = {0.0625f, 0.0625f, 1.0f};  // pixel (8,8) center
    g.scale = {0.5f, 0.5f, 0.5f};
    g.rotation = {1, 0, 0, 0};
    g.opacity = 0.8f;
    g.sh[0] = 0.9f;  // red-ish
    Vec3 bg{0.0f, 0.0f, 1.0f};
    RenderOutput out = rasterize({g}, cam, bg);
    CHECK(out.opacity.at4(0, 0, 8, 8) == doctest::Approx(0.8).epsilon(1e-6));
    float cr = std::clamp(0.9f * kShDc + 0.5f, 0.0f, 1.0f);
    CHECK(out.rgb.at4(0, 0, 8, 8) == doctest::Approx(0.8 * cr).epsilon(1e-6));
    // blue channel has zero coefficients -> base color 0.5
    CHECK(out.rgb.at4(0, 2, 8, 8) == doctest::Approx(0.8 * 0.5 + 0.2 * 1.0).epsilon(1e-6));
}

TEST_CASE("rasterize matches the scalar compositing oracle") {
    Rng rng(31);
    for (int scene = 0; scene < 3; ++scene) {
        auto gs = random_scene(rng, 2 + scene * 3);
        Camera cam = identity_camera(32, 12.0f);
        Vec3 bg{0.1f, 0.2f, 0.3f};
        RenderOutput out = rasterize(gs, cam, bg);
        OracleImage ref = oracle_render(gs, cam, bg);
        double worst = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                for (int c = 0; c < 3; ++c)
                    worst = std::max(worst, std::abs(out.rgb.at4(0, c, y, x) -
                                                     ref.rgb[(static_cast<size_t>(y) * 32 + x) * 3 + static_cast<size_t>(c)]));
                worst = std::max(worst, std::abs(out.opacity.at4(0, 0, y, x) -
                                                 ref.opacity[static_cast<size_t>(y) * 32 + x]));
            }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("zero-opacity scene reproduces the background exactly") {
    Rng rng(9);
    auto gs = random_scene(rng, 6);
    for (auto& g : gs) g.opacity = 0.0f;
    Camera cam = identity_camera(16, 8.0f);
    RenderOutput out = rasterize(gs, cam, {0.6f, 0.1f, 0.9f});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(out.rgb.at4(0, 0, y, x) == 0.6f);
            CHECK(out.opacity.at4(0, 0, y, x) == 0.0f);
        }
}

TEST_CASE("non-overlapping gaussians composite permutation-invariantly") {
    Camera cam = identity_camera(32, 8.0f);
    std::vector<Gaussian> gs(3);
    for (int i = 0; i < 3; ++i) {
        gs[static_cast<size_t>(i)].position = {-1.2f + 1.2f * i, 0.0f, 0.5f + 0.3f * i};
        gs[static_cast<size_t>(i)].scale = {0.08f, 0.08f, 0.08f};
        gs[static_cast<size_t>(i)].rotation = {1, 0, 0, 0};
        gs[static_cast<size_t>(i)].opacity = 0.7f;
        gs[static_cast<size_t>(i)].sh[i] = 0.4f;
    }
    RenderOutput a = rasterize(gs, cam, {0, 0, 0});
    std::swap(gs[0], gs[2]);
    RenderOutput b = rasterize(gs, cam, {0, 0, 0});
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.opacity.data == b.opacity.data);
}

TEST_CASE("front-to-back equals back-to-front over compositing") {
    Rng rng(55);
    auto gs = random_scene(rng, 6);
    Camera cam = identity_camera(24, 10.0f);
    Vec3 bg{0.3f, 0.3f, 0.3f};
    RenderOutput out = rasterize(gs, cam, bg);

    // back-to-front "over" on the same sorted contribution set
    OracleImage fwd = oracle_render(gs, cam, bg);
    struct Pre { double depth, mx, my, ia, ib, ic, alpha; double color[3]; };
    std::vector<Pre> ps(gs.size());
    for (size_t i = 0; i < gs.size(); ++i) {
        Projected pr = project(gs[i], cam);
        double a = pr.cov_px[0] + kCovLowPass, b = pr.cov_px[1], c = pr.cov_px[2] + kCovLowPass;
        double det = a * c - b * b;
        ps[i] = {pr.depth, pr.mean_px[0], pr.mean_px[1], c / det, -b / det, a / det,
                 gs[i].opacity, {0, 0, 0}};
        Vec3 col = eval_sh(gs[i].sh, cam.forward_world().normalized());
        ps[i].color[0] = col.x;
        ps[i].color[1] = col.y;
        ps[i].color[2] = col.z;
    }
    std::vector<size_t> order(gs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return ps[a].depth != ps[b].depth ? ps[a].depth < ps[b].depth : a < b; });
    double worst = 0;
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            double col[3] = {bg.x, bg.y, bg.z};
            for (auto it = order.rbegin(); it != order.rend(); ++it) {
                const Pre& p = ps[*it];
                double dx = (x + 0.5) - p.mx, dy = (y + 0.5) - p.my;
                double sigma =
                    p.alpha * std::exp(-0.5 * (p.ia * dx * dx + 2 * p.ib * dx * dy + p.ic * dy * dy));
                if (sigma < 1.0 / 255.0) continue;
                sigma = std::min(sigma, 0.999);
                for (int c = 0; c < 3; ++c) col[c] = p.color[c] * sigma + (1.0 - sigma) * col[c];
            }
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(col[c] - out.rgb.at4(0, c, y, x)));
        }
    CHECK(worst < 1e-6);
}

TEST_CASE("rasterizer gradients pass finite differences") {
    Rng rng(13);
    auto gs = random_scene(rng, 3);
    Camera cam = identity_camera(16, 8.0f);
    Tensor packed = Tensor::zeros({3, kGaussianParams});
    for (size_t i = 0; i < gs.size(); ++i) pack_gaussian(gs[i], packed.data.data() + i * kGaussianParams);

    Tensor w;
    {
        Tape probe;
        int p = probe.leaf(packed, false);
        int img = rasterize_node(probe, p, cam, {0.2f, 0.2f, 0.2f});
        w = random_tensor(probe.val(img).shape, rng);
    }
    auto build = [&](Tape& t, const std::vector<int>& in) {
        int img = rasterize_node(t, in[0], cam, {0.2f, 0.2f, 0.2f});
        int wi = t.leaf(w, false);
        return t.reduce_mean(t.mul(img, wi));
    };
    auto rep = fd_check(build, {packed});
    CHECK(rep.max_rel_err <= 5e-3);
}
