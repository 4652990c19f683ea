#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fd_check.hpp"
#include "op_suite.hpp"
#include "wsd/rng.hpp"
#include "wsd/skeleton.hpp"

using namespace wsd;
using namespace wsd::testutil;

namespace {
constexpr float kPiF = 3.14159265358979323846f;

Pose zero_pose(int joints) {
    Pose p;
    p.joint_rotations.assign(static_cast<size_t>(joints), Vec3{0, 0, 0});
    return p;
}

GaussianMapDecoded neutral_maps(int T, Rng* rng = nullptr) {
    GaussianMapDecoded m;
    m.offset = Tensor::zeros({1, 3, T, T});
    m.scale = Tensor::full({1, 3, T, T}, 0.02f);
    m.quaternion = Tensor::zeros({1, 4, T, T});
    for (int r = 0; r < T; ++r)
        for (int c = 0; c < T; ++c) m.quaternion.at4(0, 0, r, c) = 1.0f;
    m.opacity = Tensor::full({1, 1, T, T}, 0.9f);
    m.sh = Tensor::zeros({1, 48, T, T});
    if (rng)
        for (auto& v : m.sh.data) v = static_cast<float>(rng->uniform(-0.1, 0.1));
    return m;
}
}  // namespace

TEST_CASE("build_template vertex count and skin weight rows") {
    Template tpl = build_template(2, 4, 2, 0.1f);
    CHECK(tpl.vertices.size() == 4 * (2 + 1) + 2);  // rings plus two cap centers
    for (const auto& w : tpl.skin_weights) {
        float sum = 0;
        for (float x : w) {
            CHECK(x >= 0.0f);
            sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(build_template(1, 4, 2, 0.1f), Error);
    CHECK_THROWS_AS(build_template(4, 2, 2, 0.1f), Error);
}

TEST_CASE("UV unwrap is injective: no texel center in two triangle interiors") {
    Template tpl = build_template(4, 12, 12, 0.12f);
    const int T = 32;
    for (int row = 0; row < T; ++row) {
        for (int col = 0; col < T; ++col) {
            double u = (col + 0.5) / T, v = (row + 0.5) / T;
            int hits = 0;
            for (size_t t = 0; t < tpl.triangles.size(); ++t) {
                auto c = tpl.triangle_uv(static_cast<int>(t));
                double det = (c[1][1] - c[2][1]) * (c[0][0] - c[2][0]) +
                             (c[2][0] - c[1][0]) * (c[0][1] - c[2][1]);
                if (std::abs(det) < 1e-12) continue;
                double a = ((c[1][1] - c[2][1]) * (u - c[2][0]) + (c[2][0] - c[1][0]) * (v - c[2][1])) / det;
                double b = ((c[2][1] - c[0][1]) * (u - c[2][0]) + (c[0][0] - c[2][0]) * (v - c[2][1])) / det;
                double g = 1.0 - a - b;
                if (a > 1e-6 && b > 1e-6 && g > 1e-6) ++hits;
            }
            CHECK(hits <= 1);
        }
    }
}

TEST_CASE("lbs identity pose is bitwise exact") {
    Template tpl = build_template(4, 8, 8, 0.1f);
    auto posed = lbs(tpl, zero_pose(4));
    for (size_t i = 0; i < posed.size(); ++i) {
        CHECK(posed[i].x == tpl.vertices[i].x);
        CHECK(posed[i].y == tpl.vertices[i].y);
        CHECK(posed[i].z == tpl.vertices[i].z);
    }
}

TEST_CASE("global root rotation is rigid equivariance") {
    Template tpl = build_template(4, 8, 6, 0.1f);
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 aa{static_cast<float>(rng.uniform(-2, 2)), static_cast<float>(rng.uniform(-2, 2)),
                static_cast<float>(rng.uniform(-2, 2))};
        if (aa.norm() > kPiF) aa = aa * (3.0f / aa.norm());
        Pose pose = zero_pose(4);
        pose.joint_rotations[0] = aa;
        Mat3 r = rotation_from_axis_angle(aa);
        auto posed = lbs(tpl, pose);
        for (size_t i = 0; i < posed.size(); ++i) {
            Vec3 want = r * tpl.vertices[i];
            CHECK(std::abs(posed[i].x - want.x) < 1e-5f);
            CHECK(std::abs(posed[i].y - want.y) < 1e-5f);
            CHECK(std::abs(posed[i].z - want.z) < 1e-5f);
        }
    }
}

TEST_CASE("90-degree bend rotates fully-bound vertices about the joint origin") {
    Template tpl = build_template(3, 8, 8, 0.1f);
    Pose pose = zero_pose(3);
    pose.joint_rotations[1] = {0, 0, kPiF / 2};
    Mat3 r = rotation_from_axis_angle({0, 0, kPiF / 2});
    Vec3 origin = tpl.joint_rest[1];
    auto posed = lbs(tpl, pose);
    for (size_t v = 0; v < tpl.vertices.size(); ++v) {
        if (tpl.skin_weights[v][1] != 1.0f) continue;
        Vec3 want = r * (tpl.vertices[v] - origin) + origin;
        CHECK(std::abs(posed[v].x - want.x) < 1e-5f);
        CHECK(std::abs(posed[v].y - want.y) < 1e-5f);
        CHECK(std::abs(posed[v].z - want.z) < 1e-5f);
    }
}

TEST_CASE("anchor_map: texel at a UV vertex gets a unit barycentric") {
    // hand-built square: vertex 0 sits exactly on texel (1,1) center of a 4x4 grid
    Template tpl;
    tpl.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    tpl.uv = {{0.375f, 0.375f}, {0.9f, 0.1f}, {0.9f, 0.9f}, {0.1f, 0.9f}};
    tpl.triangles = {{0, 1, 2}, {0, 2, 3}};
    tpl.joint_count = 2;
    tpl.parent = {-1, 0};
    tpl.joint_rest = {{0, 0, 0}, {0, kBoneLength, 0}};
    tpl.skin_weights.assign(4, {1.0f, 0.0f});

    UVAnchorMap map = anchor_map(tpl, 4);
    const auto& tx = map.texels[1 * 4 + 1];  // center (0.375, 0.375)
    REQUIRE(tx.valid);
    int unit = -1;
    for (int k = 0; k < 3; ++k)
        if (std::abs(tx.bary[k] - 1.0f) < 1e-6f) unit = k;
    REQUIRE(unit >= 0);
    CHECK(tpl.triangles[static_cast<size_t>(tx.triangle)][static_cast<size_t>(unit)] == 0);
}

TEST_CASE("anchor_map coverage and barycentric reconstruction") {
    Template tpl = build_template(4, 12, 12, 0.12f);
    const int T = 32;
    UVAnchorMap map = anchor_map(tpl, T);
    CHECK(map.valid_count > static_cast<int>(0.9 * T * T));
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) {
            const auto& tx = map.texels[static_cast<size_t>(row) * T + col];
            if (!tx.valid) continue;
            auto c = tpl.triangle_uv(tx.triangle);
            double u = 0, v = 0;
            for (int k = 0; k < 3; ++k) {
                u += static_cast<double>(tx.bary[k]) * c[static_cast<size_t>(k)][0];
                v += static_cast<double>(tx.bary[k]) * c[static_cast<size_t>(k)][1];
            }
            // seam triangles live in lifted coordinates; texel u may be +1
            double du = std::min(std::abs(u - (col + 0.5) / T), std::abs(u - 1.0 - (col + 0.5) / T));
            CHECK(du < 1e-6);
            CHECK(std::abs(v - (row + 0.5) / T) < 1e-6);
        }
}

TEST_CASE("pose_maps: identity pose reproduces canonical surface points, unit normals") {
    Template tpl = build_template(4, 12, 12, 0.12f);
    const int T = 16;
    UVAnchorMap map = anchor_map(tpl, T);
    PoseMaps maps = pose_maps(tpl, zero_pose(4), T, map);
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) {
            const auto& tx = map.texels[static_cast<size_t>(row) * T + col];
            if (!tx.valid) {
                CHECK(maps.normal.at4(0, 0, row, col) == 0.0f);
                continue;
            }
            const auto& tri = tpl.triangles[static_cast<size_t>(tx.triangle)];
            Vec3 want{0, 0, 0};
            for (int k = 0; k < 3; ++k) want = want + tpl.vertices[static_cast<size_t>(tri[static_cast<size_t>(k)])] * tx.bary[k];
            CHECK(std::abs(maps.position.at4(0, 0, row, col) - want.x) < 1e-6f);
            CHECK(std::abs(maps.position.at4(0, 1, row, col) - want.y) < 1e-6f);
            CHECK(std::abs(maps.position.at4(0, 2, row, col) - want.z) < 1e-6f);
            float n = std::sqrt(std::pow(maps.normal.at4(0, 0, row, col), 2.0f) +
                                std::pow(maps.normal.at4(0, 1, row, col), 2.0f) +
                                std::pow(maps.normal.at4(0, 2, row, col), 2.0f));
            CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("pose_maps rigid equivariance under root rotation") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    const int T = 16;
    UVAnchorMap map = anchor_map(tpl, T);
    Vec3 aa{0.4f, 1.1f, -0.3f};
    Pose pose = zero_pose(4);
    pose.joint_rotations[0] = aa;
    Mat3 r = rotation_from_axis_angle(aa);
    PoseMaps base = pose_maps(tpl, zero_pose(4), T, map);
    PoseMaps rot = pose_maps(tpl, pose, T, map);
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) {
            if (!map.texels[static_cast<size_t>(row) * T + col].valid) continue;
            Vec3 p{base.position.at4(0, 0, row, col), base.position.at4(0, 1, row, col),
                   base.position.at4(0, 2, row, col)};
            Vec3 n{base.normal.at4(0, 0, row, col), base.normal.at4(0, 1, row, col),
                   base.normal.at4(0, 2, row, col)};
            Vec3 pw = r * p, nw = r * n;
            CHECK(std::abs(rot.position.at4(0, 0, row, col) - pw.x) < 1e-5f);
            CHECK(std::abs(rot.position.at4(0, 1, row, col) - pw.y) < 1e-5f);
            CHECK(std::abs(rot.position.at4(0, 2, row, col) - pw.z) < 1e-5f);
            CHECK(std::abs(rot.normal.at4(0, 0, row, col) - nw.x) < 1e-5f);
            CHECK(std::abs(rot.normal.at4(0, 1, row, col) - nw.y) < 1e-5f);
            CHECK(std::abs(rot.normal.at4(0, 2, row, col) - nw.z) < 1e-5f);
        }
}

TEST_CASE("gaussians_to_world: identity pose puts centers on the canonical surface") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    const int T = 12;
    UVAnchorMap map = anchor_map(tpl, T);
    GaussianMapDecoded maps = neutral_maps(T);
    auto gs = gaussians_to_world(maps, map, tpl, zero_pose(4));
    CHECK(static_cast<int>(gs.size()) == map.valid_count);
    PoseMaps pm = pose_maps(tpl, zero_pose(4), T, map);
    size_t gi = 0;
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) {
            if (!map.texels[static_cast<size_t>(row) * T + col].valid) continue;
            CHECK(std::abs(gs[gi].position.x - pm.position.at4(0, 0, row, col)) < 1e-6f);
            CHECK(std::abs(gs[gi].position.y - pm.position.at4(0, 1, row, col)) < 1e-6f);
            CHECK(std::abs(gs[gi].position.z - pm.position.at4(0, 2, row, col)) < 1e-6f);
            CHECK(gs[gi].rotation.w == doctest::Approx(1.0).epsilon(1e-6));
            ++gi;
        }
}

TEST_CASE("gaussians_to_world: offsets along canonical normals displace centers by delta") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    const int T = 12;
    UVAnchorMap map = anchor_map(tpl, T);
    PoseMaps pm = pose_maps(tpl, zero_pose(4), T, map);
    const float delta = 0.03f;
    GaussianMapDecoded maps = neutral_maps(T);
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col)
            for (int c = 0; c < 3; ++c)
                maps.offset.at4(0, c, row, col) = delta * pm.normal.at4(0, c, row, col);
    auto base = gaussians_to_world(neutral_maps(T), map, tpl, zero_pose(4));
    auto moved = gaussians_to_world(maps, map, tpl, zero_pose(4));
    size_t gi = 0;
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) {
            if (!map.texels[static_cast<size_t>(row) * T + col].valid) continue;
            Vec3 d = moved[gi].position - base[gi].position;
            CHECK(d.norm() == doctest::Approx(delta).epsilon(1e-4));
            float along = d.dot({pm.normal.at4(0, 0, row, col), pm.normal.at4(0, 1, row, col),
                                 pm.normal.at4(0, 2, row, col)});
            CHECK(along == doctest::Approx(delta).epsilon(1e-4));
            ++gi;
        }
}

TEST_CASE("gaussians_to_world rigid equivariance: rotated pose equals rotated camera") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    const int T = 12;
    UVAnchorMap map = anchor_map(tpl, T);
    GaussianMapDecoded maps = neutral_maps(T);
    for (int row = 0; row < T; ++row)
        for (int col = 0; col < T; ++col) maps.sh.at4(0, 0, row, col) = 0.6f;  // DC only

    Vec3 aa{0.3f, 0.9f, 0.2f};
    Pose rpose = zero_pose(4);
    rpose.joint_rotations[0] = aa;
    Mat3 r = rotation_from_axis_angle(aa);

    auto gs_rot = gaussians_to_world(maps, map, tpl, rpose);
    auto gs_id = gaussians_to_world(maps, map, tpl, zero_pose(4));

    Camera cam = make_orbit_camera(0.7f, {0, 0.375f, 0}, 2.0f, 40.0f, 48, 48);
    Camera cam2 = cam;
    cam2.rotation = cam.rotation * r;  // fold object rotation into the camera
    RenderOutput a = rasterize(gs_rot, cam, {0, 0, 0});
    RenderOutput b = rasterize(gs_id, cam2, {0, 0, 0});
    double worst = 0;
    for (size_t i = 0; i < a.rgb.data.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.rgb.data[i]) - b.rgb.data[i]));
    CHECK(worst < 1e-4);
}

TEST_CASE("gaussians_to_world: finite for random poses within the rotation bound") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    const int T = 12;
    UVAnchorMap map = anchor_map(tpl, T);
    Rng rng(23);
    GaussianMapDecoded maps = neutral_maps(T, &rng);
    for (int trial = 0; trial < 10; ++trial) {
        Pose pose = zero_pose(4);
        for (auto& aa : pose.joint_rotations) {
            aa = {static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1)),
                  static_cast<float>(rng.uniform(-1, 1))};
            float n = aa.norm();
            float want = static_cast<float>(rng.uniform(0.0, 3.1415));
            if (n > 0) aa = aa * (want / n);
        }
        auto gs = gaussians_to_world(maps, map, tpl, pose);
        CHECK(static_cast<int>(gs.size()) == map.valid_count);
        for (const auto& g : gs) {
            CHECK(std::isfinite(g.position.x));
            CHECK(std::isfinite(g.position.y));
            CHECK(std::isfinite(g.position.z));
            CHECK(std::isfinite(g.rotation.w));
            CHECK(g.rotation.norm() == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("gaussians_to_world gradients pass finite differences") {
    Template tpl = build_template(3, 6, 4, 0.12f);
    const int T = 6;
    UVAnchorMap map = anchor_map(tpl, T);
    Pose pose = zero_pose(3);
    pose.joint_rotations[1] = {0.3f, 0.0f, 0.5f};
    auto ctx = std::make_shared<SkinningContext>(build_skinning(tpl, map, pose));

    Rng rng(3);
    Tensor d = random_tensor({1, 3, T, T}, rng);
    for (auto& v : d.data) v *= 0.02f;
    Tensor s = Tensor::full({1, 3, T, T}, 0.05f);
    Tensor q = Tensor::zeros({1, 4, T, T});
    for (int r = 0; r < T; ++r)
        for (int c = 0; c < T; ++c) {
            q.at4(0, 0, r, c) = 1.0f;
            q.at4(0, 1, r, c) = static_cast<float>(rng.uniform(-0.2, 0.2));
        }
    Tensor o = Tensor::full({1, 1, T, T}, 0.5f);
    Tensor h = random_tensor({1, 48, T, T}, rng);

    Tensor w;
    {
        Tape probe;
        std::vector<int> ids;
        for (auto* tn : {&d, &s, &q, &o, &h}) ids.push_back(probe.leaf(*tn, false));
        int out = gaussians_to_world_node(probe, ids[0], ids[1], ids[2], ids[3], ids[4], ctx);
        w = random_tensor(probe.val(out).shape, rng);
    }
    auto build = [&](Tape& t, const std::vector<int>& in) {
        int out = gaussians_to_world_node(t, in[0], in[1], in[2], in[3], in[4], ctx);
        int wi = t.leaf(w, false);
        return t.reduce_mean(t.mul(out, wi));
    };
    auto rep = fd_check(build, {d, s, q, o, h});
    CHECK(rep.max_rel_err <= 1e-3);
}

TEST_CASE("bend_amount ignores the root and averages joint magnitudes") {
    Pose p = zero_pose(4);
    CHECK(bend_amount(p) == 0.0f);
    p.joint_rotations[0] = {0, 2.0f, 0};  // root: no bend
    CHECK(bend_amount(p) == 0.0f);
    p.joint_rotations[1] = {0, 0, kPiF / 2};
    CHECK(bend_amount(p) == doctest::Approx(0.5 / 3.0).epsilon(1e-5));
}

TEST_CASE("pose json roundtrip") {
    Pose p;
    p.joint_rotations = {{0.1f, 0.2f, 0.3f}, {0, 0, 0}, {-0.5f, 0.25f, 0.75f}};
    p.root_translation = {0.05f, 0, -0.02f};
    save_pose(p, "/tmp/wsd_pose_test.json");
    Pose q = load_pose("/tmp/wsd_pose_test.json");
    REQUIRE(q.joint_rotations.size() == 3);
    CHECK(q.joint_rotations[2].z == doctest::Approx(0.75));
    CHECK(q.root_translation.x == doctest::Approx(0.05));
}
