#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "wsd/image.hpp"
#include "wsd/rng.hpp"
#include "wsd/synthetic.hpp"

using namespace wsd;
namespace fs = std::filesystem;

namespace {
std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("png roundtrip is exact at 8 bits") {
    Rng rng(4);
    Tensor img = Tensor::zeros({1, 3, 9, 13});
    for (auto& v : img.data) v = static_cast<float>(rng.next_below(256)) / 255.0f;
    save_png(img, "/tmp/wsd_png_test.png");
    Tensor back = load_png("/tmp/wsd_png_test.png");
    REQUIRE(back.shape == img.shape);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);

    Tensor gray = Tensor::zeros({1, 1, 5, 7});
    for (auto& v : gray.data) v = static_cast<float>(rng.next_below(256)) / 255.0f;
    save_png(gray, "/tmp/wsd_png_gray.png");
    Tensor gback = load_png("/tmp/wsd_png_gray.png");
    CHECK(gback.data == gray.data);

    CHECK_THROWS_AS(load_png("/tmp/does_not_exist_wsd.png"), Error);
}

TEST_CASE("make_identity is deterministic and in documented ranges") {
    for (uint64_t seed : {0ull, 1ull, 99ull}) {
        IdentitySpec a = make_identity(seed);
        IdentitySpec b = make_identity(seed);
        CHECK(a.band_count == b.band_count);
        CHECK(a.wrinkle_amplitude == b.wrinkle_amplitude);
        CHECK(a.wrinkle_phase == b.wrinkle_phase);
        CHECK(a.band_count >= 2);
        CHECK(a.band_count <= 6);
        CHECK(a.wrinkle_amplitude >= 0.0f);
        CHECK(a.wrinkle_amplitude <= 0.03f);
        CHECK(a.wrinkle_freq >= 2);
        CHECK(a.wrinkle_freq <= 8);
        for (const Vec3& c : a.band_colors) {
            CHECK(c.x >= 0.0f);
            CHECK(c.x <= 1.0f);
        }
    }
}

TEST_CASE("identity specs are distinct across seeds") {
    std::set<std::string> keys;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        IdentitySpec s = make_identity(seed);
        std::string key = std::to_string(s.band_count) + "|" + std::to_string(s.checker_freq);
        for (const Vec3& c : s.band_colors)
            key += "|" + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z);
        keys.insert(key);
    }
    CHECK(keys.size() >= 95);
}

TEST_CASE("oracle offsets vanish at identity pose and scale with bend") {
    Template tpl = build_template(4, 10, 10, 0.12f);
    UVAnchorMap anchors = anchor_map(tpl, 16);
    IdentitySpec spec = make_identity(7);
    spec.wrinkle_amplitude = 0.02f;

    Pose rest;
    rest.joint_rotations.assign(4, Vec3{0, 0, 0});
    auto rest_maps = oracle_gaussians(spec, rest, tpl, anchors);
    for (float v : rest_maps.offset.data) CHECK(v == 0.0f);

    Pose bent = rest;
    bent.joint_rotations[1] = {0, 0, 0.6f};
    Pose bent2 = rest;
    bent2.joint_rotations[1] = {0, 0, 1.2f};
    auto m1 = oracle_gaussians(spec, bent, tpl, anchors);
    auto m2 = oracle_gaussians(spec, bent2, tpl, anchors);
    float ratio_expected = bend_amount(bent2) / bend_amount(bent);
    for (size_t i = 0; i < m1.offset.data.size(); ++i) {
        if (m1.offset.data[i] == 0.0f) continue;
        CHECK(m2.offset.data[i] / m1.offset.data[i] == doctest::Approx(ratio_expected).epsilon(1e-4));
    }

    spec.wrinkle_amplitude = 0.0f;
    auto flat = oracle_gaussians(spec, bent2, tpl, anchors);
    for (float v : flat.offset.data) CHECK(v == 0.0f);
}

TEST_CASE("pose sequences are bounded, smooth, deterministic") {
    auto a = sample_pose_sequence(11, 16, 4);
    auto b = sample_pose_sequence(11, 16, 4);
    REQUIRE(a.size() == 16);
    for (size_t f = 0; f < a.size(); ++f)
        for (int j = 0; j < 4; ++j) {
            CHECK(a[f].joint_rotations[static_cast<size_t>(j)].norm() <= 3.14159265f / 3.0f + 1e-6f);
            CHECK(a[f].joint_rotations[static_cast<size_t>(j)].x ==
                  b[f].joint_rotations[static_cast<size_t>(j)].x);
        }
    auto c = sample_pose_sequence(12, 16, 4);
    bool differs = false;
    for (size_t f = 0; f < c.size(); ++f)
        if (c[f].joint_rotations[1].norm() != a[f].joint_rotations[1].norm()) differs = true;
    CHECK(differs);
}

TEST_CASE("generate_dataset writes the documented layout and is byte-deterministic") {
    DatasetConfig cfg;
    cfg.identities = 1;
    cfg.frames = 2;
    cfg.cameras = 2;
    cfg.resolution = 48;
    cfg.uv_resolution = 16;
    cfg.seed = 5;

    fs::remove_all("/tmp/wsd_ds_a");
    fs::remove_all("/tmp/wsd_ds_b");
    DatasetManifest m = generate_dataset(cfg, "/tmp/wsd_ds_a");
    CHECK(m.identities.size() == 1);
    CHECK(m.identities[0].frames.size() == 2);
    CHECK(fs::exists("/tmp/wsd_ds_a/manifest.json"));
    CHECK(fs::exists("/tmp/wsd_ds_a/cameras.json"));
    CHECK(fs::exists("/tmp/wsd_ds_a/identity_0/frame_0/cam_0.png"));
    CHECK(fs::exists("/tmp/wsd_ds_a/identity_0/frame_1/mask_1.png"));
    CHECK(fs::exists("/tmp/wsd_ds_a/identity_0/frame_0/pose.json"));

    // mask has enough foreground
    Tensor mask = load_png("/tmp/wsd_ds_a/identity_0/frame_0/mask_0.png");
    double fg = 0;
    for (float v : mask.data) fg += v;
    CHECK(fg / static_cast<double>(mask.numel()) >= 0.05);

    generate_dataset(cfg, "/tmp/wsd_ds_b");
    for (const char* rel :
         {"identity_0/frame_0/cam_0.png", "identity_0/frame_1/cam_1.png", "identity_0/frame_0/mask_0.png"}) {
        auto a = slurp(fs::path("/tmp/wsd_ds_a") / rel);
        auto b = slurp(fs::path("/tmp/wsd_ds_b") / rel);
        CHECK(a == b);
        CHECK(!a.empty());
    }

    DatasetManifest loaded = load_manifest("/tmp/wsd_ds_a/manifest.json");
    CHECK(loaded.cameras.size() == 2);
    CHECK(loaded.config.resolution == 48);
    CHECK(loaded.identities[0].frames[1].image_paths.size() == 2);

    // corrupting the layout must surface a structured error
    fs::remove("/tmp/wsd_ds_a/identity_0/frame_0/cam_0.png");
    CHECK_THROWS_WITH_AS(load_manifest("/tmp/wsd_ds_a/manifest.json"), doctest::Contains("missing"),
                         Error);
}
