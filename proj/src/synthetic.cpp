#include "wsd/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "wsd/image.hpp"
#include "wsd/rng.hpp"
#include "wsd/sh.hpp"

namespace fs = std::filesystem;

namespace wsd {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;
}

IdentitySpec make_identity(uint64_t seed) {
    Rng rng(seed ^ 0x5eedda7aull);
    IdentitySpec spec;
    spec.seed = seed;
    spec.band_count = 2 + static_cast<int>(rng.next_below(5));  // {2..6}
    spec.band_colors.resize(static_cast<size_t>(spec.band_count));
    for (auto& c : spec.band_colors)
        c = {static_cast<float>(rng.uniform(0.05, 0.95)), static_cast<float>(rng.uniform(0.05, 0.95)),
             static_cast<float>(rng.uniform(0.05, 0.95))};
    spec.checker_freq = 2 + static_cast<int>(rng.next_below(7));  // {2..8}
    spec.wrinkle_amplitude = static_cast<float>(rng.uniform(0.0, 0.03));
    spec.wrinkle_freq = 2 + static_cast<int>(rng.next_below(7));  // {2..8}
    spec.wrinkle_phase = static_cast<float>(rng.uniform(0.0, kTwoPi));
    spec.base_scale = static_cast<float>(rng.uniform(0.015, 0.025));
    return spec;
}

Vec3 identity_albedo(const IdentitySpec& spec, float u, float v) {
    int band = std::min(spec.band_count - 1,
                        static_cast<int>(std::floor(v * static_cast<float>(spec.band_count))));
    Vec3 c = spec.band_colors[static_cast<size_t>(band)];
    int cu = static_cast<int>(std::floor(u * static_cast<float>(spec.checker_freq)));
    int cv = static_cast<int>(std::floor(v * static_cast<float>(spec.checker_freq)));
    if ((cu + cv) % 2 == 1) c = c * 0.75f;
    return c;
}

GaussianMapDecoded oracle_gaussians(const IdentitySpec& spec, const Pose& pose,
                                    const Template& tpl, const UVAnchorMap& anchors) {
    const int T = anchors.resolution;
    Pose rest;
    rest.joint_rotations.assign(static_cast<size_t>(tpl.joint_count), Vec3{0, 0, 0});
    PoseMaps canonical = pose_maps(tpl, rest, T, anchors);

    const float bend = bend_amount(pose);
    GaussianMapDecoded maps;
    maps.offset = Tensor::zeros({1, 3, T, T});
    maps.scale = Tensor::zeros({1, 3, T, T});
    maps.quaternion = Tensor::zeros({1, 4, T, T});
    maps.opacity = Tensor::zeros({1, 1, T, T});
    maps.sh = Tensor::zeros({1, 48, T, T});
    for (int row = 0; row < T; ++row) {
        for (int col = 0; col < T; ++col) {
            if (!anchors.texels[static_cast<size_t>(row) * T + col].valid) continue;
            float u = (static_cast<float>(col) + 0.5f) / static_cast<float>(T);
            float v = (static_cast<float>(row) + 0.5f) / static_cast<float>(T);
            float wave = spec.wrinkle_amplitude *
                         std::sin(static_cast<float>(kTwoPi) * static_cast<float>(spec.wrinkle_freq) * v +
                                  spec.wrinkle_phase) *
                         bend;
            for (int c = 0; c < 3; ++c) {
                maps.offset.at4(0, c, row, col) = wave * canonical.normal.at4(0, c, row, col);
                maps.scale.at4(0, c, row, col) = spec.base_scale;
            }
            maps.quaternion.at4(0, 0, row, col) = 1.0f;
            maps.opacity.at4(0, 0, row, col) = 0.95f;
            Vec3 albedo = identity_albedo(spec, u, v);
            maps.sh.at4(0, 0, row, col) = (albedo.x - 0.5f) / kShDc;
            maps.sh.at4(0, 1, row, col) = (albedo.y - 0.5f) / kShDc;
            maps.sh.at4(0, 2, row, col) = (albedo.z - 0.5f) / kShDc;
        }
    }
    return maps;
}

std::vector<Pose> sample_pose_sequence(uint64_t seed, int frame_count, int joint_count) {
    if (frame_count < 1) throw Error("sample_pose_sequence: frame_count must be >= 1");
    Rng rng(seed ^ 0x9a5e5eedull);
    // One shared period and phase so the skeleton articulates in sync: the
    // sequence sweeps from near-rest to strongly bent frames, which spreads
    // the pose-conditioning signal across its whole range.
    float period = static_cast<float>(7 + rng.next_below(5));
    float phase = static_cast<float>(rng.uniform(0.0, kTwoPi));
    struct JointCurve {
        Vec3 axis;
        float amplitude;
    };
    std::vector<JointCurve> curves(static_cast<size_t>(joint_count));
    for (int j = 0; j < joint_count; ++j) {
        Vec3 axis{static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1)),
                  static_cast<float>(rng.uniform(-1, 1))};
        if (axis.norm() < 1e-4f) axis = {0, 0, 1};
        float amp = static_cast<float>(rng.uniform(0.5 * 3.14159265 / 3.0, 3.14159265 / 3.0));
        if (j == 0) amp *= 0.3f;  // keep the root swing modest so subjects stay framed
        curves[static_cast<size_t>(j)] = {axis.normalized(), amp};
    }
    std::vector<Pose> poses(static_cast<size_t>(frame_count));
    for (int f = 0; f < frame_count; ++f) {
        Pose& p = poses[static_cast<size_t>(f)];
        p.joint_rotations.resize(static_cast<size_t>(joint_count));
        float s = std::sin(static_cast<float>(kTwoPi) * static_cast<float>(f) / period + phase);
        for (int j = 0; j < joint_count; ++j) {
            const JointCurve& c = curves[static_cast<size_t>(j)];
            p.joint_rotations[static_cast<size_t>(j)] = c.axis * (c.amplitude * s);
        }
    }
    return poses;
}

float dataset_center_height(const DatasetConfig& cfg) {
    return 0.5f * kBoneLength * static_cast<float>(cfg.joint_count - 1);
}

Camera dataset_camera(const DatasetConfig& cfg, int index) {
    float az = static_cast<float>(kTwoPi) * static_cast<float>(index) / static_cast<float>(cfg.cameras);
    Vec3 center{0, dataset_center_height(cfg), 0};
    float pixel_scale = static_cast<float>(cfg.resolution) / cfg.view_extent;
    return make_orbit_camera(az, center, 2.0f, pixel_scale, cfg.resolution, cfg.resolution);
}

namespace {

nlohmann::json config_to_json(const DatasetConfig& c) {
    return nlohmann::json{{"identities", c.identities},
                          {"frames", c.frames},
                          {"cameras", c.cameras},
                          {"resolution", c.resolution},
                          {"seed", c.seed},
                          {"uv_resolution", c.uv_resolution},
                          {"joint_count", c.joint_count},
                          {"radial_segments", c.radial_segments},
                          {"height_segments", c.height_segments},
                          {"tube_radius", c.tube_radius},
                          {"view_extent", c.view_extent},
                          {"background", {c.background.x, c.background.y, c.background.z}}};
}

DatasetConfig config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.identities = j.at("identities").get<int>();
    c.frames = j.at("frames").get<int>();
    c.cameras = j.at("cameras").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.uv_resolution = j.at("uv_resolution").get<int>();
    c.joint_count = j.at("joint_count").get<int>();
    c.radial_segments = j.at("radial_segments").get<int>();
    c.height_segments = j.at("height_segments").get<int>();
    c.tube_radius = j.at("tube_radius").get<float>();
    c.view_extent = j.at("view_extent").get<float>();
    auto bg = j.at("background");
    c.background = {bg[0].get<float>(), bg[1].get<float>(), bg[2].get<float>()};
    return c;
}

nlohmann::json camera_json(const Camera& cam) {
    return nlohmann::json{{"rotation", std::vector<float>(cam.rotation.m, cam.rotation.m + 9)},
                          {"translation", {cam.translation.x, cam.translation.y, cam.translation.z}},
                          {"pixel_scale", cam.pixel_scale},
                          {"height", cam.height},
                          {"width", cam.width}};
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    for (int i = 0; i < 9; ++i) cam.rotation.m[i] = j.at("rotation")[static_cast<size_t>(i)].get<float>();
    auto tr = j.at("translation");
    cam.translation = {tr[0].get<float>(), tr[1].get<float>(), tr[2].get<float>()};
    cam.pixel_scale = j.at("pixel_scale").get<float>();
    cam.height = j.at("height").get<int>();
    cam.width = j.at("width").get<int>();
    cam.validate();
    return cam;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error("generate_dataset: cannot create " + out_dir + ": " + ec.message());

    Template tpl = build_template(cfg.joint_count, cfg.radial_segments, cfg.height_segments,
                                  cfg.tube_radius);
    UVAnchorMap anchors = anchor_map(tpl, cfg.uv_resolution);

    DatasetManifest manifest;
    manifest.config = cfg;
    manifest.root = root.string();
    for (int c = 0; c < cfg.cameras; ++c) manifest.cameras.push_back(dataset_camera(cfg, c));

    {
        nlohmann::json jc = nlohmann::json::array();
        for (const Camera& cam : manifest.cameras) jc.push_back(camera_json(cam));
        std::ofstream out(root / "cameras.json");
        if (!out) throw Error("generate_dataset: cannot write cameras.json in " + out_dir);
        out << jc.dump(2) << "\n";
    }

    Rng seeder(cfg.seed);
    for (int i = 0; i < cfg.identities; ++i) {
        ManifestIdentity ident;
        ident.id = i;
        ident.seed = seeder.split(static_cast<uint64_t>(i)).next_u64();
        IdentitySpec spec = make_identity(ident.seed);
        auto poses = sample_pose_sequence(ident.seed ^ 0xf00d, cfg.frames, cfg.joint_count);

        for (int f = 0; f < cfg.frames; ++f) {
            fs::path frame_dir = root / ("identity_" + std::to_string(i)) /
                                 ("frame_" + std::to_string(f));
            fs::create_directories(frame_dir, ec);
            if (ec) throw Error("generate_dataset: cannot create " + frame_dir.string());

            ManifestFrame mf;
            fs::path pose_path = frame_dir / "pose.json";
            save_pose(poses[static_cast<size_t>(f)], pose_path.string());
            mf.pose_path = fs::relative(pose_path, root).string();

            GaussianMapDecoded maps = oracle_gaussians(spec, poses[static_cast<size_t>(f)], tpl, anchors);
            auto gaussians = gaussians_to_world(maps, anchors, tpl, poses[static_cast<size_t>(f)]);

            for (int c = 0; c < cfg.cameras; ++c) {
                RenderOutput ro = rasterize(gaussians, manifest.cameras[static_cast<size_t>(c)], cfg.background);
                Tensor mask = Tensor::zeros({1, 1, cfg.resolution, cfg.resolution});
                for (size_t p = 0; p < mask.data.size(); ++p)
                    mask.data[p] = ro.opacity.data[p] >= 0.5f ? 1.0f : 0.0f;

                fs::path img_path = frame_dir / ("cam_" + std::to_string(c) + ".png");
                fs::path mask_path = frame_dir / ("mask_" + std::to_string(c) + ".png");
                save_png(ro.rgb, img_path.string());
                save_png(mask, mask_path.string());
                mf.image_paths.push_back(fs::relative(img_path, root).string());
                mf.mask_paths.push_back(fs::relative(mask_path, root).string());
            }
            ident.frames.push_back(std::move(mf));
        }
        manifest.identities.push_back(std::move(ident));
    }

    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["cameras"] = "cameras.json";
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& ident : manifest.identities) {
        nlohmann::json ji;
        ji["id"] = ident.id;
        ji["seed"] = ident.seed;
        nlohmann::json frames = nlohmann::json::array();
        for (const auto& f : ident.frames)
            frames.push_back({{"pose", f.pose_path}, {"images", f.image_paths}, {"masks", f.mask_paths}});
        ji["frames"] = frames;
        ids.push_back(ji);
    }
    j["identities"] = ids;
    std::ofstream out(root / "manifest.json");
    if (!out) throw Error("generate_dataset: cannot write manifest.json in " + out_dir);
    out << j.dump(2) << "\n";
    return manifest;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_manifest: cannot open " + path);
    nlohmann::json j;
    in >> j;

    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    m.config = config_from_json(j.at("config"));

    fs::path cam_path = fs::path(m.root) / j.at("cameras").get<std::string>();
    std::ifstream cin(cam_path);
    if (!cin) throw Error("load_manifest: missing camera file " + cam_path.string());
    nlohmann::json jc;
    cin >> jc;
    for (const auto& c : jc) m.cameras.push_back(camera_from_json(c));

    for (const auto& ji : j.at("identities")) {
        ManifestIdentity ident;
        ident.id = ji.at("id").get<int>();
        ident.seed = ji.at("seed").get<uint64_t>();
        for (const auto& jf : ji.at("frames")) {
            ManifestFrame f;
            f.pose_path = jf.at("pose").get<std::string>();
            for (const auto& p : jf.at("images")) f.image_paths.push_back(p.get<std::string>());
            for (const auto& p : jf.at("masks")) f.mask_paths.push_back(p.get<std::string>());
            if (f.image_paths.size() != m.cameras.size() || f.mask_paths.size() != m.cameras.size())
                throw Error("load_manifest: camera count mismatch in identity " +
                            std::to_string(ident.id));
            for (const std::string* rel : {&f.pose_path}) {
                if (!fs::exists(fs::path(m.root) / *rel))
                    throw Error("load_manifest: missing file " + *rel);
            }
            for (const auto& rel : f.image_paths)
                if (!fs::exists(fs::path(m.root) / rel))
                    throw Error("load_manifest: missing file " + rel);
            for (const auto& rel : f.mask_paths)
                if (!fs::exists(fs::path(m.root) / rel))
                    throw Error("load_manifest: missing file " + rel);
            ident.frames.push_back(std::move(f));
        }
        if (static_cast<int>(ident.frames.size()) != m.config.frames)
            throw Error("load_manifest: frame count mismatch in identity " + std::to_string(ident.id));
        m.identities.push_back(std::move(ident));
    }
    return m;
}

}  // namespace wsd
