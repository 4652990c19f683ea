#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsd/skeleton.hpp"
#include "wsd/splat.hpp"

namespace wsd {

// One procedural "capture subject": banded checker albedo plus a sinusoidal
// wrinkle field whose amplitude scales with how bent the pose is.
struct IdentitySpec {
    uint64_t seed = 0;
    int band_count = 3;
    std::vector<Vec3> band_colors;
    int checker_freq = 4;
    float wrinkle_amplitude = 0.0f;  // [0, 0.03] world units
    int wrinkle_freq = 4;            // {2..8}
    float wrinkle_phase = 0.0f;
    float base_scale = 0.02f;
};

IdentitySpec make_identity(uint64_t seed);
Vec3 identity_albedo(const IdentitySpec& spec, float u, float v);

// Ground-truth gaussian maps: albedo in the SH DC term, pose-dependent
// normal offsets d = A sin(2 pi f v + phase) * bend(pose) * n_canonical.
GaussianMapDecoded oracle_gaussians(const IdentitySpec& spec, const Pose& pose,
                                    const Template& tpl, const UVAnchorMap& anchors);

// Smooth per-joint sinusoidal curves, amplitude <= pi/3 (root scaled down).
std::vector<Pose> sample_pose_sequence(uint64_t seed, int frame_count, int joint_count);

struct DatasetConfig {
    int identities = 4;
    int frames = 8;
    int cameras = 4;
    int resolution = 64;
    uint64_t seed = 0;
    int uv_resolution = 32;
    int joint_count = 4;
    int radial_segments = 12;
    int height_segments = 12;
    float tube_radius = 0.12f;
    float view_extent = 1.5f;  // world units across the image
    Vec3 background{1.0f, 1.0f, 1.0f};
};

struct ManifestFrame {
    std::string pose_path;
    std::vector<std::string> image_paths;  // one per camera
    std::vector<std::string> mask_paths;
};

struct ManifestIdentity {
    int id = 0;
    uint64_t seed = 0;
    std::vector<ManifestFrame> frames;
};

struct DatasetManifest {
    DatasetConfig config;
    std::vector<Camera> cameras;
    std::vector<ManifestIdentity> identities;
    std::string root;  // directory holding manifest.json
};

// Layout: out/identity_<i>/frame_<f>/cam_<c>.png, mask_<c>.png, pose.json;
// out/cameras.json; out/manifest.json.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);
DatasetManifest load_manifest(const std::string& path);

Camera dataset_camera(const DatasetConfig& cfg, int index);
float dataset_center_height(const DatasetConfig& cfg);

}  // namespace wsd
