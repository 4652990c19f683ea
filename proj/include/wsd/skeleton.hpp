#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "wsd/geom.hpp"
#include "wsd/splat.hpp"
#include "wsd/tape.hpp"

namespace wsd {

inline constexpr float kBoneLength = 0.25f;

// Procedural tube template: a cylinder along +Y with a chain of joints spaced
// kBoneLength apart, cylindrical UV unwrap (u = angle / 2pi, v = normalized
// height) and cap fans whose UV triangles are degenerate so the side surface
// owns the whole texel grid.
struct Template {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<float, 2>> uv;  // per vertex, in [0,1]^2
    int joint_count = 0;
    std::vector<int> parent;      // parent[0] == -1
    std::vector<Vec3> joint_rest;
    std::vector<std::vector<float>> skin_weights;  // [vertex][joint], rows sum to 1
    bool cylindrical_seam = false;  // set for the tube unwrap; enables UV lifting

    // Per-triangle UV corners with the cylindrical seam unwrapped: corners at
    // u==0 of a seam-crossing triangle are lifted to u==1.
    std::array<std::array<float, 2>, 3> triangle_uv(int tri) const;
};

struct Pose {
    std::vector<Vec3> joint_rotations;  // axis-angle, |angle| <= pi
    Vec3 root_translation{0, 0, 0};
};

struct UVAnchorMap {
    struct Texel {
        int triangle = -1;
        float bary[3] = {0, 0, 0};
        bool valid = false;
    };
    int resolution = 0;
    std::vector<Texel> texels;  // index = v_row * T + u_col
    int valid_count = 0;
};

struct PoseMaps {
    Tensor position;  // [1,3,T,T]
    Tensor normal;    // [1,3,T,T], unit on valid texels, zero elsewhere
};

// Blended per-texel skinning data for one (template, anchors, pose) triple.
struct SkinningContext {
    struct Entry {
        int texel = 0;    // row-major texel index
        Vec3 anchor;      // canonical barycentric surface point
        Mat3 rot;         // rotation part of the blended skinning transform
        Vec3 trans;
        Quat bone_quat;   // normalized linear blend of joint quaternions
    };
    int resolution = 0;
    std::vector<Entry> entries;
};

Template build_template(int joint_count, int radial_segments, int height_segments, float radius);

// World transform of every joint composed along the parent chain, then the
// inverse rest bind; identity pose yields identity skinning transforms.
std::vector<Transform> skinning_transforms(const Template& tpl, const Pose& pose);
std::vector<Quat> joint_world_quats(const Template& tpl, const Pose& pose);

std::vector<Vec3> lbs(const Template& tpl, const Pose& pose);

UVAnchorMap anchor_map(const Template& tpl, int resolution);

PoseMaps pose_maps(const Template& tpl, const Pose& pose, int resolution,
                   const UVAnchorMap& anchors);

SkinningContext build_skinning(const Template& tpl, const UVAnchorMap& anchors, const Pose& pose);

// Decoded per-texel gaussian parameter maps, all NCHW at the anchor resolution.
struct GaussianMapDecoded {
    Tensor offset;      // [1,3,T,T] world units
    Tensor scale;       // [1,3,T,T]
    Tensor quaternion;  // [1,4,T,T] unit
    Tensor opacity;     // [1,1,T,T]
    Tensor sh;          // [1,48,T,T]
};

std::vector<Gaussian> gaussians_to_world(const GaussianMapDecoded& maps,
                                         const UVAnchorMap& anchors, const Template& tpl,
                                         const Pose& pose);

// Autodiff bridge producing the packed [M,59] world-gaussian tensor.
int gaussians_to_world_node(Tape& tape, int offset, int scale, int quaternion, int opacity,
                            int sh, std::shared_ptr<const SkinningContext> ctx);

// Pose files: JSON array of per-joint [x,y,z] axis-angle triples, or an object
// {"joints": [...], "root_translation": [x,y,z]}.
Pose load_pose(const std::string& path);
void save_pose(const Pose& pose, const std::string& path);
void validate_pose(const Pose& pose, int joint_count);

// Mean axis-angle magnitude over non-root joints, normalized by pi.
float bend_amount(const Pose& pose);

}  // namespace wsd
