#pragma once

#include <vector>

#include "wsd/geom.hpp"
#include "wsd/tape.hpp"

namespace wsd {

// 59-parameter Gaussian primitive: position(3) scale(3) quaternion(4)
// opacity(1) SH(48), in that order when packed into an [M,59] tensor.
inline constexpr int kGaussianParams = 59;

struct Gaussian {
    Vec3 position;
    Vec3 scale;     // > 0, world units
    Quat rotation;  // unit after decoding
    float opacity = 0.0f;
    float sh[48] = {0};
};

// Orthographic camera. rotation maps world to camera coordinates; depth is
// camera-frame z; the image plane is spanned by camera x (right) and y (down,
// matching row order). pixel = pixel_scale * cam_xy + (W/2, H/2).
struct Camera {
    Mat3 rotation;
    Vec3 translation;
    float pixel_scale = 1.0f;  // pixels per world unit
    int height = 0;
    int width = 0;

    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
    Vec3 forward_world() const { return rotation.row(2); }
    void validate() const;  // orthonormality within 1e-6
};

struct RenderOutput {
    Tensor rgb;      // [1,3,H,W] in [0,1]
    Tensor opacity;  // [1,1,H,W] in [0,1]
};

struct Projected {
    float mean_px[2];
    float cov_px[3];  // (xx, xy, yy), before the rasterizer low-pass
    float depth;
};

// Sigma = R(q) diag(s^2) R(q)^T. Throws on zero-norm quaternion.
Mat3 build_covariance(const Vec3& scale, const Quat& q);

Projected project(const Gaussian& g, const Camera& cam);

// Low-pass added to the 2D covariance diagonal before inversion (pixel^2).
inline constexpr float kCovLowPass = 0.3f;
// Per-pixel density clamp and cutoff.
inline constexpr float kSigmaClamp = 0.999f;
inline constexpr float kSigmaCutoff = 1.0f / 255.0f;

RenderOutput rasterize(const std::vector<Gaussian>& gaussians, const Camera& cam, const Vec3& bg);

// Autodiff bridge: packed [M,59] gaussian tensor -> [1,4,H,W] (rgb + opacity),
// differentiable wrt every gaussian parameter.
int rasterize_node(Tape& tape, int packed, const Camera& cam, const Vec3& bg);

Gaussian unpack_gaussian(const float* row);
void pack_gaussian(const Gaussian& g, float* row);

// Camera on a horizontal circle looking at `center`, world +Y up, image rows
// increasing downward.
Camera make_orbit_camera(float azimuth_rad, const Vec3& center, float orbit_radius,
                         float pixel_scale, int height, int width);

// JSON layout: {"rotation":[9 row-major],"translation":[3],"pixel_scale":s,
// "height":h,"width":w}
Camera load_camera(const std::string& path);
void save_camera(const Camera& cam, const std::string& path);

}  // namespace wsd
