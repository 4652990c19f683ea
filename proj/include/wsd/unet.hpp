#pragma once

#include <cstdint>

#include "wsd/skeleton.hpp"
#include "wsd/splat.hpp"
#include "wsd/tape.hpp"
#include "wsd/weights.hpp"

namespace wsd {

// Pose-conditioned encoder-decoder over the UV grid. All trainable state is
// conv kernels and biases so a fitted network is exactly a WeightRecord.
// Layout: stem, per level [strided down conv, conv], per level
// [nearest-upsample + skip concat conv, conv], linear head.
struct UNetConfig {
    int input_channels = 6;  // N_uv ++ P_uv
    int hidden_channels = 8;
    int levels = 3;
    int output_channels = 59;
    int uv_resolution = 32;
};

// decode_heads ranges
inline constexpr float kOffsetMax = 0.05f;   // world units
inline constexpr float kScaleMin = 1e-3f;
inline constexpr float kScaleMax = 0.05f;

std::vector<std::array<int, 5>> unet_layer_dims(const UNetConfig& cfg);
int64_t unet_param_count(const UNetConfig& cfg);

// Kaiming-uniform kernels, zero biases, drawn once from `seed`. Every
// identity is fitted from the same record.
WeightRecord unet_init(const UNetConfig& cfg, uint64_t seed);

struct UNetNodes {
    std::vector<int> kernels;
    std::vector<int> biases;
};

UNetNodes unet_leaves(Tape& tape, const WeightRecord& weights, bool requires_grad);

// input: [1, input_channels, T, T]; returns raw [1, output_channels, T, T].
// Throws with expected-vs-actual shapes when weights do not match the config.
int unet_forward(Tape& tape, const UNetNodes& nodes, int input, const UNetConfig& cfg);

struct DecodedNodes {
    int offset = -1;
    int scale = -1;
    int quaternion = -1;
    int opacity = -1;
    int sh = -1;
};

// offset = 0.05*tanh, scale = sigmoid into [1e-3, 0.05], quaternion =
// normalize(raw + (1,0,0,0)), opacity = sigmoid, sh passthrough.
DecodedNodes decode_heads(Tape& tape, int raw);

// Plain-value decode used outside training loops.
GaussianMapDecoded decode_heads_values(const Tensor& raw);

Tensor pose_maps_input(const PoseMaps& maps);  // [1,6,T,T], normals first

// Inference path: pose maps -> forward -> decode -> world gaussians -> image.
RenderOutput render_avatar(const WeightRecord& weights, const UNetConfig& cfg, const Template& tpl,
                           const UVAnchorMap& anchors, const Pose& pose, const Camera& cam,
                           const Vec3& background);

}  // namespace wsd
