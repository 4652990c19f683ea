#include "wsd/unet.hpp"

#include <cmath>

#include "wsd/rng.hpp"

namespace wsd {

std::vector<std::array<int, 5>> unet_layer_dims(const UNetConfig& cfg) {
    check_shape(cfg.levels >= 1, "unet: levels must be >= 1");
    check_shape(cfg.uv_resolution % (1 << cfg.levels) == 0,
                "unet: uv resolution " + std::to_string(cfg.uv_resolution) +
                    " must be divisible by 2^levels");
    const int h = cfg.hidden_channels;
    std::vector<std::array<int, 5>> dims;
    dims.push_back({h, cfg.input_channels, 3, 3, h});
    for (int l = 0; l < cfg.levels; ++l) {
        dims.push_back({h, h, 3, 3, h});  // strided down
        dims.push_back({h, h, 3, 3, h});
    }
    for (int l = 0; l < cfg.levels; ++l) {
        dims.push_back({h, 2 * h, 3, 3, h});  // after skip concat
        dims.push_back({h, h, 3, 3, h});
    }
    dims.push_back({cfg.output_channels, h, 3, 3, cfg.output_channels});
    return dims;
}

int64_t unet_param_count(const UNetConfig& cfg) {
    int64_t n = 0;
    for (const auto& d : unet_layer_dims(cfg))
        n += static_cast<int64_t>(d[0]) * d[1] * d[2] * d[3] + d[4];
    return n;
}

WeightRecord unet_init(const UNetConfig& cfg, uint64_t seed) {
    Rng rng(seed ^ 0x00e77e5eedull);
    WeightRecord rec;
    for (const auto& d : unet_layer_dims(cfg)) {
        WeightLayer l;
        l.kernel = Tensor::zeros({d[0], d[1], d[2], d[3]});
        l.bias = Tensor::zeros({d[4]});
        float bound = std::sqrt(6.0f / static_cast<float>(d[1] * d[2] * d[3]));
        for (auto& v : l.kernel.data) v = static_cast<float>(rng.uniform(-bound, bound));
        rec.layers.push_back(std::move(l));
    }
    return rec;
}

UNetNodes unet_leaves(Tape& tape, const WeightRecord& weights, bool requires_grad) {
    UNetNodes nodes;
    for (const WeightLayer& l : weights.layers) {
        nodes.kernels.push_back(tape.leaf(l.kernel, requires_grad));
        nodes.biases.push_back(tape.leaf(l.bias, requires_grad));
    }
    return nodes;
}

int unet_forward(Tape& tape, const UNetNodes& nodes, int input, const UNetConfig& cfg) {
    auto dims = unet_layer_dims(cfg);
    check_shape(nodes.kernels.size() == dims.size() && nodes.biases.size() == dims.size(),
                "unet_forward: weights have " + std::to_string(nodes.kernels.size()) +
                    " layers, config expects " + std::to_string(dims.size()));
    for (size_t i = 0; i < dims.size(); ++i) {
        const Tensor& k = tape.val(nodes.kernels[i]);
        const Tensor& b = tape.val(nodes.biases[i]);
        std::vector<int> want{dims[i][0], dims[i][1], dims[i][2], dims[i][3]};
        if (k.shape != want || b.shape != std::vector<int>{dims[i][4]})
            throw Error("unet_forward: layer " + std::to_string(i) + " expects kernel " +
                        shape_str(want) + " bias [" + std::to_string(dims[i][4]) + "], got kernel " +
                        shape_str(k.shape) + " bias " + shape_str(b.shape));
    }
    const Tensor& in = tape.val(input);
    check_shape(in.rank() == 4 && in.dim(1) == cfg.input_channels && in.dim(2) == in.dim(3),
                "unet_forward: input must be [1," + std::to_string(cfg.input_channels) +
                    ",T,T], got " + shape_str(in.shape));

    size_t li = 0;
    auto conv = [&](int x, int stride) {
        int y = tape.conv2d(x, nodes.kernels[li], nodes.biases[li], stride, 1);
        ++li;
        return y;
    };

    std::vector<int> skips;
    int x = tape.relu(conv(input, 1));
    skips.push_back(x);
    for (int l = 0; l < cfg.levels; ++l) {
        x = tape.relu(conv(x, 2));
        x = tape.relu(conv(x, 1));
        if (l + 1 < cfg.levels) skips.push_back(x);
    }
    for (int l = cfg.levels - 1; l >= 0; --l) {
        int up = tape.upsample_nearest2x(x);
        int cat = tape.concat({up, skips[static_cast<size_t>(l)]}, 1);
        x = tape.relu(conv(cat, 1));
        x = tape.relu(conv(x, 1));
    }
    return conv(x, 1);  // linear head
}

DecodedNodes decode_heads(Tape& tape, int raw) {
    const Tensor& rv = tape.val(raw);
    check_shape(rv.rank() == 4 && rv.dim(1) == 59,
                "decode_heads: raw must be [1,59,T,T], got " + shape_str(rv.shape));
    DecodedNodes d;
    d.offset = tape.scale(tape.tanh_(tape.slice(raw, 1, 0, 3)), kOffsetMax);
    d.scale = tape.scale(tape.sigmoid(tape.slice(raw, 1, 3, 3)), kScaleMax - kScaleMin, kScaleMin);
    d.quaternion = tape.channel_l2_normalize(
        tape.add_channel_const(tape.slice(raw, 1, 6, 4), {1.0f, 0.0f, 0.0f, 0.0f}), 1e-12f);
    d.opacity = tape.sigmoid(tape.slice(raw, 1, 10, 1));
    d.sh = tape.slice(raw, 1, 11, 48);
    return d;
}

GaussianMapDecoded decode_heads_values(const Tensor& raw) {
    Tape tape;
    int raw_id = tape.leaf(raw, false);
    DecodedNodes d = decode_heads(tape, raw_id);
    GaussianMapDecoded maps;
    maps.offset = tape.val(d.offset);
    maps.scale = tape.val(d.scale);
    maps.quaternion = tape.val(d.quaternion);
    maps.opacity = tape.val(d.opacity);
    maps.sh = tape.val(d.sh);
    return maps;
}

Tensor pose_maps_input(const PoseMaps& maps) {
    const int T = maps.position.dim(2);
    Tensor in = Tensor::zeros({1, 6, T, T});
    std::copy(maps.normal.data.begin(), maps.normal.data.end(), in.data.begin());
    std::copy(maps.position.data.begin(), maps.position.data.end(),
              in.data.begin() + static_cast<int64_t>(3) * T * T);
    return in;
}

RenderOutput render_avatar(const WeightRecord& weights, const UNetConfig& cfg, const Template& tpl,
                           const UVAnchorMap& anchors, const Pose& pose, const Camera& cam,
                           const Vec3& background) {
    PoseMaps maps = pose_maps(tpl, pose, cfg.uv_resolution, anchors);
    Tape tape;
    int input = tape.leaf(pose_maps_input(maps), false);
    UNetNodes nodes = unet_leaves(tape, weights, false);
    int raw = unet_forward(tape, nodes, input, cfg);
    DecodedNodes dec = decode_heads(tape, raw);
    auto ctx = std::make_shared<SkinningContext>(build_skinning(tpl, anchors, pose));
    int packed = gaussians_to_world_node(tape, dec.offset, dec.scale, dec.quaternion, dec.opacity,
                                         dec.sh, ctx);
    int img = rasterize_node(tape, packed, cam, background);
    const Tensor& iv = tape.val(img);
    RenderOutput out;
    out.rgb = Tensor::zeros({1, 3, cam.height, cam.width});
    out.opacity = Tensor::zeros({1, 1, cam.height, cam.width});
    const int64_t hw = static_cast<int64_t>(cam.height) * cam.width;
    std::copy(iv.data.begin(), iv.data.begin() + 3 * hw, out.rgb.data.begin());
    std::copy(iv.data.begin() + 3 * hw, iv.data.end(), out.opacity.data.begin());
    return out;
}

}  // namespace wsd
