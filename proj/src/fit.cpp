#include "wsd/fit.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "wsd/image.hpp"
#include "wsd/rng.hpp"

namespace fs = std::filesystem;

namespace wsd {

IdentityFrames load_identity_frames(const DatasetManifest& manifest, int identity) {
    check_shape(identity >= 0 && identity < static_cast<int>(manifest.identities.size()),
                "fit: identity index " + std::to_string(identity) + " out of range");
    const ManifestIdentity& ident = manifest.identities[static_cast<size_t>(identity)];
    IdentityFrames frames;
    for (const ManifestFrame& f : ident.frames) {
        frames.poses.push_back(load_pose((fs::path(manifest.root) / f.pose_path).string()));
        std::vector<Tensor> imgs, masks;
        for (const auto& p : f.image_paths) imgs.push_back(load_png((fs::path(manifest.root) / p).string()));
        for (const auto& p : f.mask_paths) masks.push_back(load_png((fs::path(manifest.root) / p).string()));
        frames.images.push_back(std::move(imgs));
        frames.masks.push_back(std::move(masks));
    }
    return frames;
}

namespace {

struct FitScene {
    Template tpl;
    UVAnchorMap anchors;
    std::vector<Tensor> inputs;  // per frame, [1,6,T,T]
    std::vector<std::shared_ptr<const SkinningContext>> skinning;  // per frame
};

FitScene build_scene(const DatasetManifest& manifest, const IdentityFrames& frames,
                     const UNetConfig& cfg) {
    FitScene scene;
    scene.tpl = build_template(manifest.config.joint_count, manifest.config.radial_segments,
                               manifest.config.height_segments, manifest.config.tube_radius);
    scene.anchors = anchor_map(scene.tpl, cfg.uv_resolution);
    for (const Pose& pose : frames.poses) {
        PoseMaps maps = pose_maps(scene.tpl, pose, cfg.uv_resolution, scene.anchors);
        scene.inputs.push_back(pose_maps_input(maps));
        scene.skinning.push_back(
            std::make_shared<const SkinningContext>(build_skinning(scene.tpl, scene.anchors, pose)));
    }
    return scene;
}

}  // namespace

FitResult fit_identity(const DatasetManifest& manifest, int identity, const FitConfig& cfg) {
    IdentityFrames frames = load_identity_frames(manifest, identity);
    FitScene scene = build_scene(manifest, frames, cfg.unet);
    const int frame_count = static_cast<int>(frames.poses.size());
    const int cam_count = static_cast<int>(manifest.cameras.size());
    const Vec3 bg = manifest.config.background;

    FitResult result;
    result.weights = unet_init(cfg.unet, cfg.seed);

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(opt_cfg);

    Rng sampler = Rng(cfg.seed).split(0xf17);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        int f = static_cast<int>(sampler.next_below(static_cast<uint32_t>(frame_count)));
        int c = static_cast<int>(sampler.next_below(static_cast<uint32_t>(cam_count)));
        const bool in_warmup = iter < cfg.warmup_steps;

        Tape tape;
        int input = tape.leaf(scene.inputs[static_cast<size_t>(f)], false);
        UNetNodes nodes = unet_leaves(tape, result.weights, true);
        int raw = unet_forward(tape, nodes, input, cfg.unet);
        DecodedNodes dec = decode_heads(tape, raw);
        int packed = gaussians_to_world_node(tape, dec.offset, dec.scale, dec.quaternion,
                                             dec.opacity, dec.sh, scene.skinning[static_cast<size_t>(f)]);
        int img = rasterize_node(tape, packed, manifest.cameras[static_cast<size_t>(c)], bg);
        int rgb = tape.slice(img, 1, 0, 3);
        int opacity = tape.slice(img, 1, 3, 1);
        int gt = tape.leaf(frames.images[static_cast<size_t>(f)][static_cast<size_t>(c)], false);
        int mask = tape.leaf(frames.masks[static_cast<size_t>(f)][static_cast<size_t>(c)], false);

        LossTerms terms = training_loss(tape, rgb, gt, opacity, mask, cfg.loss, !in_warmup);
        double total = tape.val(terms.total).data[0];
        if (!std::isfinite(total))
            throw Error("fit: non-finite loss at iteration " + std::to_string(iter) +
                        " (l1=" + std::to_string(terms.l1) + " ssim=" + std::to_string(terms.ssim) +
                        " perc=" + std::to_string(terms.perceptual) +
                        " mask=" + std::to_string(terms.mask) + ")");

        tape.backward(terms.total);

        std::vector<Tensor*> params;
        std::vector<const Tensor*> grads;
        for (size_t l = 0; l < result.weights.layers.size(); ++l) {
            params.push_back(&result.weights.layers[l].kernel);
            grads.push_back(&tape.grad(nodes.kernels[l]));
            params.push_back(&result.weights.layers[l].bias);
            grads.push_back(&tape.grad(nodes.biases[l]));
        }
        float lr_scale = in_warmup && cfg.warmup_steps > 0
                             ? static_cast<float>(iter + 1) / static_cast<float>(cfg.warmup_steps)
                             : 1.0f;
        opt.step(params, grads, lr_scale);

        if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations)
            result.log.push_back({iter, total, terms.l1, terms.ssim, terms.perceptual, terms.mask});
    }
    return result;
}

void write_loss_csv(const std::vector<LossLogRow>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("fit: cannot write loss log " + path);
    out << "iteration,total,l1,ssim,perc,mask\n";
    for (const auto& row : log)
        out << row.iteration << "," << row.total << "," << row.l1 << "," << row.ssim << ","
            << row.perceptual << "," << row.mask << "\n";
}

double fit_psnr(const DatasetManifest& manifest, int identity, const WeightRecord& weights,
                const UNetConfig& unet_cfg) {
    IdentityFrames frames = load_identity_frames(manifest, identity);
    Template tpl = build_template(manifest.config.joint_count, manifest.config.radial_segments,
                                  manifest.config.height_segments, manifest.config.tube_radius);
    UVAnchorMap anchors = anchor_map(tpl, unet_cfg.uv_resolution);
    double acc = 0.0;
    int count = 0;
    for (size_t f = 0; f < frames.poses.size(); ++f) {
        for (size_t c = 0; c < manifest.cameras.size(); ++c) {
            RenderOutput out = render_avatar(weights, unet_cfg, tpl, anchors, frames.poses[f],
                                             manifest.cameras[c], manifest.config.background);
            acc += psnr(out.rgb, frames.images[f][c]);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

std::vector<double> offset_magnitude_per_pose(const DatasetManifest& manifest, int identity,
                                              const WeightRecord& weights,
                                              const UNetConfig& unet_cfg) {
    IdentityFrames frames = load_identity_frames(manifest, identity);
    Template tpl = build_template(manifest.config.joint_count, manifest.config.radial_segments,
                                  manifest.config.height_segments, manifest.config.tube_radius);
    UVAnchorMap anchors = anchor_map(tpl, unet_cfg.uv_resolution);
    std::vector<double> result;
    for (const Pose& pose : frames.poses) {
        PoseMaps maps = pose_maps(tpl, pose, unet_cfg.uv_resolution, anchors);
        Tape tape;
        int input = tape.leaf(pose_maps_input(maps), false);
        UNetNodes nodes = unet_leaves(tape, weights, false);
        int raw = unet_forward(tape, nodes, input, unet_cfg);
        DecodedNodes dec = decode_heads(tape, raw);
        const Tensor& off = tape.val(dec.offset);
        const int T = unet_cfg.uv_resolution;
        double acc = 0.0;
        int count = 0;
        for (int row = 0; row < T; ++row)
            for (int col = 0; col < T; ++col) {
                if (!anchors.texels[static_cast<size_t>(row) * T + col].valid) continue;
                double x = off.at4(0, 0, row, col), y = off.at4(0, 1, row, col),
                       z = off.at4(0, 2, row, col);
                acc += std::sqrt(x * x + y * y + z * z);
                ++count;
            }
        result.push_back(count > 0 ? acc / count : 0.0);
    }
    return result;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    check_shape(a.size() == b.size() && a.size() >= 2, "pearson: need two same-length series");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(a.size());
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0 || vb <= 0) return 0.0;
    return num / std::sqrt(va * vb);
}

}  // namespace wsd
