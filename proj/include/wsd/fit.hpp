#pragma once

#include <string>

#include "wsd/adamw.hpp"
#include "wsd/losses.hpp"
#include "wsd/synthetic.hpp"
#include "wsd/unet.hpp"

namespace wsd {

struct FitConfig {
    UNetConfig unet;
    LossWeights loss;
    float lr = 1e-4f;
    float weight_decay = 1e-2f;
    int iterations = 3000;
    int warmup_steps = 200;  // linear lr ramp; perceptual term disabled
    uint64_t seed = 0;
    int log_every = 1;
};

struct LossLogRow {
    int iteration = 0;
    double total = 0, l1 = 0, ssim = 0, perceptual = 0, mask = 0;
};

struct FitResult {
    WeightRecord weights;
    std::vector<LossLogRow> log;
};

// Per-identity stage-1 optimization: sample one (frame, camera) per step with
// the seeded stream, render through the full differentiable path, AdamW step.
// The initial record comes from unet_init(cfg.unet, cfg.seed) so every
// identity starts from the same weights.
FitResult fit_identity(const DatasetManifest& manifest, int identity, const FitConfig& cfg);

void write_loss_csv(const std::vector<LossLogRow>& log, const std::string& path);

// Frame data for one identity, loaded once.
struct IdentityFrames {
    std::vector<Pose> poses;
    std::vector<std::vector<Tensor>> images;  // [frame][camera] rgb
    std::vector<std::vector<Tensor>> masks;   // [frame][camera] gray
};
IdentityFrames load_identity_frames(const DatasetManifest& manifest, int identity);

// Mean full-reference PSNR of renders against the dataset images over all
// (frame, camera) pairs of one identity.
double fit_psnr(const DatasetManifest& manifest, int identity, const WeightRecord& weights,
                const UNetConfig& unet_cfg);

// Mean decoded offset magnitude per training pose, for the pose-dependency
// property (paired with bend_amount per pose).
std::vector<double> offset_magnitude_per_pose(const DatasetManifest& manifest, int identity,
                                              const WeightRecord& weights,
                                              const UNetConfig& unet_cfg);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace wsd
