#pragma once

#include "wsd/tape.hpp"
#include "wsd/weights.hpp"

namespace wsd {

// Mean SSIM with an 11x11 gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2,
// on [0,1] images. Returns a scalar node.
int ssim_node(Tape& tape, int a, int b);

// Frozen random 3-layer conv stack (seed 7, stride 2, channels 8/16/32).
// Distance is the mean squared difference between channel-unit-normalized
// feature maps, averaged over the three layers.
struct PerceptualProxy {
    PerceptualProxy();
    int distance_node(Tape& tape, int a, int b) const;
    double distance(const Tensor& a, const Tensor& b) const;

    std::vector<Tensor> kernels;
    std::vector<Tensor> biases;
};

const PerceptualProxy& perceptual_proxy();  // shared frozen instance

struct LossWeights {
    float pix = 1.0f;
    float structural = 0.1f;
    float perceptual = 0.01f;
    float mask = 0.1f;
};

struct LossTerms {
    int total = -1;  // scalar node
    double l1 = 0, ssim = 0, perceptual = 0, mask = 0;
};

// lambda_pix*L1 + lambda_str*(1-SSIM) + lambda_per*proxy + lambda_m*L1(O,M).
// The perceptual term is skipped entirely when disabled (warm-up).
LossTerms training_loss(Tape& tape, int rgb, int rgb_gt, int opacity, int mask,
                        const LossWeights& weights, bool perceptual_enabled = true);

}  // namespace wsd
