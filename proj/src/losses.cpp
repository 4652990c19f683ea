#include "wsd/losses.hpp"

#include <cmath>

#include "wsd/rng.hpp"

namespace wsd {

namespace {
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr float kC1 = 0.01f * 0.01f;
constexpr float kC2 = 0.03f * 0.03f;
}  // namespace

int ssim_node(Tape& tape, int a, int b) {
    const Tensor& av = tape.val(a);
    const Tensor& bv = tape.val(b);
    check_shape(av.shape == bv.shape,
                "ssim: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    check_shape(av.rank() == 4, "ssim: images must be NCHW");

    auto blur = [&](int x) { return tape.gauss_blur(x, kSsimWindow, kSsimSigma); };
    int mu_a = blur(a);
    int mu_b = blur(b);
    int mu_aa = tape.mul(mu_a, mu_a);
    int mu_bb = tape.mul(mu_b, mu_b);
    int mu_ab = tape.mul(mu_a, mu_b);
    int var_a = tape.sub(blur(tape.mul(a, a)), mu_aa);
    int var_b = tape.sub(blur(tape.mul(b, b)), mu_bb);
    int cov = tape.sub(blur(tape.mul(a, b)), mu_ab);

    int num = tape.mul(tape.scale(mu_ab, 2.0f, kC1), tape.scale(cov, 2.0f, kC2));
    int den = tape.mul(tape.scale(tape.add(mu_aa, mu_bb), 1.0f, kC1),
                       tape.scale(tape.add(var_a, var_b), 1.0f, kC2));
    return tape.reduce_mean(tape.div(num, den));
}

PerceptualProxy::PerceptualProxy() {
    Rng rng(7);
    const int dims[3][2] = {{8, 3}, {16, 8}, {32, 16}};
    for (const auto& d : dims) {
        Tensor k = Tensor::zeros({d[0], d[1], 3, 3});
        float bound = std::sqrt(6.0f / static_cast<float>(d[1] * 9));
        for (auto& v : k.data) v = static_cast<float>(rng.uniform(-bound, bound));
        kernels.push_back(std::move(k));
        biases.push_back(Tensor::zeros({d[0]}));
    }
}

const PerceptualProxy& perceptual_proxy() {
    static PerceptualProxy proxy;
    return proxy;
}

int PerceptualProxy::distance_node(Tape& tape, int a, int b) const {
    std::vector<int> kid, bid;
    for (size_t i = 0; i < kernels.size(); ++i) {
        kid.push_back(tape.leaf(kernels[i], false));
        bid.push_back(tape.leaf(biases[i], false));
    }
    int xa = a, xb = b;
    int total = -1;
    for (size_t i = 0; i < kernels.size(); ++i) {
        xa = tape.relu(tape.conv2d(xa, kid[i], bid[i], 2, 1));
        xb = tape.relu(tape.conv2d(xb, kid[i], bid[i], 2, 1));
        int fa = tape.channel_l2_normalize(xa, 1e-10f);
        int fb = tape.channel_l2_normalize(xb, 1e-10f);
        int d = tape.mse(fa, fb);
        total = total < 0 ? d : tape.add(total, d);
    }
    return tape.scale(total, 1.0f / static_cast<float>(kernels.size()));
}

double PerceptualProxy::distance(const Tensor& a, const Tensor& b) const {
    Tape tape;
    int ai = tape.leaf(a, false);
    int bi = tape.leaf(b, false);
    return tape.val(distance_node(tape, ai, bi)).data[0];
}

LossTerms training_loss(Tape& tape, int rgb, int rgb_gt, int opacity, int mask,
                        const LossWeights& weights, bool perceptual_enabled) {
    LossTerms terms;
    int l1 = tape.l1(rgb, rgb_gt);
    int ssim = ssim_node(tape, rgb, rgb_gt);
    int mask_l1 = tape.l1(opacity, mask);

    terms.l1 = tape.val(l1).data[0];
    terms.ssim = tape.val(ssim).data[0];
    terms.mask = tape.val(mask_l1).data[0];

    int total = tape.scale(l1, weights.pix);
    total = tape.add(total, tape.scale(ssim, -weights.structural, weights.structural));
    total = tape.add(total, tape.scale(mask_l1, weights.mask));
    if (perceptual_enabled && weights.perceptual > 0.0f) {
        int perc = perceptual_proxy().distance_node(tape, rgb, rgb_gt);
        terms.perceptual = tape.val(perc).data[0];
        total = tape.add(total, tape.scale(perc, weights.perceptual));
    }
    terms.total = total;
    return terms;
}

}  // namespace wsd
