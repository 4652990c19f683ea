#pragma once

// Two-sample Kolmogorov-Smirnov test and a DDPM ancestral sampler, both
// test-side oracles for the diffusion property checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "wsd/diffusion.hpp"
#include "wsd/rng.hpp"

namespace wsd::testutil {

inline double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const size_t n = a.size(), m = b.size();
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        double x = std::min(a[i], b[j]);
        while (i < n && a[i] <= x) ++i;
        while (j < m && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    double ne = static_cast<double>(n) * m / static_cast<double>(n + m);
    double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

// DDPM posterior sampling with an injectable x0 predictor; the final step is
// noiseless.
inline double ancestral_sample_1d(const wsd::DenoiseFn& oracle, const wsd::DiffusionSchedule& s,
                                  wsd::Rng& rng) {
    std::vector<float> x{rng.normal_f()};
    for (int t = s.steps; t >= 1; --t) {
        std::vector<float> x0 = oracle(x, t);
        double ab_t = s.alpha_bar[static_cast<size_t>(t)];
        double ab_prev = s.alpha_bar[static_cast<size_t>(t) - 1];
        double beta = s.beta[static_cast<size_t>(t)];
        double alpha = s.alpha[static_cast<size_t>(t)];
        double mean = (std::sqrt(ab_prev) * beta * x0[0] +
                       std::sqrt(alpha) * (1.0 - ab_prev) * x[0]) /
                      (1.0 - ab_t);
        double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        x[0] = static_cast<float>(t > 1 ? mean + std::sqrt(var) * rng.normal() : mean);
    }
    return x[0];
}

// MSE-optimal denoiser for 1-D gaussian data N(mu, s^2).
inline wsd::DenoiseFn gaussian_posterior_denoiser(double mu, double sdev,
                                                  const wsd::DiffusionSchedule& s) {
    return [mu, sdev, &s](const std::vector<float>& xt, int t) {
        double ab = s.alpha_bar[static_cast<size_t>(t)];
        double num = std::sqrt(ab) * sdev * sdev * xt[0] + (1.0 - ab) * mu;
        double den = ab * sdev * sdev + (1.0 - ab);
        return std::vector<float>{static_cast<float>(num / den)};
    };
}

}  // namespace wsd::testutil
