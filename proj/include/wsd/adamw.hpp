#pragma once

#include <cstdint>
#include <vector>

#include "wsd/tensor.hpp"

namespace wsd {

struct AdamWConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-2f;
};

// AdamW with decoupled weight decay: w <- w - lr*wd*w, applied independently
// of the adaptive update. Moment buffers are created on first step.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // lr_scale multiplies cfg.lr for this step (warm-up ramps, decay schedules).
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
              float lr_scale = 1.0f);

    int64_t steps_taken() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }

private:
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

}  // namespace wsd
