#include "wsd/adamw.hpp"

#include <cmath>
#include <string>

namespace wsd {

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                 float lr_scale) {
    check_shape(params.size() == grads.size(), "adamw: params/grads count mismatch");
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape));
            v_.push_back(Tensor::zeros(p->shape));
        }
    }
    check_shape(m_.size() == params.size(), "adamw: state size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        check_shape(params[i]->shape == grads[i]->shape,
                    "adamw: param/grad shape mismatch at index " + std::to_string(i) + ": " +
                        shape_str(params[i]->shape) + " vs " + shape_str(grads[i]->shape));
        if (!grads[i]->all_finite())
            throw Error("adamw: non-finite gradient in parameter " + std::to_string(i) +
                        " at step " + std::to_string(step_ + 1));
    }

    ++step_;
    const float lr = cfg_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i];
        const Tensor& g = *grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const float b1 = cfg_.beta1, b2 = cfg_.beta2;
        for (size_t j = 0; j < w.data.size(); ++j) {
            // decoupled decay, independent of the adaptive step
            w.data[j] -= lr * cfg_.weight_decay * w.data[j];
            float gj = g.data[j];
            m.data[j] = b1 * m.data[j] + (1.0f - b1) * gj;
            v.data[j] = b2 * v.data[j] + (1.0f - b2) * gj * gj;
            float mhat = static_cast<float>(m.data[j] / bc1);
            float vhat = static_cast<float>(v.data[j] / bc2);
            w.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace wsd
