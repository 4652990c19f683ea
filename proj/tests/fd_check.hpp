#pragma once

// Central finite-difference gradient checker used by the unit and acceptance
// suites. Kept independent of the backward implementation: it only calls the
// forward builder, never reads analytic gradients of the op under test.

#include <cmath>
#include <functional>
#include <vector>

#include "wsd/tape.hpp"

namespace wsd::testutil {

// Builds a scalar loss from leaf ids; returns the loss node id.
using GraphBuilder = std::function<int(wsd::Tape&, const std::vector<int>&)>;

struct FdReport {
    double max_rel_err = 0.0;
    int worst_input = -1;
    int worst_index = -1;
};

// Compares backward() gradients against central differences for every entry
// of every input tensor. Relative error is normalized by the largest
// finite-difference gradient magnitude (floored at 1), so near-zero entries
// do not blow up the ratio while sign or scale bugs on significant entries
// are still caught.
inline FdReport fd_check(const GraphBuilder& build, std::vector<wsd::Tensor> inputs,
                         double eps = 1e-3) {
    using wsd::Tape;
    using wsd::Tensor;

    // analytic pass
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<int> ids;
        for (auto& in : inputs) ids.push_back(tape.leaf(in, true));
        int loss = build(tape, ids);
        tape.backward(loss);
        for (int id : ids) analytic.push_back(tape.grad(id));
    }

    auto eval = [&](const std::vector<Tensor>& xs) -> double {
        Tape tape;
        std::vector<int> ids;
        for (auto& in : xs) ids.push_back(tape.leaf(in, false));
        int loss = build(tape, ids);
        return static_cast<double>(tape.val(loss).data[0]);
    };

    double gmax = 1.0;
    std::vector<Tensor> fd = analytic;  // shapes only
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            float orig = inputs[i].data[j];
            inputs[i].data[j] = orig + static_cast<float>(eps);
            double up = eval(inputs);
            inputs[i].data[j] = orig - static_cast<float>(eps);
            double dn = eval(inputs);
            inputs[i].data[j] = orig;
            double g = (up - dn) / (2.0 * eps);
            fd[i].data[j] = static_cast<float>(g);
            gmax = std::max(gmax, std::abs(g));
        }
    }

    FdReport rep;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            double rel = std::abs(static_cast<double>(analytic[i].data[j]) - fd[i].data[j]) / gmax;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = static_cast<int>(i);
                rep.worst_index = static_cast<int>(j);
            }
        }
    }
    return rep;
}

}  // namespace wsd::testutil
