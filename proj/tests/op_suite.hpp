#pragma once

// Table of differentiable ops with input generators, shared by the unit tests
// and the acceptance gradient suite. Each case builds a scalar loss
// mean(out * w_fixed) around the op so that gradients are non-degenerate even
// for ops whose uniform-weight reduction would vanish (softmax, layer norm).

#include <functional>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "wsd/rng.hpp"
#include "wsd/tape.hpp"

namespace wsd::testutil {

struct OpCase {
    std::string name;
    // shapes of differentiable inputs
    std::vector<std::vector<int>> input_shapes;
    // op body: returns output node given input leaf ids
    std::function<int(wsd::Tape&, const std::vector<int>&)> body;
    // optional per-input value transform (kink avoidance, positivity)
    std::function<float(float, int input_idx)> remap = nullptr;
};

inline wsd::Tensor random_tensor(std::vector<int> shape, wsd::Rng& rng) {
    wsd::Tensor t = wsd::Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

// Runs one op case at one seed; returns max relative FD error.
inline double run_op_case(const OpCase& c, uint64_t seed) {
    wsd::Rng rng(seed);
    std::vector<wsd::Tensor> inputs;
    for (const auto& s : c.input_shapes) inputs.push_back(random_tensor(s, rng));
    if (c.remap) {
        for (size_t i = 0; i < inputs.size(); ++i)
            for (auto& v : inputs[i].data) v = c.remap(v, static_cast<int>(i));
    }

    // probe output shape, then freeze a random weighting tensor
    wsd::Tensor w;
    {
        wsd::Tape probe;
        std::vector<int> ids;
        for (auto& in : inputs) ids.push_back(probe.leaf(in, false));
        int out = c.body(probe, ids);
        w = random_tensor(probe.val(out).shape, rng);
    }

    auto build = [&](wsd::Tape& t, const std::vector<int>& ids) {
        int out = c.body(t, ids);
        if (t.val(out).numel() == 1) return out;
        int wid = t.leaf(w, false);
        return t.reduce_mean(t.mul(out, wid));
    };
    return fd_check(build, inputs).max_rel_err;
}

inline float away_from_zero(float v) { return std::abs(v) < 0.05f ? (v < 0 ? v - 0.1f : v + 0.1f) : v; }

inline std::vector<OpCase> op_suite() {
    using wsd::Tape;
    std::vector<OpCase> cases;
    auto add = [&](OpCase c) { cases.push_back(std::move(c)); };

    add({"conv2d_s1", {{1, 2, 6, 6}, {3, 2, 3, 3}, {3}},
         [](Tape& t, const std::vector<int>& in) { return t.conv2d(in[0], in[1], in[2], 1, 1); }});
    add({"conv2d_s2", {{1, 2, 6, 6}, {3, 2, 3, 3}, {3}},
         [](Tape& t, const std::vector<int>& in) { return t.conv2d(in[0], in[1], in[2], 2, 1); }});
    add({"upsample_nearest2x", {{1, 2, 3, 3}},
         [](Tape& t, const std::vector<int>& in) { return t.upsample_nearest2x(in[0]); }});
    add({"gauss_blur", {{1, 2, 7, 7}},
         [](Tape& t, const std::vector<int>& in) { return t.gauss_blur(in[0], 5, 1.5); }});
    add({"matmul", {{3, 4}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.matmul(in[0], in[1]); }});
    add({"matmul_nt", {{3, 4}, {5, 4}},
         [](Tape& t, const std::vector<int>& in) { return t.matmul_nt(in[0], in[1]); }});
    add({"add", {{2, 3, 2, 2}, {2, 3, 2, 2}},
         [](Tape& t, const std::vector<int>& in) { return t.add(in[0], in[1]); }});
    add({"sub", {{4, 5}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.sub(in[0], in[1]); }});
    add({"mul", {{4, 5}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.mul(in[0], in[1]); }});
    add({"div", {{4, 5}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.div(in[0], in[1]); },
         [](float v, int i) { return i == 0 ? v : (v < 0 ? v - 1.5f : v + 1.5f); }});
    add({"scale", {{4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.scale(in[0], -1.7f, 0.3f); }});
    add({"relu", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.relu(in[0]); },
         [](float v, int) { return away_from_zero(v); }});
    add({"gelu", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.gelu(in[0]); }});
    add({"sigmoid", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.sigmoid(in[0]); }});
    add({"tanh", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.tanh_(in[0]); }});
    add({"softplus", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.softplus(in[0]); }});
    add({"exp", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.exp_(in[0]); }});
    add({"log", {{4, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.log_(in[0]); },
         [](float v, int) { return 1.0f + 0.5f * v; }});
    add({"layer_norm", {{3, 8}, {8}, {8}},
         [](Tape& t, const std::vector<int>& in) { return t.layer_norm(in[0], in[1], in[2]); }});
    add({"softmax", {{3, 6}},
         [](Tape& t, const std::vector<int>& in) { return t.softmax(in[0]); }});
    add({"reshape", {{2, 6}},
         [](Tape& t, const std::vector<int>& in) { return t.reshape(in[0], {3, 4}); }});
    add({"concat", {{2, 3}, {2, 2}},
         [](Tape& t, const std::vector<int>& in) { return t.concat({in[0], in[1]}, 1); }});
    add({"slice", {{3, 8}},
         [](Tape& t, const std::vector<int>& in) { return t.slice(in[0], 1, 2, 4); }});
    add({"reduce_mean", {{3, 7}},
         [](Tape& t, const std::vector<int>& in) { return t.reduce_mean(in[0]); }});
    add({"reduce_sum", {{3, 7}},
         [](Tape& t, const std::vector<int>& in) { return t.reduce_sum(in[0]); }});
    add({"l1", {{4, 5}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.l1(in[0], in[1]); },
         [](float v, int i) { return i == 0 ? v : 2.0f + v; }});
    add({"mse", {{4, 5}, {4, 5}},
         [](Tape& t, const std::vector<int>& in) { return t.mse(in[0], in[1]); }});
    add({"add_rowvec", {{4, 5}, {5}},
         [](Tape& t, const std::vector<int>& in) { return t.add_rowvec(in[0], in[1]); }});
    add({"add_channel_const", {{1, 3, 4, 4}},
         [](Tape& t, const std::vector<int>& in) {
             return t.add_channel_const(in[0], {0.5f, -0.25f, 1.0f});
         }});
    add({"channel_l2_normalize", {{1, 4, 3, 3}},
         [](Tape& t, const std::vector<int>& in) { return t.channel_l2_normalize(in[0], 1e-8f); }});

    // composite: conv -> relu-free smooth chain mixing several op kinds
    add({"composite_5op", {{1, 2, 6, 6}, {2, 2, 3, 3}, {2}},
         [](Tape& t, const std::vector<int>& in) {
             int c = t.conv2d(in[0], in[1], in[2], 1, 1);
             int s = t.sigmoid(c);
             int u = t.upsample_nearest2x(s);
             int m = t.mul(u, u);
             return t.reduce_mean(m);
         }});
    return cases;
}

}  // namespace wsd::testutil
