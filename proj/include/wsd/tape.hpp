#pragma once

#include <functional>
#include <vector>

#include "wsd/tensor.hpp"

namespace wsd {

// Reverse-mode autodiff over a per-step tape. Node handles are plain ints.
// Graph construction is single-threaded; backward walks the tape in reverse
// insertion order, which is a valid topological order by construction.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated on demand, same shape as value
        std::vector<int> parents;
        std::function<void(Tape&, int)> backward;  // pushes this node's grad into parents
        bool requires_grad = false;
        bool grad_ready = false;
    };

    int leaf(Tensor value, bool requires_grad = false);

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(int id);  // zeros if never written
    Tensor& grad_ref(int id);
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise / unary ----
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int scale(int x, float mult, float offset = 0.0f);  // mult*x + offset
    int relu(int x);
    int gelu(int x);
    int sigmoid(int x);
    int tanh_(int x);
    int softplus(int x);
    int exp_(int x);
    int log_(int x);

    // ---- shape ops (bit-exact data movement) ----
    int reshape(int x, std::vector<int> new_shape);
    int concat(const std::vector<int>& xs, int axis);
    int slice(int x, int axis, int start, int len);

    // ---- structured ops ----
    // x: [N,Cin,H,W], w: [Cout,Cin,Kh,Kw], b: [Cout]; zero padding.
    int conv2d(int x, int w, int b, int stride, int pad);
    int upsample_nearest2x(int x);
    // Depthwise separable Gaussian blur with zero padding, fixed symmetric kernel.
    int gauss_blur(int x, int ksize, double sigma);
    int matmul(int a, int b);     // [m,k] x [k,n]
    int matmul_nt(int a, int b);  // [m,k] x [n,k]^T -> [m,n]
    int add_rowvec(int x, int b);  // x: [n,m], b: [m]
    int add_channel_const(int x, const std::vector<float>& c);  // x: [N,C,H,W]
    // L2-normalize across the channel axis per spatial location (NCHW) or per
    // row (rank 2); denominator sqrt(sum sq + eps).
    int channel_l2_normalize(int x, float eps);
    int layer_norm(int x, int gamma, int beta, float eps = 1e-5f);  // x: [n,d]
    int softmax(int x);  // over last axis of [n,d]
    int reduce_mean(int x);
    int reduce_sum(int x);
    int l1(int a, int b);   // mean |a-b|
    int mse(int a, int b);  // mean (a-b)^2

    // Custom node: caller supplies output value and a backward closure.
    int custom(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward);

    // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
    // reachable node that requires grad. loss must be scalar.
    void backward(int loss);

private:
    int push(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward);
    void accumulate(int id, const Tensor& delta);

    std::vector<Node> nodes_;
};

// Deterministic parallel-for: each index is processed exactly once by a
// sequential loop inside one worker, so results are bitwise identical for any
// worker count. Worker count comes from WSD_THREADS (default 1).
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);
int thread_count();

}  // namespace wsd
