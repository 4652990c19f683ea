#include "wsd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace wsd {

// ---------------------------------------------------------------------------
// parallel_for

int thread_count() {
    static int n = [] {
        const char* env = std::getenv("WSD_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        return v < 1 ? 1 : v;
    }();
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    int workers = thread_count();
    if (workers <= 1 || n < 256) {
        body(0, n);
        return;
    }
    if (workers > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers - 1));
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min<int64_t>(n, chunk));
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Tape basics

int Tape::push(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward) {
    Node node;
    node.value = std::move(value);
    node.parents = std::move(parents);
    node.backward = std::move(backward);
    for (int p : node.parents) {
        if (nodes_[static_cast<size_t>(p)].requires_grad) {
            node.requires_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::custom(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward) {
    return push(std::move(value), std::move(parents), std::move(backward));
}

Tensor& Tape::grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_ready = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(int id) {
    return grad_ref(id);
}

void Tape::accumulate(int id, const Tensor& delta) {
    Tensor& g = grad_ref(id);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
}

void Tape::backward(int loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    check_shape(ln.value.numel() == 1, "backward: loss must be scalar, got " + shape_str(ln.value.shape));
    grad_ref(loss).data[0] = 1.0f;
    for (int id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.grad_ready || !n.backward) continue;
        n.backward(*this, id);
    }
}

static void map_unary(Tape& t, int x, Tensor& out, float (*f)(float)) {
    const Tensor& xv = t.val(x);
    out = Tensor::zeros(xv.shape);
    const float* in = xv.data.data();
    float* o = out.data.data();
    int64_t n = xv.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = f(in[i]);
}

// ---------------------------------------------------------------------------
// elementwise ops

int Tape::add(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a)) t.accumulate(a, g);
        if (t.requires_grad(b)) t.accumulate(b, g);
    });
}

int Tape::sub(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a)) t.accumulate(a, g);
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

int Tape::mul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.val(a);
        const Tensor& bv = t.val(b);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
        }
    });
}

int Tape::div(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "div: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] / bv.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.val(a);
        const Tensor& bv = t.val(b);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] / bv.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (size_t i = 0; i < gb.data.size(); ++i)
                gb.data[i] -= g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
        }
    });
}

int Tape::scale(int x, float mult, float offset) {
    const Tensor& xv = val(x);
    Tensor out = Tensor::zeros(xv.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = mult * xv.data[i] + offset;
    return push(std::move(out), {x}, [x, mult](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += mult * g.data[i];
    });
}

int Tape::relu(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) { return v > 0.0f ? v : 0.0f; });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (xv.data[i] > 0.0f) gx.data[i] += g.data[i];
    });
}

static constexpr float kInvSqrt2 = 0.7071067811865475f;
static constexpr float kInvSqrt2Pi = 0.3989422804014327f;

int Tape::gelu(int x) {
    Tensor out;
    map_unary(*this, x, out,
              [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            float v = xv.data[i];
            float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
            float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
            gx.data[i] += g.data[i] * (cdf + v * pdf);
        }
    });
}

int Tape::sigmoid(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& yv = t.val(self);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            float s = yv.data[i];
            gx.data[i] += g.data[i] * s * (1.0f - s);
        }
    });
}

int Tape::tanh_(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) { return std::tanh(v); });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& yv = t.val(self);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += g.data[i] * (1.0f - yv.data[i] * yv.data[i]);
    });
}

int Tape::softplus(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) {
        if (v > 20.0f) return v;
        if (v < -20.0f) return std::exp(v);
        return std::log1p(std::exp(v));
    });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += g.data[i] / (1.0f + std::exp(-xv.data[i]));
    });
}

int Tape::exp_(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) { return std::exp(v); });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& yv = t.val(self);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i] * yv.data[i];
    });
}

int Tape::log_(int x) {
    Tensor out;
    map_unary(*this, x, out, [](float v) { return std::log(v); });
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i] / xv.data[i];
    });
}

// ---------------------------------------------------------------------------
// shape ops

int Tape::reshape(int x, std::vector<int> new_shape) {
    const Tensor& xv = val(x);
    int64_t n = 1;
    for (int d : new_shape) n *= d;
    check_shape(n == xv.numel(), "reshape: cannot view " + shape_str(xv.shape) + " as " +
                                     shape_str(new_shape));
    Tensor out(new_shape, xv.data);
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i];
    });
}

// outer/inner sizes around an axis, used by concat and slice
static void axis_extents(const std::vector<int>& shape, int axis, int64_t& outer, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

int Tape::concat(const std::vector<int>& xs, int axis) {
    check_shape(!xs.empty(), "concat: no inputs");
    std::vector<int> out_shape = val(xs[0]).shape;
    check_shape(axis >= 0 && axis < static_cast<int>(out_shape.size()), "concat: bad axis");
    int total = 0;
    for (int id : xs) {
        const Tensor& v = val(id);
        check_shape(v.rank() == static_cast<int>(out_shape.size()), "concat: rank mismatch");
        for (int d = 0; d < v.rank(); ++d) {
            if (d == axis) continue;
            check_shape(v.shape[static_cast<size_t>(d)] == out_shape[static_cast<size_t>(d)],
                        "concat: shape mismatch " + shape_str(v.shape) + " vs " +
                            shape_str(out_shape));
        }
        total += v.shape[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::zeros(out_shape);
    int64_t outer, inner;
    axis_extents(out_shape, axis, outer, inner);
    int64_t off = 0;
    for (int id : xs) {
        const Tensor& v = val(id);
        int64_t len = v.shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o) {
            const float* src = v.data.data() + o * len * inner;
            float* dst = out.data.data() + (o * total + off) * inner;
            std::copy(src, src + len * inner, dst);
        }
        off += len;
    }
    std::vector<int> parents = xs;
    return push(std::move(out), std::move(parents), [xs, axis, total](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        int64_t outer, inner;
        axis_extents(g.shape, axis, outer, inner);
        int64_t off = 0;
        for (int id : xs) {
            const Tensor& v = t.val(id);
            int64_t len = v.shape[static_cast<size_t>(axis)];
            if (t.requires_grad(id)) {
                Tensor& gx = t.grad_ref(id);
                for (int64_t o = 0; o < outer; ++o) {
                    const float* src = g.data.data() + (o * total + off) * inner;
                    float* dst = gx.data.data() + o * len * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            off += len;
        }
    });
}

int Tape::slice(int x, int axis, int start, int len) {
    const Tensor& xv = val(x);
    check_shape(axis >= 0 && axis < xv.rank(), "slice: bad axis");
    int dim = xv.shape[static_cast<size_t>(axis)];
    check_shape(start >= 0 && len > 0 && start + len <= dim,
                "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                    ") out of bounds for axis size " + std::to_string(dim));
    std::vector<int> out_shape = xv.shape;
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    int64_t outer, inner;
    axis_extents(xv.shape, axis, outer, inner);
    for (int64_t o = 0; o < outer; ++o) {
        const float* src = xv.data.data() + (o * dim + start) * inner;
        float* dst = out.data.data() + o * len * inner;
        std::copy(src, src + len * inner, dst);
    }
    return push(std::move(out), {x}, [x, axis, start, len](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        int dim = gx.shape[static_cast<size_t>(axis)];
        int64_t outer, inner;
        axis_extents(gx.shape, axis, outer, inner);
        for (int64_t o = 0; o < outer; ++o) {
            const float* src = g.data.data() + o * len * inner;
            float* dst = gx.data.data() + (o * dim + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// conv and friends

int Tape::conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    check_shape(xv.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(xv.shape));
    check_shape(wv.rank() == 4, "conv2d: weight must be OIHW, got " + shape_str(wv.shape));
    check_shape(xv.dim(1) == wv.dim(1), "conv2d: channel mismatch, input " + shape_str(xv.shape) +
                                            " vs weight " + shape_str(wv.shape));
    check_shape(bv.rank() == 1 && bv.dim(0) == wv.dim(0),
                "conv2d: bias " + shape_str(bv.shape) + " vs weight " + shape_str(wv.shape));
    check_shape(stride >= 1, "conv2d: stride must be >= 1");
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), Kh = wv.dim(2), Kw = wv.dim(3);
    const int Ho = (H + 2 * pad - Kh) / stride + 1;
    const int Wo = (W + 2 * pad - Kw) / stride + 1;
    check_shape(Ho > 0 && Wo > 0, "conv2d: empty output for input " + shape_str(xv.shape) +
                                      " kernel " + shape_str(wv.shape));

    Tensor out = Tensor::zeros({N, Co, Ho, Wo});
    parallel_for(static_cast<int64_t>(N) * Co, [&](int64_t lo, int64_t hi) {
        for (int64_t plane = lo; plane < hi; ++plane) {
            int n = static_cast<int>(plane / Co);
            int o = static_cast<int>(plane % Co);
            float* op = out.data.data() + ((static_cast<int64_t>(n) * Co + o) * Ho) * Wo;
            float bias = bv.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) op[i] = bias;
            for (int i = 0; i < Ci; ++i) {
                const float* xp = xv.data.data() + ((static_cast<int64_t>(n) * Ci + i) * H) * W;
                for (int ky = 0; ky < Kh; ++ky) {
                    for (int kx = 0; kx < Kw; ++kx) {
                        float wgt = wv.data[static_cast<size_t>(((o * Ci + i) * Kh + ky) * Kw + kx)];
                        if (wgt == 0.0f) continue;
                        for (int y = 0; y < Ho; ++y) {
                            int sy = y * stride + ky - pad;
                            if (sy < 0 || sy >= H) continue;
                            const float* xrow = xp + static_cast<int64_t>(sy) * W;
                            float* orow = op + static_cast<int64_t>(y) * Wo;
                            for (int xo = 0; xo < Wo; ++xo) {
                                int sx = xo * stride + kx - pad;
                                if (sx < 0 || sx >= W) continue;
                                orow[xo] += wgt * xrow[sx];
                            }
                        }
                    }
                }
            }
        }
    });

    return push(std::move(out), {x, w, b}, [x, w, b, stride, pad](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        const Tensor& wv = t.val(w);
        const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int Co = wv.dim(0), Kh = wv.dim(2), Kw = wv.dim(3);
        const int Ho = g.dim(2), Wo = g.dim(3);

        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            parallel_for(static_cast<int64_t>(N) * Ci, [&](int64_t lo, int64_t hi) {
                for (int64_t plane = lo; plane < hi; ++plane) {
                    int n = static_cast<int>(plane / Ci);
                    int i = static_cast<int>(plane % Ci);
                    float* gxp = gx.data.data() + ((static_cast<int64_t>(n) * Ci + i) * H) * W;
                    for (int o = 0; o < Co; ++o) {
                        const float* gp =
                            g.data.data() + ((static_cast<int64_t>(n) * Co + o) * Ho) * Wo;
                        for (int ky = 0; ky < Kh; ++ky) {
                            for (int kx = 0; kx < Kw; ++kx) {
                                float wgt = wv.data[static_cast<size_t>(
                                    ((o * Ci + i) * Kh + ky) * Kw + kx)];
                                if (wgt == 0.0f) continue;
                                for (int y = 0; y < Ho; ++y) {
                                    int sy = y * stride + ky - pad;
                                    if (sy < 0 || sy >= H) continue;
                                    float* gxrow = gxp + static_cast<int64_t>(sy) * W;
                                    const float* grow = gp + static_cast<int64_t>(y) * Wo;
                                    for (int xo = 0; xo < Wo; ++xo) {
                                        int sx = xo * stride + kx - pad;
                                        if (sx < 0 || sx >= W) continue;
                                        gxrow[sx] += wgt * grow[xo];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        if (t.requires_grad(w)) {
            Tensor& gw = t.grad_ref(w);
            parallel_for(Co, [&](int64_t lo, int64_t hi) {
                for (int64_t o = lo; o < hi; ++o) {
                    for (int i = 0; i < Ci; ++i) {
                        for (int ky = 0; ky < Kh; ++ky) {
                            for (int kx = 0; kx < Kw; ++kx) {
                                double acc = 0.0;
                                for (int n = 0; n < N; ++n) {
                                    const float* gp =
                                        g.data.data() + ((n * Co + o) * static_cast<int64_t>(Ho)) * Wo;
                                    const float* xp =
                                        xv.data.data() + ((n * Ci + i) * static_cast<int64_t>(H)) * W;
                                    for (int y = 0; y < Ho; ++y) {
                                        int sy = y * stride + ky - pad;
                                        if (sy < 0 || sy >= H) continue;
                                        const float* xrow = xp + static_cast<int64_t>(sy) * W;
                                        const float* grow = gp + static_cast<int64_t>(y) * Wo;
                                        for (int xo = 0; xo < Wo; ++xo) {
                                            int sx = xo * stride + kx - pad;
                                            if (sx < 0 || sx >= W) continue;
                                            acc += static_cast<double>(grow[xo]) * xrow[sx];
                                        }
                                    }
                                }
                                gw.data[static_cast<size_t>(((o * Ci + i) * Kh + ky) * Kw + kx)] +=
                                    static_cast<float>(acc);
                            }
                        }
                    }
                }
            });
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (int o = 0; o < Co; ++o) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const float* gp = g.data.data() + ((n * Co + o) * static_cast<int64_t>(Ho)) * Wo;
                    for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += gp[i];
                }
                gb.data[static_cast<size_t>(o)] += static_cast<float>(acc);
            }
        }
    });
}

int Tape::upsample_nearest2x(int x) {
    const Tensor& xv = val(x);
    check_shape(xv.rank() == 4, "upsample_nearest2x: input must be NCHW");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out = Tensor::zeros({N, C, 2 * H, 2 * W});
    for (int64_t p = 0; p < static_cast<int64_t>(N) * C; ++p) {
        const float* xp = xv.data.data() + p * H * W;
        float* op = out.data.data() + p * 4 * H * W;
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                float v = xp[y * W + xx];
                op[(2 * y) * 2 * W + 2 * xx] = v;
                op[(2 * y) * 2 * W + 2 * xx + 1] = v;
                op[(2 * y + 1) * 2 * W + 2 * xx] = v;
                op[(2 * y + 1) * 2 * W + 2 * xx + 1] = v;
            }
        }
    }
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
        for (int64_t p = 0; p < static_cast<int64_t>(N) * C; ++p) {
            float* gxp = gx.data.data() + p * H * W;
            const float* gp = g.data.data() + p * 4 * H * W;
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    gxp[y * W + xx] += gp[(2 * y) * 2 * W + 2 * xx] +
                                       gp[(2 * y) * 2 * W + 2 * xx + 1] +
                                       gp[(2 * y + 1) * 2 * W + 2 * xx] +
                                       gp[(2 * y + 1) * 2 * W + 2 * xx + 1];
                }
            }
        }
    });
}

static std::vector<float> gauss_kernel_1d(int ksize, double sigma) {
    std::vector<float> k(static_cast<size_t>(ksize));
    int half = ksize / 2;
    double sum = 0.0;
    for (int i = 0; i < ksize; ++i) {
        double d = i - half;
        double v = std::exp(-(d * d) / (2.0 * sigma * sigma));
        k[static_cast<size_t>(i)] = static_cast<float>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<float>(v / sum);
    return k;
}

// horizontal then vertical 1D blur with zero padding; self-adjoint since the
// kernel is symmetric and the two passes commute
static Tensor separable_blur(const Tensor& x, const std::vector<float>& k) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int half = static_cast<int>(k.size()) / 2;
    Tensor tmp = Tensor::zeros(x.shape);
    Tensor out = Tensor::zeros(x.shape);
    for (int64_t p = 0; p < static_cast<int64_t>(N) * C; ++p) {
        const float* xp = x.data.data() + p * H * W;
        float* tp = tmp.data.data() + p * H * W;
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int i = 0; i < static_cast<int>(k.size()); ++i) {
                    int sx = xx + i - half;
                    if (sx < 0 || sx >= W) continue;
                    acc += static_cast<double>(k[static_cast<size_t>(i)]) * xp[y * W + sx];
                }
                tp[y * W + xx] = static_cast<float>(acc);
            }
        }
        float* op = out.data.data() + p * H * W;
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int i = 0; i < static_cast<int>(k.size()); ++i) {
                    int sy = y + i - half;
                    if (sy < 0 || sy >= H) continue;
                    acc += static_cast<double>(k[static_cast<size_t>(i)]) * tp[sy * W + xx];
                }
                op[y * W + xx] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

int Tape::gauss_blur(int x, int ksize, double sigma) {
    const Tensor& xv = val(x);
    check_shape(xv.rank() == 4, "gauss_blur: input must be NCHW");
    check_shape(ksize % 2 == 1, "gauss_blur: kernel size must be odd");
    std::vector<float> k = gauss_kernel_1d(ksize, sigma);
    Tensor out = separable_blur(xv, k);
    return push(std::move(out), {x}, [x, k](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        Tensor gb = separable_blur(t.grad(self), k);
        t.accumulate(x, gb);
    });
}

// ---------------------------------------------------------------------------
// matmul family

static void mm(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    parallel_for(m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            float* crow = C.data.data() + i * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) crow[j] = 0.0f;
            const float* arow = A.data.data() + i * k;
            for (int l = 0; l < k; ++l) {
                float a = arow[l];
                if (a == 0.0f) continue;
                const float* brow = B.data.data() + static_cast<int64_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        }
    });
}

static void mm_nt(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
    parallel_for(m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const float* arow = A.data.data() + i * k;
            float* crow = C.data.data() + i * n;
            for (int j = 0; j < n; ++j) {
                const float* brow = B.data.data() + static_cast<int64_t>(j) * k;
                float acc = 0.0f;
                for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
                if (accumulate)
                    crow[j] += acc;
                else
                    crow[j] = acc;
            }
        }
    });
}

// C[m,n] (+)= A[k,m]^T B[k,n]
static void mm_tn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    const int k = A.dim(0), m = A.dim(1), n = B.dim(1);
    parallel_for(m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            float* crow = C.data.data() + i * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) crow[j] = 0.0f;
            for (int l = 0; l < k; ++l) {
                float a = A.data[static_cast<size_t>(l) * m + static_cast<size_t>(i)];
                if (a == 0.0f) continue;
                const float* brow = B.data.data() + static_cast<int64_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        }
    });
}

int Tape::matmul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                "matmul: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    Tensor out = Tensor::zeros({av.dim(0), bv.dim(1)});
    mm(av, bv, out, false);
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a)) mm_nt(g, t.val(b), t.grad_ref(a), true);
        if (t.requires_grad(b)) mm_tn(t.val(a), g, t.grad_ref(b), true);
    });
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
                "matmul_nt: incompatible shapes " + shape_str(av.shape) + " x " +
                    shape_str(bv.shape) + "^T");
    Tensor out = Tensor::zeros({av.dim(0), bv.dim(0)});
    mm_nt(av, bv, out, false);
    return push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a)) mm(g, t.val(b), t.grad_ref(a), true);
        if (t.requires_grad(b)) mm_tn(g, t.val(a), t.grad_ref(b), true);
    });
}

int Tape::add_rowvec(int x, int b) {
    const Tensor& xv = val(x);
    const Tensor& bv = val(b);
    check_shape(xv.rank() == 2 && bv.rank() == 1 && xv.dim(1) == bv.dim(0),
                "add_rowvec: shapes " + shape_str(xv.shape) + " + " + shape_str(bv.shape));
    Tensor out = xv;
    const int n = xv.dim(0), m = xv.dim(1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.data[static_cast<size_t>(i) * m + j] += bv.data[static_cast<size_t>(j)];
    return push(std::move(out), {x, b}, [x, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(x)) t.accumulate(x, g);
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            const int n = g.dim(0), m = g.dim(1);
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) acc += g.data[static_cast<size_t>(i) * m + j];
                gb.data[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
    });
}

int Tape::add_channel_const(int x, const std::vector<float>& c) {
    const Tensor& xv = val(x);
    check_shape(xv.rank() == 4 && xv.dim(1) == static_cast<int>(c.size()),
                "add_channel_const: input " + shape_str(xv.shape) + " vs " +
                    std::to_string(c.size()) + " constants");
    Tensor out = xv;
    const int N = xv.dim(0), C = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    for (int n = 0; n < N; ++n)
        for (int ch = 0; ch < C; ++ch) {
            float* p = out.data.data() + (static_cast<int64_t>(n) * C + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += c[static_cast<size_t>(ch)];
        }
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (t.requires_grad(x)) t.accumulate(x, t.grad(self));
    });
}

int Tape::channel_l2_normalize(int x, float eps) {
    const Tensor& xv = val(x);
    check_shape(xv.rank() == 4 || xv.rank() == 2,
                "channel_l2_normalize: need NCHW or [n,d], got " + shape_str(xv.shape));
    int C, locs;
    int64_t cstride;  // stride between channel elements at one location
    if (xv.rank() == 4) {
        C = xv.dim(1);
        locs = xv.dim(0) * xv.dim(2) * xv.dim(3);
        cstride = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    } else {
        C = xv.dim(1);
        locs = xv.dim(0);
        cstride = 1;
    }
    auto loc_base = [&](int l) -> int64_t {
        if (xv.rank() == 2) return static_cast<int64_t>(l) * C;
        int hw = xv.dim(2) * xv.dim(3);
        int n = l / hw, r = l % hw;
        return static_cast<int64_t>(n) * C * hw + r;
    };
    Tensor out = Tensor::zeros(xv.shape);
    for (int l = 0; l < locs; ++l) {
        int64_t base = loc_base(l);
        double ss = eps;
        for (int c = 0; c < C; ++c) {
            float v = xv.data[static_cast<size_t>(base + c * cstride)];
            ss += static_cast<double>(v) * v;
        }
        float inv = static_cast<float>(1.0 / std::sqrt(ss));
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(base + c * cstride)] =
                xv.data[static_cast<size_t>(base + c * cstride)] * inv;
    }
    return push(std::move(out), {x}, [x, eps](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad_ref(x);
        int C, locs;
        int64_t cstride;
        if (xv.rank() == 4) {
            C = xv.dim(1);
            locs = xv.dim(0) * xv.dim(2) * xv.dim(3);
            cstride = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
        } else {
            C = xv.dim(1);
            locs = xv.dim(0);
            cstride = 1;
        }
        auto loc_base = [&](int l) -> int64_t {
            if (xv.rank() == 2) return static_cast<int64_t>(l) * C;
            int hw = xv.dim(2) * xv.dim(3);
            int n = l / hw, r = l % hw;
            return static_cast<int64_t>(n) * C * hw + r;
        };
        for (int l = 0; l < locs; ++l) {
            int64_t base = loc_base(l);
            double ss = eps, dot = 0.0;
            for (int c = 0; c < C; ++c) {
                double v = xv.data[static_cast<size_t>(base + c * cstride)];
                double gv = g.data[static_cast<size_t>(base + c * cstride)];
                ss += v * v;
                dot += gv * v;
            }
            double n1 = std::sqrt(ss);
            double n3 = n1 * ss;
            for (int c = 0; c < C; ++c) {
                double v = xv.data[static_cast<size_t>(base + c * cstride)];
                double gv = g.data[static_cast<size_t>(base + c * cstride)];
                gx.data[static_cast<size_t>(base + c * cstride)] +=
                    static_cast<float>(gv / n1 - v * dot / n3);
            }
        }
    });
}

int Tape::layer_norm(int x, int gamma, int beta, float eps) {
    const Tensor& xv = val(x);
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    check_shape(xv.rank() == 2, "layer_norm: input must be [n,d], got " + shape_str(xv.shape));
    const int n = xv.dim(0), d = xv.dim(1);
    check_shape(gv.rank() == 1 && gv.dim(0) == d && bv.rank() == 1 && bv.dim(0) == d,
                "layer_norm: gamma/beta must be [d]");
    Tensor out = Tensor::zeros(xv.shape);
    for (int i = 0; i < n; ++i) {
        const float* row = xv.data.data() + static_cast<int64_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = row[j] - mu;
            var += c * c;
        }
        var /= d;
        float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        float* orow = out.data.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j)
            orow[j] = (row[j] - static_cast<float>(mu)) * istd * gv.data[static_cast<size_t>(j)] +
                      bv.data[static_cast<size_t>(j)];
    }
    return push(std::move(out), {x, gamma, beta}, [x, gamma, beta, eps](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.val(x);
        const Tensor& gv = t.val(gamma);
        const int n = xv.dim(0), d = xv.dim(1);
        bool wx = t.requires_grad(x), wg = t.requires_grad(gamma), wb = t.requires_grad(beta);
        std::vector<double> dgamma(static_cast<size_t>(d), 0.0), dbeta(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n; ++i) {
            const float* row = xv.data.data() + static_cast<int64_t>(i) * d;
            const float* grow = g.data.data() + static_cast<int64_t>(i) * d;
            double mu = 0.0;
            for (int j = 0; j < d; ++j) mu += row[j];
            mu /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                double c = row[j] - mu;
                var += c * c;
            }
            var /= d;
            double istd = 1.0 / std::sqrt(var + eps);
            // dxhat, plus row sums needed for dx
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < d; ++j) {
                double xhat = (row[j] - mu) * istd;
                double dxhat = static_cast<double>(grow[j]) * gv.data[static_cast<size_t>(j)];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (wg) dgamma[static_cast<size_t>(j)] += static_cast<double>(grow[j]) * xhat;
                if (wb) dbeta[static_cast<size_t>(j)] += grow[j];
            }
            if (wx) {
                Tensor& gx = t.grad_ref(x);
                float* gxrow = gx.data.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    double xhat = (row[j] - mu) * istd;
                    double dxhat = static_cast<double>(grow[j]) * gv.data[static_cast<size_t>(j)];
                    gxrow[j] += static_cast<float>(
                        istd * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d));
                }
            }
        }
        if (wg) {
            Tensor& gg = t.grad_ref(gamma);
            for (int j = 0; j < d; ++j) gg.data[static_cast<size_t>(j)] += static_cast<float>(dgamma[static_cast<size_t>(j)]);
        }
        if (wb) {
            Tensor& gb = t.grad_ref(beta);
            for (int j = 0; j < d; ++j) gb.data[static_cast<size_t>(j)] += static_cast<float>(dbeta[static_cast<size_t>(j)]);
        }
    });
}

int Tape::softmax(int x) {
    const Tensor& xv = val(x);
    check_shape(xv.rank() == 2, "softmax: input must be [n,d], got " + shape_str(xv.shape));
    const int n = xv.dim(0), d = xv.dim(1);
    Tensor out = Tensor::zeros(xv.shape);
    for (int i = 0; i < n; ++i) {
        const float* row = xv.data.data() + static_cast<int64_t>(i) * d;
        float* orow = out.data.data() + static_cast<int64_t>(i) * d;
        float mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            float e = std::exp(row[j] - mx);
            orow[j] = e;
            sum += e;
        }
        float inv = static_cast<float>(1.0 / sum);
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
    return push(std::move(out), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.val(self);
        Tensor& gx = t.grad_ref(x);
        const int n = y.dim(0), d = y.dim(1);
        for (int i = 0; i < n; ++i) {
            const float* yrow = y.data.data() + static_cast<int64_t>(i) * d;
            const float* grow = g.data.data() + static_cast<int64_t>(i) * d;
            float* gxrow = gx.data.data() + static_cast<int64_t>(i) * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
            for (int j = 0; j < d; ++j)
                gxrow[j] += static_cast<float>(yrow[j] * (grow[j] - dot));
        }
    });
}

// ---------------------------------------------------------------------------
// reductions and losses

int Tape::reduce_sum(int x) {
    const Tensor& xv = val(x);
    double acc = 0.0;
    for (float v : xv.data) acc += v;
    return push(Tensor::scalar(static_cast<float>(acc)), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        float g = t.grad(self).data[0];
        Tensor& gx = t.grad_ref(x);
        for (auto& v : gx.data) v += g;
    });
}

int Tape::reduce_mean(int x) {
    const Tensor& xv = val(x);
    double acc = 0.0;
    for (float v : xv.data) acc += v;
    acc /= static_cast<double>(xv.numel());
    return push(Tensor::scalar(static_cast<float>(acc)), {x}, [x](Tape& t, int self) {
        if (!t.requires_grad(x)) return;
        const Tensor& xv = t.val(x);
        float g = t.grad(self).data[0] / static_cast<float>(xv.numel());
        Tensor& gx = t.grad_ref(x);
        for (auto& v : gx.data) v += g;
    });
}

int Tape::l1(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "l1: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    double acc = 0.0;
    for (size_t i = 0; i < av.data.size(); ++i) acc += std::abs(static_cast<double>(av.data[i]) - bv.data[i]);
    acc /= static_cast<double>(av.numel());
    return push(Tensor::scalar(static_cast<float>(acc)), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& av = t.val(a);
        const Tensor& bv = t.val(b);
        float g = t.grad(self).data[0] / static_cast<float>(av.numel());
        bool wa = t.requires_grad(a), wb = t.requires_grad(b);
        if (!wa && !wb) return;
        Tensor* ga = wa ? &t.grad_ref(a) : nullptr;
        Tensor* gb = wb ? &t.grad_ref(b) : nullptr;
        for (size_t i = 0; i < av.data.size(); ++i) {
            float d = av.data[i] - bv.data[i];
            float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
            if (ga) ga->data[i] += g * s;
            if (gb) gb->data[i] -= g * s;
        }
    });
}

int Tape::mse(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_shape(av.shape == bv.shape,
                "mse: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    double acc = 0.0;
    for (size_t i = 0; i < av.data.size(); ++i) {
        double d = static_cast<double>(av.data[i]) - bv.data[i];
        acc += d * d;
    }
    acc /= static_cast<double>(av.numel());
    return push(Tensor::scalar(static_cast<float>(acc)), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& av = t.val(a);
        const Tensor& bv = t.val(b);
        float g = 2.0f * t.grad(self).data[0] / static_cast<float>(av.numel());
        bool wa = t.requires_grad(a), wb = t.requires_grad(b);
        if (!wa && !wb) return;
        Tensor* ga = wa ? &t.grad_ref(a) : nullptr;
        Tensor* gb = wb ? &t.grad_ref(b) : nullptr;
        for (size_t i = 0; i < av.data.size(); ++i) {
            float d = av.data[i] - bv.data[i];
            if (ga) ga->data[i] += g * d;
            if (gb) gb->data[i] -= g * d;
        }
    });
}

}  // namespace wsd
