#include "wsd/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace wsd {

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw Error("schedule: steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw Error("schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.assign(static_cast<size_t>(steps) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(steps) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * s.alpha[static_cast<size_t>(t)];
    }
    return s;
}

std::vector<float> q_sample(const std::vector<float>& x0, int t, const std::vector<float>& eps,
                            const DiffusionSchedule& schedule) {
    check_shape(t >= 0 && t <= schedule.steps, "q_sample: t out of range");
    check_shape(x0.size() == eps.size(), "q_sample: x0/eps size mismatch");
    const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
    const float a = static_cast<float>(std::sqrt(ab));
    const float b = static_cast<float>(std::sqrt(1.0 - ab));
    std::vector<float> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

std::vector<float> sinusoidal_time_embedding(int t, int width) {
    std::vector<float> emb(static_cast<size_t>(width), 0.0f);
    const int half = width / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        emb[static_cast<size_t>(i)] = static_cast<float>(std::sin(t * freq));
        emb[static_cast<size_t>(half + i)] = static_cast<float>(std::cos(t * freq));
    }
    return emb;
}

std::vector<Tensor*> DenoiserWeights::all_params() {
    std::vector<Tensor*> p;
    for (auto& t : proj_w) p.push_back(&t);
    for (auto& t : proj_b) p.push_back(&t);
    p.push_back(&pos_emb);
    p.push_back(&time_w);
    p.push_back(&time_b);
    for (auto& b : blocks) {
        for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo,
                          &b.bo, &b.ln2_g, &b.ln2_b, &b.ff1_w, &b.ff1_b, &b.ff2_w, &b.ff2_b})
            p.push_back(t);
    }
    p.push_back(&final_g);
    p.push_back(&final_b);
    for (auto& t : unproj_w) p.push_back(&t);
    for (auto& t : unproj_b) p.push_back(&t);
    return p;
}

int64_t DenoiserWeights::param_count() {
    int64_t n = 0;
    for (Tensor* t : all_params()) n += t->numel();
    return n;
}

namespace {

Tensor normal_tensor(std::vector<int> shape, Rng& rng, float stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = stddev * rng.normal_f();
    return t;
}

Tensor xavier_tensor(int rows, int cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    float bound = std::sqrt(6.0f / static_cast<float>(rows + cols));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

DenoiserWeights denoiser_init(const TokenLayout& layout, const DenoiserConfig& cfg, uint64_t seed) {
    if (cfg.d_model % cfg.heads != 0)
        throw Error("denoiser: d_model must be divisible by head count");
    Rng rng(seed ^ 0xd1ff0000ull);
    DenoiserWeights w;
    w.cfg = cfg;
    w.layout = layout;
    const int D = cfg.d_model, L = layout.token_count();

    for (int i = 0; i < L; ++i) {
        w.proj_w.push_back(xavier_tensor(layout.token_widths[static_cast<size_t>(i)], D, rng));
        w.proj_b.push_back(Tensor::zeros({D}));
    }
    w.pos_emb = normal_tensor({L, D}, rng, 0.02f);
    w.time_w = normal_tensor({D, D}, rng, 0.02f);
    w.time_b = Tensor::zeros({D});
    for (int b = 0; b < cfg.blocks; ++b) {
        DenoiserWeights::Block blk;
        blk.ln1_g = Tensor::full({D}, 1.0f);
        blk.ln1_b = Tensor::zeros({D});
        blk.wq = normal_tensor({D, D}, rng, 0.02f);
        blk.bq = Tensor::zeros({D});
        blk.wk = normal_tensor({D, D}, rng, 0.02f);
        blk.bk = Tensor::zeros({D});
        blk.wv = normal_tensor({D, D}, rng, 0.02f);
        blk.bv = Tensor::zeros({D});
        blk.wo = normal_tensor({D, D}, rng, 0.02f);
        blk.bo = Tensor::zeros({D});
        blk.ln2_g = Tensor::full({D}, 1.0f);
        blk.ln2_b = Tensor::zeros({D});
        blk.ff1_w = normal_tensor({D, cfg.ffn_hidden}, rng, 0.02f);
        blk.ff1_b = Tensor::zeros({cfg.ffn_hidden});
        blk.ff2_w = normal_tensor({cfg.ffn_hidden, D}, rng, 0.02f);
        blk.ff2_b = Tensor::zeros({D});
        w.blocks.push_back(std::move(blk));
    }
    w.final_g = Tensor::full({D}, 1.0f);
    w.final_b = Tensor::zeros({D});
    for (int i = 0; i < L; ++i) {
        w.unproj_w.push_back(Tensor::zeros({D, layout.token_widths[static_cast<size_t>(i)]}));
        w.unproj_b.push_back(Tensor::zeros({layout.token_widths[static_cast<size_t>(i)]}));
    }
    return w;
}

DenoiserNodes denoiser_leaves(Tape& tape, DenoiserWeights& weights, bool requires_grad) {
    DenoiserNodes nodes;
    for (Tensor* t : weights.all_params()) nodes.params.push_back(tape.leaf(*t, requires_grad));
    return nodes;
}

namespace {

// Mirrors all_params() ordering; hands out leaf ids by role.
struct NodeView {
    const DenoiserWeights& w;
    const std::vector<int>& ids;
    size_t pos = 0;
    int next() { return ids[pos++]; }
};

}  // namespace

std::vector<int> denoise_node(Tape& tape, const DenoiserNodes& nodes, const DenoiserWeights& w,
                              const TokenSequence& noisy, int t) {
    const int L = w.layout.token_count();
    const int D = w.cfg.d_model;
    check_shape(static_cast<int>(noisy.size()) == L,
                "denoise: got " + std::to_string(noisy.size()) + " tokens, layout has " +
                    std::to_string(L));
    for (int i = 0; i < L; ++i)
        check_shape(static_cast<int>(noisy[static_cast<size_t>(i)].size()) ==
                        w.layout.token_widths[static_cast<size_t>(i)],
                    "denoise: token " + std::to_string(i) + " width mismatch");

    NodeView view{w, nodes.params, 0};
    std::vector<int> proj_w(static_cast<size_t>(L)), proj_b(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) proj_w[static_cast<size_t>(i)] = view.next();
    for (int i = 0; i < L; ++i) proj_b[static_cast<size_t>(i)] = view.next();
    int pos_emb = view.next();
    int time_w = view.next();
    int time_b = view.next();
    struct BlockIds {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
    };
    std::vector<BlockIds> blocks;
    for (int b = 0; b < w.cfg.blocks; ++b) {
        BlockIds ids{};
        ids.ln1_g = view.next();
        ids.ln1_b = view.next();
        ids.wq = view.next();
        ids.bq = view.next();
        ids.wk = view.next();
        ids.bk = view.next();
        ids.wv = view.next();
        ids.bv = view.next();
        ids.wo = view.next();
        ids.bo = view.next();
        ids.ln2_g = view.next();
        ids.ln2_b = view.next();
        ids.ff1_w = view.next();
        ids.ff1_b = view.next();
        ids.ff2_w = view.next();
        ids.ff2_b = view.next();
        blocks.push_back(ids);
    }
    int final_g = view.next();
    int final_b = view.next();
    std::vector<int> unproj_w(static_cast<size_t>(L)), unproj_b(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) unproj_w[static_cast<size_t>(i)] = view.next();
    for (int i = 0; i < L; ++i) unproj_b[static_cast<size_t>(i)] = view.next();

    // project tokens to the shared width and add positions
    std::vector<int> rows;
    for (int i = 0; i < L; ++i) {
        int tok = tape.leaf(
            Tensor({1, w.layout.token_widths[static_cast<size_t>(i)]}, noisy[static_cast<size_t>(i)]), false);
        rows.push_back(tape.add_rowvec(tape.matmul(tok, proj_w[static_cast<size_t>(i)]),
                                       proj_b[static_cast<size_t>(i)]));
    }
    int x = tape.add(tape.concat(rows, 0), pos_emb);

    int time_emb = tape.leaf(Tensor({1, D}, sinusoidal_time_embedding(t, D)), false);
    int time_tok = tape.add_rowvec(tape.matmul(time_emb, time_w), time_b);
    int n_rows = L;
    if (w.cfg.time_mode == DenoiserConfig::TimeMode::kToken) {
        x = tape.concat({x, time_tok}, 0);
        n_rows = L + 1;
    } else {
        // broadcast the projected embedding onto every token row
        std::vector<int> reps(static_cast<size_t>(L), time_tok);
        x = tape.add(x, tape.concat(reps, 0));
    }

    const int heads = w.cfg.heads;
    const int dh = D / heads;
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    for (const BlockIds& b : blocks) {
        int xn = tape.layer_norm(x, b.ln1_g, b.ln1_b);
        int q = tape.add_rowvec(tape.matmul(xn, b.wq), b.bq);
        int k = tape.add_rowvec(tape.matmul(xn, b.wk), b.bk);
        int v = tape.add_rowvec(tape.matmul(xn, b.wv), b.bv);
        std::vector<int> head_outs;
        for (int h = 0; h < heads; ++h) {
            int qh = tape.slice(q, 1, h * dh, dh);
            int kh = tape.slice(k, 1, h * dh, dh);
            int vh = tape.slice(v, 1, h * dh, dh);
            int scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
            head_outs.push_back(tape.matmul(tape.softmax(scores), vh));
        }
        int attn = tape.add_rowvec(tape.matmul(tape.concat(head_outs, 1), b.wo), b.bo);
        x = tape.add(x, attn);

        int xn2 = tape.layer_norm(x, b.ln2_g, b.ln2_b);
        int ff = tape.add_rowvec(tape.matmul(xn2, b.ff1_w), b.ff1_b);
        ff = tape.add_rowvec(tape.matmul(tape.gelu(ff), b.ff2_w), b.ff2_b);
        x = tape.add(x, ff);
    }
    x = tape.layer_norm(x, final_g, final_b);
    (void)n_rows;

    std::vector<int> out;
    for (int i = 0; i < L; ++i) {
        int row = tape.slice(x, 0, i, 1);
        out.push_back(tape.add_rowvec(tape.matmul(row, unproj_w[static_cast<size_t>(i)]),
                                      unproj_b[static_cast<size_t>(i)]));
    }
    return out;
}

TokenSequence denoise(DenoiserWeights& weights, const TokenSequence& noisy, int t) {
    Tape tape;
    DenoiserNodes nodes = denoiser_leaves(tape, weights, false);
    std::vector<int> outs = denoise_node(tape, nodes, weights, noisy, t);
    TokenSequence result;
    for (int id : outs) result.push_back(tape.val(id).data);
    return result;
}

double train_step(DenoiserWeights& weights, const std::vector<const std::vector<float>*>& batch,
                  const DiffusionSchedule& schedule, AdamW& opt, Rng& rng, float lr_scale) {
    check_shape(!batch.empty(), "train_step: empty batch");
    const int64_t token_total = [&] {
        int64_t n = 0;
        for (int wd : weights.layout.token_widths) n += wd;
        return n;
    }();

    Tape tape;
    DenoiserNodes nodes = denoiser_leaves(tape, weights, true);
    int total = -1;
    int batch_t = 0;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const std::vector<float>& x0 = *batch[bi];
        check_shape(static_cast<int64_t>(x0.size()) == weights.layout.total_scalars,
                    "train_step: record " + std::to_string(bi) + " has " +
                        std::to_string(x0.size()) + " scalars, layout has " +
                        std::to_string(weights.layout.total_scalars));
        int t = 1 + static_cast<int>(rng.next_below(static_cast<uint32_t>(schedule.steps)));
        batch_t = t;
        std::vector<float> eps(x0.size());
        for (auto& v : eps) v = rng.normal_f();
        std::vector<float> xt = q_sample(x0, t, eps, schedule);
        TokenSequence noisy = tokenize_flat_vector(xt, weights.layout);
        TokenSequence clean = tokenize_flat_vector(x0, weights.layout);

        std::vector<int> preds = denoise_node(tape, nodes, weights, noisy, t);
        int rec_loss = -1;
        for (size_t i = 0; i < preds.size(); ++i) {
            int target = tape.leaf(
                Tensor({1, weights.layout.token_widths[i]}, clean[i]), false);
            int term = tape.scale(tape.mse(preds[i], target),
                                  static_cast<float>(weights.layout.token_widths[i]) /
                                      static_cast<float>(token_total));
            rec_loss = rec_loss < 0 ? term : tape.add(rec_loss, term);
        }
        total = total < 0 ? rec_loss : tape.add(total, rec_loss);
    }
    total = tape.scale(total, 1.0f / static_cast<float>(batch.size()));

    double loss = tape.val(total).data[0];
    if (!std::isfinite(loss))
        throw Error("train_step: non-finite loss (last sampled t=" + std::to_string(batch_t) +
                    ", batch size " + std::to_string(batch.size()) + ")");
    tape.backward(total);

    std::vector<Tensor*> params = weights.all_params();
    std::vector<const Tensor*> grads;
    for (size_t i = 0; i < params.size(); ++i) grads.push_back(&tape.grad(nodes.params[i]));
    opt.step(params, grads, lr_scale);
    return loss;
}

DiffusionTrainResult train_diffusion(const std::vector<WeightRecord>& records,
                                     const DiffusionTrainConfig& cfg) {
    check_shape(!records.empty(), "train_diffusion: need records");
    Standardizer st = fit_standardizer(records);
    TokenLayout layout = make_layout(records[0], cfg.token_mode, cfg.chunk_width);

    std::vector<std::vector<float>> data;
    for (const auto& r : records) data.push_back(st.apply(r.flatten()));

    DiffusionTrainResult result;
    result.model.schedule = make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    result.model.standardizer = st;
    result.model.weights = denoiser_init(layout, cfg.model, cfg.seed);

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(opt_cfg);
    Rng rng = Rng(cfg.seed).split(0x7a11);

    const int n = static_cast<int>(data.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // seeded Fisher-Yates; one full pass per epoch in batches
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.next_below(static_cast<uint32_t>(i + 1)))]);
        float lr_scale = std::pow(cfg.lr_decay, static_cast<float>(epoch / cfg.lr_decay_every));
        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n; start += cfg.batch) {
            std::vector<const std::vector<float>*> batch;
            for (int i = start; i < std::min(n, start + cfg.batch); ++i)
                batch.push_back(&data[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            epoch_loss += train_step(result.model.weights, batch, result.model.schedule, opt, rng,
                                     lr_scale);
            ++steps;
        }
        result.log.push_back({epoch, epoch_loss / std::max(1, steps)});
    }
    return result;
}

std::vector<float> ddim_sample_flat(const DenoiseFn& denoiser, const DiffusionSchedule& schedule,
                                    int ddim_steps, double eta, Rng& rng, int64_t dim) {
    check_shape(ddim_steps >= 1 && ddim_steps <= schedule.steps,
                "ddim: step count must be in [1, T]");
    check_shape(eta >= 0.0 && eta <= 1.0, "ddim: eta must be in [0,1]");

    // evenly spaced sub-schedule ending at T
    std::vector<int> taus;
    for (int i = 1; i <= ddim_steps; ++i) {
        int t = static_cast<int>(std::llround(static_cast<double>(i) * schedule.steps /
                                              static_cast<double>(ddim_steps)));
        t = std::max(1, std::min(schedule.steps, t));
        if (taus.empty() || t != taus.back()) taus.push_back(t);
    }

    std::vector<float> x(static_cast<size_t>(dim));
    for (auto& v : x) v = rng.normal_f();

    for (size_t i = taus.size(); i-- > 0;) {
        const int t = taus[i];
        const int t_prev = i == 0 ? 0 : taus[i - 1];
        const double ab_t = schedule.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = schedule.alpha_bar[static_cast<size_t>(t_prev)];

        std::vector<float> x0 = denoiser(x, t);
        check_shape(static_cast<int64_t>(x0.size()) == dim, "ddim: denoiser changed dimension");

        std::vector<float> z(static_cast<size_t>(dim), 0.0f);
        const bool stochastic = eta > 0.0 && t_prev > 0;
        if (stochastic)
            for (auto& v : z) v = rng.normal_f();

        double sigma = 0.0;
        if (stochastic)
            sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
                    std::sqrt(1.0 - ab_t / ab_prev);

        const double one_m_ab = 1.0 - ab_t;
        const double dir_coef = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        const double sqrt_ab_prev = std::sqrt(ab_prev);
        if (one_m_ab < 1e-12) {
            // degenerate noise level: predicted noise is unidentifiable
            std::vector<float> zz(static_cast<size_t>(dim));
            for (auto& v : zz) v = rng.normal_f();
            for (size_t j = 0; j < x.size(); ++j)
                x[j] = static_cast<float>(sqrt_ab_prev * x0[j] + dir_coef * zz[j] + sigma * z[j]);
            continue;
        }
        const double inv_sqrt_one_m_ab = 1.0 / std::sqrt(one_m_ab);
        const double sqrt_ab_t = std::sqrt(ab_t);
        for (size_t j = 0; j < x.size(); ++j) {
            double eps_hat = (x[j] - sqrt_ab_t * x0[j]) * inv_sqrt_one_m_ab;
            x[j] = static_cast<float>(sqrt_ab_prev * x0[j] + dir_coef * eps_hat + sigma * z[j]);
        }
    }
    return x;
}

WeightRecord ddim_sample(DiffusionModel& model, int ddim_steps, double eta, uint64_t seed) {
    Rng rng(seed ^ 0xdd130000ull);
    DenoiseFn fn = [&](const std::vector<float>& xt, int t) {
        TokenSequence noisy = tokenize_flat_vector(xt, model.weights.layout);
        TokenSequence pred = denoise(model.weights, noisy, t);
        return detokenize_to_vector(pred, model.weights.layout);
    };
    std::vector<float> x0 =
        ddim_sample_flat(fn, model.schedule, ddim_steps, eta, rng, model.weights.layout.total_scalars);
    WeightRecord rec = record_from_layout(model.weights.layout);
    rec.unflatten(model.standardizer.invert(x0));
    return rec;
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kModelMagic[4] = {'W', 'S', 'D', 'M'};
constexpr uint32_t kModelVersion = 1;

void wr_u32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void wr_u64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void wr_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t rd_u32(std::istream& i, const char* what) {
    uint32_t v;
    i.read(reinterpret_cast<char*>(&v), 4);
    if (!i) throw Error(std::string("model: truncated reading ") + what);
    return v;
}
uint64_t rd_u64(std::istream& i, const char* what) {
    uint64_t v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw Error(std::string("model: truncated reading ") + what);
    return v;
}
double rd_f64(std::istream& i, const char* what) {
    double v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw Error(std::string("model: truncated reading ") + what);
    return v;
}

void wr_tensor(std::ostream& o, const Tensor& t) {
    wr_u32(o, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) wr_u32(o, static_cast<uint32_t>(d));
    o.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * 4));
}

Tensor rd_tensor(std::istream& i) {
    uint32_t rank = rd_u32(i, "tensor rank");
    std::vector<int> shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(rd_u32(i, "tensor dims")));
    Tensor t = Tensor::zeros(shape);
    i.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!i) throw Error("model: truncated reading tensor payload");
    return t;
}

}  // namespace

void save_model(const DiffusionModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("model: cannot open " + path + " for writing");
    out.write(kModelMagic, 4);
    wr_u32(out, kModelVersion);

    const TokenLayout& lay = model.weights.layout;
    wr_u32(out, lay.mode == TokenMode::kLayerwise ? 0u : 1u);
    wr_u32(out, static_cast<uint32_t>(lay.chunk_width));
    wr_u32(out, static_cast<uint32_t>(lay.padding));
    wr_u64(out, static_cast<uint64_t>(lay.total_scalars));
    wr_u32(out, static_cast<uint32_t>(lay.layer_dims.size()));
    for (const auto& d : lay.layer_dims)
        for (int v : d) wr_u32(out, static_cast<uint32_t>(v));

    const DenoiserConfig& cfg = model.weights.cfg;
    wr_u32(out, static_cast<uint32_t>(cfg.blocks));
    wr_u32(out, static_cast<uint32_t>(cfg.heads));
    wr_u32(out, static_cast<uint32_t>(cfg.d_model));
    wr_u32(out, static_cast<uint32_t>(cfg.ffn_hidden));
    wr_u32(out, cfg.time_mode == DenoiserConfig::TimeMode::kToken ? 0u : 1u);

    wr_u32(out, static_cast<uint32_t>(model.schedule.steps));
    wr_f64(out, model.schedule.beta_start);
    wr_f64(out, model.schedule.beta_end);

    wr_u64(out, model.standardizer.mean.size());
    out.write(reinterpret_cast<const char*>(model.standardizer.mean.data()),
              static_cast<std::streamsize>(model.standardizer.mean.size() * 4));
    out.write(reinterpret_cast<const char*>(model.standardizer.stddev.data()),
              static_cast<std::streamsize>(model.standardizer.stddev.size() * 4));

    auto params = const_cast<DiffusionModel&>(model).weights.all_params();
    wr_u32(out, static_cast<uint32_t>(params.size()));
    for (Tensor* t : params) wr_tensor(out, *t);
    if (!out) throw Error("model: write failed for " + path);
}

DiffusionModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("model: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw Error("model: bad magic in " + path);
    uint32_t version = rd_u32(in, "version");
    if (version != kModelVersion) throw Error("model: unsupported version in " + path);

    TokenLayout lay;
    lay.mode = rd_u32(in, "token mode") == 0 ? TokenMode::kLayerwise : TokenMode::kFlat;
    lay.chunk_width = static_cast<int>(rd_u32(in, "chunk width"));
    lay.padding = static_cast<int>(rd_u32(in, "padding"));
    lay.total_scalars = static_cast<int64_t>(rd_u64(in, "total scalars"));
    uint32_t layers = rd_u32(in, "layer count");
    for (uint32_t l = 0; l < layers; ++l) {
        std::array<int, 5> d{};
        for (auto& v : d) v = static_cast<int>(rd_u32(in, "layer dims"));
        lay.layer_dims.push_back(d);
    }
    if (lay.mode == TokenMode::kLayerwise) {
        for (const auto& d : lay.layer_dims)
            lay.token_widths.push_back(d[0] * d[1] * d[2] * d[3] + d[4]);
    } else {
        int64_t chunks = (lay.total_scalars + lay.chunk_width - 1) / lay.chunk_width;
        lay.token_widths.assign(static_cast<size_t>(chunks), lay.chunk_width);
    }

    DenoiserConfig cfg;
    cfg.blocks = static_cast<int>(rd_u32(in, "blocks"));
    cfg.heads = static_cast<int>(rd_u32(in, "heads"));
    cfg.d_model = static_cast<int>(rd_u32(in, "d_model"));
    cfg.ffn_hidden = static_cast<int>(rd_u32(in, "ffn"));
    cfg.time_mode = rd_u32(in, "time mode") == 0 ? DenoiserConfig::TimeMode::kToken
                                                 : DenoiserConfig::TimeMode::kAdd;

    DiffusionModel model;
    int steps = static_cast<int>(rd_u32(in, "schedule steps"));
    double bs = rd_f64(in, "beta start"), be = rd_f64(in, "beta end");
    model.schedule = make_schedule(steps, bs, be);

    uint64_t dim = rd_u64(in, "standardizer dim");
    model.standardizer.mean.resize(dim);
    model.standardizer.stddev.resize(dim);
    in.read(reinterpret_cast<char*>(model.standardizer.mean.data()),
            static_cast<std::streamsize>(dim * 4));
    in.read(reinterpret_cast<char*>(model.standardizer.stddev.data()),
            static_cast<std::streamsize>(dim * 4));
    if (!in) throw Error("model: truncated standardizer in " + path);

    model.weights = denoiser_init(lay, cfg, 0);
    auto params = model.weights.all_params();
    uint32_t count = rd_u32(in, "param count");
    if (count != params.size())
        throw Error("model: parameter count mismatch in " + path + " (file " +
                    std::to_string(count) + ", expected " + std::to_string(params.size()) + ")");
    for (Tensor* t : params) {
        Tensor loaded = rd_tensor(in);
        if (loaded.shape != t->shape)
            throw Error("model: parameter shape mismatch in " + path + ": file " +
                        shape_str(loaded.shape) + ", expected " + shape_str(t->shape));
        *t = std::move(loaded);
    }
    return model;
}

void write_epoch_csv(const std::vector<EpochLogRow>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("diffusion: cannot write log " + path);
    out << "epoch,loss\n";
    for (const auto& row : log) out << row.epoch << "," << row.loss << "\n";
}

}  // namespace wsd
