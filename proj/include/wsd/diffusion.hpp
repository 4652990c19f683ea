#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wsd/adamw.hpp"
#include "wsd/rng.hpp"
#include "wsd/tape.hpp"
#include "wsd/weights.hpp"

namespace wsd {

// beta linear in t, tables computed in double; alpha_bar[0] == 1 so index t
// covers t = 0..steps.
struct DiffusionSchedule {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<double> beta;       // [steps+1], beta[0] unused
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prefix product, alpha_bar[0] = 1
};

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
std::vector<float> q_sample(const std::vector<float>& x0, int t, const std::vector<float>& eps,
                            const DiffusionSchedule& schedule);

struct DenoiserConfig {
    int blocks = 4;
    int heads = 4;
    int d_model = 128;
    int ffn_hidden = 256;
    enum class TimeMode { kToken, kAdd } time_mode = TimeMode::kToken;
};

// Per-token-position projections into a shared width, learned positional
// embeddings, pre-norm self-attention blocks, per-position unprojections.
struct DenoiserWeights {
    DenoiserConfig cfg;
    TokenLayout layout;

    std::vector<Tensor> proj_w, proj_b;
    Tensor pos_emb;           // [L, d_model]
    Tensor time_w, time_b;    // projection of the sinusoidal embedding
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    };
    std::vector<Block> blocks;
    Tensor final_g, final_b;
    std::vector<Tensor> unproj_w, unproj_b;

    std::vector<Tensor*> all_params();  // stable order for optimizer/checkpoint
    int64_t param_count();
};

// Unprojections start at zero so the initial prediction is exactly the data
// mean (zero in standardized space).
DenoiserWeights denoiser_init(const TokenLayout& layout, const DenoiserConfig& cfg, uint64_t seed);

std::vector<float> sinusoidal_time_embedding(int t, int width);

struct DenoiserNodes {
    std::vector<int> params;  // leaf ids in all_params() order
};
DenoiserNodes denoiser_leaves(Tape& tape, DenoiserWeights& weights, bool requires_grad);

// Forward pass over one noisy token sequence; returns per-token output nodes
// with the original raw widths.
std::vector<int> denoise_node(Tape& tape, const DenoiserNodes& nodes, const DenoiserWeights& w,
                              const TokenSequence& noisy, int t);

TokenSequence denoise(DenoiserWeights& weights, const TokenSequence& noisy, int t);

struct DiffusionTrainConfig {
    DenoiserConfig model;
    TokenMode token_mode = TokenMode::kLayerwise;
    int chunk_width = 1024;  // flat mode
    int schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int epochs = 2000;
    int batch = 4;
    float lr = 2e-4f;
    float weight_decay = 1e-2f;
    int lr_decay_every = 200;   // epochs
    float lr_decay = 0.9f;
    uint64_t seed = 0;
};

// One optimizer step over a batch of standardized flat records: per record
// draw t ~ U[1,T] and gaussian noise, predict the clean weights, MSE per
// coordinate. Returns the batch loss.
double train_step(DenoiserWeights& weights, const std::vector<const std::vector<float>*>& batch,
                  const DiffusionSchedule& schedule, AdamW& opt, Rng& rng, float lr_scale = 1.0f);

struct DiffusionModel {
    DenoiserWeights weights;
    Standardizer standardizer;
    DiffusionSchedule schedule;
};

struct EpochLogRow {
    int epoch = 0;
    double loss = 0;
};

struct DiffusionTrainResult {
    DiffusionModel model;
    std::vector<EpochLogRow> log;
};

DiffusionTrainResult train_diffusion(const std::vector<WeightRecord>& records,
                                     const DiffusionTrainConfig& cfg);

// Deterministic at eta = 0 for a fixed seed. The per-step denoiser is
// injectable so oracle tests can bypass the transformer.
using DenoiseFn = std::function<std::vector<float>(const std::vector<float>& x_t, int t)>;

std::vector<float> ddim_sample_flat(const DenoiseFn& denoiser, const DiffusionSchedule& schedule,
                                    int ddim_steps, double eta, Rng& rng, int64_t dim);

WeightRecord ddim_sample(DiffusionModel& model, int ddim_steps, double eta, uint64_t seed);

void save_model(const DiffusionModel& model, const std::string& path);
DiffusionModel load_model(const std::string& path);

void write_epoch_csv(const std::vector<EpochLogRow>& log, const std::string& path);

}  // namespace wsd
