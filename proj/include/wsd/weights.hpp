#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsd/tensor.hpp"

namespace wsd {

// Ordered conv-layer payloads of one fitted avatar network; the data point of
// the weight-space diffusion model.
struct WeightLayer {
    Tensor kernel;  // [C_out, C_in, K_h, K_w]
    Tensor bias;    // [C_out]
};

struct WeightRecord {
    std::vector<WeightLayer> layers;

    int64_t scalar_count() const;
    std::vector<float> flatten() const;  // kernels then bias, layer order
    void unflatten(const std::vector<float>& flat);
    bool same_layout(const WeightRecord& o) const;
};

// Binary container: magic "WSDW", version u32, layer count u32, then per
// layer 5xu32 dims (C_out, C_in, K_h, K_w, bias_len) followed by the
// little-endian f32 payload, kernel then bias.
void save_record(const WeightRecord& rec, const std::string& path);
WeightRecord load_record(const std::string& path);

// Per-coordinate statistics across a record collection; sigma floored.
struct Standardizer {
    std::vector<float> mean;
    std::vector<float> stddev;  // >= kEpsilon
    static constexpr float kEpsilon = 1e-8f;

    std::vector<float> apply(const std::vector<float>& flat) const;
    std::vector<float> invert(const std::vector<float>& standardized) const;
};

Standardizer fit_standardizer(const std::vector<WeightRecord>& records);

enum class TokenMode { kLayerwise, kFlat };

// Raw token geometry. Layerwise: one variable-width token per layer
// (flatten(kernel) ++ bias). Flat: everything concatenated, zero-padded to a
// multiple of chunk_width, then split.
struct TokenLayout {
    TokenMode mode = TokenMode::kLayerwise;
    std::vector<std::array<int, 5>> layer_dims;  // (C_out, C_in, K_h, K_w, bias_len)
    std::vector<int> token_widths;
    int chunk_width = 0;  // flat mode only
    int padding = 0;      // flat mode only
    int64_t total_scalars = 0;

    int token_count() const { return static_cast<int>(token_widths.size()); }
    bool matches(const WeightRecord& rec) const;
};

TokenLayout make_layout(const WeightRecord& reference, TokenMode mode, int chunk_width = 0);

using TokenSequence = std::vector<std::vector<float>>;

TokenSequence tokenize(const WeightRecord& rec, const TokenLayout& layout);
WeightRecord detokenize(const TokenSequence& tokens, const TokenLayout& layout);

// Tokens over an already-flattened (standardized) vector and back.
TokenSequence tokenize_flat_vector(const std::vector<float>& flat, const TokenLayout& layout);
std::vector<float> detokenize_to_vector(const TokenSequence& tokens, const TokenLayout& layout);

WeightRecord record_from_layout(const TokenLayout& layout);  // zero-filled

// Pack file: u32 record count, concatenated .wsdw records, then a trailing
// standardizer block (mean then stddev, f32 each, length = scalar count).
void save_pack(const std::vector<WeightRecord>& records, const Standardizer& st,
               const std::string& path);
struct WeightPack {
    std::vector<WeightRecord> records;
    Standardizer standardizer;
};
WeightPack load_pack(const std::string& path);

}  // namespace wsd
