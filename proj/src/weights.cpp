#include "wsd/weights.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace wsd {

namespace {

constexpr char kRecordMagic[4] = {'W', 'S', 'D', 'W'};
constexpr uint32_t kRecordVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw Error("weights: truncated file while reading " + what);
    return v;
}

void write_f32(std::ostream& out, const float* data, size_t count) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

void read_f32(std::istream& in, float* data, size_t count, const std::string& what) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
    if (!in) throw Error("weights: truncated file while reading " + what);
}

void write_record_stream(const WeightRecord& rec, std::ostream& out) {
    out.write(kRecordMagic, 4);
    write_u32(out, kRecordVersion);
    write_u32(out, static_cast<uint32_t>(rec.layers.size()));
    for (const WeightLayer& l : rec.layers) {
        check_shape(l.kernel.rank() == 4, "weights: kernel must be 4D");
        check_shape(l.bias.rank() == 1, "weights: bias must be 1D");
        for (int d = 0; d < 4; ++d) write_u32(out, static_cast<uint32_t>(l.kernel.dim(d)));
        write_u32(out, static_cast<uint32_t>(l.bias.dim(0)));
        write_f32(out, l.kernel.data.data(), l.kernel.data.size());
        write_f32(out, l.bias.data.data(), l.bias.data.size());
    }
}

WeightRecord read_record_stream(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kRecordMagic, 4) != 0)
        throw Error("weights: bad magic (not a WSDW record)");
    uint32_t version = read_u32(in, "version");
    if (version != kRecordVersion)
        throw Error("weights: unsupported version " + std::to_string(version));
    uint32_t layer_count = read_u32(in, "layer count");
    WeightRecord rec;
    rec.layers.resize(layer_count);
    for (uint32_t i = 0; i < layer_count; ++i) {
        uint32_t d[5];
        for (auto& v : d) v = read_u32(in, "layer dims");
        WeightLayer& l = rec.layers[i];
        l.kernel = Tensor::zeros({static_cast<int>(d[0]), static_cast<int>(d[1]),
                                  static_cast<int>(d[2]), static_cast<int>(d[3])});
        l.bias = Tensor::zeros({static_cast<int>(d[4])});
        read_f32(in, l.kernel.data.data(), l.kernel.data.size(),
                 "kernel payload of layer " + std::to_string(i));
        read_f32(in, l.bias.data.data(), l.bias.data.size(),
                 "bias payload of layer " + std::to_string(i));
    }
    return rec;
}

}  // namespace

int64_t WeightRecord::scalar_count() const {
    int64_t n = 0;
    for (const WeightLayer& l : layers) n += l.kernel.numel() + l.bias.numel();
    return n;
}

std::vector<float> WeightRecord::flatten() const {
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(scalar_count()));
    for (const WeightLayer& l : layers) {
        flat.insert(flat.end(), l.kernel.data.begin(), l.kernel.data.end());
        flat.insert(flat.end(), l.bias.data.begin(), l.bias.data.end());
    }
    return flat;
}

void WeightRecord::unflatten(const std::vector<float>& flat) {
    check_shape(static_cast<int64_t>(flat.size()) == scalar_count(),
                "weights: flat vector has " + std::to_string(flat.size()) + " values, record needs " +
                    std::to_string(scalar_count()));
    size_t pos = 0;
    for (WeightLayer& l : layers) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + l.kernel.data.size()),
                  l.kernel.data.begin());
        pos += l.kernel.data.size();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + l.bias.data.size()),
                  l.bias.data.begin());
        pos += l.bias.data.size();
    }
}

bool WeightRecord::same_layout(const WeightRecord& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kernel.shape != o.layers[i].kernel.shape ||
            layers[i].bias.shape != o.layers[i].bias.shape)
            return false;
    return true;
}

void save_record(const WeightRecord& rec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("weights: cannot open " + path + " for writing");
    write_record_stream(rec, out);
    if (!out) throw Error("weights: write failed for " + path);
}

WeightRecord load_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("weights: cannot open " + path);
    try {
        WeightRecord rec = read_record_stream(in);
        return rec;
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " in " + path);
    }
}

std::vector<float> Standardizer::apply(const std::vector<float>& flat) const {
    check_shape(flat.size() == mean.size(), "standardizer: dimension mismatch");
    std::vector<float> out(flat.size());
    for (size_t i = 0; i < flat.size(); ++i) out[i] = (flat[i] - mean[i]) / stddev[i];
    return out;
}

std::vector<float> Standardizer::invert(const std::vector<float>& standardized) const {
    check_shape(standardized.size() == mean.size(), "standardizer: dimension mismatch");
    std::vector<float> out(standardized.size());
    for (size_t i = 0; i < standardized.size(); ++i) out[i] = standardized[i] * stddev[i] + mean[i];
    return out;
}

Standardizer fit_standardizer(const std::vector<WeightRecord>& records) {
    check_shape(!records.empty(), "standardizer: need at least one record");
    for (const auto& r : records)
        check_shape(r.same_layout(records[0]), "standardizer: records have mismatched layouts");
    const size_t d = static_cast<size_t>(records[0].scalar_count());
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    for (const auto& r : records) {
        std::vector<float> flat = r.flatten();
        for (size_t i = 0; i < d; ++i) {
            sum[i] += flat[i];
            sumsq[i] += static_cast<double>(flat[i]) * flat[i];
        }
    }
    const double n = static_cast<double>(records.size());
    Standardizer st;
    st.mean.resize(d);
    st.stddev.resize(d);
    for (size_t i = 0; i < d; ++i) {
        double mu = sum[i] / n;
        double var = std::max(0.0, sumsq[i] / n - mu * mu);
        st.mean[i] = static_cast<float>(mu);
        st.stddev[i] = std::max(Standardizer::kEpsilon, static_cast<float>(std::sqrt(var)));
    }
    return st;
}

TokenLayout make_layout(const WeightRecord& reference, TokenMode mode, int chunk_width) {
    TokenLayout layout;
    layout.mode = mode;
    layout.total_scalars = reference.scalar_count();
    for (const WeightLayer& l : reference.layers)
        layout.layer_dims.push_back({l.kernel.dim(0), l.kernel.dim(1), l.kernel.dim(2),
                                     l.kernel.dim(3), l.bias.dim(0)});
    if (mode == TokenMode::kLayerwise) {
        for (const WeightLayer& l : reference.layers)
            layout.token_widths.push_back(static_cast<int>(l.kernel.numel() + l.bias.numel()));
    } else {
        check_shape(chunk_width > 0, "layout: flat mode needs a positive chunk width");
        layout.chunk_width = chunk_width;
        int64_t chunks = (layout.total_scalars + chunk_width - 1) / chunk_width;
        layout.padding = static_cast<int>(chunks * chunk_width - layout.total_scalars);
        layout.token_widths.assign(static_cast<size_t>(chunks), chunk_width);
    }
    return layout;
}

bool TokenLayout::matches(const WeightRecord& rec) const {
    if (rec.layers.size() != layer_dims.size()) return false;
    for (size_t i = 0; i < layer_dims.size(); ++i) {
        const auto& d = layer_dims[i];
        const WeightLayer& l = rec.layers[i];
        if (l.kernel.dim(0) != d[0] || l.kernel.dim(1) != d[1] || l.kernel.dim(2) != d[2] ||
            l.kernel.dim(3) != d[3] || l.bias.dim(0) != d[4])
            return false;
    }
    return true;
}

TokenSequence tokenize(const WeightRecord& rec, const TokenLayout& layout) {
    check_shape(layout.matches(rec), "tokenize: record does not match layout");
    return tokenize_flat_vector(rec.flatten(), layout);
}

TokenSequence tokenize_flat_vector(const std::vector<float>& flat, const TokenLayout& layout) {
    check_shape(static_cast<int64_t>(flat.size()) == layout.total_scalars,
                "tokenize: flat vector size " + std::to_string(flat.size()) +
                    " does not match layout scalars " + std::to_string(layout.total_scalars));
    TokenSequence tokens;
    tokens.reserve(layout.token_widths.size());
    size_t pos = 0;
    for (size_t t = 0; t < layout.token_widths.size(); ++t) {
        size_t w = static_cast<size_t>(layout.token_widths[t]);
        size_t take = std::min(w, flat.size() - pos);
        std::vector<float> tok(w, 0.0f);  // zero padding in the final flat chunk
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + take), tok.begin());
        pos += take;
        tokens.push_back(std::move(tok));
    }
    return tokens;
}

std::vector<float> detokenize_to_vector(const TokenSequence& tokens, const TokenLayout& layout) {
    check_shape(static_cast<int>(tokens.size()) == layout.token_count(),
                "detokenize: got " + std::to_string(tokens.size()) + " tokens, layout has " +
                    std::to_string(layout.token_count()));
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(layout.total_scalars));
    for (size_t t = 0; t < tokens.size(); ++t) {
        check_shape(static_cast<int>(tokens[t].size()) == layout.token_widths[t],
                    "detokenize: token " + std::to_string(t) + " has width " +
                        std::to_string(tokens[t].size()) + ", layout expects " +
                        std::to_string(layout.token_widths[t]));
        flat.insert(flat.end(), tokens[t].begin(), tokens[t].end());
    }
    flat.resize(static_cast<size_t>(layout.total_scalars));  // drop flat-mode padding
    return flat;
}

WeightRecord record_from_layout(const TokenLayout& layout) {
    WeightRecord rec;
    for (const auto& d : layout.layer_dims) {
        WeightLayer l;
        l.kernel = Tensor::zeros({d[0], d[1], d[2], d[3]});
        l.bias = Tensor::zeros({d[4]});
        rec.layers.push_back(std::move(l));
    }
    return rec;
}

WeightRecord detokenize(const TokenSequence& tokens, const TokenLayout& layout) {
    WeightRecord rec = record_from_layout(layout);
    rec.unflatten(detokenize_to_vector(tokens, layout));
    return rec;
}

void save_pack(const std::vector<WeightRecord>& records, const Standardizer& st,
               const std::string& path) {
    check_shape(!records.empty(), "pack: need at least one record");
    check_shape(st.mean.size() == static_cast<size_t>(records[0].scalar_count()),
                "pack: standardizer dimension mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("pack: cannot open " + path + " for writing");
    write_u32(out, static_cast<uint32_t>(records.size()));
    for (const auto& r : records) write_record_stream(r, out);
    write_f32(out, st.mean.data(), st.mean.size());
    write_f32(out, st.stddev.data(), st.stddev.size());
    if (!out) throw Error("pack: write failed for " + path);
}

WeightPack load_pack(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("pack: cannot open " + path);
    WeightPack pack;
    uint32_t count = read_u32(in, "record count");
    if (count == 0) throw Error("pack: empty record set in " + path);
    pack.records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        try {
            pack.records.push_back(read_record_stream(in));
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " (record " + std::to_string(i) + " of " + path + ")");
        }
        if (!pack.records.back().same_layout(pack.records[0]))
            throw Error("pack: record " + std::to_string(i) + " layout mismatch in " + path);
    }
    size_t d = static_cast<size_t>(pack.records[0].scalar_count());
    pack.standardizer.mean.resize(d);
    pack.standardizer.stddev.resize(d);
    read_f32(in, pack.standardizer.mean.data(), d, "standardizer mean");
    read_f32(in, pack.standardizer.stddev.data(), d, "standardizer stddev");
    return pack;
}

}  // namespace wsd
