#include "wsd/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace wsd {

namespace {

void put_u32be(std::vector<unsigned char>& b, uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const std::vector<unsigned char>& data) {
    put_u32be(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(4 + data.size())));
    put_u32be(out, crc);
}

const unsigned char kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

void save_png(const Tensor& img, const std::string& path) {
    check_shape(img.rank() == 4 && img.dim(0) == 1 && (img.dim(1) == 1 || img.dim(1) == 3),
                "save_png: expected [1,1,H,W] or [1,3,H,W], got " + shape_str(img.shape));
    const int C = img.dim(1), H = img.dim(2), W = img.dim(3);

    // raw scanlines, filter 0
    std::vector<unsigned char> raw(static_cast<size_t>(H) * (1 + static_cast<size_t>(W) * C));
    size_t pos = 0;
    for (int y = 0; y < H; ++y) {
        raw[pos++] = 0;
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                float v = std::clamp(img.at4(0, c, y, x), 0.0f, 1.0f);
                raw[pos++] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("save_png: deflate failed for " + path);
    compressed.resize(bound);

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    std::vector<unsigned char> ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(W));
    put_u32be(ihdr, static_cast<uint32_t>(H));
    ihdr.push_back(8);                       // bit depth
    ihdr.push_back(C == 3 ? 2 : 0);          // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", compressed);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("save_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("save_png: write failed for " + path);
}

Tensor load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load_png: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
        throw Error("load_png: not a PNG file: " + path);

    int width = 0, height = 0, channels = 0;
    std::vector<unsigned char> idat;
    size_t pos = 8;
    bool seen_end = false;
    while (pos + 8 <= buf.size() && !seen_end) {
        uint32_t len = get_u32be(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw Error("load_png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const unsigned char* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = static_cast<int>(get_u32be(data));
            height = static_cast<int>(get_u32be(data + 4));
            int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
                throw Error("load_png: unsupported format (need 8-bit gray or RGB): " + path);
            channels = color == 2 ? 3 : 1;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_end = true;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0 || idat.empty())
        throw Error("load_png: missing IHDR/IDAT in " + path);

    const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
    std::vector<unsigned char> raw(static_cast<size_t>(height) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw Error("load_png: inflate failed for " + path);

    // unfilter
    std::vector<unsigned char> img(static_cast<size_t>(height) * stride);
    const int bpp = channels;
    for (int y = 0; y < height; ++y) {
        unsigned char filter = raw[static_cast<size_t>(y) * (1 + stride)];
        const unsigned char* src = raw.data() + static_cast<size_t>(y) * (1 + stride) + 1;
        unsigned char* dst = img.data() + static_cast<size_t>(y) * stride;
        const unsigned char* up = y > 0 ? img.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? dst[i - static_cast<size_t>(bpp)] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= static_cast<size_t>(bpp)) ? up[i - static_cast<size_t>(bpp)] : 0;
            int x = src[i];
            switch (filter) {
                case 0: dst[i] = static_cast<unsigned char>(x); break;
                case 1: dst[i] = static_cast<unsigned char>(x + a); break;
                case 2: dst[i] = static_cast<unsigned char>(x + b); break;
                case 3: dst[i] = static_cast<unsigned char>(x + (a + b) / 2); break;
                case 4: {
                    int p = a + b - c;
                    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    int pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    dst[i] = static_cast<unsigned char>(x + pred);
                    break;
                }
                default: throw Error("load_png: unsupported filter type in " + path);
            }
        }
    }

    Tensor out = Tensor::zeros({1, channels, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                out.at4(0, c, y, x) =
                    static_cast<float>(img[static_cast<size_t>(y) * stride + static_cast<size_t>(x) * channels + static_cast<size_t>(c)]) / 255.0f;
    return out;
}

double psnr(const Tensor& a, const Tensor& b) {
    check_shape(a.shape == b.shape,
                "psnr: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    mse = std::max(mse, 1e-10);
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace wsd
