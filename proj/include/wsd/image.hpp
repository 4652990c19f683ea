#pragma once

#include <string>

#include "wsd/tensor.hpp"

namespace wsd {

// 8-bit PNG I/O for the two layouts the pipeline uses: [1,3,H,W] (RGB) and
// [1,1,H,W] (gray). Values are linear in [0,1]; encoding is
// round(clamp(v,0,1)*255). Fixed zlib settings keep outputs byte-identical
// across runs.
void save_png(const Tensor& img, const std::string& path);
Tensor load_png(const std::string& path);

double psnr(const Tensor& a, const Tensor& b);  // see eval-metrics; cap 100 dB

}  // namespace wsd
