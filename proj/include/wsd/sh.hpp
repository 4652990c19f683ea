#pragma once

#include <array>

#include "wsd/geom.hpp"

namespace wsd {

// Degree-3 real spherical harmonics, 16 basis functions. Coefficient layout
// is basis-major: h[b*3 + channel] for b in 0..15.
inline constexpr int kShBasisCount = 16;
inline constexpr int kShCoeffs = 48;
inline constexpr float kShDc = 0.28209479177387814f;

// Basis values at a unit direction.
std::array<double, kShBasisCount> sh_basis(const Vec3& dir);

// Per channel: clamp(sum_b Y_b * h[b*3+c] + 0.5, 0, 1).
Vec3 eval_sh(const float* h48, const Vec3& dir);

}  // namespace wsd
