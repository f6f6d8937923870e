// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace snn {

/// IEEE 754 binary32 -> binary16, round to nearest, ties to even.
/// Overflow saturates to infinity; NaN stays NaN (quiet).
std::uint16_t float_to_half(float value) noexcept;

/// Exact widening binary16 -> binary32.
float half_to_float(std::uint16_t bits) noexcept;

/// value -> f16 -> f32.
inline float round_through_half(float value) noexcept { return half_to_float(float_to_half(value)); }

}  // namespace snn
