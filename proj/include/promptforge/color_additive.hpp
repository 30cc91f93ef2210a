#pragma once

#include "promptforge/affine_warp.hpp"
#include "promptforge/core.hpp"

namespace promptforge {

inline constexpr double kDefaultColorRange = 6.0;

struct ColorPrompt {
  Field sigma_raw;
  double range = kDefaultColorRange;
};

struct AdditivePrompt {
  Field delta;
};

struct ConstrainedColor {
  Field sigma_hat;
  Field jacobian;  // d(sigma_hat)/d(sigma_raw), elementwise
};

ConstrainedColor constrain_color(const ColorPrompt& p);

// Raw value whose squashed color factor is exactly `target`.
double color_raw_for(double target, double range);

enum class MaskMode { Geometric, ZeroTest };

// Geometric: 1 where the inverse sample left the source. ZeroTest: 1 where
// all three channels are exactly zero.
Mask generate_mask(const Image& warped, const WarpTape& tape, MaskMode mode);
Mask zero_test_mask(const Image& warped);

Image apply_color_additive(const Image& warped, const Field& sigma_hat, const Mask& mask, const Field& delta);

struct ColorAdditiveGrads {
  Image warped;
  Field sigma_raw;
  Field delta;
};

ColorAdditiveGrads color_additive_backward(const Image& grad_out, const Image& warped, const Field& sigma_hat,
                                           const Mask& mask, const Field& jacobian);

}  // namespace promptforge
