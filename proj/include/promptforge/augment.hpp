#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "promptforge/core.hpp"

namespace promptforge {

enum class AugKind {
  Identity,
  Rotate,
  TranslateX,
  TranslateY,
  ShearX,
  ShearY,
  Brightness,
  Contrast,
  Solarize,
  Posterize,
  AutoContrast,
  Equalize,
  Sharpness,
};

inline constexpr int kAugKinds = 13;
inline constexpr int kMagnitudeBins = 31;  // bins 0..30

std::string_view aug_name(AugKind k);

struct AugOp {
  AugKind kind = AugKind::Identity;
  int bin = 0;
};

// Magnitude at the top bin; each op scales linearly with bin / 30.
struct AugMagnitudes {
  static constexpr double rotate_degrees = 30.0;
  static constexpr double translate_fraction = 0.3;  // of the image side
  static constexpr double shear = 0.3;
  static constexpr double enhance = 0.9;  // brightness/contrast/sharpness factor 1 +- 0.9
  static constexpr int posterize_bits_removed = 4;
};

// Signed ops draw their sign from rng; result is clamped to [0, 1].
Image apply_aug_op(const Image& img, const AugOp& op, RngStream& rng);

// One op drawn uniformly from the pool, one bin drawn uniformly.
AugOp draw_aug_op(RngStream& rng);
Image trivial_augment(const Image& img, RngStream& rng);

enum class CorruptionKind { GaussianNoise, Brightness, Contrast, BoxBlur, Pixelate };

inline constexpr int kCorruptionKinds = 5;

std::string_view corruption_name(CorruptionKind k);
CorruptionKind parse_corruption(std::string_view s);
std::vector<CorruptionKind> all_corruptions();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 1;  // 1..5
};

// Severity ladders (index = severity - 1).
struct CorruptionTables {
  static constexpr std::array<double, 5> noise_std = {0.04, 0.06, 0.08, 0.09, 0.10};
  static constexpr std::array<double, 5> brightness_shift = {0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr std::array<double, 5> contrast_factor = {0.75, 0.5, 0.4, 0.3, 0.15};
  // Passes of the separable [1 2 1]/4 kernel (two 2-tap box passes each).
  static constexpr std::array<int, 5> blur_passes = {1, 2, 4, 8, 16};
  static constexpr std::array<int, 5> pixel_block = {2, 4, 8, 16, 32};
};

Image corrupt(const Image& img, const CorruptionSpec& spec, RngStream& rng);

}  // namespace promptforge
