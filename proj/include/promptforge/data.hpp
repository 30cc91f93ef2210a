#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "promptforge/core.hpp"

namespace promptforge {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string_view split_name(Split s);

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<Split> splits;
  std::string provenance;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> indices(Split s) const;
  std::size_t count(Split s) const;
  void validate() const;
};

inline constexpr int kMaxShapeClasses = 8;

// Shape families in label order.
std::string_view shape_name(int label);

// Seeded synthetic set: one hard-edged shape per image on a flat
// background. Labels are balanced (label i = i mod K before shuffling).
Dataset gen_shapes(std::size_t n, int height, int width, int num_classes, RngStream rng);

struct ShiftConfig {
  double hue_degrees = 0.0;   // rotation about the gray axis
  int translate_x = 0;        // pixels, zero fill
  int translate_y = 0;
  double level_delta = 0.0;   // added to every pixel
  double noise_std = 0.0;     // per-pixel gaussian noise, seeded by `seed`
  std::uint64_t seed = 0;

  bool is_identity() const {
    return hue_degrees == 0.0 && translate_x == 0 && translate_y == 0 && level_delta == 0.0 && noise_std == 0.0;
  }
};

// Target-domain shift used by the desk-scale experiments.
ShiftConfig default_shift();

Dataset shift_domain(const Dataset& d, const ShiftConfig& cfg);
Image shift_image(const Image& img, const ShiftConfig& cfg, RngStream* noise);

// Big-endian IDX: images magic 0x00000803 (u8, N x rows x cols), labels
// magic 0x00000801 (u8, N). Pixels scale to [0,1]; grayscale is
// replicated to three channels.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Shuffled partition into train/val/test. Every split with at least
// num_classes members is guaranteed to contain each class.
Dataset split(const Dataset& d, const std::array<double, 3>& fractions, RngStream rng);

}  // namespace promptforge
