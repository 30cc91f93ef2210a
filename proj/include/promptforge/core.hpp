#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

enum class ErrorCode : int {
  Ok = 0,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  DuplicateName,
  NonFiniteInput,
  AffineSingular,
  TapeMismatch,
  ShapeMismatch,
  ScaleOutOfRange,
  EmptySplit,
  ClassMismatch,
  BadClassCount,
  DimensionMismatch,
  CountMismatch,
  DegenerateSplit,
  EmptyKinds,
  InvalidArgument,
  IoError,
  ConfigError,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

// Planar 3xHxW float raster. Also used for any per-pixel per-channel field
// (color prompt, additive prompt, gradients), which share the layout.
struct Image {
  static constexpr int channels = 3;

  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  std::size_t plane() const { return std::size_t(height) * std::size_t(width); }
  std::size_t size() const { return data.size(); }

  float& at(int c, int y, int x) { return data[c * plane() + std::size_t(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + std::size_t(y) * width + x]; }

  std::span<float> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const float> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
  bool all_finite() const;
};

using Field = Image;

// One binary value per pixel, broadcast over channels.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0);

  std::size_t plane() const { return std::size_t(height) * std::size_t(width); }
  std::uint8_t at(int y, int x) const { return data[std::size_t(y) * width + x]; }
  double fraction() const;
};

void require_same_shape(const Image& a, const Image& b, std::string_view what);

// Counter-based deterministic generator. The (seed, stream) pair fixes the
// key; draws are splitmix64 outputs of key + counter, so sequences are
// identical on every platform.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  double uniform(double lo, double hi);       // [lo, hi)
  std::uint64_t uniform_int(std::uint64_t n); // [0, n)
  double normal();

  RngStream derive(std::string_view label) const;
  RngStream derive(std::uint64_t index) const;

 private:
  std::uint64_t key() const;

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

inline RngStream rng_derive(const RngStream& base, std::string_view label) { return base.derive(label); }

std::uint64_t fnv1a64(std::string_view bytes);

template <typename T>
void shuffle_in_place(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = std::size_t(rng.uniform_int(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace promptforge
