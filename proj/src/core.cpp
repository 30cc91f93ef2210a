#include "promptforge/core.hpp"

#include <cmath>
#include <numbers>

namespace promptforge {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::AffineSingular: return "AffineSingular";
    case ErrorCode::TapeMismatch: return "TapeMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ScaleOutOfRange: return "ScaleOutOfRange";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ClassMismatch: return "ClassMismatch";
    case ErrorCode::BadClassCount: return "BadClassCount";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::EmptyKinds: return "EmptyKinds";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(error_name(code)) + ": " + what);
}

Image::Image(int h, int w, float fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) fail(ErrorCode::ShapeMismatch, "image dimensions must be positive");
  data.assign(std::size_t(channels) * std::size_t(h) * std::size_t(w), fill);
}

bool Image::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Mask::Mask(int h, int w, std::uint8_t fill) : height(h), width(w) {
  data.assign(std::size_t(h) * std::size_t(w), fill);
}

double Mask::fraction() const {
  if (data.empty()) return 0.0;
  std::size_t ones = 0;
  for (auto v : data) ones += v;
  return double(ones) / double(data.size());
}

void require_same_shape(const Image& a, const Image& b, std::string_view what) {
  if (!a.same_shape(b) || a.data.size() != b.data.size())
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.height) + "x" +
                                       std::to_string(a.width) + " vs " + std::to_string(b.height) +
                                       "x" + std::to_string(b.width));
}

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t RngStream::key() const { return mix64(seed_ ^ mix64(stream_ + kGolden)); }

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key() + counter_ * kGolden);
}

double RngStream::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t(0)) - (~std::uint64_t(0)) % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double RngStream::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::derive(std::string_view label) const {
  return RngStream(seed_, mix64(stream_ ^ fnv1a64(label)));
}

RngStream RngStream::derive(std::uint64_t index) const {
  return RngStream(seed_, mix64(stream_ + kGolden * (index + 1)) ^ 0x5851F42D4C957F2Dull);
}

}  // namespace promptforge
