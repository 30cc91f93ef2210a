#include "promptforge/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "promptforge/affine_warp.hpp"

namespace promptforge {

std::string_view aug_name(AugKind k) {
  switch (k) {
    case AugKind::Identity: return "identity";
    case AugKind::Rotate: return "rotate";
    case AugKind::TranslateX: return "translate-x";
    case AugKind::TranslateY: return "translate-y";
    case AugKind::ShearX: return "shear-x";
    case AugKind::ShearY: return "shear-y";
    case AugKind::Brightness: return "brightness";
    case AugKind::Contrast: return "contrast";
    case AugKind::Solarize: return "solarize";
    case AugKind::Posterize: return "posterize";
    case AugKind::AutoContrast: return "autocontrast";
    case AugKind::Equalize: return "equalize";
    case AugKind::Sharpness: return "sharpness-lite";
  }
  return "?";
}

namespace {

void clamp01(Image& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

double signed_magnitude(int bin, double top, RngStream& rng) {
  const double m = top * double(bin) / double(kMagnitudeBins - 1);
  return rng.uniform() < 0.5 ? -m : m;
}

Image geometric(const Image& img, const Affine3& a) {
  Image out;
  warp_apply(img, a, out);
  return out;
}

int quantize(float v) { return std::clamp(int(std::lround(double(v) * 255.0)), 0, 255); }

void per_channel_lut(Image& img, const std::array<std::array<float, 256>, 3>& lut) {
  const std::size_t n = img.plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p) img.data[c * n + p] = lut[std::size_t(c)][std::size_t(quantize(img.data[c * n + p]))];
}

std::array<std::array<std::size_t, 256>, 3> histograms(const Image& img) {
  std::array<std::array<std::size_t, 256>, 3> h{};
  const std::size_t n = img.plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p) ++h[std::size_t(c)][std::size_t(quantize(img.data[c * n + p]))];
  return h;
}

Image autocontrast(const Image& img) {
  const auto hist = histograms(img);
  std::array<std::array<float, 256>, 3> lut{};
  for (std::size_t c = 0; c < 3; ++c) {
    int lo = 0, hi = 255;
    while (lo < 255 && hist[c][std::size_t(lo)] == 0) ++lo;
    while (hi > 0 && hist[c][std::size_t(hi)] == 0) --hi;
    for (int i = 0; i < 256; ++i)
      lut[c][std::size_t(i)] = hi > lo ? std::clamp(float(i - lo) / float(hi - lo), 0.0f, 1.0f) : float(i) / 255.0f;
  }
  Image out = img;
  per_channel_lut(out, lut);
  return out;
}

Image equalize(const Image& img) {
  const auto hist = histograms(img);
  std::array<std::array<float, 256>, 3> lut{};
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t total = 0, last = 0;
    for (int i = 0; i < 256; ++i) {
      total += hist[c][std::size_t(i)];
      if (hist[c][std::size_t(i)]) last = hist[c][std::size_t(i)];
    }
    const std::size_t step = (total - last) / 255;
    std::size_t acc = step / 2;
    for (int i = 0; i < 256; ++i) {
      if (step == 0) {
        lut[c][std::size_t(i)] = float(i) / 255.0f;
        continue;
      }
      lut[c][std::size_t(i)] = float(std::min<std::size_t>(255, acc / step)) / 255.0f;
      acc += hist[c][std::size_t(i)];
    }
  }
  Image out = img;
  per_channel_lut(out, lut);
  return out;
}

Image sharpness(const Image& img, double factor) {
  Image out = img;
  const int h = img.height, w = img.width;
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y + 1 < h; ++y)
      for (int x = 1; x + 1 < w; ++x) {
        double s = 4.0 * img.at(c, y, x);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) s += img.at(c, y + dy, x + dx);
        s /= 13.0;
        out.at(c, y, x) = float(s + factor * (img.at(c, y, x) - s));
      }
  return out;
}

}  // namespace

Image apply_aug_op(const Image& img, const AugOp& op, RngStream& rng) {
  if (op.bin < 0 || op.bin >= kMagnitudeBins) fail(ErrorCode::InvalidArgument, "augmentation bin out of range");
  using M = AugMagnitudes;
  const double frac = double(op.bin) / double(kMagnitudeBins - 1);
  Image out;
  switch (op.kind) {
    case AugKind::Identity:
      return img;
    case AugKind::Rotate: {
      const double a = signed_magnitude(op.bin, M::rotate_degrees, rng) * std::numbers::pi / 180.0;
      Affine3 r;
      r.m = {std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1};
      out = geometric(img, r);
      break;
    }
    case AugKind::TranslateX:
    case AugKind::TranslateY: {
      // Normalized units: one image side spans 2.
      const double t = 2.0 * signed_magnitude(op.bin, M::translate_fraction, rng);
      Affine3 a;
      a.m[op.kind == AugKind::TranslateX ? 2 : 5] = t;
      out = geometric(img, a);
      break;
    }
    case AugKind::ShearX:
    case AugKind::ShearY: {
      const double s = signed_magnitude(op.bin, M::shear, rng);
      Affine3 a;
      a.m[op.kind == AugKind::ShearX ? 1 : 3] = s;
      out = geometric(img, a);
      break;
    }
    case AugKind::Brightness: {
      const float f = float(1.0 + signed_magnitude(op.bin, M::enhance, rng));
      out = img;
      for (float& v : out.data) v *= f;
      break;
    }
    case AugKind::Contrast: {
      const double f = 1.0 + signed_magnitude(op.bin, M::enhance, rng);
      double mean = 0;
      for (float v : img.data) mean += v;
      mean /= double(img.size());
      out = img;
      for (float& v : out.data) v = float(mean + f * (v - mean));
      break;
    }
    case AugKind::Solarize: {
      const float thr = float(1.0 - frac);
      out = img;
      for (float& v : out.data)
        if (v > thr) v = 1.0f - v;
      break;
    }
    case AugKind::Posterize: {
      const int bits = 8 - int(std::lround(frac * M::posterize_bits_removed));
      const int keep = (0xFF << (8 - bits)) & 0xFF;
      out = img;
      for (float& v : out.data) v = float(quantize(v) & keep) / 255.0f;
      break;
    }
    case AugKind::AutoContrast:
      out = autocontrast(img);
      break;
    case AugKind::Equalize:
      out = equalize(img);
      break;
    case AugKind::Sharpness:
      out = sharpness(img, 1.0 + signed_magnitude(op.bin, M::enhance, rng));
      break;
  }
  clamp01(out);
  return out;
}

AugOp draw_aug_op(RngStream& rng) {
  AugOp op;
  op.kind = AugKind(rng.uniform_int(kAugKinds));
  op.bin = int(rng.uniform_int(kMagnitudeBins));
  return op;
}

Image trivial_augment(const Image& img, RngStream& rng) {
  const AugOp op = draw_aug_op(rng);
  return apply_aug_op(img, op, rng);
}

// ---------------------------------------------------------------------------

std::string_view corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::GaussianNoise: return "gaussian-noise";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::BoxBlur: return "box-blur";
    case CorruptionKind::Pixelate: return "pixelate";
  }
  return "?";
}

std::vector<CorruptionKind> all_corruptions() {
  return {CorruptionKind::GaussianNoise, CorruptionKind::Brightness, CorruptionKind::Contrast,
          CorruptionKind::BoxBlur, CorruptionKind::Pixelate};
}

CorruptionKind parse_corruption(std::string_view s) {
  for (auto k : all_corruptions())
    if (corruption_name(k) == s) return k;
  fail(ErrorCode::InvalidArgument, "unknown corruption kind '" + std::string(s) + "'");
}

namespace {

// One [1 2 1]/4 pass along x then y, replicating edges.
void binomial_pass(Image& img) {
  const int h = img.height, w = img.width;
  std::vector<float> line(std::size_t(std::max(h, w)));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) line[std::size_t(x)] = img.at(c, y, x);
      for (int x = 0; x < w; ++x) {
        const double l = line[std::size_t(std::max(x - 1, 0))], r = line[std::size_t(std::min(x + 1, w - 1))];
        img.at(c, y, x) = float(0.25 * l + 0.5 * line[std::size_t(x)] + 0.25 * r);
      }
    }
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) line[std::size_t(y)] = img.at(c, y, x);
      for (int y = 0; y < h; ++y) {
        const double u = line[std::size_t(std::max(y - 1, 0))], d = line[std::size_t(std::min(y + 1, h - 1))];
        img.at(c, y, x) = float(0.25 * u + 0.5 * line[std::size_t(y)] + 0.25 * d);
      }
    }
  }
}

Image pixelate(const Image& img, int block) {
  Image out = img;
  const int h = img.height, w = img.width;
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < h; by += block)
      for (int bx = 0; bx < w; bx += block) {
        const int ey = std::min(h, by + block), ex = std::min(w, bx + block);
        double s = 0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) s += img.at(c, y, x);
        const float m = float(s / double((ey - by) * (ex - bx)));
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) out.at(c, y, x) = m;
      }
  return out;
}

}  // namespace

Image corrupt(const Image& img, const CorruptionSpec& spec, RngStream& rng) {
  if (spec.severity < 1 || spec.severity > 5) fail(ErrorCode::InvalidArgument, "corruption severity must be 1..5");
  const std::size_t s = std::size_t(spec.severity - 1);
  using T = CorruptionTables;
  Image out = img;
  switch (spec.kind) {
    case CorruptionKind::GaussianNoise:
      for (float& v : out.data) v = float(v + T::noise_std[s] * rng.normal());
      break;
    case CorruptionKind::Brightness:
      for (float& v : out.data) v = float(v + T::brightness_shift[s]);
      break;
    case CorruptionKind::Contrast: {
      double mean = 0;
      for (float v : img.data) mean += v;
      mean /= double(img.size());
      for (float& v : out.data) v = float((v - mean) * T::contrast_factor[s] + mean);
      break;
    }
    case CorruptionKind::BoxBlur:
      for (int k = 0; k < T::blur_passes[s]; ++k) binomial_pass(out);
      break;
    case CorruptionKind::Pixelate:
      out = pixelate(img, T::pixel_block[s]);
      break;
  }
  clamp01(out);
  return out;
}

}  // namespace promptforge
