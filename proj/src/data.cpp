#include "promptforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace promptforge {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

std::size_t Dataset::count(Split s) const { return std::size_t(std::count(splits.begin(), splits.end(), s)); }

void Dataset::validate() const {
  if (images.size() != labels.size() || images.size() != splits.size())
    fail(ErrorCode::CountMismatch, "dataset images, labels and split tags differ in length");
  for (int l : labels)
    if (l < 0 || l >= num_classes) fail(ErrorCode::ClassMismatch, "label " + std::to_string(l) + " out of range");
}

std::string_view shape_name(int label) {
  static constexpr std::array<std::string_view, kMaxShapeClasses> names = {
      "circle", "square", "triangle", "cross", "ring", "diamond", "bar", "saltire"};
  return names.at(std::size_t(label));
}

namespace {

bool inside_shape(int label, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (label) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 2: {
      // Upward triangle: apex (0, -r), base y = 0.8 r, half-width r.
      if (dy < -r || dy > 0.8 * r) return false;
      const double half = r * (dy + r) / (1.8 * r);
      return ax <= half;
    }
    case 3: return (ax <= r && ay <= 0.3 * r) || (ax <= 0.3 * r && ay <= r);
    case 4: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case 5: return ax + ay <= r;
    case 6: return ax <= r && ay <= 0.35 * r;
    case 7: return (std::abs(dx - dy) <= 0.42 * r || std::abs(dx + dy) <= 0.42 * r) && ax <= 0.75 * r && ay <= 0.75 * r;
  }
  return false;
}

}  // namespace

Dataset gen_shapes(std::size_t n, int height, int width, int num_classes, RngStream rng) {
  if (num_classes < 2 || num_classes > kMaxShapeClasses)
    fail(ErrorCode::BadClassCount, "shape classes must be in [2, 8], got " + std::to_string(num_classes));
  if (height < 8 || width < 8) fail(ErrorCode::InvalidArgument, "shape canvas must be at least 8x8");
  Dataset d;
  d.num_classes = num_classes;
  d.provenance = "shapes(n=" + std::to_string(n) + ",h=" + std::to_string(height) + ",w=" + std::to_string(width) +
                 ",k=" + std::to_string(num_classes) + ",seed=" + std::to_string(rng.seed()) + ")";
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = int(i % std::size_t(num_classes));
  RngStream order = rng.derive("order");
  shuffle_in_place(labels, order);

  const double side = std::min(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream g = rng.derive(std::uint64_t(i));
    const int label = labels[i];
    Image img(height, width);
    // Dark background, bright saturated foreground.
    std::array<float, 3> bg, fg;
    for (int c = 0; c < 3; ++c) bg[std::size_t(c)] = float(g.uniform(0.0, 0.3));
    for (int c = 0; c < 3; ++c) fg[std::size_t(c)] = float(g.uniform(0.55, 1.0));
    const double r = side * g.uniform(0.16, 0.3);
    const double cx = g.uniform(r + 1.0, width - r - 1.0);
    const double cy = g.uniform(r + 1.0, height - r - 1.0);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const bool on = inside_shape(label, x + 0.5 - cx, y + 0.5 - cy, r);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = on ? fg[std::size_t(c)] : bg[std::size_t(c)];
      }
    }
    d.images.push_back(std::move(img));
  }
  d.labels = std::move(labels);
  d.splits.assign(n, Split::Train);
  return d;
}

ShiftConfig default_shift() {
  ShiftConfig s;
  s.hue_degrees = 90.0;
  s.translate_x = 3;
  s.translate_y = -2;
  s.level_delta = 0.25;
  s.noise_std = 0.0;
  s.seed = 0x5eed;
  return s;
}

Image shift_image(const Image& img, const ShiftConfig& cfg, RngStream* noise) {
  const int h = img.height, w = img.width;
  if (std::abs(cfg.translate_x) * 4 >= std::min(h, w) || std::abs(cfg.translate_y) * 4 >= std::min(h, w))
    fail(ErrorCode::InvalidArgument, "shift translation must stay below min(H,W)/4");
  const std::size_t n = img.plane();
  Image out = img;

  if (cfg.hue_degrees != 0.0) {
    const double a = cfg.hue_degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(a), sn = std::sin(a), k = 1.0 / std::sqrt(3.0);
    // Rodrigues rotation about (1,1,1)/sqrt(3).
    double m[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = (r == c ? cs : 0.0) + (1.0 - cs) * k * k;
    m[0][1] -= sn * k; m[0][2] += sn * k;
    m[1][0] += sn * k; m[1][2] -= sn * k;
    m[2][0] -= sn * k; m[2][1] += sn * k;
    for (std::size_t p = 0; p < n; ++p) {
      const double v[3] = {img.data[p], img.data[n + p], img.data[2 * n + p]};
      for (int r = 0; r < 3; ++r) out.data[r * n + p] = float(m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2]);
    }
  }

  if (cfg.translate_x != 0 || cfg.translate_y != 0) {
    Image moved(h, w, 0.0f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y) {
        const int sy = y - cfg.translate_y;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < w; ++x) {
          const int sx = x - cfg.translate_x;
          if (sx >= 0 && sx < w) moved.at(c, y, x) = out.at(c, sy, sx);
        }
      }
    out = std::move(moved);
  }

  if (cfg.level_delta != 0.0 || cfg.noise_std != 0.0 || cfg.hue_degrees != 0.0) {
    for (float& v : out.data) {
      double x = v + cfg.level_delta;
      if (cfg.noise_std != 0.0 && noise) x += cfg.noise_std * noise->normal();
      v = float(std::clamp(x, 0.0, 1.0));
    }
  }
  return out;
}

Dataset shift_domain(const Dataset& d, const ShiftConfig& cfg) {
  Dataset out;
  out.num_classes = d.num_classes;
  out.labels = d.labels;
  out.splits = d.splits;
  out.provenance = d.provenance + "+shift";
  out.images.reserve(d.size());
  const RngStream base(cfg.seed, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    RngStream noise = base.derive(std::uint64_t(i));
    out.images.push_back(shift_image(d.images[i], cfg, &noise));
  }
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) fail(ErrorCode::DimensionMismatch, "IDX header truncated");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  if (ib.size() < 4 || be32(ib, 0) != 0x00000803u) fail(ErrorCode::BadMagic, "image file is not IDX u8 rank-3");
  if (lb.size() < 4 || be32(lb, 0) != 0x00000801u) fail(ErrorCode::BadMagic, "label file is not IDX u8 rank-1");
  const std::uint32_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  const std::uint32_t nl = be32(lb, 4);
  if (rows == 0 || cols == 0) fail(ErrorCode::DimensionMismatch, "IDX images have an empty dimension");
  if (ib.size() != 16 + std::size_t(n) * rows * cols)
    fail(ErrorCode::DimensionMismatch, "image payload does not match header dimensions");
  if (lb.size() != 8 + std::size_t(nl)) fail(ErrorCode::DimensionMismatch, "label payload does not match header");
  if (n != nl)
    fail(ErrorCode::CountMismatch, std::to_string(n) + " images vs " + std::to_string(nl) + " labels");

  Dataset d;
  d.provenance = "idx(" + images_path.filename().string() + ")";
  int max_label = 0;
  const std::size_t plane = std::size_t(rows) * cols;
  for (std::uint32_t i = 0; i < n; ++i) {
    Image img{int(rows), int(cols)};
    for (std::size_t p = 0; p < plane; ++p) {
      const float v = float(ib[16 + i * plane + p]) / 255.0f;
      img.data[p] = img.data[plane + p] = img.data[2 * plane + p] = v;
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(lb[8 + i]);
    max_label = std::max(max_label, int(lb[8 + i]));
  }
  d.num_classes = n ? max_label + 1 : 0;
  d.splits.assign(n, Split::Train);
  return d;
}

Dataset split(const Dataset& d, const std::array<double, 3>& fractions, RngStream rng) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0) fail(ErrorCode::InvalidArgument, "split fractions must be non-negative");
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::InvalidArgument, "split fractions must sum to 1");
  const std::size_t n = d.size();
  if (n == 0) fail(ErrorCode::DegenerateSplit, "cannot split an empty dataset");

  std::array<std::size_t, 3> sizes{};
  sizes[0] = std::size_t(std::llround(fractions[0] * double(n)));
  sizes[1] = std::min(n - sizes[0], std::size_t(std::llround(fractions[1] * double(n))));
  sizes[2] = n - sizes[0] - sizes[1];
  for (int s = 0; s < 3; ++s)
    if (fractions[std::size_t(s)] > 0 && sizes[std::size_t(s)] == 0)
      fail(ErrorCode::DegenerateSplit, std::string(split_name(Split(s))) + " split would be empty");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle_in_place(order, rng);

  Dataset out = d;
  std::size_t k = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t c = 0; c < sizes[std::size_t(s)]; ++c) out.splits[order[k++]] = Split(s);

  // Swap members so that every split large enough holds every class.
  const int K = d.num_classes;
  for (int s = 0; s < 3; ++s) {
    if (sizes[std::size_t(s)] < std::size_t(K)) continue;
    for (int cls = 0; cls < K; ++cls) {
      auto has = [&](Split sp, int c) {
        for (std::size_t i = 0; i < n; ++i)
          if (out.splits[i] == sp && out.labels[i] == c) return true;
        return false;
      };
      if (has(Split(s), cls)) continue;
      // Donor: a member of class `cls` from a split holding >1 of them;
      // receiver gives back a member of a class it holds more than once.
      bool fixed = false;
      for (std::size_t i = 0; i < n && !fixed; ++i) {
        if (out.labels[i] != cls || out.splits[i] == Split(s)) continue;
        const Split donor = out.splits[i];
        std::size_t donor_count = 0;
        for (std::size_t q = 0; q < n; ++q) donor_count += out.splits[q] == donor && out.labels[q] == cls;
        if (donor_count < 2) continue;
        for (std::size_t j = 0; j < n && !fixed; ++j) {
          if (out.splits[j] != Split(s)) continue;
          std::size_t same = 0;
          for (std::size_t q = 0; q < n; ++q) same += out.splits[q] == Split(s) && out.labels[q] == out.labels[j];
          if (same < 2) continue;
          std::swap(out.splits[i], out.splits[j]);
          fixed = true;
        }
      }
    }
  }
  return out;
}

}  // namespace promptforge
