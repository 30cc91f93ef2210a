#include "promptforge/affine_warp.hpp"

#include <cmath>
#include <limits>

namespace promptforge {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

ConstrainedAffine constrain_affine(const AffineRaw& raw, const AffineRanges& ranges) {
  for (double v : raw.v)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "affine raw parameter is not finite");
  if (!(ranges.t > 0 && ranges.theta > 0 && ranges.sh > 0))
    fail(ErrorCode::InvalidArgument, "affine ranges must be positive");

  ConstrainedAffine out;
  auto bounded = [](double x, double r, double& jac) {
    const double t = std::tanh(x);
    jac = r * (1.0 - t * t);
    return t * r;
  };
  auto unit = [](double x, double& jac) {
    const double s = sigmoid(x);
    jac = s * (1.0 - s);
    return s;
  };
  auto& v = out.value;
  auto& j = out.jacobian;
  v.tx = bounded(raw[kTx], ranges.t, j[kTx]);
  v.ty = bounded(raw[kTy], ranges.t, j[kTy]);
  v.theta = bounded(raw[kTheta], ranges.theta, j[kTheta]);
  v.sx = unit(raw[kSx], j[kSx]);
  v.sy = unit(raw[kSy], j[kSy]);
  v.shx = bounded(raw[kShx], ranges.sh, j[kShx]);
  v.shy = bounded(raw[kShy], ranges.sh, j[kShy]);
  return out;
}

Affine3 build_matrix(const AffineConstrained& c) {
  const double cs = std::cos(c.theta);
  const double sn = std::sin(c.theta);
  Affine3 a;
  a.m = {c.sx * cs + c.shx * sn, -c.sx * sn + c.shx * cs, c.tx,
         c.sy * sn + c.shy * cs, c.sy * cs + c.shy * sn,  c.ty,
         0.0,                    0.0,                     1.0};
  return a;
}

namespace {

// Destination pixel (j, i) -> source pixel coordinates.
struct SampleMap {
  std::array<double, 4> inv{};
  double tx = 0, ty = 0;
  double m00 = 0, m01 = 0, m10 = 0, m11 = 0, bx = 0, by = 0, cx = 0, cy = 0;

  SampleMap(const Affine3& a, int h, int w) {
    const double det = a.det2();
    if (!(std::abs(det) >= kSingularDet))
      fail(ErrorCode::AffineSingular, "|det| = " + std::to_string(std::abs(det)) + " below 1e-6");
    inv = {a(1, 1) / det, -a(0, 1) / det, -a(1, 0) / det, a(0, 0) / det};
    tx = a(0, 2);
    ty = a(1, 2);
    const double hw = 0.5 * w, hh = 0.5 * h;
    cx = 0.5 * (w - 1);
    cy = 0.5 * (h - 1);
    // Written out in pixel units so that the identity matrix maps every
    // pixel onto itself without rounding.
    m00 = inv[0];
    m01 = inv[1] * (double(w) / double(h));
    m10 = inv[2] * (double(h) / double(w));
    m11 = inv[3];
    bx = -hw * (inv[0] * tx + inv[1] * ty);
    by = -hh * (inv[2] * tx + inv[3] * ty);
  }

  void at(int j, int i, double& sx, double& sy) const {
    const double dx = j - cx, dy = i - cy;
    sx = cx + (m00 * dx + m01 * dy + bx);
    sy = cy + (m10 * dx + m11 * dy + by);
  }
};

struct Footprint {
  int x0, y0;
  float fx, fy;
  std::uint8_t valid;
  bool in_bounds;
};

Footprint footprint(double sx, double sy, int h, int w) {
  Footprint f{};
  f.in_bounds = sx > -1.0 && sx < double(w) && sy > -1.0 && sy < double(h);
  if (!f.in_bounds) return f;
  // floor without a libm call; sx, sy > -1 here.
  f.x0 = int(sx) - (sx < 0.0 && double(int(sx)) != sx);
  f.y0 = int(sy) - (sy < 0.0 && double(int(sy)) != sy);
  f.fx = float(sx - f.x0);
  f.fy = float(sy - f.y0);
  const bool vx0 = f.x0 >= 0, vx1 = f.x0 + 1 < w;
  const bool vy0 = f.y0 >= 0, vy1 = f.y0 + 1 < h;
  f.valid = std::uint8_t((vx0 && vy0) | ((vx1 && vy0) << 1) | ((vx0 && vy1) << 2) | ((vx1 && vy1) << 3));
  return f;
}

std::array<float, 4> bilinear_weights(float fx, float fy) {
  return {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
}

inline float sample(const float* plane, int w, const Footprint& f, const std::array<float, 4>& wt) {
  const std::size_t base = std::size_t(f.y0) * w + f.x0;
  float v = 0.0f;
  // Skip zero weights so that exact grid hits never touch neighbours.
  if ((f.valid & 1) && wt[0] != 0.0f) v += wt[0] * plane[base];
  if ((f.valid & 2) && wt[1] != 0.0f) v += wt[1] * plane[base + 1];
  if ((f.valid & 4) && wt[2] != 0.0f) v += wt[2] * plane[base + w];
  if ((f.valid & 8) && wt[3] != 0.0f) v += wt[3] * plane[base + w + 1];
  return v;
}

}  // namespace

WarpResult warp_bilinear(const Image& img, const Affine3& a) {
  const int h = img.height, w = img.width;
  const SampleMap map(a, h, w);
  WarpResult r{Image(h, w), {}};
  WarpTape& t = r.tape;
  t.height = h;
  t.width = w;
  t.forward = a;
  t.inverse = map.inv;
  t.source = img;
  const std::size_t n = t.pixels();
  t.x0.assign(n, 0);
  t.y0.assign(n, 0);
  t.weights.assign(n, {0, 0, 0, 0});
  t.corner_valid.assign(n, 0);
  t.in_bounds.assign(n, 0);

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t p = std::size_t(i) * w + j;
      double sx, sy;
      map.at(j, i, sx, sy);
      const Footprint f = footprint(sx, sy, h, w);
      if (!f.in_bounds) continue;
      const auto wt = bilinear_weights(f.fx, f.fy);
      t.x0[p] = f.x0;
      t.y0[p] = f.y0;
      t.weights[p] = wt;
      t.corner_valid[p] = f.valid;
      t.in_bounds[p] = 1;
      for (int c = 0; c < Image::channels; ++c)
        r.image.data[c * n + p] = sample(img.data.data() + c * n, w, f, wt);
    }
  }
  return r;
}

void warp_apply(const Image& img, const Affine3& a, Image& out, Mask* out_of_bounds) {
  const int h = img.height, w = img.width;
  const SampleMap map(a, h, w);
  if (!out.same_shape(img)) out = Image(h, w);
  if (out_of_bounds && (out_of_bounds->height != h || out_of_bounds->width != w)) *out_of_bounds = Mask(h, w);
  const std::size_t n = img.plane();
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t p = std::size_t(i) * w + j;
      double sx, sy;
      map.at(j, i, sx, sy);
      const Footprint f = footprint(sx, sy, h, w);
      if (out_of_bounds) out_of_bounds->data[p] = f.in_bounds ? 0 : 1;
      if (!f.in_bounds) {
        for (int c = 0; c < Image::channels; ++c) out.data[c * n + p] = 0.0f;
        continue;
      }
      const auto wt = bilinear_weights(f.fx, f.fy);
      for (int c = 0; c < Image::channels; ++c) out.data[c * n + p] = sample(img.data.data() + c * n, w, f, wt);
    }
  }
}

std::array<double, 6> warp_matrix_grad(const WarpTape& tape, const Image& grad_out) {
  if (grad_out.height != tape.height || grad_out.width != tape.width)
    fail(ErrorCode::TapeMismatch, "gradient shape does not match warp tape");
  const int h = tape.height, w = tape.width;
  const std::size_t n = tape.pixels();
  const auto& li = tape.inverse;
  const double tx = tape.forward(0, 2), ty = tape.forward(1, 2);
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);

  // Gradient w.r.t. the inverse block and the translation.
  double g_inv[4] = {0, 0, 0, 0};
  double g_tx = 0, g_ty = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t p = std::size_t(i) * w + j;
      if (!tape.in_bounds[p]) continue;
      const auto& wt = tape.weights[p];
      const float fx = wt[1] + wt[3];
      const float fy = wt[2] + wt[3];
      const std::uint8_t valid = tape.corner_valid[p];
      const std::size_t base = std::size_t(tape.y0[p]) * w + tape.x0[p];
      double dsx = 0, dsy = 0;
      for (int c = 0; c < Image::channels; ++c) {
        const double g = grad_out.data[c * n + p];
        if (g == 0.0) continue;
        const float* src = tape.source.data.data() + c * n;
        const double v00 = (valid & 1) ? src[base] : 0.0;
        const double v01 = (valid & 2) ? src[base + 1] : 0.0;
        const double v10 = (valid & 4) ? src[base + w] : 0.0;
        const double v11 = (valid & 8) ? src[base + w + 1] : 0.0;
        dsx += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
        dsy += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
      }
      if (dsx == 0.0 && dsy == 0.0) continue;
      // Source pixel = center + half-extent * normalized source coordinate.
      const double gqx = 0.5 * w * dsx, gqy = 0.5 * h * dsy;
      const double dx = (j - cx) * 2.0 / w - tx;
      const double dy = (i - cy) * 2.0 / h - ty;
      g_inv[0] += gqx * dx;
      g_inv[1] += gqx * dy;
      g_inv[2] += gqy * dx;
      g_inv[3] += gqy * dy;
      g_tx -= li[0] * gqx + li[2] * gqy;
      g_ty -= li[1] * gqx + li[3] * gqy;
    }
  }
  // d(inv) = -inv dA inv  =>  dL/dA = -inv^T G inv^T
  const double t00 = li[0] * g_inv[0] + li[2] * g_inv[2];
  const double t01 = li[0] * g_inv[1] + li[2] * g_inv[3];
  const double t10 = li[1] * g_inv[0] + li[3] * g_inv[2];
  const double t11 = li[1] * g_inv[1] + li[3] * g_inv[3];
  return {-(t00 * li[0] + t01 * li[1]), -(t00 * li[2] + t01 * li[3]),
          -(t10 * li[0] + t11 * li[1]), -(t10 * li[2] + t11 * li[3]), g_tx, g_ty};
}

WarpGrads warp_backward(const WarpTape& tape, const Image& grad_out, const ConstrainedAffine* params) {
  if (grad_out.height != tape.height || grad_out.width != tape.width || grad_out.size() != tape.source.size())
    fail(ErrorCode::TapeMismatch, "gradient shape does not match warp tape");
  const int w = tape.width;
  const std::size_t n = tape.pixels();
  WarpGrads out{Image(tape.height, tape.width), {}};

  for (std::size_t p = 0; p < n; ++p) {
    if (!tape.in_bounds[p]) continue;
    const auto& wt = tape.weights[p];
    const std::uint8_t valid = tape.corner_valid[p];
    const std::size_t base = std::size_t(tape.y0[p]) * w + tape.x0[p];
    for (int c = 0; c < Image::channels; ++c) {
      const float g = grad_out.data[c * n + p];
      if (g == 0.0f) continue;
      float* dst = out.image.data.data() + c * n;
      if ((valid & 1) && wt[0] != 0.0f) dst[base] += wt[0] * g;
      if ((valid & 2) && wt[1] != 0.0f) dst[base + 1] += wt[1] * g;
      if ((valid & 4) && wt[2] != 0.0f) dst[base + w] += wt[2] * g;
      if ((valid & 8) && wt[3] != 0.0f) dst[base + w + 1] += wt[3] * g;
    }
  }

  if (params) {
    const auto ga = warp_matrix_grad(tape, grad_out);
    const auto& c = params->value;
    const double cs = std::cos(c.theta), sn = std::sin(c.theta);
    AffineGrad gc{};
    gc[0] = ga[4];
    gc[1] = ga[5];
    gc[2] = ga[0] * (-c.sx * sn + c.shx * cs) + ga[1] * (-c.sx * cs - c.shx * sn) +
            ga[2] * (c.sy * cs - c.shy * sn) + ga[3] * (-c.sy * sn + c.shy * cs);
    gc[3] = ga[0] * cs - ga[1] * sn;
    gc[4] = ga[2] * sn + ga[3] * cs;
    gc[5] = ga[0] * sn + ga[1] * cs;
    gc[6] = ga[2] * cs + ga[3] * sn;
    for (std::size_t k = 0; k < 7; ++k) out.raw[k] = gc[k] * params->jacobian[k];
  }
  return out;
}

}  // namespace promptforge
