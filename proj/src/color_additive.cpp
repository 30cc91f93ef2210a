#include "promptforge/color_additive.hpp"

#include <cmath>

namespace promptforge {

namespace {

void require_mask(const Mask& m, const Image& img, const char* what) {
  if (m.height != img.height || m.width != img.width || m.data.size() != img.plane())
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": mask shape disagrees with image");
}

}  // namespace

ConstrainedColor constrain_color(const ColorPrompt& p) {
  if (!(p.range > 0) || !std::isfinite(p.range)) fail(ErrorCode::InvalidArgument, "color range must be positive");
  if (!p.sigma_raw.all_finite()) fail(ErrorCode::NonFiniteInput, "color prompt contains non-finite values");
  ConstrainedColor out{Field(p.sigma_raw.height, p.sigma_raw.width), Field(p.sigma_raw.height, p.sigma_raw.width)};
  for (std::size_t i = 0; i < p.sigma_raw.size(); ++i) {
    const double s = sigmoid(p.sigma_raw.data[i]);
    out.sigma_hat.data[i] = float(s * p.range);
    out.jacobian.data[i] = float(s * (1.0 - s) * p.range);
  }
  return out;
}

double color_raw_for(double target, double range) { return logit(target / range); }

Mask zero_test_mask(const Image& warped) {
  Mask m(warped.height, warped.width);
  const std::size_t n = warped.plane();
  const float* r = warped.data.data();
  for (std::size_t p = 0; p < n; ++p)
    m.data[p] = (r[p] == 0.0f && r[n + p] == 0.0f && r[2 * n + p] == 0.0f) ? 1 : 0;
  return m;
}

Mask generate_mask(const Image& warped, const WarpTape& tape, MaskMode mode) {
  if (warped.height != tape.height || warped.width != tape.width)
    fail(ErrorCode::TapeMismatch, "warped image does not match warp tape");
  if (mode == MaskMode::ZeroTest) return zero_test_mask(warped);
  Mask m(tape.height, tape.width);
  for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = tape.in_bounds[p] ? 0 : 1;
  return m;
}

Image apply_color_additive(const Image& warped, const Field& sigma_hat, const Mask& mask, const Field& delta) {
  require_same_shape(warped, sigma_hat, "color prompt");
  require_same_shape(warped, delta, "additive prompt");
  require_mask(mask, warped, "additive prompt");
  Image out(warped.height, warped.width);
  const std::size_t n = warped.plane();
  for (int c = 0; c < Image::channels; ++c) {
    const std::size_t off = c * n;
    for (std::size_t p = 0; p < n; ++p) {
      float v = warped.data[off + p] * sigma_hat.data[off + p];
      if (mask.data[p]) v += delta.data[off + p];
      out.data[off + p] = v;
    }
  }
  return out;
}

ColorAdditiveGrads color_additive_backward(const Image& grad_out, const Image& warped, const Field& sigma_hat,
                                           const Mask& mask, const Field& jacobian) {
  require_same_shape(grad_out, warped, "color/additive backward");
  require_same_shape(grad_out, sigma_hat, "color/additive backward");
  require_same_shape(grad_out, jacobian, "color/additive backward");
  require_mask(mask, grad_out, "color/additive backward");
  const int h = grad_out.height, w = grad_out.width;
  ColorAdditiveGrads g{Image(h, w), Field(h, w), Field(h, w)};
  const std::size_t n = grad_out.plane();
  for (int c = 0; c < Image::channels; ++c) {
    const std::size_t off = c * n;
    for (std::size_t p = 0; p < n; ++p) {
      const float go = grad_out.data[off + p];
      g.warped.data[off + p] = go * sigma_hat.data[off + p];
      g.sigma_raw.data[off + p] = go * warped.data[off + p] * jacobian.data[off + p];
      g.delta.data[off + p] = mask.data[p] ? go : 0.0f;
    }
  }
  return g;
}

}  // namespace promptforge
