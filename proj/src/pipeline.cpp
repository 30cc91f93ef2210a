#include "promptforge/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace promptforge {

PromptParams init_params(int height, int width, const AffineRanges& ranges, double color_range) {
  if (height <= 0 || width <= 0) fail(ErrorCode::InvalidArgument, "prompt canvas must be non-empty");
  PromptParams p;
  p.ranges = ranges;
  p.affine[kSx] = logit(kInitScale);
  p.affine[kSy] = logit(kInitScale);
  p.color.range = color_range;
  p.color.sigma_raw = Field(height, width, float(color_raw_for(1.0, color_range)));
  p.additive.delta = Field(height, width, 0.0f);
  return p;
}

namespace {

void require_prompt_shape(const Image& x, const PromptParams& p) {
  require_same_shape(x, p.color.sigma_raw, "color prompt");
  require_same_shape(x, p.additive.delta, "additive prompt");
}

}  // namespace

PipelineForward acavp_forward(const Image& x, const PromptParams& p, MaskMode mode,
                              std::shared_ptr<const ConstrainedColor> color) {
  require_prompt_shape(x, p);
  PipelineForward f;
  f.tape.affine = constrain_affine(p.affine, p.ranges);
  WarpResult wr = warp_bilinear(x, build_matrix(f.tape.affine.value));
  f.tape.mask = generate_mask(wr.image, wr.tape, mode);
  f.tape.color = color ? std::move(color) : std::make_shared<const ConstrainedColor>(constrain_color(p.color));
  f.image = apply_color_additive(wr.image, f.tape.color->sigma_hat, f.tape.mask, p.additive.delta);
  f.tape.warp = std::move(wr.tape);
  f.tape.warped = std::move(wr.image);
  return f;
}

PromptBackward acavp_backward(const PipelineTape& tape, const Image& grad_out) {
  if (!grad_out.same_shape(tape.warped)) fail(ErrorCode::TapeMismatch, "gradient shape does not match pipeline tape");
  ColorAdditiveGrads cg =
      color_additive_backward(grad_out, tape.warped, tape.color->sigma_hat, tape.mask, tape.color->jacobian);
  WarpGrads wg = warp_backward(tape.warp, cg.warped, &tape.affine);
  PromptBackward out;
  out.params.affine.assign(wg.raw.begin(), wg.raw.end());
  out.params.sigma = std::move(cg.sigma_raw);
  out.params.delta = std::move(cg.delta);
  out.input = std::move(wg.image);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Acavp: return "acavp";
    case Variant::Vp: return "vp";
    case Variant::Evp: return "evp";
    case Variant::AutoVp: return "autovp";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Acavp, Variant::Vp, Variant::Evp, Variant::AutoVp})
    if (variant_name(v) == s) return v;
  fail(ErrorCode::InvalidArgument, "unknown prompt variant '" + std::string(s) + "'");
}

BaselineConfig make_baseline(Variant v, int height, int width) {
  if (v == Variant::Acavp) fail(ErrorCode::InvalidArgument, "acavp is not a baseline variant");
  BaselineConfig cfg;
  cfg.variant = v;
  cfg.pad = std::max(1, int(std::lround(kVpPad224 * double(std::min(height, width)) / 224.0)));
  cfg.scale = kEvpScale;
  cfg.scale_raw = logit(kEvpScale);
  cfg.delta = Field(height, width, 0.0f);
  return cfg;
}

void validate_baseline(const BaselineConfig& cfg) {
  if (cfg.delta.data.empty()) fail(ErrorCode::InvalidArgument, "baseline has no additive prompt");
  if (!cfg.delta.all_finite()) fail(ErrorCode::NonFiniteInput, "additive prompt contains non-finite values");
  switch (cfg.variant) {
    case Variant::Vp:
      if (!cfg.full_canvas && (cfg.pad < 1 || 2 * cfg.pad >= std::min(cfg.delta.height, cfg.delta.width)))
        fail(ErrorCode::InvalidArgument, "VP pad width must be in [1, min(H,W)/2)");
      break;
    case Variant::Evp:
      if (!(cfg.scale > 0.0 && cfg.scale < 1.0)) fail(ErrorCode::ScaleOutOfRange, "EVP scale must lie in (0, 1)");
      break;
    case Variant::AutoVp:
      if (!std::isfinite(cfg.scale_raw)) fail(ErrorCode::NonFiniteInput, "AutoVP raw scale is not finite");
      break;
    case Variant::Acavp:
      fail(ErrorCode::InvalidArgument, "acavp is not a baseline variant");
  }
}

Mask vp_border_mask(int height, int width, int pad) {
  Mask m(height, width);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      m.data[std::size_t(i) * width + j] = (i < pad || j < pad || i >= height - pad || j >= width - pad) ? 1 : 0;
  return m;
}

namespace {

Image add_masked(Image base, const Mask& m, const Field& delta) {
  const std::size_t n = base.plane();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t p = 0; p < n; ++p)
      if (m.data[p]) base.data[c * n + p] += delta.data[c * n + p];
  return base;
}

double baseline_scale(const BaselineConfig& cfg) {
  return cfg.variant == Variant::AutoVp ? sigmoid(cfg.scale_raw) : cfg.scale;
}

}  // namespace

BaselineForward baseline_forward(const Image& x, const BaselineConfig& cfg, MaskMode mode) {
  validate_baseline(cfg);
  require_same_shape(x, cfg.delta, "additive prompt");
  BaselineForward f;
  f.tape.variant = cfg.variant;
  if (cfg.variant == Variant::Vp) {
    f.tape.mask = cfg.full_canvas ? Mask(x.height, x.width, 1) : vp_border_mask(x.height, x.width, cfg.pad);
    f.image = add_masked(x, f.tape.mask, cfg.delta);
    return f;
  }
  const double s = baseline_scale(cfg);
  if (cfg.variant == Variant::AutoVp) f.tape.scale_jacobian = s * (1.0 - s);
  WarpResult wr = warp_bilinear(x, Affine3::scaling(s, s));
  f.tape.mask = generate_mask(wr.image, wr.tape, mode);
  f.image = add_masked(std::move(wr.image), f.tape.mask, cfg.delta);
  f.tape.warped = true;
  f.tape.warp = std::move(wr.tape);
  return f;
}

PromptBackward baseline_backward(const BaselineTape& tape, const Image& grad_out) {
  if (grad_out.height != tape.mask.height || grad_out.width != tape.mask.width)
    fail(ErrorCode::TapeMismatch, "gradient shape does not match baseline tape");
  PromptBackward out;
  out.params.delta = Field(grad_out.height, grad_out.width);
  const std::size_t n = grad_out.plane();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t p = 0; p < n; ++p)
      if (tape.mask.data[p]) out.params.delta.data[c * n + p] = grad_out.data[c * n + p];
  if (!tape.warped) {
    out.input = grad_out;
    return out;
  }
  out.input = warp_backward(tape.warp, grad_out, nullptr).image;
  if (tape.variant == Variant::AutoVp) {
    const auto ga = warp_matrix_grad(tape.warp, grad_out);
    out.params.affine = {(ga[0] + ga[3]) * tape.scale_jacobian};
  }
  return out;
}

namespace {

PromptParams scaling_embedding(double raw_scale, const Field& delta, const AffineRanges& ranges, double color_range) {
  PromptParams p = init_params(delta.height, delta.width, ranges, color_range);
  p.affine = AffineRaw{};
  p.affine[kSx] = raw_scale;
  p.affine[kSy] = raw_scale;
  p.additive.delta = delta;
  return p;
}

}  // namespace

PromptParams embed_evp_as_acavp(const BaselineConfig& evp, const AffineRanges& ranges, double color_range) {
  if (evp.variant != Variant::Evp) fail(ErrorCode::InvalidArgument, "expected an EVP configuration");
  if (!(evp.scale > 0.0 && evp.scale < 1.0)) fail(ErrorCode::ScaleOutOfRange, "EVP scale must lie in (0, 1)");
  return scaling_embedding(logit(evp.scale), evp.delta, ranges, color_range);
}

PromptParams embed_autovp_as_acavp(const BaselineConfig& autovp, const AffineRanges& ranges, double color_range) {
  if (autovp.variant != Variant::AutoVp) fail(ErrorCode::InvalidArgument, "expected an AutoVP configuration");
  if (!std::isfinite(autovp.scale_raw)) fail(ErrorCode::ScaleOutOfRange, "AutoVP raw scale is not finite");
  return scaling_embedding(autovp.scale_raw, autovp.delta, ranges, color_range);
}

// ---------------------------------------------------------------------------

int Prompt::height() const { return variant == Variant::Acavp ? acavp.height() : baseline.delta.height; }
int Prompt::width() const { return variant == Variant::Acavp ? acavp.width() : baseline.delta.width; }

Prompt make_prompt(Variant v, int height, int width, const PromptSettings& s) {
  Prompt p;
  p.variant = v;
  p.mask_mode = s.mask_mode;
  if (v == Variant::Acavp) {
    p.acavp = init_params(height, width, s.ranges, s.color_range);
    return p;
  }
  p.baseline = make_baseline(v, height, width);
  if (s.vp_pad >= 0) p.baseline.pad = s.vp_pad;
  p.baseline.full_canvas = s.vp_full_canvas;
  p.baseline.scale = s.evp_scale;
  validate_baseline(p.baseline);
  return p;
}

ParamRefs param_refs(Prompt& p) {
  ParamRefs r;
  if (p.variant == Variant::Acavp) {
    r.affine = p.acavp.affine.v;
    r.sigma = p.acavp.color.sigma_raw.data;
    r.delta = p.acavp.additive.delta.data;
    return r;
  }
  if (p.variant == Variant::AutoVp) r.affine = std::span<double>(&p.baseline.scale_raw, 1);
  r.delta = p.baseline.delta.data;
  return r;
}

PromptGrads zero_grads(const Prompt& p) {
  PromptGrads g;
  const int h = p.height(), w = p.width();
  g.delta = Field(h, w);
  if (p.variant == Variant::Acavp) {
    g.affine.assign(7, 0.0);
    g.sigma = Field(h, w);
  } else if (p.variant == Variant::AutoVp) {
    g.affine.assign(1, 0.0);
  }
  return g;
}

std::size_t parameter_count(const Prompt& p) {
  if (p.variant == Variant::Acavp) return 7 + p.acavp.color.sigma_raw.size() + p.acavp.additive.delta.size();
  std::size_t mask_px;
  if (p.variant == Variant::Vp) {
    const int h = p.baseline.delta.height, w = p.baseline.delta.width;
    mask_px = p.baseline.full_canvas ? std::size_t(h) * w : vp_border_mask(h, w, p.baseline.pad).fraction() * h * w;
  } else {
    mask_px = p.baseline.delta.plane();
  }
  return 3 * mask_px + (p.variant == Variant::AutoVp ? 1 : 0);
}

PromptCache prepare_prompt(const Prompt& p) {
  PromptCache c;
  if (p.variant == Variant::Acavp) c.color = std::make_shared<const ConstrainedColor>(constrain_color(p.acavp.color));
  return c;
}

PromptForward prompt_forward(const Prompt& p, const Image& x, const PromptCache* cache) {
  if (p.variant == Variant::Acavp) {
    PipelineForward f = acavp_forward(x, p.acavp, p.mask_mode, cache ? cache->color : nullptr);
    return {std::move(f.image), std::move(f.tape)};
  }
  BaselineForward f = baseline_forward(x, p.baseline, p.mask_mode);
  return {std::move(f.image), std::move(f.tape)};
}

PromptBackward prompt_backward(const PromptTape& tape, const Image& grad_out) {
  if (const auto* t = std::get_if<PipelineTape>(&tape)) return acavp_backward(*t, grad_out);
  return baseline_backward(std::get<BaselineTape>(tape), grad_out);
}

PromptStages prompt_stages(const Prompt& p, const Image& x) {
  PromptStages s;
  PromptForward f = prompt_forward(p, x);
  s.prompted = std::move(f.image);
  if (const auto* t = std::get_if<PipelineTape>(&f.tape)) {
    s.warped = t->warped;
    s.mask = t->mask;
  } else {
    const auto& b = std::get<BaselineTape>(f.tape);
    s.mask = b.mask;
    if (b.warped) {
      Image w;
      warp_apply(x, b.warp.forward, w);
      s.warped = std::move(w);
    } else {
      s.warped = x;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

PromptApplier::PromptApplier(const Prompt& p) : prompt_(&p) {
  if (p.variant == Variant::Acavp) {
    warps_ = true;
    matrix_ = build_matrix(constrain_affine(p.acavp.affine, p.acavp.ranges).value);
    sigma_hat_ = constrain_color(p.acavp.color).sigma_hat;
    has_color_ = true;
    return;
  }
  validate_baseline(p.baseline);
  const int h = p.baseline.delta.height, w = p.baseline.delta.width;
  if (p.variant == Variant::Vp) {
    fixed_mask_ = p.baseline.full_canvas ? Mask(h, w, 1) : vp_border_mask(h, w, p.baseline.pad);
    return;
  }
  warps_ = true;
  const double s = baseline_scale(p.baseline);
  matrix_ = Affine3::scaling(s, s);
}

void PromptApplier::apply(const Image& x, Image& out) const {
  const Prompt& p = *prompt_;
  const Field& delta = p.variant == Variant::Acavp ? p.acavp.additive.delta : p.baseline.delta;
  require_same_shape(x, delta, "additive prompt");
  const std::size_t n = x.plane();
  if (!warps_) {
    out = x;
    for (int c = 0; c < Image::channels; ++c)
      for (std::size_t q = 0; q < n; ++q)
        if (fixed_mask_.data[q]) out.data[c * n + q] += delta.data[c * n + q];
    return;
  }
  Mask oob;
  warp_apply(x, matrix_, out, &oob);
  const Mask& m = p.mask_mode == MaskMode::Geometric ? oob : zero_test_mask(out);
  for (int c = 0; c < Image::channels; ++c) {
    float* o = out.data.data() + c * n;
    const float* d = delta.data.data() + c * n;
    if (has_color_) {
      const float* s = sigma_hat_.data.data() + c * n;
      for (std::size_t q = 0; q < n; ++q) o[q] *= s[q];
    }
    for (std::size_t q = 0; q < n; ++q)
      if (m.data[q]) o[q] += d[q];
  }
}

Image PromptApplier::apply(const Image& x) const {
  Image out;
  apply(x, out);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

TensorEntry scalar_entry(const std::string& name, double v) { return {name, {1}, {float(v)}}; }

TensorEntry field_entry(const std::string& name, const Field& f) {
  return {name, {3u, std::uint32_t(f.height), std::uint32_t(f.width)}, f.data};
}

Field field_from(const TensorEntry& e) {
  if (e.dims.size() != 3 || e.dims[0] != 3) fail(ErrorCode::ShapeMismatch, "entry '" + e.name + "' is not 3xHxW");
  Field f(int(e.dims[1]), int(e.dims[2]));
  f.data = e.values;
  return f;
}

double scalar_from(const std::vector<TensorEntry>& entries, const std::string& name) {
  const auto& e = find_entry(entries, name);
  if (e.values.size() != 1) fail(ErrorCode::ShapeMismatch, "entry '" + name + "' is not a scalar");
  return e.values[0];
}

}  // namespace

std::vector<TensorEntry> prompt_to_entries(const Prompt& p) {
  std::vector<TensorEntry> out;
  out.push_back(scalar_entry("meta.variant", double(int(p.variant))));
  out.push_back(scalar_entry("meta.mask_mode", p.mask_mode == MaskMode::Geometric ? 0.0 : 1.0));
  if (p.variant == Variant::Acavp) {
    const auto& a = p.acavp;
    TensorEntry raw{"affine.raw", {7}, {}};
    for (double v : a.affine.v) raw.values.push_back(float(v));
    out.push_back(std::move(raw));
    out.push_back({"affine.ranges", {3}, {float(a.ranges.t), float(a.ranges.theta), float(a.ranges.sh)}});
    out.push_back(field_entry("color.sigma", a.color.sigma_raw));
    out.push_back(scalar_entry("color.range", a.color.range));
    out.push_back(field_entry("additive.delta", a.additive.delta));
    return out;
  }
  const auto& b = p.baseline;
  out.push_back(scalar_entry("baseline.pad", b.pad));
  out.push_back(scalar_entry("baseline.full", b.full_canvas ? 1.0 : 0.0));
  out.push_back(scalar_entry("baseline.scale", b.scale));
  out.push_back(scalar_entry("baseline.scale_raw", b.scale_raw));
  out.push_back(field_entry("additive.delta", b.delta));
  return out;
}

Prompt prompt_from_entries(const std::vector<TensorEntry>& entries) {
  Prompt p;
  const int v = int(scalar_from(entries, "meta.variant"));
  if (v < 0 || v > 3) fail(ErrorCode::InvalidArgument, "unknown variant id " + std::to_string(v));
  p.variant = Variant(v);
  p.mask_mode = scalar_from(entries, "meta.mask_mode") == 0.0 ? MaskMode::Geometric : MaskMode::ZeroTest;
  if (p.variant == Variant::Acavp) {
    auto& a = p.acavp;
    const auto& raw = find_entry(entries, "affine.raw");
    if (raw.values.size() != 7) fail(ErrorCode::ShapeMismatch, "affine.raw must hold 7 values");
    for (std::size_t k = 0; k < 7; ++k) a.affine[k] = raw.values[k];
    const auto& rg = find_entry(entries, "affine.ranges");
    if (rg.values.size() != 3) fail(ErrorCode::ShapeMismatch, "affine.ranges must hold 3 values");
    a.ranges = {rg.values[0], rg.values[1], rg.values[2]};
    a.color.sigma_raw = field_from(find_entry(entries, "color.sigma"));
    a.color.range = scalar_from(entries, "color.range");
    a.additive.delta = field_from(find_entry(entries, "additive.delta"));
    require_same_shape(a.color.sigma_raw, a.additive.delta, "prompt file");
    return p;
  }
  auto& b = p.baseline;
  b.variant = p.variant;
  b.pad = int(scalar_from(entries, "baseline.pad"));
  b.full_canvas = scalar_from(entries, "baseline.full") != 0.0;
  b.scale = scalar_from(entries, "baseline.scale");
  b.scale_raw = scalar_from(entries, "baseline.scale_raw");
  b.delta = field_from(find_entry(entries, "additive.delta"));
  validate_baseline(b);
  return p;
}

void save_prompt(const std::filesystem::path& path, const Prompt& p) { tensorfile_write(path, prompt_to_entries(p)); }

Prompt load_prompt(const std::filesystem::path& path) { return prompt_from_entries(tensorfile_read(path)); }

}  // namespace promptforge
