#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "promptforge/affine_warp.hpp"
#include "promptforge/color_additive.hpp"
#include "promptforge/tensorfile.hpp"

namespace promptforge {

// Initial shrink: a 224 canvas resized to 164.
inline constexpr double kInitScale = 0.73;
inline constexpr double kEvpScale = 164.0 / 224.0;
inline constexpr int kVpPad224 = 28;

// Learnable state of the affine -> color -> masked additive transform.
struct PromptParams {
  AffineRaw affine;
  AffineRanges ranges;
  ColorPrompt color;
  AdditivePrompt additive;

  int height() const { return additive.delta.height; }
  int width() const { return additive.delta.width; }
};

PromptParams init_params(int height, int width, const AffineRanges& ranges = {},
                         double color_range = kDefaultColorRange);

// Gradients mirror whichever parameter groups a prompt variant owns; unused
// groups stay empty. `affine` holds 7 scalars for ACAVP and the single raw
// scale for AutoVP.
struct PromptGrads {
  std::vector<double> affine;
  Field sigma;
  Field delta;
};

struct PromptBackward {
  PromptGrads params;
  Image input;
};

struct PipelineTape {
  ConstrainedAffine affine;
  WarpTape warp;
  Image warped;
  std::shared_ptr<const ConstrainedColor> color;  // shared across a batch
  Mask mask;
};

struct PipelineForward {
  Image image;
  PipelineTape tape;
};

// `color` may carry constrain_color(p.color) computed once for many
// images; it is derived from p when null.
PipelineForward acavp_forward(const Image& x, const PromptParams& p, MaskMode mode = MaskMode::Geometric,
                              std::shared_ptr<const ConstrainedColor> color = nullptr);
PromptBackward acavp_backward(const PipelineTape& tape, const Image& grad_out);

// ---------------------------------------------------------------------------
// Baselines

enum class Variant { Acavp, Vp, Evp, AutoVp };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);

struct BaselineConfig {
  Variant variant = Variant::Vp;
  int pad = kVpPad224;       // VP border width
  bool full_canvas = false;  // VP: additive prompt over the whole image
  double scale = kEvpScale;  // EVP fixed resize factor
  double scale_raw = 0.0;    // AutoVP learnable scale, squashed by sigmoid
  Field delta;
};

BaselineConfig make_baseline(Variant v, int height, int width);
void validate_baseline(const BaselineConfig& cfg);
Mask vp_border_mask(int height, int width, int pad);

struct BaselineTape {
  Variant variant = Variant::Vp;
  Mask mask;
  bool warped = false;
  WarpTape warp;
  double scale_jacobian = 0.0;  // AutoVP d(scale)/d(raw)
};

struct BaselineForward {
  Image image;
  BaselineTape tape;
};

BaselineForward baseline_forward(const Image& x, const BaselineConfig& cfg, MaskMode mode = MaskMode::Geometric);
PromptBackward baseline_backward(const BaselineTape& tape, const Image& grad_out);

// Parameter points of the ACAVP family reproducing an EVP / AutoVP
// transform: scaling-only matrix, unit color factor, same additive pattern.
PromptParams embed_evp_as_acavp(const BaselineConfig& evp, const AffineRanges& ranges = {},
                                double color_range = kDefaultColorRange);
PromptParams embed_autovp_as_acavp(const BaselineConfig& autovp, const AffineRanges& ranges = {},
                                   double color_range = kDefaultColorRange);

// ---------------------------------------------------------------------------
// Variant-agnostic prompt used by training, evaluation and the CLI.

struct PromptSettings {
  AffineRanges ranges;
  double color_range = kDefaultColorRange;
  MaskMode mask_mode = MaskMode::Geometric;
  int vp_pad = -1;  // -1: 28 px scaled to the canvas width
  bool vp_full_canvas = false;
  double evp_scale = kEvpScale;
};

struct Prompt {
  Variant variant = Variant::Acavp;
  MaskMode mask_mode = MaskMode::Geometric;
  PromptParams acavp;       // Variant::Acavp
  BaselineConfig baseline;  // everything else

  int height() const;
  int width() const;
};

Prompt make_prompt(Variant v, int height, int width, const PromptSettings& settings = {});

// Views over the learnable storage, in the same grouping as PromptGrads.
struct ParamRefs {
  std::span<double> affine;
  std::span<float> sigma;
  std::span<float> delta;
};

ParamRefs param_refs(Prompt& p);
PromptGrads zero_grads(const Prompt& p);
std::size_t parameter_count(const Prompt& p);

using PromptTape = std::variant<PipelineTape, BaselineTape>;

struct PromptForward {
  Image image;
  PromptTape tape;
};

// Parameter-only quantities reusable across every image of a step.
struct PromptCache {
  std::shared_ptr<const ConstrainedColor> color;
};

PromptCache prepare_prompt(const Prompt& p);

PromptForward prompt_forward(const Prompt& p, const Image& x, const PromptCache* cache = nullptr);
PromptBackward prompt_backward(const PromptTape& tape, const Image& grad_out);

// Intermediate panels: after the geometric stage, the additive mask, and
// the final prompted image.
struct PromptStages {
  Image warped;
  Mask mask;
  Image prompted;
};

PromptStages prompt_stages(const Prompt& p, const Image& x);

// Inference-only application with every parameter-dependent quantity
// (matrix, color factors, fixed masks) computed once.
class PromptApplier {
 public:
  explicit PromptApplier(const Prompt& p);
  void apply(const Image& x, Image& out) const;
  Image apply(const Image& x) const;

 private:
  const Prompt* prompt_;
  bool warps_ = false;
  Affine3 matrix_;
  Field sigma_hat_;
  bool has_color_ = false;
  Mask fixed_mask_;
};

std::vector<TensorEntry> prompt_to_entries(const Prompt& p);
Prompt prompt_from_entries(const std::vector<TensorEntry>& entries);
void save_prompt(const std::filesystem::path& path, const Prompt& p);
Prompt load_prompt(const std::filesystem::path& path);

}  // namespace promptforge
