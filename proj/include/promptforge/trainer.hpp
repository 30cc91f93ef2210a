#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "promptforge/data.hpp"
#include "promptforge/frozen_model.hpp"
#include "promptforge/pipeline.hpp"

namespace promptforge {

enum class AugmentMode { None, Trivial };

struct TrainConfig {
  double lr0 = 40.0;
  int epochs = 200;
  double momentum = 0.9;
  int batch_size = 64;
  double clip_value = 0.001;
  bool grad_normalize = false;
  double weight_decay = 0.0;
  double mse_reg_weight = 0.0;
  double dropout = 0.0;
  AugmentMode augment = AugmentMode::None;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_lr(int step, int total_steps, double lr0);

struct LossResult {
  double loss = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  std::vector<double> grad_logits;
  Image grad_prompted;  // d(mse term)/d(x_tilde); empty when the weight is 0
};

LossResult compute_loss(std::span<const double> logits, int label, const Image& x, const Image& x_tilde,
                        const TrainConfig& cfg);

PromptGrads clip_grads(PromptGrads g, double clip_value);
// Each group (affine, color, additive) scaled to unit L2 norm; groups with
// norm below 1e-12 pass through.
PromptGrads normalize_grads(PromptGrads g);

struct TrainState {
  Prompt params;
  PromptGrads velocity;
  long step = 0;
};

TrainState make_train_state(Prompt p);

// v <- momentum v + (g + wd * theta); theta <- theta - lr v
void sgd_momentum_step(TrainState& state, const PromptGrads& g, double lr, double momentum, double weight_decay);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct MetricsLog {
  std::vector<EpochMetrics> rows;
  std::string to_csv() const;
};

struct TrainResult {
  Prompt best;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  MetricsLog log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Row 0 records the untouched initialization (evaluated, no update);
// rows 1..epochs are training epochs. The returned prompt is the
// snapshot with the highest val accuracy (earliest on ties).
TrainResult train_prompt(const TrainConfig& cfg, const FrozenModel& model, const Dataset& data, Prompt init,
                         const EpochCallback& on_epoch = {});

// Accuracy of model(prompt(x)) over a split; `prompt` may be null.
double prompted_accuracy(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s);

}  // namespace promptforge
