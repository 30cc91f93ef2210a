#include "promptforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <thread>

#include "promptforge/augment.hpp"

namespace promptforge {

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) fail(ErrorCode::InvalidArgument, "lr0 must be non-negative");
  if (epochs < 0) fail(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(clip_value > 0.0)) fail(ErrorCode::InvalidArgument, "clip_value must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (!(mse_reg_weight >= 0.0)) fail(ErrorCode::InvalidArgument, "mse_reg_weight must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  if (workers < 1) fail(ErrorCode::InvalidArgument, "workers must be >= 1");
}

double cosine_lr(int step, int total_steps, double lr0) {
  if (total_steps < 1 || step < 0 || step > total_steps)
    fail(ErrorCode::InvalidArgument, "cosine_lr needs 0 <= step <= total_steps, total_steps >= 1");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

LossResult compute_loss(std::span<const double> logits, int label, const Image& x, const Image& x_tilde,
                        const TrainConfig& cfg) {
  require_same_shape(x, x_tilde, "mse regularizer");
  CrossEntropy ce = cross_entropy(logits, label);
  LossResult r;
  r.ce = ce.loss;
  r.grad_logits = std::move(ce.grad_logits);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x_tilde.data[i]) - double(x.data[i]);
    sq += d * d;
  }
  r.mse = sq / double(x.size());
  r.loss = r.ce + cfg.mse_reg_weight * r.mse;
  if (cfg.mse_reg_weight > 0.0) {
    r.grad_prompted = Image(x.height, x.width);
    const double k = 2.0 * cfg.mse_reg_weight / double(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      r.grad_prompted.data[i] = float(k * (double(x_tilde.data[i]) - double(x.data[i])));
  }
  return r;
}

PromptGrads clip_grads(PromptGrads g, double clip_value) {
  if (!(clip_value > 0.0)) fail(ErrorCode::InvalidArgument, "clip_value must be > 0");
  for (double& v : g.affine) v = std::clamp(v, -clip_value, clip_value);
  const float c = float(clip_value);
  for (float& v : g.sigma.data) v = std::clamp(v, -c, c);
  for (float& v : g.delta.data) v = std::clamp(v, -c, c);
  return g;
}

namespace {

template <typename T>
void normalize_group(std::vector<T>& v) {
  double sq = 0.0;
  for (T x : v) sq += double(x) * double(x);
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) return;
  for (T& x : v) x = T(double(x) / norm);
}

template <typename T>
void momentum_update(std::span<T> theta, std::vector<T>& v, const std::vector<T>& g, double lr, double momentum,
                     double wd) {
  if (g.empty()) return;
  if (theta.size() != g.size() || v.size() != g.size())
    fail(ErrorCode::ShapeMismatch, "gradient group does not match parameter group");
  for (std::size_t i = 0; i < g.size(); ++i) {
    v[i] = T(momentum * double(v[i]) + (double(g[i]) + wd * double(theta[i])));
    theta[i] = T(double(theta[i]) - lr * double(v[i]));
  }
}

void accumulate(PromptGrads& acc, const PromptGrads& g) {
  for (std::size_t i = 0; i < g.affine.size(); ++i) acc.affine[i] += g.affine[i];
  for (std::size_t i = 0; i < g.sigma.data.size(); ++i) acc.sigma.data[i] += g.sigma.data[i];
  for (std::size_t i = 0; i < g.delta.data.size(); ++i) acc.delta.data[i] += g.delta.data[i];
}

void scale(PromptGrads& g, double s) {
  for (double& v : g.affine) v *= s;
  for (float& v : g.sigma.data) v = float(v * s);
  for (float& v : g.delta.data) v = float(v * s);
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(std::size_t(std::max(1, workers)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SampleResult {
  PromptGrads grads;
  double loss = 0.0;
  bool correct = false;
};

}  // namespace

PromptGrads normalize_grads(PromptGrads g) {
  normalize_group(g.affine);
  normalize_group(g.sigma.data);
  normalize_group(g.delta.data);
  return g;
}

TrainState make_train_state(Prompt p) {
  TrainState s;
  s.velocity = zero_grads(p);
  s.params = std::move(p);
  return s;
}

void sgd_momentum_step(TrainState& state, const PromptGrads& g, double lr, double momentum, double weight_decay) {
  ParamRefs refs = param_refs(state.params);
  momentum_update<double>(refs.affine, state.velocity.affine, g.affine, lr, momentum, weight_decay);
  momentum_update<float>(refs.sigma, state.velocity.sigma.data, g.sigma.data, lr, momentum, weight_decay);
  momentum_update<float>(refs.delta, state.velocity.delta.data, g.delta.data, lr, momentum, weight_decay);
  ++state.step;
}

std::string MetricsLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_acc,val_acc\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc);
    os << buf;
  }
  return os.str();
}

double prompted_accuracy(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s) {
  const auto idx = d.indices(s);
  if (idx.empty()) fail(ErrorCode::EmptySplit, std::string(split_name(s)) + " split is empty");
  std::size_t hits = 0;
  if (!prompt) {
    for (auto i : idx) hits += argmax(model_forward(d.images[i], model).logits) == d.labels[i];
  } else {
    const PromptApplier applier(*prompt);
    Image xt;
    for (auto i : idx) {
      applier.apply(d.images[i], xt);
      hits += argmax(model_forward(xt, model).logits) == d.labels[i];
    }
  }
  return double(hits) / double(idx.size());
}

TrainResult train_prompt(const TrainConfig& cfg, const FrozenModel& model, const Dataset& data, Prompt init,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  const auto train = data.indices(Split::Train);
  if (train.empty()) fail(ErrorCode::EmptySplit, "train split is empty");
  if (data.count(Split::Val) == 0) fail(ErrorCode::EmptySplit, "val split is empty");
  if (model.num_classes() != data.num_classes)
    fail(ErrorCode::ClassMismatch, "model has " + std::to_string(model.num_classes()) + " classes, data has " +
                                       std::to_string(data.num_classes));
  require_same_shape(data.images[train.front()], zero_grads(init).delta, "prompt canvas");

  const RngStream base(cfg.seed, 0);
  const RngStream aug_base = base.derive("aug");
  const RngStream drop_base = base.derive("dropout");
  const RngStream shuffle_base = base.derive("shuffle");

  TrainResult result;
  TrainState state = make_train_state(std::move(init));

  {
    EpochMetrics m0;
    double loss = 0;
    std::size_t hits = 0;
    const PromptApplier applier(state.params);
    Image xt;
    for (auto i : train) {
      applier.apply(data.images[i], xt);
      const auto logits = model_forward(xt, model).logits;
      loss += cross_entropy(logits, data.labels[i]).loss;
      hits += argmax(logits) == data.labels[i];
    }
    m0.train_loss = loss / double(train.size());
    m0.train_acc = double(hits) / double(train.size());
    m0.val_acc = prompted_accuracy(model, &state.params, data, Split::Val);
    result.log.rows.push_back(m0);
    result.best = state.params;
    result.best_val_acc = m0.val_acc;
    if (on_epoch) on_epoch(m0);
  }

  const std::size_t batch = std::size_t(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) try {
    const double lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr0);
    std::vector<std::size_t> order = train;
    RngStream shuffle = shuffle_base.derive(std::uint64_t(epoch));
    shuffle_in_place(order, shuffle);

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<SampleResult> results(count);
      const PromptCache cache = prepare_prompt(state.params);
      parallel_for(count, cfg.workers, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const std::uint64_t key = std::uint64_t(epoch) * std::uint64_t(data.size()) + idx;
        Image x = data.images[idx];
        if (cfg.augment == AugmentMode::Trivial) {
          RngStream r = aug_base.derive(key);
          x = trivial_augment(x, r);
        }
        PromptForward pf = prompt_forward(state.params, x, &cache);
        RngStream dr = drop_base.derive(key);
        ModelForward mf = model_forward(pf.image, model, DropoutSpec{cfg.dropout, &dr, true});
        LossResult lr_ = compute_loss(mf.logits, data.labels[idx], x, pf.image, cfg);
        Image g = model_input_grad(mf.tape, lr_.grad_logits, model);
        if (!lr_.grad_prompted.data.empty())
          for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += lr_.grad_prompted.data[i];
        results[b].grads = prompt_backward(pf.tape, g).params;
        results[b].loss = lr_.loss;
        results[b].correct = argmax(mf.logits) == data.labels[idx];
      });

      PromptGrads total = zero_grads(state.params);
      for (const auto& r : results) {
        accumulate(total, r.grads);
        loss_sum += r.loss;
        hits += r.correct;
      }
      scale(total, 1.0 / double(count));
      if (cfg.grad_normalize) total = normalize_grads(std::move(total));
      total = clip_grads(std::move(total), cfg.clip_value);
      sgd_momentum_step(state, total, lr, cfg.momentum, cfg.weight_decay);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / double(order.size());
    m.train_acc = double(hits) / double(order.size());
    m.val_acc = prompted_accuracy(model, &state.params, data, Split::Val);
    result.log.rows.push_back(m);
    if (m.val_acc > result.best_val_acc) {
      result.best_val_acc = m.val_acc;
      result.best_epoch = epoch;
      result.best = state.params;
    }
    if (on_epoch) on_epoch(m);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AffineSingular) throw;
    fail(ErrorCode::AffineSingular, "epoch " + std::to_string(epoch) + ", after step " +
                                        std::to_string(state.step) + ": " + e.what());
  }
  return result;
}

}  // namespace promptforge
