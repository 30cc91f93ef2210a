#include "promptforge/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

namespace promptforge {

namespace {

// Per-sample results land in fixed slots, so the outcome does not depend
// on the worker count.
template <typename Fn>
void for_samples(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(std::size_t(std::max(1, workers)), std::max<std::size_t>(n, 1));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

EvalReport summarize(const std::vector<std::uint8_t>& hit, const std::vector<int>& labels, int num_classes) {
  EvalReport r;
  r.n = hit.size();
  r.per_class.assign(std::size_t(num_classes), 0.0);
  r.class_n.assign(std::size_t(num_classes), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    const auto c = std::size_t(labels[i]);
    r.class_n[c] += 1;
    r.per_class[c] += hit[i];
    total += hit[i];
  }
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    r.per_class[c] = r.class_n[c] ? r.per_class[c] / double(r.class_n[c]) : std::numeric_limits<double>::quiet_NaN();
  r.overall = double(total) / double(r.n);
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalReport evaluate(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s, int workers) {
  const auto idx = d.indices(s);
  if (idx.empty()) fail(ErrorCode::EmptySplit, std::string(split_name(s)) + " split is empty");
  if (model.num_classes() != d.num_classes) fail(ErrorCode::ClassMismatch, "model and dataset class counts differ");
  std::optional<PromptApplier> applier;
  if (prompt) applier.emplace(*prompt);
  std::vector<std::uint8_t> hit(idx.size());
  std::vector<int> labels(idx.size());
  for_samples(idx.size(), workers, [&](std::size_t k) {
    const std::size_t i = idx[k];
    labels[k] = d.labels[i];
    const auto logits = applier ? model_forward(applier->apply(d.images[i]), model).logits
                                : model_forward(d.images[i], model).logits;
    hit[k] = argmax(logits) == d.labels[i];
  });
  return summarize(hit, labels, d.num_classes);
}

std::string CorruptionReport::to_csv() const {
  std::ostringstream os;
  os << "kind,severity,accuracy\n";
  char buf[96];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, ",%d,%.6g\n", c.severity, c.accuracy);
    os << corruption_name(c.kind) << buf;
  }
  return os.str();
}

CorruptionReport corruption_eval(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s,
                                 const std::vector<CorruptionKind>& kinds, const RngStream& rng, int workers) {
  if (kinds.empty()) fail(ErrorCode::EmptyKinds, "no corruption kinds requested");
  const auto idx = d.indices(s);
  if (idx.empty()) fail(ErrorCode::EmptySplit, std::string(split_name(s)) + " split is empty");
  if (model.num_classes() != d.num_classes) fail(ErrorCode::ClassMismatch, "model and dataset class counts differ");
  std::optional<PromptApplier> applier;
  if (prompt) applier.emplace(*prompt);

  CorruptionReport report;
  double sum = 0.0;
  for (CorruptionKind kind : kinds) {
    for (int sev = 1; sev <= 5; ++sev) {
      const RngStream cell_rng = rng.derive(corruption_name(kind)).derive(std::uint64_t(sev));
      std::vector<std::uint8_t> hit(idx.size());
      for_samples(idx.size(), workers, [&](std::size_t k) {
        const std::size_t i = idx[k];
        RngStream r = cell_rng.derive(std::uint64_t(i));
        Image x = corrupt(d.images[i], CorruptionSpec{kind, sev}, r);
        if (applier) x = applier->apply(x);
        hit[k] = argmax(model_forward(x, model).logits) == d.labels[i];
      });
      std::size_t hits = 0;
      for (auto h : hit) hits += h;
      const double acc = double(hits) / double(idx.size());
      report.cells.push_back({kind, sev, acc});
      sum += acc;
    }
  }
  report.mean = sum / double(report.cells.size());
  return report;
}

std::string TimingReport::to_csv() const {
  std::ostringstream os;
  os << "variant,prompt_s,model_s,relative\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6g\n", r.prompt_median, r.model_median, r.relative);
    os << variant_name(r.variant) << buf;
  }
  return os.str();
}

TimingReport bench_timing(const FrozenModel& model, const BenchConfig& cfg, const std::vector<Prompt>& prompts) {
  if (cfg.reps < 5) fail(ErrorCode::InvalidArgument, "bench needs reps >= 5");
  if (cfg.batch < 1 || cfg.warmup < 0) fail(ErrorCode::InvalidArgument, "bench needs batch >= 1 and warmup >= 0");

  RngStream rng(cfg.seed, 0);
  rng = rng.derive("bench");
  std::vector<Image> inputs;
  for (int b = 0; b < cfg.batch; ++b) {
    Image img(cfg.height, cfg.width);
    for (float& v : img.data) v = float(rng.uniform());
    inputs.push_back(std::move(img));
  }
  std::vector<Image> outputs(inputs.size());

  TimingReport report;
  report.height = cfg.height;
  report.width = cfg.width;
  report.batch = cfg.batch;
  report.reps = cfg.reps;
  report.warmup = cfg.warmup;

  for (Variant v : {Variant::Vp, Variant::Evp, Variant::AutoVp, Variant::Acavp}) {
    Prompt prompt = make_prompt(v, cfg.height, cfg.width);
    for (const auto& p : prompts)
      if (p.variant == v && p.height() == cfg.height && p.width() == cfg.width) prompt = p;
    const PromptApplier applier(prompt);

    std::vector<double> pt, mt;
    double sink = 0.0;
    for (int r = 0; r < cfg.warmup + cfg.reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      for (std::size_t b = 0; b < inputs.size(); ++b) applier.apply(inputs[b], outputs[b]);
      const double p_s = seconds_since(t0);
      t0 = std::chrono::steady_clock::now();
      for (const auto& x : outputs) sink += model_forward(x, model).logits[0];
      const double m_s = seconds_since(t0);
      if (r >= cfg.warmup) {
        pt.push_back(p_s);
        mt.push_back(m_s);
      }
    }
    if (!std::isfinite(sink)) fail(ErrorCode::NonFiniteInput, "bench produced non-finite logits");

    TimingRow row;
    row.variant = v;
    row.prompt_median = median(pt);
    row.prompt_min = *std::min_element(pt.begin(), pt.end());
    row.model_median = median(mt);
    row.model_min = *std::min_element(mt.begin(), mt.end());
    // Timer floor keeps the ratio defined for near-free prompts.
    row.prompt_median = std::max(row.prompt_median, 1e-9);
    row.relative = row.prompt_median / row.model_median;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace promptforge
