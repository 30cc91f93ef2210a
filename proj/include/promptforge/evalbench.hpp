#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "promptforge/augment.hpp"
#include "promptforge/data.hpp"
#include "promptforge/frozen_model.hpp"
#include "promptforge/pipeline.hpp"

namespace promptforge {

struct EvalReport {
  double overall = 0.0;
  std::vector<double> per_class;      // NaN for classes absent from the split
  std::vector<std::size_t> class_n;
  std::size_t n = 0;
};

// `prompt` may be null (zero-shot).
EvalReport evaluate(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s, int workers = 1);

struct CorruptionCell {
  CorruptionKind kind;
  int severity = 1;
  double accuracy = 0.0;
};

struct CorruptionReport {
  std::vector<CorruptionCell> cells;  // kind-major, severity 1..5
  double mean = 0.0;

  std::string to_csv() const;
};

// Each (kind, severity) corrupts the split with its own stream derived
// from `rng`, so any cell can be recomputed in isolation.
CorruptionReport corruption_eval(const FrozenModel& model, const Prompt* prompt, const Dataset& d, Split s,
                                 const std::vector<CorruptionKind>& kinds, const RngStream& rng, int workers = 1);

struct TimingRow {
  Variant variant = Variant::Vp;
  double prompt_median = 0.0;  // seconds per batch
  double prompt_min = 0.0;
  double model_median = 0.0;
  double model_min = 0.0;
  double relative = 0.0;       // prompt_median / model_median
};

struct TimingReport {
  int height = 0, width = 0;
  int batch = 0;
  int reps = 0;
  int warmup = 0;
  std::vector<TimingRow> rows;

  std::string to_csv() const;
};

struct BenchConfig {
  int height = 224, width = 224;
  int batch = 16;
  int reps = 20;
  int warmup = 2;
  std::uint64_t seed = 0;
};

// One row per variant in {vp, evp, autovp, acavp}; prompts come from
// make_prompt at the bench canvas unless `prompts` supplies one for that
// variant. Single-threaded by design.
TimingReport bench_timing(const FrozenModel& model, const BenchConfig& cfg, const std::vector<Prompt>& prompts = {});

}  // namespace promptforge
