#include "promptforge/frozen_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace promptforge {

namespace {

constexpr int kIn = 3;

int conv_out(int n) { return (n - 1) / 2 + 1; }

std::size_t conv1_size() { return std::size_t(kConv1Out) * kIn * 9; }
std::size_t conv2_size() { return std::size_t(kConv2Out) * kConv1Out * 9; }

// 3x3, stride 2, zero padding 1. Valid output columns for kernel column kx
// are those whose input column 2x+kx-1 lies in [0, W).
inline void col_range(int kx, int in_w, int out_w, int& lo, int& hi) {
  lo = kx == 0 ? 1 : 0;
  hi = std::min(out_w - 1, (in_w - kx) / 2);
}

// Each strided input row is gathered once and reused by every output
// channel; per output element the (c, ky, kx) accumulation order is fixed.
void conv_forward(const float* in, int C, int H, int W, const float* w, const float* b, int O, float* out, int Ho,
                  int Wo) {
  const std::size_t po = std::size_t(Ho) * Wo;
  for (int o = 0; o < O; ++o) std::fill(out + o * po, out + (o + 1) * po, b[o]);
  std::vector<float> row(static_cast<std::size_t>(Wo));
  for (int c = 0; c < C; ++c) {
    const float* iplane = in + std::size_t(c) * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        int lo, hi;
        col_range(kx, W, Wo, lo, hi);
        for (int y = 0; y < Ho; ++y) {
          const int iy = 2 * y + ky - 1;
          if (iy < 0 || iy >= H) continue;
          const float* src = iplane + std::size_t(iy) * W + kx - 1;
          for (int x = lo; x <= hi; ++x) row[std::size_t(x)] = src[2 * x];
          for (int o = 0; o < O; ++o) {
            const float wv = w[((o * C + c) * 3 + ky) * 3 + kx];
            float* orow = out + o * po + std::size_t(y) * Wo;
            for (int x = lo; x <= hi; ++x) orow[x] += wv * row[std::size_t(x)];
          }
        }
      }
    }
  }
}

void conv_backward_input(const float* g, int O, int Ho, int Wo, const float* w, int C, int H, int W, float* gin) {
  const std::size_t po = std::size_t(Ho) * Wo;
  std::fill(gin, gin + std::size_t(C) * H * W, 0.0f);
  std::vector<float> row(static_cast<std::size_t>(Wo));
  for (int c = 0; c < C; ++c) {
    float* iplane = gin + std::size_t(c) * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        int lo, hi;
        col_range(kx, W, Wo, lo, hi);
        for (int y = 0; y < Ho; ++y) {
          const int iy = 2 * y + ky - 1;
          if (iy < 0 || iy >= H) continue;
          std::fill(row.begin(), row.end(), 0.0f);
          for (int o = 0; o < O; ++o) {
            const float wv = w[((o * C + c) * 3 + ky) * 3 + kx];
            const float* grow = g + o * po + std::size_t(y) * Wo;
            for (int x = lo; x <= hi; ++x) row[std::size_t(x)] += wv * grow[x];
          }
          float* dst = iplane + std::size_t(iy) * W + kx - 1;
          for (int x = lo; x <= hi; ++x) dst[2 * x] += row[std::size_t(x)];
        }
      }
    }
  }
}

void conv_backward_weights(const float* g, int O, int Ho, int Wo, const float* in, int C, int H, int W, float* gw,
                           float* gb) {
  const std::size_t po = std::size_t(Ho) * Wo;
  for (int o = 0; o < O; ++o) {
    const float* gplane = g + o * po;
    double bsum = 0;
    for (std::size_t q = 0; q < po; ++q) bsum += gplane[q];
    gb[o] += float(bsum);
    for (int c = 0; c < C; ++c) {
      const float* iplane = in + std::size_t(c) * H * W;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          int lo, hi;
          col_range(kx, W, Wo, lo, hi);
          float acc = 0.0f;
          for (int y = 0; y < Ho; ++y) {
            const int iy = 2 * y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            const float* row = iplane + std::size_t(iy) * W + kx - 1;
            const float* grow = gplane + std::size_t(y) * Wo;
            for (int x = lo; x <= hi; ++x) acc += grow[x] * row[2 * x];
          }
          gw[((o * C + c) * 3 + ky) * 3 + kx] += acc;
        }
      }
    }
  }
}

struct Backprop {
  Image grad_input;
  ModelWeights grad_weights;
};

// Shared reverse pass. Weight gradients are accumulated only when asked
// for (pretraining); the frozen path stops at the input.
void backprop(const ModelTape& t, std::span<const double> grad_logits, const ModelWeights& w, const Image* input,
              Image* grad_input, ModelWeights* grad_weights) {
  const int K = w.num_classes;
  if (int(grad_logits.size()) != K) fail(ErrorCode::TapeMismatch, "grad_logits length differs from class count");
  std::vector<float> g_feat(kFeatures, 0.0f);
  for (int k = 0; k < K; ++k) {
    const double gk = grad_logits[std::size_t(k)];
    if (grad_weights) {
      grad_weights->fc_b[std::size_t(k)] += float(gk);
      for (int f = 0; f < kFeatures; ++f) grad_weights->fc_w[std::size_t(k * kFeatures + f)] += float(gk * t.features[std::size_t(f)]);
    }
    for (int f = 0; f < kFeatures; ++f) g_feat[std::size_t(f)] += float(gk * w.fc_w[std::size_t(k * kFeatures + f)]);
  }
  if (!t.keep_scale.empty())
    for (int f = 0; f < kFeatures; ++f) g_feat[std::size_t(f)] *= t.keep_scale[std::size_t(f)];

  const std::size_t p2 = std::size_t(t.h2) * t.w2;
  const float inv_area = 1.0f / float(p2);
  std::vector<float> g_pre2(std::size_t(kConv2Out) * p2);
  for (int o = 0; o < kConv2Out; ++o) {
    const float go = g_feat[std::size_t(o)] * inv_area;
    for (std::size_t q = 0; q < p2; ++q) g_pre2[o * p2 + q] = t.pre2[o * p2 + q] > 0.0f ? go : 0.0f;
  }

  const std::size_t p1 = std::size_t(t.h1) * t.w1;
  std::vector<float> g_act1(std::size_t(kConv1Out) * p1);
  conv_backward_input(g_pre2.data(), kConv2Out, t.h2, t.w2, w.conv2_w.data(), kConv1Out, t.h1, t.w1, g_act1.data());
  if (grad_weights)
    conv_backward_weights(g_pre2.data(), kConv2Out, t.h2, t.w2, t.act1.data(), kConv1Out, t.h1, t.w1,
                          grad_weights->conv2_w.data(), grad_weights->conv2_b.data());
  for (std::size_t q = 0; q < g_act1.size(); ++q)
    if (!(t.pre1[q] > 0.0f)) g_act1[q] = 0.0f;

  if (grad_weights && input)
    conv_backward_weights(g_act1.data(), kConv1Out, t.h1, t.w1, input->data.data(), kIn, t.height, t.width,
                          grad_weights->conv1_w.data(), grad_weights->conv1_b.data());
  if (grad_input) {
    *grad_input = Image(t.height, t.width);
    conv_backward_input(g_act1.data(), kConv1Out, t.h1, t.w1, w.conv1_w.data(), kIn, t.height, t.width,
                        grad_input->data.data());
  }
}

}  // namespace

ModelWeights ModelWeights::zeros(int num_classes) {
  ModelWeights w;
  w.num_classes = num_classes;
  w.conv1_w.assign(conv1_size(), 0.0f);
  w.conv1_b.assign(kConv1Out, 0.0f);
  w.conv2_w.assign(conv2_size(), 0.0f);
  w.conv2_b.assign(kConv2Out, 0.0f);
  w.fc_w.assign(std::size_t(num_classes) * kFeatures, 0.0f);
  w.fc_b.assign(std::size_t(num_classes), 0.0f);
  return w;
}

ModelWeights ModelWeights::random(int num_classes, RngStream rng) {
  ModelWeights w = zeros(num_classes);
  auto he = [&](std::vector<float>& v, int fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (float& x : v) x = float(sd * rng.normal());
  };
  he(w.conv1_w, kIn * 9);
  he(w.conv2_w, kConv1Out * 9);
  const double bound = 1.0 / std::sqrt(double(kFeatures));
  for (float& x : w.fc_w) x = float(rng.uniform(-bound, bound));
  return w;
}

void ModelWeights::validate() const {
  if (num_classes < 1) fail(ErrorCode::ShapeMismatch, "model needs at least one class");
  if (conv1_w.size() != conv1_size() || conv1_b.size() != std::size_t(kConv1Out) || conv2_w.size() != conv2_size() ||
      conv2_b.size() != std::size_t(kConv2Out) || fc_w.size() != std::size_t(num_classes) * kFeatures ||
      fc_b.size() != std::size_t(num_classes))
    fail(ErrorCode::ShapeMismatch, "weight tensor shapes do not match the architecture");
}

FrozenModel::FrozenModel(ModelWeights w) : w_(std::move(w)) { w_.validate(); }

std::uint64_t FrozenModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&](const std::vector<float>& v) {
    for (float f : v) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 0x100000001b3ull;
      }
    }
  };
  eat(w_.conv1_w); eat(w_.conv1_b); eat(w_.conv2_w); eat(w_.conv2_b); eat(w_.fc_w); eat(w_.fc_b);
  return h ^ std::uint64_t(w_.num_classes);
}

std::vector<float> dropout_feature(std::span<float> features, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorCode::InvalidArgument, "dropout rate must lie in [0, 1)");
  std::vector<float> scale(features.size(), 1.0f);
  if (!training || rate == 0.0) return scale;
  const float keep = float(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < features.size(); ++i) {
    scale[i] = rng.uniform() < rate ? 0.0f : keep;
    features[i] *= scale[i];
  }
  return scale;
}

ModelForward model_forward(const Image& x, const FrozenModel& m, const DropoutSpec& dropout) {
  if (x.height < 8 || x.width < 8) fail(ErrorCode::ShapeMismatch, "model input must be at least 8x8");
  if (x.data.size() != std::size_t(3) * x.plane()) fail(ErrorCode::ShapeMismatch, "model input is not 3xHxW");
  const auto& w = m.weights();
  ModelForward f;
  ModelTape& t = f.tape;
  t.height = x.height;
  t.width = x.width;
  t.h1 = conv_out(x.height);
  t.w1 = conv_out(x.width);
  t.h2 = conv_out(t.h1);
  t.w2 = conv_out(t.w1);
  const std::size_t p1 = std::size_t(t.h1) * t.w1, p2 = std::size_t(t.h2) * t.w2;

  t.pre1.resize(kConv1Out * p1);
  conv_forward(x.data.data(), kIn, x.height, x.width, w.conv1_w.data(), w.conv1_b.data(), kConv1Out, t.pre1.data(),
               t.h1, t.w1);
  t.act1.resize(t.pre1.size());
  for (std::size_t q = 0; q < t.pre1.size(); ++q) t.act1[q] = std::max(t.pre1[q], 0.0f);
  t.pre2.resize(kConv2Out * p2);
  conv_forward(t.act1.data(), kConv1Out, t.h1, t.w1, w.conv2_w.data(), w.conv2_b.data(), kConv2Out, t.pre2.data(),
               t.h2, t.w2);

  t.pooled.assign(kFeatures, 0.0f);
  for (int o = 0; o < kConv2Out; ++o) {
    double s = 0;
    for (std::size_t q = 0; q < p2; ++q) s += std::max(t.pre2[o * p2 + q], 0.0f);
    t.pooled[std::size_t(o)] = float(s / double(p2));
  }
  t.features = t.pooled;
  if (dropout.training && dropout.rate > 0.0) {
    if (!dropout.rng) fail(ErrorCode::InvalidArgument, "training dropout needs an rng");
    t.keep_scale = dropout_feature(t.features, dropout.rate, *dropout.rng, true);
  }

  const int K = w.num_classes;
  f.logits.assign(std::size_t(K), 0.0);
  for (int k = 0; k < K; ++k) {
    double s = w.fc_b[std::size_t(k)];
    for (int q = 0; q < kFeatures; ++q) s += double(w.fc_w[std::size_t(k * kFeatures + q)]) * t.features[std::size_t(q)];
    f.logits[std::size_t(k)] = s;
  }
  return f;
}

Image model_input_grad(const ModelTape& tape, std::span<const double> grad_logits, const FrozenModel& m) {
  if (tape.pre1.size() != std::size_t(kConv1Out) * tape.h1 * tape.w1 ||
      tape.pre2.size() != std::size_t(kConv2Out) * tape.h2 * tape.w2 || tape.features.size() != std::size_t(kFeatures))
    fail(ErrorCode::TapeMismatch, "model tape is inconsistent with the architecture");
  Image g;
  backprop(tape, grad_logits, m.weights(), nullptr, &g, nullptr);
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0;
  for (double& v : p) s += (v = std::exp(v - mx));
  for (double& v : p) v /= s;
  return p;
}

CrossEntropy cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || std::size_t(label) >= logits.size()) fail(ErrorCode::ClassMismatch, "label outside logit range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  CrossEntropy ce;
  ce.loss = lse - logits[std::size_t(label)];
  ce.grad_logits.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) ce.grad_logits[k] = std::exp(logits[k] - lse);
  ce.grad_logits[std::size_t(label)] -= 1.0;
  return ce;
}

int argmax(std::span<const double> logits) {
  return int(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double model_accuracy(const FrozenModel& m, const Dataset& d, Split s) {
  const auto idx = d.indices(s);
  if (idx.empty()) fail(ErrorCode::EmptySplit, std::string(split_name(s)) + " split is empty");
  std::size_t hits = 0;
  for (auto i : idx) hits += argmax(model_forward(d.images[i], m).logits) == d.labels[i];
  return double(hits) / double(idx.size());
}

PretrainResult pretrain_source(const Dataset& source, const PretrainConfig& cfg, RngStream rng) {
  source.validate();
  const auto train = source.indices(Split::Train);
  if (train.empty()) fail(ErrorCode::EmptySplit, "source train split is empty");
  const bool has_val = source.count(Split::Val) > 0;
  const Split eval_split = has_val ? Split::Val : Split::Train;

  ModelWeights w = ModelWeights::random(source.num_classes, rng.derive("init"));
  ModelWeights v = ModelWeights::zeros(source.num_classes);
  auto tensors = [](ModelWeights& m) {
    return std::array<std::vector<float>*, 6>{&m.conv1_w, &m.conv1_b, &m.conv2_w, &m.conv2_b, &m.fc_w, &m.fc_b};
  };

  PretrainResult result{FrozenModel(w), 0.0, 0, false};
  result.val_accuracy = model_accuracy(result.model, source, eval_split);
  if (result.val_accuracy >= cfg.target_accuracy && cfg.max_epochs > 0) result.converged = true;
  const std::size_t batch = std::size_t(std::max(1, cfg.batch_size));

  for (int epoch = 0; epoch < cfg.max_epochs && !result.converged; ++epoch) {
    std::vector<std::size_t> order = train;
    RngStream shuffle = rng.derive("epoch").derive(std::uint64_t(epoch));
    shuffle_in_place(order, shuffle);
    const double lr = cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * epoch / cfg.max_epochs));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      ModelWeights g = ModelWeights::zeros(source.num_classes);
      const FrozenModel current(w);
      for (std::size_t b = start; b < end; ++b) {
        const Image& x = source.images[order[b]];
        ModelForward f = model_forward(x, current);
        CrossEntropy ce = cross_entropy(f.logits, source.labels[order[b]]);
        backprop(f.tape, ce.grad_logits, current.weights(), &x, nullptr, &g);
      }
      const float scale = 1.0f / float(end - start);
      auto tw = tensors(w), tv = tensors(v), tg = tensors(g);
      for (std::size_t k = 0; k < tw.size(); ++k) {
        auto& wk = *tw[k];
        auto& vk = *tv[k];
        const auto& gk = *tg[k];
        for (std::size_t i = 0; i < wk.size(); ++i) {
          const float grad = gk[i] * scale + float(cfg.weight_decay) * wk[i];
          vk[i] = float(cfg.momentum) * vk[i] + grad;
          wk[i] -= float(lr) * vk[i];
        }
      }
    }
    result.model = FrozenModel(w);
    result.epochs = epoch + 1;
    result.val_accuracy = model_accuracy(result.model, source, eval_split);
    if (result.val_accuracy >= cfg.target_accuracy) result.converged = true;
  }
  return result;
}

std::vector<TensorEntry> model_to_entries(const FrozenModel& m) {
  const auto& w = m.weights();
  const auto K = std::uint32_t(w.num_classes);
  return {
      {"conv1.w", {kConv1Out, kIn, 3, 3}, w.conv1_w},
      {"conv1.b", {kConv1Out}, w.conv1_b},
      {"conv2.w", {kConv2Out, kConv1Out, 3, 3}, w.conv2_w},
      {"conv2.b", {kConv2Out}, w.conv2_b},
      {"fc.w", {K, kFeatures}, w.fc_w},
      {"fc.b", {K}, w.fc_b},
      {"meta.num_classes", {1}, {float(w.num_classes)}},
  };
}

FrozenModel model_from_entries(const std::vector<TensorEntry>& entries) {
  ModelWeights w;
  const auto& k = find_entry(entries, "meta.num_classes");
  if (k.values.size() != 1) fail(ErrorCode::ShapeMismatch, "meta.num_classes must be a scalar");
  w.num_classes = int(k.values[0]);
  w.conv1_w = find_entry(entries, "conv1.w").values;
  w.conv1_b = find_entry(entries, "conv1.b").values;
  w.conv2_w = find_entry(entries, "conv2.w").values;
  w.conv2_b = find_entry(entries, "conv2.b").values;
  w.fc_w = find_entry(entries, "fc.w").values;
  w.fc_b = find_entry(entries, "fc.b").values;
  return FrozenModel(std::move(w));
}

void save_model(const std::filesystem::path& path, const FrozenModel& m) { tensorfile_write(path, model_to_entries(m)); }

FrozenModel load_model(const std::filesystem::path& path) { return model_from_entries(tensorfile_read(path)); }

}  // namespace promptforge
