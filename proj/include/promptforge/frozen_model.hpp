#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "promptforge/core.hpp"
#include "promptforge/data.hpp"
#include "promptforge/tensorfile.hpp"

namespace promptforge {

// conv 3->8 k3 s2 p1, ReLU, conv 8->16 k3 s2 p1, ReLU, global average
// pool, linear 16->K.
inline constexpr int kConv1Out = 8;
inline constexpr int kConv2Out = 16;
inline constexpr int kFeatures = kConv2Out;

struct ModelWeights {
  int num_classes = 0;
  std::vector<float> conv1_w, conv1_b;  // [8][3][3][3], [8]
  std::vector<float> conv2_w, conv2_b;  // [16][8][3][3], [16]
  std::vector<float> fc_w, fc_b;        // [K][16], [K]

  static ModelWeights zeros(int num_classes);
  static ModelWeights random(int num_classes, RngStream rng);
  void validate() const;
};

class FrozenModel {
 public:
  explicit FrozenModel(ModelWeights w);

  const ModelWeights& weights() const { return w_; }
  int num_classes() const { return w_.num_classes; }
  std::uint64_t checksum() const;

 private:
  ModelWeights w_;
};

struct ModelTape {
  int height = 0, width = 0;  // input
  int h1 = 0, w1 = 0, h2 = 0, w2 = 0;
  std::vector<float> pre1, pre2;   // pre-activations
  std::vector<float> act1;         // relu(pre1), input of conv2
  std::vector<float> pooled;       // before dropout
  std::vector<float> keep_scale;   // dropout multipliers, empty when off
  std::vector<float> features;     // what the linear head saw
};

struct ModelForward {
  std::vector<double> logits;
  ModelTape tape;
};

struct DropoutSpec {
  double rate = 0.0;
  RngStream* rng = nullptr;
  bool training = false;
};

ModelForward model_forward(const Image& x, const FrozenModel& m, const DropoutSpec& dropout = {});

// d(loss)/d(input) only; the weights receive nothing.
Image model_input_grad(const ModelTape& tape, std::span<const double> grad_logits, const FrozenModel& m);

// Inverted dropout on a feature vector: kept entries scale by 1/(1-rate).
// Returns the per-feature multipliers applied.
std::vector<float> dropout_feature(std::span<float> features, double rate, RngStream& rng, bool training);

std::vector<double> softmax(std::span<const double> logits);

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

// Log-sum-exp stabilized.
CrossEntropy cross_entropy(std::span<const double> logits, int label);

int argmax(std::span<const double> logits);

struct PretrainConfig {
  int max_epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  double target_accuracy = 0.9;
  double weight_decay = 1e-4;
};

struct PretrainResult {
  FrozenModel model;
  double val_accuracy = 0.0;
  int epochs = 0;
  bool converged = false;  // false: DidNotConverge, weights still usable
};

// Trains the stand-in classifier on the source domain (train split) until
// the val split reaches cfg.target_accuracy or max_epochs runs out.
PretrainResult pretrain_source(const Dataset& source, const PretrainConfig& cfg, RngStream rng);

double model_accuracy(const FrozenModel& m, const Dataset& d, Split s);

std::vector<TensorEntry> model_to_entries(const FrozenModel& m);
FrozenModel model_from_entries(const std::vector<TensorEntry>& entries);
void save_model(const std::filesystem::path& path, const FrozenModel& m);
FrozenModel load_model(const std::filesystem::path& path);

}  // namespace promptforge
