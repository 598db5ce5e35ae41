#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cloudgate/encoder.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/verdict.hpp"

namespace cloudgate {

/// One training example. label 1 = cloudy, 0 = clear.
struct LabeledVector {
  VectorF features;
  int label = 0;
};

struct TrainConfig {
  int steps = 1000;
  int batch_size = 10;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// True for the 1000-step, batch-10 budget every reported run should use.
  bool canonical() const { return steps == 1000 && batch_size == 10; }
};

/// Logistic regression head on frozen features.
struct ProbeModel {
  VectorF weights;
  float bias = 0.0f;
  int input_dim = 0;
  std::string trained_on;
  std::uint64_t seed = 0;
  int steps = 0;
  int batch_size = 0;
  float learning_rate = 0.0f;

  friend bool operator==(const ProbeModel& a, const ProbeModel& b) {
    return a.weights == b.weights && a.bias == b.bias && a.input_dim == b.input_dim &&
           a.trained_on == b.trained_on && a.seed == b.seed && a.steps == b.steps &&
           a.batch_size == b.batch_size && a.learning_rate == b.learning_rate;
  }
};

using StepObserver = std::function<void(int step, double batch_loss)>;

/// Draws minibatches from a seeded per-epoch shuffle, reshuffling whenever
/// the permutation is exhausted, so any step count is reachable.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next_batch(int batch_size);

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  std::uint64_t state_;
};

/// Validates a two-class training set; returns the common dimension.
int check_training_set(std::span<const LabeledVector> data);

/// Mean binary cross-entropy on logits w.x + b and its gradient, in double.
struct LogisticLoss {
  double loss = 0.0;
  Eigen::VectorXd grad_weights;
  double grad_bias = 0.0;
};
LogisticLoss logistic_loss(const Eigen::VectorXd& weights, double bias,
                           std::span<const LabeledVector> data,
                           std::span<const std::size_t> batch);

ProbeModel train_probe(std::span<const LabeledVector> data, const TrainConfig& config,
                       std::string trained_on = {}, const StepObserver& observer = {});

Verdict predict_probe(const ProbeModel& model, const VectorF& features);

/// [optical || sar], optical first.
VectorF fuse_radar_features(const Embedding& optical, const Embedding& sar);

TensorArchive probe_to_archive(const ProbeModel& model);
ProbeModel probe_from_archive(const TensorArchive& archive);

}  // namespace cloudgate
