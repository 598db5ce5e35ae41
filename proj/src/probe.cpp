#include "cloudgate/probe.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>

#include "cloudgate/error.hpp"
#include "cloudgate/zeroshot.hpp"

namespace cloudgate {

namespace {

std::string float_text(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed)
    : order_(n), cursor_(n), state_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> EpochSampler::next_batch(int batch_size) {
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    if (cursor_ == order_.size()) {
      std::mt19937_64 rng(state_++);
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

int check_training_set(std::span<const LabeledVector> data) {
  if (data.empty()) throw Error(Errc::EmptyTrainingSet, "no training examples");
  const auto dim = data.front().features.size();
  bool seen[2] = {false, false};
  for (const auto& ex : data) {
    if (ex.features.size() != dim)
      throw Error(Errc::DimensionMismatch, "training vectors differ in dimension");
    if (ex.label != 0 && ex.label != 1) throw Error(Errc::InvalidArgument, "labels must be 0 or 1");
    seen[ex.label] = true;
  }
  if (!seen[0] || !seen[1])
    throw Error(Errc::SingleClassTrainingSet, "training set needs both cloudy and clear examples");
  return static_cast<int>(dim);
}

LogisticLoss logistic_loss(const Eigen::VectorXd& weights, double bias,
                           std::span<const LabeledVector> data,
                           std::span<const std::size_t> batch) {
  LogisticLoss out;
  out.grad_weights = Eigen::VectorXd::Zero(weights.size());
  for (auto i : batch) {
    const auto& ex = data[i];
    const Eigen::VectorXd x = ex.features.cast<double>();
    const double z = weights.dot(x) + bias;
    const double y = ex.label;
    // softplus(z) - y z, evaluated without overflow.
    out.loss += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    const double dz = 1.0 / (1.0 + std::exp(-z)) - y;
    out.grad_weights += dz * x;
    out.grad_bias += dz;
  }
  const double n = static_cast<double>(batch.size());
  out.loss /= n;
  out.grad_weights /= n;
  out.grad_bias /= n;
  return out;
}

ProbeModel train_probe(std::span<const LabeledVector> data, const TrainConfig& config,
                       std::string trained_on, const StepObserver& observer) {
  const int dim = check_training_set(data);
  if (config.steps < 0 || config.batch_size <= 0)
    throw Error(Errc::InvalidArgument, "steps must be >= 0 and batch_size > 0");

  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
  double b = 0.0;
  Eigen::VectorXd m_w = Eigen::VectorXd::Zero(dim), v_w = Eigen::VectorXd::Zero(dim);
  double m_b = 0.0, v_b = 0.0;
  const double lr = config.learning_rate;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2, eps = config.adam_eps;

  EpochSampler sampler(data.size(), config.seed);
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = sampler.next_batch(config.batch_size);
    const auto g = logistic_loss(w, b, data, batch);
    if (observer) observer(step, g.loss);

    m_w = b1 * m_w + (1 - b1) * g.grad_weights;
    v_w = b2 * v_w + (1 - b2) * g.grad_weights.cwiseAbs2();
    m_b = b1 * m_b + (1 - b1) * g.grad_bias;
    v_b = b2 * v_b + (1 - b2) * g.grad_bias * g.grad_bias;
    const double c1 = 1 - std::pow(b1, step);
    const double c2 = 1 - std::pow(b2, step);
    w.array() -= lr * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + eps);
    b -= lr * (m_b / c1) / (std::sqrt(v_b / c2) + eps);
  }

  ProbeModel model;
  model.weights = w.cast<float>();
  model.bias = static_cast<float>(b);
  model.input_dim = dim;
  model.trained_on = std::move(trained_on);
  model.seed = config.seed;
  model.steps = config.steps;
  model.batch_size = config.batch_size;
  model.learning_rate = config.learning_rate;
  if (!model.weights.allFinite() || !std::isfinite(model.bias))
    throw Error(Errc::InvalidArgument, "probe training diverged");
  return model;
}

Verdict predict_probe(const ProbeModel& model, const VectorF& features) {
  if (features.size() != model.input_dim || model.weights.size() != model.input_dim)
    throw Error(Errc::DimensionMismatch, "feature dimension " + std::to_string(features.size()) +
                                             " does not match probe input " +
                                             std::to_string(model.input_dim));
  const double z = model.weights.cast<double>().dot(features.cast<double>()) + model.bias;
  const double p = 1.0 / (1.0 + std::exp(-z));
  Verdict v;
  v.label = p >= 0.5 ? Label::Cloudy : Label::Clear;
  v.score_positive = static_cast<float>(p);
  v.score_negative = static_cast<float>(1.0 - p);
  v.confidence = static_cast<float>(std::max(p, 1.0 - p));
  return v;
}

VectorF fuse_radar_features(const Embedding& optical, const Embedding& sar) {
  require_normalized(optical);
  require_normalized(sar);
  if (optical.dim() != sar.dim())
    throw Error(Errc::DimensionMismatch, "optical and SAR embeddings differ in dimension");
  VectorF fused(optical.dim() + sar.dim());
  fused << optical.values, sar.values;
  return fused;
}

TensorArchive probe_to_archive(const ProbeModel& model) {
  TensorArchive a;
  const auto d = static_cast<std::uint64_t>(model.input_dim);
  a.entries["probe.weights"] =
      Tensor({d}, std::vector<float>(model.weights.data(), model.weights.data() + d));
  a.entries["probe.bias"] = Tensor({1}, {model.bias});
  a.metadata["trained_on"] = model.trained_on;
  a.metadata["seed"] = std::to_string(model.seed);
  a.metadata["steps"] = std::to_string(model.steps);
  a.metadata["batch_size"] = std::to_string(model.batch_size);
  a.metadata["learning_rate"] = float_text(model.learning_rate);
  a.metadata["optimizer"] = "adam";
  a.metadata["loss"] = "binary_cross_entropy";
  a.metadata["canonical"] = model.steps == 1000 && model.batch_size == 10 ? "true" : "false";
  return a;
}

ProbeModel probe_from_archive(const TensorArchive& a) {
  ProbeModel m;
  const auto& w = a.at("probe.weights");
  const auto& b = a.at("probe.bias");
  if (w.rank() != 1 || b.size() != 1) throw Error(Errc::ShapeMismatch, "malformed probe archive");
  m.input_dim = static_cast<int>(w.size());
  m.weights = Eigen::Map<const VectorF>(w.data().data(), m.input_dim);
  m.bias = b[0];
  m.trained_on = a.meta("trained_on");
  m.seed = static_cast<std::uint64_t>(a.meta_int("seed"));
  m.steps = static_cast<int>(a.meta_int("steps"));
  m.batch_size = static_cast<int>(a.meta_int("batch_size", 0));
  if (a.metadata.count("learning_rate")) m.learning_rate = std::stof(a.meta("learning_rate"));
  return m;
}

}  // namespace cloudgate
