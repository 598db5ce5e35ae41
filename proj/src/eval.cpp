#include "cloudgate/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "cloudgate/error.hpp"

namespace cloudgate {

ConfusionCounts confusion(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size())
    throw Error(Errc::LengthMismatch, "predictions and labels differ in length");
  if (predictions.empty()) throw Error(Errc::Empty, "no predictions to score");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred_cloudy = predictions[i] == Label::Cloudy;
    const bool true_cloudy = labels[i] == Label::Cloudy;
    if (pred_cloudy && true_cloudy) ++c.tp;
    else if (pred_cloudy) ++c.fp;
    else if (true_cloudy) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  degenerate = den == 0;
  return degenerate ? kNaN : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  m.tpr = ratio(c.tp, c.tp + c.fn, m.tpr_degenerate);
  m.tnr = ratio(c.tn, c.tn + c.fp, m.tnr_degenerate);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_degenerate);
  if (m.tpr_degenerate || m.precision_degenerate) {
    m.f1_degenerate = true;
    m.f1 = kNaN;
  } else if (m.precision + m.tpr == 0.0) {
    // Both defined and zero: the harmonic mean's limit.
    m.f1 = 0.0;
  } else {
    m.f1 = 2.0 * m.precision * m.tpr / (m.precision + m.tpr);
  }
  return m;
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::TextPrompts: return "text-prompts";
    case Method::LinearProbe: return "linear-probe";
    case Method::Coop: return "coop";
    case Method::Radar: return "radar";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (auto m : all_methods())
    if (s == to_string(m)) return m;
  throw Error(Errc::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

std::vector<Method> all_methods() {
  return {Method::TextPrompts, Method::LinearProbe, Method::Coop, Method::Radar};
}

std::string_view to_string(CellStatus status) {
  switch (status) {
    case CellStatus::Ok: return "ok";
    case CellStatus::NotApplicable: return "not-applicable";
    case CellStatus::Failed: return "failed";
  }
  return "?";
}

std::vector<MatrixCell> table_cells(std::span<const Method> methods) {
  const FeatureSpec s2{Modality::S2_RGB, false};
  const FeatureSpec l8rgb{Modality::L8_RGB, false};
  const FeatureSpec l8fc{Modality::L8_B6B5B4, false};
  const FeatureSpec s2sar{Modality::S2_RGB, true};
  const auto cs = DatasetKind::CloudSEN12;
  const auto sp = DatasetKind::SPARCS;

  auto wanted = [&](Method m) {
    for (auto x : methods)
      if (x == m) return true;
    return false;
  };
  std::vector<MatrixCell> cells;
  if (wanted(Method::TextPrompts)) {
    cells.push_back({Method::TextPrompts, std::nullopt, {}, cs, s2, true});
    cells.push_back({Method::TextPrompts, std::nullopt, {}, sp, l8rgb, true});
    cells.push_back({Method::TextPrompts, std::nullopt, {}, sp, l8fc, true});
  }
  for (auto m : {Method::LinearProbe, Method::Coop}) {
    if (!wanted(m)) continue;
    cells.push_back({m, cs, s2, cs, s2, true});
    cells.push_back({m, cs, s2, sp, l8rgb, true});
    cells.push_back({m, cs, s2, sp, l8fc, true});
  }
  if (wanted(Method::Radar)) {
    cells.push_back({Method::Radar, cs, s2sar, cs, s2sar, true});
    cells.push_back({Method::Radar, cs, s2sar, sp, l8rgb, false});
    cells.push_back({Method::Radar, cs, s2sar, sp, l8fc, false});
  }
  for (auto m : {Method::LinearProbe, Method::Coop}) {
    if (!wanted(m)) continue;
    cells.push_back({m, sp, l8fc, cs, s2, true});
    cells.push_back({m, sp, l8rgb, sp, l8rgb, true});
    cells.push_back({m, sp, l8fc, sp, l8fc, true});
  }
  return cells;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

using Params = std::vector<std::pair<std::string, std::string>>;

Params cell_parameters(const MatrixCell& cell, std::uint64_t seed, const ExperimentSettings& s,
                       float scale) {
  Params p;
  p.emplace_back("method", std::string(to_string(cell.method)));
  p.emplace_back("model_id", s.model_id);
  p.emplace_back("test_dataset", std::string(to_string(cell.test_dataset)));
  p.emplace_back("test_modality", cell.test.tag());
  p.emplace_back("label.clear_max", num(s.thresholds.clear_max));
  p.emplace_back("label.cloudy_min", num(s.thresholds.cloudy_min));
  p.emplace_back("scaling.s2_dn_scale", num(s.scaling.s2_dn_scale));
  p.emplace_back("scaling.s2_cap", num(s.scaling.s2_cap));
  p.emplace_back("scaling.l8_low_percentile", num(s.scaling.l8_low_percentile));
  p.emplace_back("scaling.l8_high_percentile", num(s.scaling.l8_high_percentile));
  p.emplace_back("scaling.sar_db_min", num(s.scaling.sar_db_min));
  p.emplace_back("scaling.sar_db_max", num(s.scaling.sar_db_max));
  if (cell.method == Method::TextPrompts) {
    p.emplace_back("prompt.positive", s.positive_prompt);
    p.emplace_back("prompt.negative", s.negative_prompt);
    p.emplace_back("train_modality", std::string(kZeroShot));
  } else {
    p.emplace_back("seed", std::to_string(seed));
    p.emplace_back("train_dataset", std::string(to_string(*cell.train_dataset)));
    p.emplace_back("train_modality", cell.train.tag());
  }
  if (cell.method == Method::LinearProbe || cell.method == Method::Radar) {
    p.emplace_back("probe.steps", std::to_string(s.probe.steps));
    p.emplace_back("probe.batch_size", std::to_string(s.probe.batch_size));
    p.emplace_back("probe.learning_rate", num(s.probe.learning_rate));
    p.emplace_back("probe.optimizer", "adam");
    p.emplace_back("probe.adam_beta1", num(s.probe.adam_beta1));
    p.emplace_back("probe.adam_beta2", num(s.probe.adam_beta2));
    p.emplace_back("probe.adam_eps", num(s.probe.adam_eps));
    p.emplace_back("probe.loss", "binary-cross-entropy");
  }
  if (cell.method == Method::Coop) {
    p.emplace_back("coop.m_context", std::to_string(s.coop.m_context));
    p.emplace_back("coop.init_std", num(s.coop.init_std));
    p.emplace_back("coop.steps", std::to_string(s.coop.steps));
    p.emplace_back("coop.batch_size", std::to_string(s.coop.batch_size));
    p.emplace_back("coop.learning_rate", num(s.coop.learning_rate));
    p.emplace_back("coop.optimizer", "sgd");
    p.emplace_back("coop.logit_scale", num(scale));
    p.emplace_back("coop.class.0", s.class_names[0]);
    p.emplace_back("coop.class.1", s.class_names[1]);
  }
  std::sort(p.begin(), p.end());
  return p;
}

bool cell_canonical(const MatrixCell& cell, const ExperimentSettings& s) {
  switch (cell.method) {
    case Method::TextPrompts: return true;
    case Method::Coop: return s.coop.canonical();
    default: return s.probe.canonical();
  }
}

struct LabeledRecords {
  std::vector<const ManifestRecord*> records;
  std::vector<Label> labels;
};

LabeledRecords labeled_split(const DatasetManifest& m, Split split, const LabelThresholds& t) {
  LabeledRecords out;
  for (const auto* r : m.in_split(split)) {
    const auto label = scene_label(*r, t);
    if (label == SceneLabel::Cloudy) out.labels.push_back(Label::Cloudy);
    else if (label == SceneLabel::Clear) out.labels.push_back(Label::Clear);
    else continue;
    out.records.push_back(r);
  }
  return out;
}

std::vector<LabeledVector> to_examples(const std::vector<VectorF>& features,
                                       const std::vector<Label>& labels) {
  std::vector<LabeledVector> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    out.push_back({features[i], labels[i] == Label::Cloudy ? 1 : 0});
  return out;
}

class MatrixRunner {
 public:
  MatrixRunner(const ExperimentInputs& inputs, const TensorArchive& archive,
               const Tokenizer& tokenizer, const ExperimentSettings& settings,
               FeatureProvider provider)
      : inputs_(inputs),
        text_(archive),
        tokenizer_(tokenizer),
        settings_(settings),
        provider_(std::move(provider)),
        scale_(logit_scale(archive)) {}

  float scale() const { return scale_; }

  MetricsReport run(const MatrixCell& cell, std::uint64_t seed) {
    MetricsReport r;
    r.method = std::string(to_string(cell.method));
    r.train_dataset = cell.train_dataset ? std::string(to_string(*cell.train_dataset)) : "";
    r.train_modality = cell.train_dataset ? cell.train.tag() : std::string(kZeroShot);
    r.test_dataset = std::string(to_string(cell.test_dataset));
    r.test_modality = cell.test.tag();
    r.seed = cell.method == Method::TextPrompts ? 0 : seed;
    r.canonical = cell_canonical(cell, settings_);
    r.parameters = cell_parameters(cell, r.seed, settings_, scale_);
    r.config_fingerprint = fingerprint(r.parameters);
    if (!cell.applicable) {
      r.status = CellStatus::NotApplicable;
      r.values = metrics({});
      return r;
    }
    try {
      const auto test = labeled(cell.test_dataset, Split::Test);
      if (test.records.empty())
        throw Error(Errc::Empty, "no labelled test scenes in " + r.test_dataset);
      const auto predictions = predict(cell, seed, test);
      r.counts = confusion(predictions, test.labels);
      r.values = metrics(r.counts);
    } catch (const std::exception& e) {
      r.status = CellStatus::Failed;
      r.error = e.what();
      r.counts = {};
      r.values = metrics({});
    }
    return r;
  }

 private:
  const DatasetManifest& manifest(DatasetKind kind) const {
    const DatasetManifest* m = kind == DatasetKind::CloudSEN12 ? inputs_.cloudsen12
                               : kind == DatasetKind::SPARCS   ? inputs_.sparcs
                                                               : nullptr;
    if (!m) throw Error(Errc::InvalidArgument, "no " + std::string(to_string(kind)) + " manifest");
    return *m;
  }

  LabeledRecords labeled(DatasetKind kind, Split split) const {
    return labeled_split(manifest(kind), split, settings_.thresholds);
  }

  std::vector<VectorF> features(const LabeledRecords& set, const FeatureSpec& spec) const {
    return provider_(set.records, spec);
  }

  std::vector<Label> predict(const MatrixCell& cell, std::uint64_t seed,
                             const LabeledRecords& test) {
    const auto test_features = features(test, cell.test);
    std::vector<Label> out;
    out.reserve(test_features.size());

    if (cell.method == Method::TextPrompts) {
      if (!prompts_)
        prompts_ = make_prompt_pair(text_, tokenizer_, settings_.positive_prompt,
                                    settings_.negative_prompt);
      for (const auto& f : test_features) out.push_back(classify_zero_shot({f, true}, *prompts_).label);
      return out;
    }

    const auto key = std::make_tuple(cell.method, *cell.train_dataset, cell.train.tag(), seed);
    const std::string trained_on =
        std::string(to_string(*cell.train_dataset)) + " " + cell.train.tag();
    if (cell.method == Method::Coop) {
      auto it = coops_.find(key);
      if (it == coops_.end()) {
        CoopConfig cfg = settings_.coop;
        cfg.seed = seed;
        const auto classes = make_class_prompt(tokenizer_, settings_.class_names);
        const auto ctx = train_coop(training_set(cell), cfg, text_, classes, scale_, trained_on);
        it = coops_.emplace(key, std::make_unique<CoopClassifier>(text_, ctx)).first;
      }
      for (const auto& f : test_features) out.push_back(it->second->classify({f, true}).label);
      return out;
    }

    auto it = probes_.find(key);
    if (it == probes_.end()) {
      TrainConfig cfg = settings_.probe;
      cfg.seed = seed;
      it = probes_.emplace(key, train_probe(training_set(cell), cfg, trained_on)).first;
    }
    for (const auto& f : test_features) out.push_back(predict_probe(it->second, f).label);
    return out;
  }

  std::vector<LabeledVector> training_set(const MatrixCell& cell) const {
    const auto train = labeled(*cell.train_dataset, Split::Train);
    return to_examples(features(train, cell.train), train.labels);
  }

  using ModelKey = std::tuple<Method, DatasetKind, std::string, std::uint64_t>;

  const ExperimentInputs& inputs_;
  TextEncoder text_;
  const Tokenizer& tokenizer_;
  const ExperimentSettings& settings_;
  FeatureProvider provider_;
  float scale_;
  std::optional<PromptPair> prompts_;
  std::map<ModelKey, ProbeModel> probes_;
  std::map<ModelKey, std::unique_ptr<CoopClassifier>> coops_;
};

}  // namespace

FeatureProvider make_encoder_provider(const TensorArchive& archive, ScalingConfig scaling,
                                      int threads) {
  struct State {
    State(const TensorArchive& a, ScalingConfig s) : embedder(a, s) {}
    SceneEmbedder embedder;
    std::mutex mutex;
    std::map<std::pair<std::string, std::string>, VectorF> memo;
  };
  auto state = std::make_shared<State>(archive, scaling);
  return [state, threads](const std::vector<const ManifestRecord*>& records,
                          const FeatureSpec& spec) {
    const std::string tag = spec.tag();
    std::vector<VectorF> out(records.size());
    std::vector<std::size_t> missing;
    {
      std::lock_guard lock(state->mutex);
      for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = state->memo.find({records[i]->id, tag});
        if (it != state->memo.end()) out[i] = it->second;
        else missing.push_back(i);
      }
    }
    parallel_for(missing.size(), threads, [&](std::size_t k) {
      out[missing[k]] = state->embedder.features(*records[missing[k]], spec);
    });
    std::lock_guard lock(state->mutex);
    for (auto i : missing) state->memo[{records[i]->id, tag}] = out[i];
    return out;
  };
}

std::vector<MetricsReport> run_experiment_matrix(const ExperimentInputs& inputs,
                                                 std::span<const Method> methods,
                                                 const TensorArchive& archive,
                                                 const Tokenizer& tokenizer,
                                                 std::span<const std::uint64_t> seeds,
                                                 const ExperimentSettings& settings,
                                                 const FeatureProvider& provider) {
  if (seeds.empty()) throw Error(Errc::InvalidArgument, "at least one seed is required");
  MatrixRunner runner(inputs, archive, tokenizer, settings,
                      provider ? provider
                               : make_encoder_provider(archive, settings.scaling, settings.threads));
  std::vector<MetricsReport> reports;
  for (const auto& cell : table_cells(methods)) {
    if (cell.method == Method::TextPrompts) {
      reports.push_back(runner.run(cell, seeds.front()));
      continue;
    }
    for (auto seed : seeds) reports.push_back(runner.run(cell, seed));
  }
  return reports;
}

MetricsReport evaluate_predictions(std::span<const Label> predictions,
                                   std::span<const Label> labels, std::string method,
                                   std::string train_modality, std::string test_modality,
                                   std::vector<std::pair<std::string, std::string>> parameters) {
  MetricsReport r;
  r.counts = confusion(predictions, labels);
  r.values = metrics(r.counts);
  r.method = std::move(method);
  r.train_modality = std::move(train_modality);
  r.test_modality = std::move(test_modality);
  std::sort(parameters.begin(), parameters.end());
  r.parameters = std::move(parameters);
  r.config_fingerprint = fingerprint(r.parameters);
  return r;
}

}  // namespace cloudgate
