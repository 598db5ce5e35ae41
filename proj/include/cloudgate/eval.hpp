#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloudgate/coop.hpp"
#include "cloudgate/manifest.hpp"
#include "cloudgate/pipeline.hpp"
#include "cloudgate/probe.hpp"
#include "cloudgate/tokenizer.hpp"
#include "cloudgate/zeroshot.hpp"

namespace cloudgate {

/// Cloudy is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(std::span<const Label> predictions, std::span<const Label> labels);

/// A rate whose denominator was zero is NaN with its flag set.
struct Metrics {
  double tpr = 0.0;
  double tnr = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  bool tpr_degenerate = false;
  bool tnr_degenerate = false;
  bool precision_degenerate = false;
  bool f1_degenerate = false;
};

Metrics metrics(const ConfusionCounts& counts);

enum class Method { TextPrompts, LinearProbe, Coop, Radar };

std::string_view to_string(Method method);
Method method_from_string(std::string_view s);
std::vector<Method> all_methods();

enum class CellStatus { Ok, NotApplicable, Failed };
std::string_view to_string(CellStatus status);

inline constexpr std::string_view kZeroShot = "zero-shot";

struct MetricsReport {
  Metrics values;
  ConfusionCounts counts;
  std::string method;
  std::string train_dataset;   // empty for zero-shot
  std::string train_modality;  // feature tag or "zero-shot"
  std::string test_dataset;
  std::string test_modality;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  bool canonical = true;
  CellStatus status = CellStatus::Ok;
  std::string error;
  /// Every setting that shaped the cell, as sorted key/value pairs.
  std::vector<std::pair<std::string, std::string>> parameters;
};

/// Hex FNV-1a over the sorted parameters.
std::string fingerprint(const std::vector<std::pair<std::string, std::string>>& parameters);

/// One cell of the cross-sensor table.
struct MatrixCell {
  Method method = Method::TextPrompts;
  std::optional<DatasetKind> train_dataset;
  FeatureSpec train;
  DatasetKind test_dataset = DatasetKind::CloudSEN12;
  FeatureSpec test;
  bool applicable = true;
};

/// Cells for the requested methods, in table order.
std::vector<MatrixCell> table_cells(std::span<const Method> methods);

struct ExperimentSettings {
  TrainConfig probe;
  CoopConfig coop;
  LabelThresholds thresholds;
  ScalingConfig scaling;
  std::string positive_prompt{kDefaultPositivePrompt};
  std::string negative_prompt{kDefaultNegativePrompt};
  std::array<std::string, 2> class_names{"clouds", "clear sky"};
  std::string model_id;
  int threads = 1;
};

/// Feature vectors for records under a spec; `features[i]` for `records[i]`.
using FeatureProvider = std::function<std::vector<VectorF>(
    const std::vector<const ManifestRecord*>& records, const FeatureSpec& spec)>;

/// Provider that encodes scenes with the archive's image tower, memoised by
/// (scene id, feature tag).
FeatureProvider make_encoder_provider(const TensorArchive& archive, ScalingConfig scaling,
                                      int threads);

struct ExperimentInputs {
  const DatasetManifest* cloudsen12 = nullptr;
  const DatasetManifest* sparcs = nullptr;
};

/// Runs every cell for every seed (zero-shot cells once). A cell
/// that throws is kept as a Failed record carrying the message.
std::vector<MetricsReport> run_experiment_matrix(const ExperimentInputs& inputs,
                                                 std::span<const Method> methods,
                                                 const TensorArchive& archive,
                                                 const Tokenizer& tokenizer,
                                                 std::span<const std::uint64_t> seeds,
                                                 const ExperimentSettings& settings,
                                                 const FeatureProvider& provider = {});

/// Evaluates labelled test scenes with a fixed classifier.
MetricsReport evaluate_predictions(std::span<const Label> predictions,
                                   std::span<const Label> labels, std::string method,
                                   std::string train_modality, std::string test_modality,
                                   std::vector<std::pair<std::string, std::string>> parameters);

enum class ReportFormat { Json, Markdown };

/// Reports sorted by method, train modality, test modality, then seed.
std::string emit_report(std::vector<MetricsReport> reports, ReportFormat format);

}  // namespace cloudgate
