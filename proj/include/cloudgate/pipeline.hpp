#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cloudgate/encoder.hpp"
#include "cloudgate/ingest.hpp"
#include "cloudgate/manifest.hpp"
#include "cloudgate/probe.hpp"

namespace cloudgate {

/// Which frozen features a scene contributes: one optical modality, optionally
/// fused with the SAR composite. Tags look like "S2/RGB" or "S2/RGB+SAR".
struct FeatureSpec {
  Modality modality = Modality::S2_RGB;
  bool with_sar = false;

  std::string tag() const;
  static FeatureSpec from_tag(std::string_view tag);
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Worker count from CLOUDGATE_THREADS, else the hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Scene -> frozen image features with a fixed model and scaling.
class SceneEmbedder {
 public:
  explicit SceneEmbedder(const TensorArchive& archive, ScalingConfig scaling = {});

  Embedding embed(const Scene& scene, Modality modality) const;
  VectorF features(const Scene& scene, const FeatureSpec& spec) const;
  VectorF features(const ManifestRecord& record, const FeatureSpec& spec) const;

  const EncoderConfig& config() const { return encoder_.config(); }

 private:
  ImageEncoder encoder_;
  Normalization normalization_;
  ScalingConfig scaling_;
};

/// Band names a feature spec reads.
std::vector<std::string> required_bands(const FeatureSpec& spec);

std::vector<VectorF> compute_features(const std::vector<const ManifestRecord*>& records,
                                      const SceneEmbedder& embedder, const FeatureSpec& spec,
                                      int threads);

/// Embedding cache file: one rank-1 tensor per scene id, plus metadata
/// "feature_spec", "model_id" and "dim".
TensorArchive make_embedding_cache(const std::vector<std::string>& ids,
                                   const std::vector<VectorF>& features, const FeatureSpec& spec,
                                   const std::string& model_id);
std::map<std::string, VectorF> read_embedding_cache(const TensorArchive& cache,
                                                    const FeatureSpec& expected);

/// Labelled examples (1 = cloudy) for the records whose scene label is
/// Cloudy or Clear; `features[i]` belongs to `records[i]`.
std::vector<LabeledVector> labeled_examples(const std::vector<const ManifestRecord*>& records,
                                            const std::vector<VectorF>& features,
                                            const LabelThresholds& thresholds);

}  // namespace cloudgate
