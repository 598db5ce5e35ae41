#include "cloudgate/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "cloudgate/error.hpp"

namespace cloudgate {

std::string FeatureSpec::tag() const {
  return std::string(modality_tag(modality)) + (with_sar ? "+SAR" : "");
}

FeatureSpec FeatureSpec::from_tag(std::string_view tag) {
  FeatureSpec spec;
  constexpr std::string_view sar_suffix = "+SAR";
  if (tag.ends_with(sar_suffix)) {
    spec.with_sar = true;
    tag.remove_suffix(sar_suffix.size());
  }
  spec.modality = modality_from_tag(tag);
  if (spec.with_sar && spec.modality == Modality::S1_SARFC)
    throw Error(Errc::InvalidArgument, "SAR cannot be fused with itself");
  return spec;
}

int worker_count() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CLOUDGATE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(hw);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

SceneEmbedder::SceneEmbedder(const TensorArchive& archive, ScalingConfig scaling)
    : encoder_(archive), normalization_(Normalization::from_archive(archive)), scaling_(scaling) {}

Embedding SceneEmbedder::embed(const Scene& scene, Modality modality) const {
  const auto composite = compose_bands(scene, modality, scaling_);
  return encoder_.encode(preprocess_image(composite, encoder_.config(), normalization_));
}

VectorF SceneEmbedder::features(const Scene& scene, const FeatureSpec& spec) const {
  const Embedding optical = embed(scene, spec.modality);
  if (!spec.with_sar) return optical.values;
  return fuse_radar_features(optical, embed(scene, Modality::S1_SARFC));
}

VectorF SceneEmbedder::features(const ManifestRecord& record, const FeatureSpec& spec) const {
  Scene scene = load_scene(record, required_bands(spec));
  return features(scene, spec);
}

std::vector<std::string> required_bands(const FeatureSpec& spec) {
  std::vector<std::string> out;
  for (const auto& b : modality_bands(spec.modality))
    if (!b.empty()) out.push_back(b);
  if (spec.with_sar) {
    out.push_back("VV");
    out.push_back("VH");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<VectorF> compute_features(const std::vector<const ManifestRecord*>& records,
                                      const SceneEmbedder& embedder, const FeatureSpec& spec,
                                      int threads) {
  std::vector<VectorF> out(records.size());
  parallel_for(records.size(), threads,
               [&](std::size_t i) { out[i] = embedder.features(*records[i], spec); });
  return out;
}

TensorArchive make_embedding_cache(const std::vector<std::string>& ids,
                                   const std::vector<VectorF>& features, const FeatureSpec& spec,
                                   const std::string& model_id) {
  if (ids.size() != features.size()) throw Error(Errc::LengthMismatch, "ids and features differ");
  TensorArchive cache;
  std::uint64_t dim = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& f = features[i];
    dim = static_cast<std::uint64_t>(f.size());
    cache.entries[ids[i]] = Tensor({dim}, std::vector<float>(f.data(), f.data() + f.size()));
  }
  cache.metadata["feature_spec"] = spec.tag();
  cache.metadata["model_id"] = model_id;
  cache.metadata["dim"] = std::to_string(dim);
  return cache;
}

std::map<std::string, VectorF> read_embedding_cache(const TensorArchive& cache,
                                                    const FeatureSpec& expected) {
  if (cache.meta("feature_spec") != expected.tag())
    throw Error(Errc::InvalidArgument, "embedding cache holds " + cache.meta("feature_spec") +
                                           " features, expected " + expected.tag());
  std::map<std::string, VectorF> out;
  for (const auto& [id, t] : cache.entries)
    out[id] = Eigen::Map<const VectorF>(t.data().data(), static_cast<Eigen::Index>(t.size()));
  return out;
}

std::vector<LabeledVector> labeled_examples(const std::vector<const ManifestRecord*>& records,
                                            const std::vector<VectorF>& features,
                                            const LabelThresholds& thresholds) {
  if (records.size() != features.size())
    throw Error(Errc::LengthMismatch, "records and features differ in length");
  std::vector<LabeledVector> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto label = scene_label(*records[i], thresholds);
    if (label == SceneLabel::Cloudy) out.push_back({features[i], 1});
    else if (label == SceneLabel::Clear) out.push_back({features[i], 0});
  }
  return out;
}

}  // namespace cloudgate
