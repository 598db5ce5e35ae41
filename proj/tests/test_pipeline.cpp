#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <stdexcept>

#include "cloudgate/error.hpp"
#include "cloudgate/pipeline.hpp"
#include "cloudgate/toy_model.hpp"
#include "support.hpp"

using namespace cloudgate;

TEST_CASE("feature spec tags") {
  CHECK(FeatureSpec{Modality::S2_RGB, true}.tag() == "S2/RGB+SAR");
  CHECK(FeatureSpec{Modality::L8_B6B5B4, false}.tag() == "L8/B6-B4");
  for (const char* tag : {"S2/RGB", "S2/RGB+SAR", "L8/RGB", "L8/B6-B4", "S1/SAR"})
    CHECK(FeatureSpec::from_tag(tag).tag() == tag);
  CHECK_THROWS_AS(FeatureSpec::from_tag("S1/SAR+SAR"), Error);
  CHECK_THROWS_AS(FeatureSpec::from_tag("RGB"), Error);
}

TEST_CASE("required bands") {
  CHECK(required_bands({Modality::S2_RGB, false}) == std::vector<std::string>{"B2", "B3", "B4"});
  CHECK(required_bands({Modality::S2_RGB, true}) ==
        std::vector<std::string>{"B2", "B3", "B4", "VH", "VV"});
  CHECK(required_bands({Modality::L8_B6B5B4, false}) == std::vector<std::string>{"B4", "B5", "B6"});
  CHECK(required_bands({Modality::S1_SARFC, false}) == std::vector<std::string>{"VH", "VV"});
}

TEST_CASE("parallel_for runs every index once and propagates failures") {
  for (int threads : {1, 2, 7}) {
    std::vector<std::atomic<int>> hits(101);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
  CHECK_THROWS_AS(parallel_for(50, 4,
                               [](std::size_t i) {
                                 if (i == 17) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("worker count honours the environment") {
  ::setenv("CLOUDGATE_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("CLOUDGATE_THREADS", "zero", 1);
  CHECK(worker_count() >= 1);
  ::unsetenv("CLOUDGATE_THREADS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("scene features from disk") {
  testing::TempDir dir;
  const auto manifest_path = testing::write_synthetic_dataset(dir.path(), "CloudSEN12", 4, 1);
  const auto manifest = load_manifest(manifest_path);
  const auto archive = make_toy_archive({}, 12);
  const SceneEmbedder embedder(archive);
  const auto records = manifest.in_split(Split::Test);
  REQUIRE(records.size() == 4);

  const FeatureSpec rgb{Modality::S2_RGB, false};
  const FeatureSpec fused{Modality::S2_RGB, true};
  const auto serial = compute_features(records, embedder, rgb, 1);
  const auto threaded = compute_features(records, embedder, rgb, 3);
  REQUIRE(serial.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(serial[i] == threaded[i]);
    CHECK(serial[i].size() == 32);
    CHECK(std::abs(serial[i].norm() - 1.0f) < 1e-5f);
  }
  const auto f = embedder.features(*records[0], fused);
  REQUIRE(f.size() == 64);
  CHECK(f.head(32) == serial[0]);
  const Scene scene = load_scene(*records[0]);
  CHECK(f.tail(32) == embedder.embed(scene, Modality::S1_SARFC).values);

  const auto examples = labeled_examples(records, serial, {});
  REQUIRE(examples.size() == 4);
  CHECK(examples[0].label == 1);
  CHECK(examples[1].label == 0);
  const auto strict = labeled_examples(records, serial, {.clear_max = 0.0, .cloudy_min = 0.5});
  CHECK(strict.size() == 2);  // cloudy scenes have 25% cloud and drop out
  CHECK_THROWS_AS(labeled_examples(records, {serial[0]}, {}), Error);
}

TEST_CASE("embedding cache round trip") {
  std::mt19937_64 rng(2);
  std::vector<std::string> ids{"b", "a", "c"};
  std::vector<VectorF> feats{testing::random_unit(8, rng), testing::random_unit(8, rng),
                             testing::random_unit(8, rng)};
  const FeatureSpec spec{Modality::L8_RGB, false};
  const auto cache = make_embedding_cache(ids, feats, spec, "toy");
  CHECK(cache.meta("feature_spec") == "L8/RGB");
  CHECK(cache.meta("model_id") == "toy");
  CHECK(cache.meta("dim") == "8");
  CHECK(serialize_archive(cache) == serialize_archive(make_embedding_cache(ids, feats, spec, "toy")));
  const auto back = read_embedding_cache(parse_archive(serialize_archive(cache), {}), spec);
  REQUIRE(back.size() == 3);
  CHECK(back.at("a") == feats[1]);
  CHECK_THROWS_AS(read_embedding_cache(cache, {Modality::L8_B6B5B4, false}), Error);
  CHECK_THROWS_AS(make_embedding_cache({"a"}, feats, spec, "toy"), Error);
}
