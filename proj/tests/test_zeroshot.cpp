#include <doctest.h>

#include <cmath>
#include <random>

#include "cloudgate/error.hpp"
#include "cloudgate/toy_model.hpp"
#include "cloudgate/zeroshot.hpp"
#include "support.hpp"

using namespace cloudgate;

namespace {

Embedding unit(std::initializer_list<float> v) {
  VectorF x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (float f : v) x[i++] = f;
  return Embedding{x.normalized(), true};
}

PromptPair pair_of(const Embedding& pos, const Embedding& neg) {
  PromptPair p;
  p.positive_emb = pos;
  p.negative_emb = neg;
  return p;
}

}  // namespace

TEST_CASE("verdict follows the larger similarity") {
  const auto prompts = pair_of(unit({1, 0}), unit({0, 1}));
  CHECK(classify_zero_shot(unit({0.9f, 0.1f}), prompts).label == Label::Cloudy);
  CHECK(classify_zero_shot(unit({0.1f, 0.9f}), prompts).label == Label::Clear);
  const auto v = classify_zero_shot(unit({1, 0}), prompts);
  CHECK(v.score_positive == doctest::Approx(1.0f));
  CHECK(v.score_negative == doctest::Approx(0.0f));
  CHECK(v.confidence == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-6));
}

TEST_CASE("ties go to cloudy") {
  const auto prompts = pair_of(unit({1, 0}), unit({0, 1}));
  const auto v = classify_zero_shot(unit({1, 1}), prompts);
  CHECK(v.label == Label::Cloudy);
  CHECK(v.confidence == 0.5f);
  CHECK(verdict_from_scores(0.3f, 0.3f).label == Label::Cloudy);
}

TEST_CASE("argmax is invariant to positive scaling of both scores") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> s(-1.0f, 1.0f);
  std::uniform_real_distribution<double> k(-6.0, 6.0);
  for (int i = 0; i < 5000; ++i) {
    const float a = s(rng), b = i % 10 == 0 ? a : s(rng);
    const float scale = static_cast<float>(std::pow(10.0, k(rng)));
    CHECK(verdict_from_scores(a, b).label == verdict_from_scores(scale * a, scale * b).label);
  }
}

TEST_CASE("swapping the prompts flips every non-tied verdict") {
  std::mt19937_64 rng(22);
  std::normal_distribution<float> n(0.0f, 1.0f);
  auto random_unit = [&] {
    VectorF x(8);
    for (auto& v : x) v = n(rng);
    return Embedding{x.normalized(), true};
  };
  for (int i = 0; i < 200; ++i) {
    const auto pos = random_unit(), neg = random_unit(), img = random_unit();
    const auto a = classify_zero_shot(img, pair_of(pos, neg));
    const auto b = classify_zero_shot(img, pair_of(neg, pos));
    if (a.score_positive == a.score_negative) continue;
    CHECK(a.label != b.label);
    CHECK(a.confidence == doctest::Approx(b.confidence));
  }
}

TEST_CASE("confidence lies in [0.5, 1]") {
  for (float d : {-2.0f, -0.5f, 0.0f, 0.01f, 1.0f, 2.0f}) {
    const auto v = verdict_from_scores(d, 0.0f);
    CHECK(v.confidence >= 0.5f);
    CHECK(v.confidence <= 1.0f);
  }
}

TEST_CASE("unnormalized embeddings are rejected") {
  const auto prompts = pair_of(unit({1, 0}), unit({0, 1}));
  try {
    classify_zero_shot(Embedding{VectorF::Constant(2, 3.0f), true}, prompts);
    FAIL("expected NotNormalized");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotNormalized);
  }
  CHECK_THROWS_AS(classify_zero_shot(Embedding{unit({1, 0}).values, false}, prompts), Error);
  CHECK_THROWS_AS(similarity(unit({1, 0}), unit({1, 0, 0})), Error);
}

TEST_CASE("prompt pair from a model and tokenizer") {
  const auto archive = make_toy_archive({}, 2);
  const TextEncoder enc(archive);
  const Tokenizer tok(make_toy_vocabulary());
  const auto p = make_prompt_pair(enc, tok);
  CHECK(p.positive_text == kDefaultPositivePrompt);
  CHECK(p.negative_text == kDefaultNegativePrompt);
  CHECK(p.positive_emb.normalized);
  CHECK(p.positive_emb.values != p.negative_emb.values);
  CHECK(classify_zero_shot(p.positive_emb, p).label == Label::Cloudy);
  CHECK(classify_zero_shot(p.negative_emb, p).label == Label::Clear);
}

TEST_CASE("label strings") {
  CHECK(to_string(Label::Cloudy) == "cloudy");
  CHECK(label_from_string("clear") == Label::Clear);
  CHECK_THROWS_AS(label_from_string("hazy"), Error);
}
