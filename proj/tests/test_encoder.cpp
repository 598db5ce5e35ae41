#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "cloudgate/encoder.hpp"
#include "cloudgate/error.hpp"
#include "cloudgate/parity.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/tokenizer.hpp"
#include "cloudgate/toy_model.hpp"
#include "support.hpp"

using namespace cloudgate;

namespace {

struct Reference {
  TensorArchive weights;
  TensorArchive vjp;
  ParityBundle parity;
};

const Reference& reference(const std::string& activation) {
  static std::map<std::string, Reference> cache;
  auto it = cache.find(activation);
  if (it == cache.end()) {
    const auto dir = testing::data_dir();
    Reference r;
    r.weights = load_archive(dir / ("ref_" + activation + ".cgt"));
    r.vjp = load_archive(dir / ("ref_" + activation + "_vjp.cgt"), {});
    r.parity = load_parity(dir / ("ref_" + activation + "_parity.cgt"));
    it = cache.emplace(activation, std::move(r)).first;
  }
  return it->second;
}

TokenSequence sequence_from(const Tensor& ids, int sot) {
  TokenSequence t;
  t.ids.fill(0);
  t.length = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    t.ids[i] = static_cast<int>(ids[i]);
    if (t.ids[i] != 0 || i == 0) t.length = static_cast<int>(i) + 1;
  }
  CHECK(t.ids[0] == sot);
  return t;
}

int eot_of(const TokenSequence& t) { return t.length - 1; }

Eigen::VectorXd as_double(const Tensor& t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<Eigen::Index>(i)] = t[i];
  return v;
}

TokenSequence random_sequence(std::mt19937_64& rng, const EncoderConfig& cfg, int max_len = 30) {
  TokenSequence t;
  t.ids.fill(0);
  const int sot = cfg.vocab_size - 2, eot = cfg.vocab_size - 1;
  const int n = static_cast<int>(rng() % static_cast<std::uint64_t>(max_len));
  t.ids[0] = sot;
  for (int i = 1; i <= n; ++i) t.ids[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(sot));
  t.ids[static_cast<std::size_t>(n + 1)] = eot;
  t.length = n + 2;
  return t;
}

double max_rel_error(const Matrix<double>& a, const Matrix<double>& b) {
  const double scale = std::max(1e-8, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("config is read from tensor shapes and metadata") {
  const auto& ref = reference("quick_gelu");
  const auto cfg = EncoderConfig::from_archive(ref.weights);
  CHECK(cfg.embed_dim == 16);
  CHECK(cfg.text.width == 32);
  CHECK(cfg.text.layers == 2);
  CHECK(cfg.text.heads == 2);
  CHECK(cfg.vision.width == 32);
  CHECK(cfg.grid() == 4);
  CHECK(cfg.activation == Activation::QuickGelu);
  CHECK(EncoderConfig::from_archive(reference("gelu").weights).activation == Activation::Gelu);
}

TEST_CASE("text embeddings match the reference implementation") {
  for (const std::string act : {"quick_gelu", "gelu"}) {
    INFO(act);
    const auto& ref = reference(act);
    const TextEncoder enc(ref.weights);
    const int sot = enc.config().vocab_size - 2;
    REQUIRE(ref.parity.prompts.size() == 4);
    for (const auto& p : ref.parity.prompts) {
      TokenSequence t;
      t.ids.fill(0);
      for (std::size_t i = 0; i < p.token_ids.size(); ++i) t.ids[i] = p.token_ids[i];
      t.length = 1;
      for (int i = 0; i < kContextLength; ++i)
        if (t.ids[static_cast<std::size_t>(i)] != 0) t.length = i + 1;
      CHECK(t.ids[0] == sot);

      // double path: the reference ran in float64 on the same float32 weights
      const auto rows = enc.embed_tokens(t).cast<double>().eval();
      const Eigen::VectorXd d = enc.forward<double>(rows, eot_of(t));
      const Eigen::VectorXd want = p.text_embedding.cast<double>();
      CHECK((d - want).cwiseAbs().maxCoeff() < 1e-6);

      // float production path
      const auto e = enc.encode(t);
      CHECK(e.normalized);
      CHECK((e.values.cast<double>() - want).cwiseAbs().maxCoeff() < 1e-4);
    }
  }
}

TEST_CASE("image embeddings match the reference implementation") {
  for (const std::string act : {"quick_gelu", "gelu"}) {
    INFO(act);
    const auto& ref = reference(act);
    const ImageEncoder enc(ref.weights);
    for (const auto& img : ref.parity.images) {
      const auto e = enc.encode(img.pixels);
      CHECK(e.normalized);
      const Eigen::VectorXd got = e.values.cast<double>();
      const Eigen::VectorXd want = img.image_embedding.cast<double>();
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-4);
      CHECK(got.dot(want) > 0.99999);
    }
  }
}

TEST_CASE("vector-Jacobian products match reference autograd") {
  for (const std::string act : {"quick_gelu", "gelu"}) {
    INFO(act);
    const auto& ref = reference(act);
    const TextEncoder enc(ref.weights);
    const int n = static_cast<int>(ref.vjp.meta_int("case_count"));
    REQUIRE(n == 6);
    for (int k = 0; k < n; ++k) {
      const std::string p = "case." + std::to_string(k) + ".";
      const auto t = sequence_from(ref.vjp.at(p + "token_ids"), enc.config().vocab_size - 2);
      const Eigen::VectorXd cot = as_double(ref.vjp.at(p + "cotangent"));
      const auto rows = enc.embed_tokens(t).cast<double>().eval();
      const auto& g = ref.vjp.at(p + "grad");
      Matrix<double> want(kContextLength, enc.width());
      for (int i = 0; i < kContextLength; ++i)
        for (int j = 0; j < enc.width(); ++j)
          want(i, j) = g[static_cast<std::size_t>(i * enc.width() + j)];

      const Eigen::VectorXd emb = enc.forward<double>(rows, eot_of(t));
      CHECK((emb - as_double(ref.vjp.at(p + "embedding"))).cwiseAbs().maxCoeff() < 1e-6);

      const Matrix<double> got = enc.backward<double>(rows, eot_of(t), cot);
      CHECK(max_rel_error(got, want) < 1e-5);

      const auto gf = enc.vjp(enc.embed_tokens(t), eot_of(t), cot.cast<float>());
      CHECK(max_rel_error(gf.cast<double>(), want) < 1e-3);
    }
  }
}

TEST_CASE("factorization: encode equals encode_from_embeddings of embed_tokens") {
  const auto archive = make_toy_archive({}, 3);
  const TextEncoder enc(archive);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_sequence(rng, enc.config());
    const auto direct = encode_text(t, archive);
    const auto composed = encode_text_from_embeddings(embed_tokens(t, archive), eot_of(t), archive);
    CHECK(direct.values == composed.values);
  }
}

TEST_CASE("embed_tokens gathers table rows") {
  const auto archive = make_toy_archive({}, 4);
  const TextEncoder enc(archive);
  std::mt19937_64 rng(1);
  const auto t = random_sequence(rng, enc.config());
  const auto rows = enc.embed_tokens(t);
  REQUIRE(rows.rows() == kContextLength);
  REQUIRE(rows.cols() == enc.width());
  const auto& table = archive.at("text.token_embedding");
  for (int i = 0; i < kContextLength; ++i)
    for (int j = 0; j < enc.width(); ++j)
      CHECK(rows(i, j) == table[static_cast<std::size_t>(t.ids[static_cast<std::size_t>(i)] * enc.width() + j)]);
}

TEST_CASE("outputs are unit norm") {
  const auto archive = make_toy_archive({}, 5);
  std::mt19937_64 rng(2);
  const TextEncoder enc(archive);
  for (int i = 0; i < 20; ++i) {
    const auto e = enc.encode(random_sequence(rng, enc.config()));
    CHECK(std::abs(e.values.norm() - 1.0f) < 1e-5f);
  }
  Image img(3, 32, 32);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : img.data) v = n(rng);
  const auto e = encode_image(img, archive);
  CHECK(e.dim() == 32);
  CHECK(std::abs(e.values.norm() - 1.0f) < 1e-5f);
}

TEST_CASE("rows after EOT cannot influence the output") {
  const auto archive = make_toy_archive({}, 6);
  const TextEncoder enc(archive);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int i = 0; i < 10; ++i) {
    const auto t = random_sequence(rng, enc.config());
    auto rows = enc.embed_tokens(t).cast<double>().eval();
    const auto base = enc.forward<double>(rows, eot_of(t), true);
    CHECK((base - enc.forward<double>(rows, eot_of(t))).cwiseAbs().maxCoeff() < 1e-12);
    for (int r = eot_of(t) + 1; r < kContextLength; ++r)
      for (int c = 0; c < rows.cols(); ++c) rows(r, c) += n(rng);
    const auto perturbed = enc.forward<double>(rows, eot_of(t), true);
    CHECK((base - perturbed).cwiseAbs().maxCoeff() < 1e-12);
    const auto g = enc.backward<double>(rows, eot_of(t), Eigen::VectorXd::Ones(32));
    CHECK(g.bottomRows(kContextLength - eot_of(t) - 1).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("all-zero inputs stay finite") {
  const auto archive = make_toy_archive({}, 7);
  const TextEncoder enc(archive);
  const MatrixF rows = MatrixF::Zero(kContextLength, enc.width());
  const auto e = enc.encode_from_embeddings(rows, 5);
  CHECK(e.values.allFinite());
  CHECK(enc.vjp(rows, 5, VectorF::Ones(32)).allFinite());
  const auto img = encode_image(Image(3, 32, 32, 0.0f), archive);
  CHECK(img.values.allFinite());
}

TEST_CASE("gradients agree with central differences on toy configs") {
  std::mt19937_64 rng(11);
  const std::array<ToyModelConfig, 3> configs{
      ToyModelConfig{.embed_dim = 8, .text_width = 8, .text_layers = 1, .text_heads = 1},
      ToyModelConfig{.embed_dim = 12, .text_width = 16, .text_layers = 2, .text_heads = 4,
                     .activation = Activation::Gelu},
      ToyModelConfig{.embed_dim = 16, .text_width = 24, .text_layers = 2, .text_heads = 3},
  };
  std::uint64_t seed = 100;
  for (const auto& cfg : configs) {
    const auto archive = make_toy_archive(cfg, seed++);
    const TextEncoder enc(archive);
    const auto t = random_sequence(rng, enc.config(), 8);
    const int eot = eot_of(t);
    const auto rows = enc.embed_tokens(t).cast<double>().eval();
    Eigen::VectorXd cot(cfg.embed_dim);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : cot) v = n(rng);
    const auto g = enc.backward<double>(rows, eot, cot);
    const double h = 1e-5;
    Matrix<double> fd = Matrix<double>::Zero(rows.rows(), rows.cols());
    for (int r = 0; r <= eot; ++r)
      for (int c = 0; c < rows.cols(); ++c) {
        auto p = rows, m = rows;
        p(r, c) += h;
        m(r, c) -= h;
        fd(r, c) = (cot.dot(enc.forward<double>(p, eot)) - cot.dot(enc.forward<double>(m, eot))) / (2 * h);
      }
    CHECK(max_rel_error(g, fd) < 1e-6);
  }
}

TEST_CASE("vjp is linear in the cotangent") {
  const auto archive = make_toy_archive({}, 8);
  const TextEncoder enc(archive);
  std::mt19937_64 rng(4);
  const auto t = random_sequence(rng, enc.config());
  const auto rows = enc.embed_tokens(t).cast<double>().eval();
  Eigen::VectorXd a = Eigen::VectorXd::Random(32), b = Eigen::VectorXd::Random(32);
  const auto ga = enc.backward<double>(rows, eot_of(t), a);
  const auto gb = enc.backward<double>(rows, eot_of(t), b);
  const auto gab = enc.backward<double>(rows, eot_of(t), (2.0 * a - 3.0 * b).eval());
  CHECK((gab - (2.0 * ga - 3.0 * gb)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(enc.backward<double>(rows, eot_of(t), Eigen::VectorXd::Zero(32)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape errors") {
  const auto archive = make_toy_archive({}, 9);
  const TextEncoder enc(archive);
  auto expect = [](auto fn) {
    try {
      fn();
      FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ShapeMismatch);
    }
  };
  expect([&] { enc.encode_from_embeddings(MatrixF::Zero(76, enc.width()), 3); });
  expect([&] { enc.encode_from_embeddings(MatrixF::Zero(77, enc.width() + 1), 3); });
  expect([&] { enc.encode_from_embeddings(MatrixF::Zero(77, enc.width()), 77); });
  expect([&] { enc.encode_from_embeddings(MatrixF::Zero(77, enc.width()), -1); });
  expect([&] { enc.vjp(MatrixF::Zero(77, enc.width()), 3, VectorF::Zero(5)); });
  expect([&] { encode_image(Image(3, 31, 32), archive); });
  expect([&] { encode_image(Image(1, 32, 32), archive); });
}

TEST_CASE("logit scale is read as a log value") {
  const auto& ref = reference("quick_gelu");
  CHECK(logit_scale(ref.weights) ==
        doctest::Approx(std::exp(ref.weights.at("logit_scale")[0])).epsilon(1e-6));
  auto a = make_toy_archive({.with_logit_scale = false}, 1);
  CHECK(logit_scale(a) == 100.0f);
}

TEST_CASE("activation variants differ") {
  auto a = make_toy_archive({}, 10);
  auto b = a;
  b.metadata["activation"] = "gelu";
  std::mt19937_64 rng(5);
  const auto t = random_sequence(rng, EncoderConfig::from_archive(a));
  CHECK(encode_text(t, a).values != encode_text(t, b).values);
  a.metadata["activation"] = "relu";
  CHECK_THROWS_AS(EncoderConfig::from_archive(a), Error);
}
