#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "cloudgate/error.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/toy_model.hpp"
#include "support.hpp"

using namespace cloudgate;

namespace {

TensorArchive random_archive(std::mt19937_64& rng) {
  TensorArchive a;
  std::uniform_int_distribution<int> n_entries(0, 6), rank(1, 4), dim(1, 5), n_meta(0, 5);
  std::uniform_int_distribution<int> ch(0, 61);
  std::normal_distribution<float> value(0.0f, 100.0f);
  auto name = [&] {
    std::string s;
    const int len = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) {
      const int c = ch(rng);
      s += static_cast<char>(c < 26 ? 'a' + c : c < 52 ? 'A' + c - 26 : '0' + c - 52);
    }
    return s + "\xc3\xa9";  // non-ASCII UTF-8 in every name
  };
  const int n = n_entries(rng);
  for (int i = 0; i < n; ++i) {
    std::vector<std::uint64_t> shape(static_cast<std::size_t>(rank(rng)));
    for (auto& d : shape) d = static_cast<std::uint64_t>(dim(rng));
    Tensor t(shape);
    for (auto& v : t.data()) v = value(rng);
    if (t.size() > 1) t[0] = -0.0f;
    if (t.size() > 2) t[1] = std::numeric_limits<float>::denorm_min();
    a.entries[name()] = std::move(t);
  }
  const int m = n_meta(rng);
  for (int i = 0; i < m; ++i) a.metadata[name()] = name() + " value";
  return a;
}

std::string tiny_bytes() {
  TensorArchive a;
  a.entries["w"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  a.metadata["k"] = "v";
  return serialize_archive(a);
}

}  // namespace

TEST_CASE("tensor shape and data length agree") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), Error);
}

TEST_CASE("one tensor archive round trip") {
  TensorArchive a;
  a.entries["w"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = parse_archive(serialize_archive(a), {});
  REQUIRE(b.entries.count("w"));
  CHECK(b.at("w").shape() == std::vector<std::uint64_t>{2, 3});
  CHECK(b == a);
}

TEST_CASE("metadata-only archive saves and loads") {
  testing::TempDir dir;
  TensorArchive a;
  a.metadata["note"] = "no tensors";
  save_archive(a, dir / "m.cgt");
  const std::array<std::string_view, 1> keys{"note"};
  const auto b = load_archive(dir / "m.cgt", keys);
  CHECK(b.entries.empty());
  CHECK(b.meta("note") == "no tensors");
}

TEST_CASE("saving is deterministic and insertion-order independent") {
  TensorArchive a, b;
  a.entries["z"] = Tensor({1}, {1.0f});
  a.entries["a"] = Tensor({2}, {2.0f, 3.0f});
  b.entries["a"] = Tensor({2}, {2.0f, 3.0f});
  b.entries["z"] = Tensor({1}, {1.0f});
  CHECK(serialize_archive(a) == serialize_archive(a));
  CHECK(serialize_archive(a) == serialize_archive(b));
}

TEST_CASE("archives differing in one float produce different files that both load") {
  TensorArchive a;
  a.entries["w"] = Tensor({3}, {1.0f, 2.0f, 3.0f});
  TensorArchive b = a;
  b.entries["w"][1] = std::nextafter(2.0f, 3.0f);
  const auto sa = serialize_archive(a), sb = serialize_archive(b);
  CHECK(sa != sb);
  CHECK(parse_archive(sa, {}) == a);
  CHECK(parse_archive(sb, {}) == b);
}

TEST_CASE("fuzzed archives round trip bit-exactly through files") {
  testing::TempDir dir;
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_archive(rng);
    const auto path = dir / ("a" + std::to_string(i) + ".cgt");
    save_archive(a, path);
    const auto b = load_archive(path, {});
    REQUIRE(b.entries.size() == a.entries.size());
    for (const auto& [k, t] : a.entries) CHECK(bitwise_equal(t, b.at(k)));
    CHECK(b.metadata == a.metadata);
    CHECK(serialize_archive(b) == testing::read_text(path));
  }
}

TEST_CASE("parse errors") {
  const auto good = tiny_bytes();

  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(parse_archive(bytes, {}), doctest::Contains("BadMagic"), Error);
    try {
      parse_archive(bytes, {});
    } catch (const Error& e) {
      CHECK(e.code() == Errc::BadMagic);
    }
  }
  SUBCASE("declared 6 floats but 5 stored") {
    // Drop one float from the payload and recompute nothing: the length check fires first.
    auto bytes = good;
    bytes.erase(bytes.size() - 8 - 4, 4);
    try {
      parse_archive(bytes, {});
      FAIL("expected CorruptArchive");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::CorruptArchive);
    }
  }
  SUBCASE("every truncation is rejected") {
    for (std::size_t n = 0; n < good.size(); ++n)
      CHECK_THROWS_AS(parse_archive(good.substr(0, n), {}), Error);
  }
  SUBCASE("trailing garbage is rejected") {
    CHECK_THROWS_AS(parse_archive(good + "x", {}), Error);
  }
  SUBCASE("flipped payload bit fails the checksum") {
    auto bytes = good;
    bytes[bytes.size() - 9] ^= 0x01;
    try {
      parse_archive(bytes, {});
      FAIL("expected CorruptArchive");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::CorruptArchive);
    }
  }
  SUBCASE("non-finite payload is rejected") {
    TensorArchive a;
    a.entries["w"] = Tensor({1}, {std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(parse_archive(serialize_archive(a), {}), Error);
  }
  SUBCASE("missing required metadata") {
    const std::array<std::string_view, 1> keys{"absent"};
    try {
      parse_archive(good, keys);
      FAIL("expected MissingMetadata");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MissingMetadata);
    }
  }
}

TEST_CASE("model archives require geometry metadata") {
  testing::TempDir dir;
  auto a = make_toy_archive({}, 1);
  save_archive(a, dir / "ok.cgt");
  CHECK_NOTHROW(load_archive(dir / "ok.cgt"));

  auto missing = a;
  missing.metadata.erase("patch_size");
  save_archive(missing, dir / "missing.cgt");
  try {
    load_archive(dir / "missing.cgt");
    FAIL("expected MissingMetadata");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingMetadata);
  }

  auto clip = a;
  clip.metadata["model_id"] = "clip-vit-b32";
  save_archive(clip, dir / "clip.cgt");
  CHECK_THROWS_AS(load_archive(dir / "clip.cgt"), Error);

  CHECK_THROWS_AS(load_archive(dir / "nonexistent.cgt"), Error);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const std::string a = "a";
  CHECK(fnv1a64(std::as_bytes(std::span(a))) == 0xaf63dc4c8601ec8cULL);
  const std::string foobar = "foobar";
  CHECK(fnv1a64(std::as_bytes(std::span(foobar))) == 0x85944171f73967e8ULL);
}

TEST_CASE("archive written by an independent writer loads") {
  const auto a = load_archive(testing::data_dir() / "ref_quick_gelu.cgt");
  CHECK(a.meta("activation") == "quick_gelu");
  CHECK(a.at("text.projection").shape() == std::vector<std::uint64_t>{32, 16});
  CHECK(serialize_archive(a) == testing::read_text(testing::data_dir() / "ref_quick_gelu.cgt"));
}
