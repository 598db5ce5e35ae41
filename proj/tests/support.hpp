#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "cloudgate/encoder.hpp"
#include "cloudgate/probe.hpp"
#include "cloudgate/raster.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return CLOUDGATE_TEST_DATA; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cloudgate-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  return nlohmann::json::parse(read_text(p));
}

template <typename T>
cloudgate::Matrix<T> random_matrix(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  cloudgate::Matrix<T> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<T>(d(rng));
  return m;
}

inline cloudgate::VectorF random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  cloudgate::VectorF v(dim);
  for (int i = 0; i < dim; ++i) v[i] = d(rng);
  return v / v.norm();
}

/// Two Gaussian classes with unit per-coordinate spread whose means lie
/// `separation` apart along a random direction; alternating labels.
inline std::vector<cloudgate::LabeledVector> separable_dataset(int n, int dim, double separation,
                                                               std::mt19937_64& rng) {
  const cloudgate::VectorF dir = random_unit(dim, rng);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  std::vector<cloudgate::LabeledVector> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& ex = out[static_cast<std::size_t>(i)];
    ex.label = i % 2;
    ex.features.resize(dim);
    for (int j = 0; j < dim; ++j) ex.features[j] = noise(rng);
    ex.features += dir * static_cast<float>((ex.label ? 0.5 : -0.5) * separation);
  }
  return out;
}

inline cloudgate::Raster constant_raster(int h, int w, float value) { return {h, w, value}; }

/// Writes a small on-disk dataset: every scene carries B2..B7 as 16-bit PNG,
/// VV/VH as float TIFF and a cloud mask; no explicit labels, so labels come
/// from the masks. Even-numbered scenes are cloudy (bright, 25% cloud
/// pixels), odd ones clear. Returns the manifest path.
inline std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir,
                                                     const std::string& dataset, int per_split,
                                                     std::uint64_t seed, int size = 16) {
  using cloudgate::Raster;
  using cloudgate::RasterEncoding;
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 150.0f);
  const bool sparcs = dataset == "SPARCS";
  std::string manifest;
  int n = 0;
  for (const char* split : {"train", "test"}) {
    for (int i = 0; i < per_split; ++i, ++n) {
      const bool cloudy = n % 2 == 0;
      const std::string id = dataset + "-" + std::to_string(n);
      nlohmann::json rec{{"id", id}, {"dataset", dataset}, {"split", split}};
      nlohmann::json bands = nlohmann::json::object();
      int b = 0;
      for (const char* name : {"B2", "B3", "B4", "B5", "B6", "B7"}) {
        Raster r(size, size);
        const float base = (cloudy ? 2600.0f : 500.0f) + 120.0f * static_cast<float>(b++);
        for (auto& v : r.data) v = std::max(0.0f, base + noise(rng));
        const std::string file = id + "_" + name + ".png";
        cloudgate::write_raster(r, dir / file, RasterEncoding::U16);
        bands[name] = file;
      }
      for (const char* name : {"VV", "VH"}) {
        Raster r(size, size);
        for (auto& v : r.data) v = (cloudy ? -8.0f : -18.0f) + noise(rng) / 100.0f;
        const std::string file = id + "_" + name + ".tif";
        cloudgate::write_raster(r, dir / file, RasterEncoding::F32);
        bands[name] = file;
      }
      rec["bands"] = bands;
      Raster mask(size, size, sparcs ? 4.0f : 0.0f);
      if (cloudy)
        for (std::size_t k = 0; k < mask.size() / 4; ++k) mask.data[k] = sparcs ? 5.0f : 1.0f;
      cloudgate::write_raster(mask, dir / (id + "_mask.png"), RasterEncoding::U8);
      rec["mask"] = id + "_mask.png";
      manifest += rec.dump() + "\n";
    }
  }
  const auto path = dir / "manifest.jsonl";
  write_text(path, manifest);
  return path;
}

}  // namespace testing
