#include "cloudgate/ingest.hpp"

#include <algorithm>
#include <cmath>

#include "cloudgate/error.hpp"

namespace cloudgate {

std::string_view to_string(Sensor sensor) {
  switch (sensor) {
    case Sensor::Sentinel2: return "Sentinel2";
    case Sensor::Landsat8: return "Landsat8";
    case Sensor::Sentinel1: return "Sentinel1";
  }
  return "?";
}

Sensor sensor_from_string(std::string_view s) {
  if (s == "Sentinel2" || s == "S2") return Sensor::Sentinel2;
  if (s == "Landsat8" || s == "L8") return Sensor::Landsat8;
  if (s == "Sentinel1" || s == "S1") return Sensor::Sentinel1;
  throw Error(Errc::InvalidArgument, "unknown sensor '" + std::string(s) + "'");
}

std::string_view modality_tag(Modality modality) {
  switch (modality) {
    case Modality::S2_RGB: return "S2/RGB";
    case Modality::L8_RGB: return "L8/RGB";
    case Modality::L8_B6B5B4: return "L8/B6-B4";
    case Modality::S1_SARFC: return "S1/SAR";
  }
  return "?";
}

Modality modality_from_tag(std::string_view tag) {
  for (auto m : {Modality::S2_RGB, Modality::L8_RGB, Modality::L8_B6B5B4, Modality::S1_SARFC})
    if (tag == modality_tag(m)) return m;
  throw Error(Errc::InvalidArgument, "unknown modality '" + std::string(tag) + "'");
}

std::array<std::string, 3> modality_bands(Modality modality) {
  switch (modality) {
    case Modality::S2_RGB:
    case Modality::L8_RGB: return {"B4", "B3", "B2"};
    case Modality::L8_B6B5B4: return {"B6", "B5", "B4"};
    case Modality::S1_SARFC: return {"VV", "VH", ""};
  }
  return {};
}

std::string_view to_string(SceneLabel label) {
  switch (label) {
    case SceneLabel::Cloudy: return "cloudy";
    case SceneLabel::Clear: return "clear";
    case SceneLabel::Unknown: return "unknown";
    case SceneLabel::Excluded: return "excluded";
  }
  return "?";
}

void harmonize_bands(Scene& scene) {
  int h = 0, w = 0;
  for (const auto& [name, r] : scene.bands)
    if (static_cast<long>(r.height) * r.width > static_cast<long>(h) * w) {
      h = r.height;
      w = r.width;
    }
  for (auto& [name, r] : scene.bands) r = resample_nearest(r, h, w);
}

namespace {

const Raster& band(const Scene& scene, const std::string& name) {
  auto it = scene.bands.find(name);
  if (it == scene.bands.end())
    throw Error(Errc::MissingBand, "scene '" + scene.id + "' has no band " + name);
  return it->second;
}

void check_same_grid(const Raster& a, const Raster& b, const Scene& scene) {
  if (a.height != b.height || a.width != b.width)
    throw Error(Errc::ShapeMismatch, "bands of scene '" + scene.id + "' differ in size");
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace

double percentile(std::vector<float> values, double pct) {
  if (values.empty()) throw Error(Errc::Empty, "percentile of no values");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (static_cast<double>(values[hi]) - values[lo]) * frac;
}

BandComposite compose_bands(const Scene& scene, Modality modality, const ScalingConfig& scaling) {
  if (modality == Modality::S1_SARFC) return sar_composite(scene, scaling);
  const auto names = modality_bands(modality);
  std::array<const Raster*, 3> src{};
  for (int c = 0; c < 3; ++c) src[c] = &band(scene, names[c]);
  for (int c = 1; c < 3; ++c) check_same_grid(*src[0], *src[c], scene);

  BandComposite out;
  out.modality = modality;
  out.channels = Image(3, src[0]->height, src[0]->width);
  const std::size_t plane = out.channels.plane_size();

  if (modality == Modality::S2_RGB) {
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const float reflectance = src[c]->data[i] / scaling.s2_dn_scale;
        out.channels.data[c * plane + i] = clamp01(std::min(reflectance, scaling.s2_cap) / scaling.s2_cap);
      }
    return out;
  }

  std::vector<float> pooled;
  pooled.reserve(plane * 3);
  for (int c = 0; c < 3; ++c) pooled.insert(pooled.end(), src[c]->data.begin(), src[c]->data.end());
  const double lo = percentile(pooled, scaling.l8_low_percentile);
  const double hi = percentile(std::move(pooled), scaling.l8_high_percentile);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = src[c]->data[i];
      // A constant scene has no spread to stretch; treat it as reflectance.
      const double scaled = hi > lo ? (v - lo) / (hi - lo) : v;
      out.channels.data[c * plane + i] = clamp01(static_cast<float>(scaled));
    }
  return out;
}

BandComposite sar_composite(const Scene& scene, const ScalingConfig& scaling) {
  const Raster& vv = band(scene, "VV");
  const Raster& vh = band(scene, "VH");
  check_same_grid(vv, vh, scene);
  BandComposite out;
  out.modality = Modality::S1_SARFC;
  out.channels = Image(3, vv.height, vv.width);
  const std::size_t plane = out.channels.plane_size();
  const float range = scaling.sar_db_max - scaling.sar_db_min;
  for (std::size_t i = 0; i < plane; ++i) {
    const float a = clamp01((vv.data[i] - scaling.sar_db_min) / range);
    const float b = clamp01((vh.data[i] - scaling.sar_db_min) / range);
    out.channels.data[i] = a;
    out.channels.data[plane + i] = b;
    out.channels.data[2 * plane + i] = (a + b) / 2.0f;
  }
  return out;
}

Normalization Normalization::from_archive(const TensorArchive& archive) {
  Normalization n;
  if (archive.contains("preprocess.mean") || archive.contains("preprocess.std")) {
    const auto& mean = archive.at("preprocess.mean");
    const auto& std = archive.at("preprocess.std");
    if (mean.size() != 3 || std.size() != 3)
      throw Error(Errc::ShapeMismatch, "preprocess constants must have 3 entries");
    for (int c = 0; c < 3; ++c) {
      n.mean[c] = mean[c];
      n.std[c] = std[c];
    }
  }
  return n;
}

namespace {

double bicubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct Taps {
  int first = 0;
  std::vector<double> weights;
};

std::vector<Taps> resample_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  std::vector<Taps> taps(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(static_cast<int>(center - support + 0.5), 0);
    const int hi = std::min(static_cast<int>(center + support + 0.5), in_size);
    Taps& t = taps[o];
    t.first = lo;
    double total = 0.0;
    for (int i = lo; i < hi; ++i) {
      const double w = bicubic((i - center + 0.5) / filter_scale);
      t.weights.push_back(w);
      total += w;
    }
    if (total != 0.0)
      for (auto& w : t.weights) w /= total;
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& in, int out_height, int out_width) {
  Image horizontal = in;
  if (out_width != in.width) {
    const auto taps = resample_taps(in.width, out_width);
    horizontal = Image(in.channels, in.height, out_width);
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < out_width; ++x) {
          double acc = 0.0;
          const auto& t = taps[x];
          for (std::size_t k = 0; k < t.weights.size(); ++k)
            acc += in.at(c, y, t.first + static_cast<int>(k)) * t.weights[k];
          horizontal.at(c, y, x) = static_cast<float>(acc);
        }
  }
  if (out_height == in.height) return horizontal;
  const auto taps = resample_taps(in.height, out_height);
  Image out(in.channels, out_height, out_width);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out_height; ++y) {
      const auto& t = taps[y];
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k)
          acc += horizontal.at(c, t.first + static_cast<int>(k), x) * t.weights[k];
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  return out;
}

Image preprocess_image(const BandComposite& composite, int resolution,
                       const Normalization& normalization) {
  const Image& src = composite.channels;
  if (src.channels != 3 || src.height <= 0 || src.width <= 0)
    throw Error(Errc::ShapeMismatch, "composite must be 3 x H x W");
  Image out = resize_bicubic(src, resolution, resolution);
  const std::size_t plane = out.plane_size();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out.data[c * plane + i];
      v = (v - normalization.mean[c]) / normalization.std[c];
    }
  return out;
}

Image preprocess_image(const BandComposite& composite, const EncoderConfig& config,
                       const Normalization& normalization) {
  return preprocess_image(composite, config.image_resolution, normalization);
}

MaskScheme MaskScheme::cloudsen12() { return {"CloudSEN12", {1, 2}, {0, 1, 2, 3}}; }

MaskScheme MaskScheme::sparcs() { return {"SPARCS", {5}, {0, 1, 2, 3, 4, 5, 6}}; }

double cloud_fraction(const Raster& mask, const MaskScheme& scheme) {
  if (mask.size() == 0) throw Error(Errc::Empty, "empty cloud mask");
  std::size_t cloudy = 0;
  for (float v : mask.data) {
    const int cls = static_cast<int>(std::lround(v));
    if (static_cast<float>(cls) != v || !scheme.known_classes.count(cls))
      throw Error(Errc::UnknownMaskClass,
                  "value " + std::to_string(v) + " is not a " + scheme.name + " mask class");
    if (scheme.cloud_classes.count(cls)) ++cloudy;
  }
  return static_cast<double>(cloudy) / static_cast<double>(mask.size());
}

SceneLabel label_from_fraction(double fraction, const LabelThresholds& t) {
  if (fraction >= t.cloudy_min) return SceneLabel::Cloudy;
  if (fraction <= t.clear_max) return SceneLabel::Clear;
  return SceneLabel::Excluded;
}

SceneLabel derive_label(const Raster& mask, const MaskScheme& scheme,
                        const LabelThresholds& thresholds) {
  return label_from_fraction(cloud_fraction(mask, scheme), thresholds);
}

}  // namespace cloudgate
