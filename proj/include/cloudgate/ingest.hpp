#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "cloudgate/encoder.hpp"
#include "cloudgate/image.hpp"
#include "cloudgate/raster.hpp"
#include "cloudgate/tensor.hpp"

namespace cloudgate {

enum class Sensor { Sentinel2, Landsat8, Sentinel1 };

enum class Modality { S2_RGB, L8_RGB, L8_B6B5B4, S1_SARFC };

std::string_view to_string(Sensor sensor);
Sensor sensor_from_string(std::string_view s);

/// "S2/RGB", "L8/RGB", "L8/B6-B4", "S1/SAR".
std::string_view modality_tag(Modality modality);
Modality modality_from_tag(std::string_view tag);

/// Source bands in output channel order.
std::array<std::string, 3> modality_bands(Modality modality);

enum class SceneLabel { Cloudy, Clear, Unknown, Excluded };

std::string_view to_string(SceneLabel label);

struct Scene {
  std::string id;
  Sensor sensor = Sensor::Sentinel2;
  std::map<std::string, Raster> bands;
  SceneLabel label = SceneLabel::Unknown;
  std::optional<float> cloud_fraction;
};

/// Resamples every band (nearest neighbour) to the largest band's grid.
void harmonize_bands(Scene& scene);

struct BandComposite {
  Modality modality = Modality::S2_RGB;
  Image channels;  // 3 x H x W, values in [0, 1]
};

/// Radiometric scaling per modality. Sentinel-2: DN / dn_scale, capped at
/// s2_cap and stretched to [0, 1]. Landsat-8: joint low/high percentile
/// stretch over the three composite bands. SAR: dB linearly mapped from
/// [sar_db_min, sar_db_max].
struct ScalingConfig {
  float s2_dn_scale = 10000.0f;
  float s2_cap = 0.3f;
  double l8_low_percentile = 2.0;
  double l8_high_percentile = 98.0;
  float sar_db_min = -25.0f;
  float sar_db_max = 0.0f;
};

BandComposite compose_bands(const Scene& scene, Modality modality, const ScalingConfig& scaling = {});

/// Channels (VV, VH, mean of the two) after scaling.
BandComposite sar_composite(const Scene& scene, const ScalingConfig& scaling = {});

/// Linear-interpolated percentile (0..100) of the values.
double percentile(std::vector<float> values, double pct);

/// Per-channel standardization constants shipped with the weights
/// ("preprocess.mean", "preprocess.std"); the published CLIP constants are
/// used when the archive carries none.
struct Normalization {
  std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};

  static Normalization from_archive(const TensorArchive& archive);
};

/// Separable bicubic resampling (a = -0.5) with support widened by the
/// downscale factor, accumulating in double. Axes whose size is unchanged
/// are copied through.
Image resize_bicubic(const Image& in, int out_height, int out_width);

Image preprocess_image(const BandComposite& composite, int resolution,
                       const Normalization& normalization);
Image preprocess_image(const BandComposite& composite, const EncoderConfig& config,
                       const Normalization& normalization = {});

/// Which mask values count as cloud, and which values are legal at all.
struct MaskScheme {
  std::string name;
  std::set<int> cloud_classes;
  std::set<int> known_classes;

  /// 0 clear, 1 thick cloud, 2 thin cloud, 3 cloud shadow.
  static MaskScheme cloudsen12();
  /// 0 shadow, 1 shadow over water, 2 water, 3 snow, 4 land, 5 cloud, 6 flooded.
  static MaskScheme sparcs();
};

struct LabelThresholds {
  double clear_max = 0.0;
  double cloudy_min = 0.05;
};

double cloud_fraction(const Raster& mask, const MaskScheme& scheme);

/// Clear at or below clear_max, Cloudy at or above cloudy_min, Excluded in
/// between.
SceneLabel label_from_fraction(double fraction, const LabelThresholds& thresholds = {});
SceneLabel derive_label(const Raster& mask, const MaskScheme& scheme,
                        const LabelThresholds& thresholds = {});

}  // namespace cloudgate
