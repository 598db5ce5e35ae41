#pragma once

#include <filesystem>
#include <vector>

namespace cloudgate {

/// Single-band 2-D float raster, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Raster() = default;
  Raster(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
};

enum class RasterEncoding { U8, U16, F32 };

/// Reads a single-band PNG or (Geo)TIFF at native bit depth.
Raster read_raster(const std::filesystem::path& path);

/// Writes PNG for integer encodings (values rounded and saturated) and TIFF
/// for F32; the extension must match.
void write_raster(const Raster& raster, const std::filesystem::path& path,
                  RasterEncoding encoding);

Raster resample_nearest(const Raster& in, int height, int width);

}  // namespace cloudgate
