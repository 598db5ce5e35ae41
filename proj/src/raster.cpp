#include "cloudgate/raster.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cloudgate/error.hpp"

namespace cloudgate {

Raster read_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::IoFailure, "missing raster " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error(Errc::IoFailure, "cannot decode raster " + path.string());
  if (m.channels() != 1)
    throw Error(Errc::InvalidArgument, path.string() + ": expected a single-band raster, found " +
                                           std::to_string(m.channels()) + " channels");
  cv::Mat f;
  m.convertTo(f, CV_32F);
  Raster r(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy(row, row + f.cols, r.data.begin() + static_cast<std::ptrdiff_t>(y) * f.cols);
  }
  return r;
}

void write_raster(const Raster& raster, const std::filesystem::path& path,
                  RasterEncoding encoding) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const bool tiff = ext == ".tif" || ext == ".tiff";
  if (encoding == RasterEncoding::F32 ? !tiff : ext != ".png")
    throw Error(Errc::InvalidArgument, path.string() + ": extension does not match the encoding");
  cv::Mat f(raster.height, raster.width, CV_32F, const_cast<float*>(raster.data.data()));
  cv::Mat out;
  switch (encoding) {
    case RasterEncoding::U8: f.convertTo(out, CV_8U); break;
    case RasterEncoding::U16: f.convertTo(out, CV_16U); break;
    case RasterEncoding::F32: out = f; break;
  }
  if (!cv::imwrite(path.string(), out))
    throw Error(Errc::IoFailure, "cannot write raster " + path.string());
}

Raster resample_nearest(const Raster& in, int height, int width) {
  if (in.height == height && in.width == width) return in;
  Raster out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(in.height - 1, static_cast<int>((y + 0.5) * in.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(in.width - 1, static_cast<int>((x + 0.5) * in.width / width));
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

}  // namespace cloudgate
