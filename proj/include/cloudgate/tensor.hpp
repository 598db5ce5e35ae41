#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cloudgate {

/// Dense row-major float32 array. The data length always equals the product
/// of the shape entries; every dimension is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::uint64_t> shape);
  Tensor(std::vector<std::uint64_t> shape, std::vector<float> data);

  const std::vector<std::uint64_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::uint64_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  bool all_finite() const noexcept;

  // Exact value equality (0.0 == -0.0, NaN != NaN). Use bitwise_equal for
  // byte identity.
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::uint64_t> shape_;
  std::vector<float> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;

std::uint64_t shape_product(std::span<const std::uint64_t> shape);

/// Named tensors plus string metadata. Entries are kept sorted by name, which
/// is also the on-disk order.
struct TensorArchive {
  std::map<std::string, Tensor> entries;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const { return entries.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
  std::int64_t meta_int(const std::string& key, std::int64_t fallback) const;

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;
};

/// Metadata keys every model weights archive must carry.
inline constexpr std::array<std::string_view, 6> kModelMetadataKeys = {
    "model_id", "embed_dim", "vocab_size", "context_length", "image_resolution", "patch_size"};

inline constexpr std::array<char, 4> kArchiveMagic = {'C', 'G', 'T', '1'};

std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

/// Encodes to the CGT1 byte layout:
///   "CGT1" | u64 entry count | per entry {u32 name len, name, u8 rank, rank x u64 dims}
///   | u64 metadata count | per pair {u32 key len, key, u32 value len, value}
///   | f32 payload (entries in name order) | u64 FNV-1a of the payload
/// All integers and floats little-endian.
std::string serialize_archive(const TensorArchive& archive);

/// Parses a CGT1 buffer. Every key in `required_metadata` must be present.
TensorArchive parse_archive(std::string_view bytes,
                            std::span<const std::string_view> required_metadata = {});

/// Loads a model weights archive; requires kModelMetadataKeys and checks the
/// fixed geometry of known model ids.
TensorArchive load_archive(const std::filesystem::path& path);

/// Loads any CGT1 file (probe models, contexts, embedding caches).
TensorArchive load_archive(const std::filesystem::path& path,
                           std::span<const std::string_view> required_metadata);

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);

void validate_model_metadata(const TensorArchive& archive);

}  // namespace cloudgate
