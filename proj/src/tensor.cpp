#include "cloudgate/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "cloudgate/error.hpp"

namespace cloudgate {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::CorruptArchive: return "CorruptArchive";
    case Errc::MissingMetadata: return "MissingMetadata";
    case Errc::MissingTensor: return "MissingTensor";
    case Errc::IoFailure: return "IoFailure";
    case Errc::CorruptVocab: return "CorruptVocab";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::SingleClassTrainingSet: return "SingleClassTrainingSet";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ContextTooLong: return "ContextTooLong";
    case Errc::MissingBand: return "MissingBand";
    case Errc::UnknownMaskClass: return "UnknownMaskClass";
    case Errc::ManifestParseError: return "ManifestParseError";
    case Errc::DuplicateSceneAcrossSplits: return "DuplicateSceneAcrossSplits";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::Empty: return "Empty";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::uint64_t shape_product(std::span<const std::uint64_t> shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw Error(Errc::ShapeMismatch, "zero-sized dimension");
    if (n > std::numeric_limits<std::uint64_t>::max() / d)
      throw Error(Errc::ShapeMismatch, "shape product overflows");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::uint64_t> shape) : shape_(std::move(shape)) {
  data_.assign(shape_product(shape_), 0.0f);
}

Tensor::Tensor(std::vector<std::uint64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match shape product");
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw Error(Errc::MissingTensor, name);
  return it->second;
}

const std::string& TensorArchive::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw Error(Errc::MissingMetadata, key);
  return it->second;
}

std::int64_t TensorArchive::meta_int(const std::string& key) const {
  const auto& v = meta(key);
  try {
    std::size_t pos = 0;
    auto n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(Errc::CorruptArchive, "metadata '" + key + "' is not an integer: " + v);
  }
}

std::int64_t TensorArchive::meta_int(const std::string& key, std::int64_t fallback) const {
  return metadata.count(key) ? meta_int(key) : fallback;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  void put_string32(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  std::string take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }
  const std::string& buffer() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string32() { return std::string(get_bytes(get<std::uint32_t>())); }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(Errc::CorruptArchive, "unexpected end of archive");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_archive(const TensorArchive& archive) {
  Writer w;
  w.put_bytes(std::string_view(kArchiveMagic.data(), kArchiveMagic.size()));
  w.put<std::uint64_t>(archive.entries.size());
  for (const auto& [name, t] : archive.entries) {
    if (t.rank() > 255) throw Error(Errc::ShapeMismatch, name + ": rank exceeds 255");
    w.put_string32(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
  }
  w.put<std::uint64_t>(archive.metadata.size());
  for (const auto& [k, v] : archive.metadata) {
    w.put_string32(k);
    w.put_string32(v);
  }
  const std::size_t payload_start = w.size();
  for (const auto& [name, t] : archive.entries)
    for (float f : t.data()) w.put<float>(f);
  const auto& buf = w.buffer();
  auto payload = std::as_bytes(std::span(buf.data() + payload_start, buf.size() - payload_start));
  w.put<std::uint64_t>(fnv1a64(payload));
  return w.take();
}

TensorArchive parse_archive(std::string_view bytes,
                            std::span<const std::string_view> required_metadata) {
  if (bytes.size() < kArchiveMagic.size() ||
      bytes.substr(0, 4) != std::string_view(kArchiveMagic.data(), kArchiveMagic.size()))
    throw Error(Errc::BadMagic, "not a CGT1 archive");
  Reader r(bytes.substr(4));

  struct Header {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::uint64_t count;
  };
  const auto n_entries = r.get<std::uint64_t>();
  // Each header needs at least 5 bytes; reject absurd counts before allocating.
  if (n_entries > r.remaining() / 5) throw Error(Errc::CorruptArchive, "entry count too large");
  std::vector<Header> headers;
  headers.reserve(n_entries);
  std::uint64_t total_floats = 0;
  for (std::uint64_t i = 0; i < n_entries; ++i) {
    Header h;
    h.name = r.get_string32();
    const auto rank = r.get<std::uint8_t>();
    for (int d = 0; d < rank; ++d) h.shape.push_back(r.get<std::uint64_t>());
    try {
      h.count = shape_product(h.shape);
    } catch (const Error& e) {
      throw Error(Errc::CorruptArchive, h.name + ": " + e.what());
    }
    if (h.count > bytes.size() / sizeof(float))
      throw Error(Errc::CorruptArchive, h.name + ": declared length exceeds file size");
    total_floats += h.count;
    headers.push_back(std::move(h));
  }

  TensorArchive archive;
  const auto n_meta = r.get<std::uint64_t>();
  if (n_meta > r.remaining() / 8) throw Error(Errc::CorruptArchive, "metadata count too large");
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string32();
    auto v = r.get_string32();
    if (!archive.metadata.emplace(std::move(k), std::move(v)).second)
      throw Error(Errc::CorruptArchive, "duplicate metadata key");
  }

  if (r.remaining() != total_floats * sizeof(float) + sizeof(std::uint64_t))
    throw Error(Errc::CorruptArchive,
                "payload length mismatch: header declares " + std::to_string(total_floats) +
                    " floats, file holds " + std::to_string(r.remaining()) + " trailing bytes");

  const auto payload = r.get_bytes(total_floats * sizeof(float));
  const auto stored = r.get<std::uint64_t>();
  if (stored != fnv1a64(std::as_bytes(std::span(payload.data(), payload.size()))))
    throw Error(Errc::CorruptArchive, "payload checksum mismatch");

  std::size_t offset = 0;
  for (auto& h : headers) {
    std::vector<float> data(h.count);
    std::memcpy(data.data(), payload.data() + offset, h.count * sizeof(float));
    offset += h.count * sizeof(float);
    if constexpr (std::endian::native == std::endian::big)
      for (auto& f : data) f = to_little(f);
    Tensor t(std::move(h.shape), std::move(data));
    if (!t.all_finite()) throw Error(Errc::CorruptArchive, h.name + ": non-finite values");
    if (!archive.entries.emplace(h.name, std::move(t)).second)
      throw Error(Errc::CorruptArchive, "duplicate tensor name " + h.name);
  }

  for (auto key : required_metadata)
    if (!archive.metadata.count(std::string(key)))
      throw Error(Errc::MissingMetadata, std::string(key));
  return archive;
}

void validate_model_metadata(const TensorArchive& archive) {
  for (auto key : kModelMetadataKeys)
    if (!archive.metadata.count(std::string(key)))
      throw Error(Errc::MissingMetadata, std::string(key));
  if (archive.meta("model_id") == "clip-vit-b32") {
    const std::pair<const char*, std::int64_t> fixed[] = {
        {"embed_dim", 512}, {"context_length", 77}, {"image_resolution", 224}, {"patch_size", 32}};
    for (auto [key, want] : fixed)
      if (archive.meta_int(key) != want)
        throw Error(Errc::CorruptArchive, std::string("clip-vit-b32 requires ") + key + "=" +
                                              std::to_string(want));
  }
  if (archive.meta_int("image_resolution") % archive.meta_int("patch_size") != 0)
    throw Error(Errc::CorruptArchive, "image_resolution not divisible by patch_size");
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TensorArchive load_archive(const std::filesystem::path& path) {
  auto archive = parse_archive(read_file(path), kModelMetadataKeys);
  validate_model_metadata(archive);
  return archive;
}

TensorArchive load_archive(const std::filesystem::path& path,
                           std::span<const std::string_view> required_metadata) {
  return parse_archive(read_file(path), required_metadata);
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  const auto bytes = serialize_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "write failed for " + path.string());
}

}  // namespace cloudgate
