#include "cloudgate/parity.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cloudgate/encoder.hpp"
#include "cloudgate/error.hpp"
#include "cloudgate/ingest.hpp"

namespace cloudgate {

namespace {

VectorF to_vector(const Tensor& t) {
  return Eigen::Map<const VectorF>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

Tensor from_vector(const VectorF& v) {
  return Tensor({static_cast<std::uint64_t>(v.size())}, std::vector<float>(v.data(), v.data() + v.size()));
}

Image to_image(const Tensor& t, const std::string& name) {
  if (t.rank() != 3) throw Error(Errc::ShapeMismatch, name + " must be rank 3");
  Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
  img.data.assign(t.data().begin(), t.data().end());
  return img;
}

Tensor from_image(const Image& img) {
  return Tensor({static_cast<std::uint64_t>(img.channels), static_cast<std::uint64_t>(img.height),
                 static_cast<std::uint64_t>(img.width)},
                img.data);
}

void require_unit(const VectorF& v, const std::string& name) {
  if (std::abs(static_cast<double>(v.norm()) - 1.0) > 1e-5)
    throw Error(Errc::NotNormalized, name + " is not unit-norm");
}

double cosine(const VectorF& a, const VectorF& b) {
  if (a.size() != b.size()) return -1.0;
  const double denom = static_cast<double>(a.norm()) * b.norm();
  return denom > 0 ? a.cast<double>().dot(b.cast<double>()) / denom : -1.0;
}

}  // namespace

ParityBundle parity_from_archive(const TensorArchive& archive) {
  if (archive.meta_int("parity_version") != kParityVersion)
    throw Error(Errc::CorruptArchive, "unsupported parity_version " + archive.meta("parity_version"));
  ParityBundle b;
  const auto prompts = archive.meta_int("prompt_count");
  const auto images = archive.meta_int("image_count");
  for (long i = 0; i < prompts; ++i) {
    const std::string p = "prompt." + std::to_string(i);
    ParityBundle::Prompt prompt;
    prompt.text = archive.meta(p);
    const auto& ids = archive.at(p + ".token_ids");
    if (ids.size() != static_cast<std::size_t>(kContextLength))
      throw Error(Errc::ShapeMismatch, p + ".token_ids must hold 77 ids");
    for (float v : ids.data()) prompt.token_ids.push_back(static_cast<int>(v));
    prompt.text_embedding = to_vector(archive.at(p + ".text_embedding"));
    require_unit(prompt.text_embedding, p + ".text_embedding");
    b.prompts.push_back(std::move(prompt));
  }
  for (long j = 0; j < images; ++j) {
    const std::string p = "image." + std::to_string(j);
    ParityBundle::ImageCase c;
    c.composite = to_image(archive.at(p + ".composite"), p + ".composite");
    c.pixels = to_image(archive.at(p + ".pixels"), p + ".pixels");
    c.image_embedding = to_vector(archive.at(p + ".image_embedding"));
    require_unit(c.image_embedding, p + ".image_embedding");
    b.images.push_back(std::move(c));
  }
  return b;
}

TensorArchive parity_to_archive(const ParityBundle& bundle) {
  TensorArchive a;
  a.metadata["parity_version"] = std::to_string(kParityVersion);
  a.metadata["prompt_count"] = std::to_string(bundle.prompts.size());
  a.metadata["image_count"] = std::to_string(bundle.images.size());
  for (std::size_t i = 0; i < bundle.prompts.size(); ++i) {
    const auto& pr = bundle.prompts[i];
    const std::string p = "prompt." + std::to_string(i);
    a.metadata[p] = pr.text;
    a.entries[p + ".token_ids"] =
        Tensor({static_cast<std::uint64_t>(pr.token_ids.size())},
               std::vector<float>(pr.token_ids.begin(), pr.token_ids.end()));
    a.entries[p + ".text_embedding"] = from_vector(pr.text_embedding);
  }
  for (std::size_t j = 0; j < bundle.images.size(); ++j) {
    const auto& c = bundle.images[j];
    const std::string p = "image." + std::to_string(j);
    a.entries[p + ".composite"] = from_image(c.composite);
    a.entries[p + ".pixels"] = from_image(c.pixels);
    a.entries[p + ".image_embedding"] = from_vector(c.image_embedding);
  }
  return a;
}

ParityBundle load_parity(const std::filesystem::path& path) {
  static constexpr std::array<std::string_view, 3> keys{"parity_version", "prompt_count",
                                                        "image_count"};
  return parity_from_archive(load_archive(path, keys));
}

ParityResult check_parity(const ParityBundle& bundle, const TensorArchive& weights,
                          const Tokenizer& tokenizer) {
  ParityResult r;
  const TextEncoder text(weights);
  const ImageEncoder vision(weights);
  const auto normalization = Normalization::from_archive(weights);

  for (std::size_t i = 0; i < bundle.prompts.size(); ++i) {
    const auto& p = bundle.prompts[i];
    const std::string where = "prompt " + std::to_string(i) + " \"" + p.text + "\"";
    const auto tokens = tokenizer.tokenize(p.text);
    ++r.prompts_checked;
    if (!std::equal(tokens.ids.begin(), tokens.ids.end(), p.token_ids.begin(), p.token_ids.end())) {
      ++r.token_mismatches;
      r.failures.push_back(where + ": token ids differ");
    }
    const double cos = cosine(text.encode(tokens).values, p.text_embedding);
    r.min_text_cosine = std::min(r.min_text_cosine, cos);
    if (cos < kParityCosine) r.failures.push_back(where + ": text cosine " + std::to_string(cos));
  }

  for (std::size_t j = 0; j < bundle.images.size(); ++j) {
    const auto& c = bundle.images[j];
    const std::string where = "image " + std::to_string(j);
    ++r.images_checked;
    BandComposite composite;
    composite.channels = c.composite;
    const Image ours = preprocess_image(composite, vision.config(), normalization);
    if (ours.channels != c.pixels.channels || ours.height != c.pixels.height ||
        ours.width != c.pixels.width) {
      r.failures.push_back(where + ": preprocessed shape differs");
    } else {
      double worst = 0.0;
      for (std::size_t k = 0; k < ours.data.size(); ++k)
        worst = std::max(worst, std::abs(static_cast<double>(ours.data[k]) - c.pixels.data[k]));
      r.max_pixel_error = std::max(r.max_pixel_error, worst);
      if (worst > kParityPixelTolerance)
        r.failures.push_back(where + ": pixel error " + std::to_string(worst));
    }
    const double cos = cosine(vision.encode(c.pixels).values, c.image_embedding);
    r.min_image_cosine = std::min(r.min_image_cosine, cos);
    if (cos < kParityCosine) r.failures.push_back(where + ": image cosine " + std::to_string(cos));
  }
  return r;
}

}  // namespace cloudgate
