#include "cloudgate/toy_model.hpp"

#include <cmath>
#include <random>

namespace cloudgate {

namespace {

class Filler {
 public:
  explicit Filler(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(std::vector<std::uint64_t> shape, float std, float mean = 0.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(mean, std);
    for (auto& v : t.data()) v = dist(rng_);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

void add_block(TensorArchive& a, Filler& fill, const std::string& p, std::uint64_t w,
               std::uint64_t hidden) {
  const float in_std = 1.0f / std::sqrt(static_cast<float>(w));
  const float hidden_std = 1.0f / std::sqrt(static_cast<float>(hidden));
  a.entries[p + "ln_1.weight"] = fill.normal({w}, 0.1f, 1.0f);
  a.entries[p + "ln_1.bias"] = fill.normal({w}, 0.1f);
  a.entries[p + "attn.qkv.weight"] = fill.normal({3 * w, w}, in_std);
  a.entries[p + "attn.qkv.bias"] = fill.normal({3 * w}, 0.1f);
  a.entries[p + "attn.out.weight"] = fill.normal({w, w}, in_std);
  a.entries[p + "attn.out.bias"] = fill.normal({w}, 0.1f);
  a.entries[p + "ln_2.weight"] = fill.normal({w}, 0.1f, 1.0f);
  a.entries[p + "ln_2.bias"] = fill.normal({w}, 0.1f);
  a.entries[p + "mlp.fc.weight"] = fill.normal({hidden, w}, in_std);
  a.entries[p + "mlp.fc.bias"] = fill.normal({hidden}, 0.1f);
  a.entries[p + "mlp.proj.weight"] = fill.normal({w, hidden}, hidden_std);
  a.entries[p + "mlp.proj.bias"] = fill.normal({w}, 0.1f);
}

}  // namespace

TensorArchive make_toy_archive(const ToyModelConfig& c, std::uint64_t seed) {
  Filler fill(seed);
  TensorArchive a;
  const int vocab_size = c.vocab_size > 0 ? c.vocab_size : make_toy_vocabulary().size();
  const auto tw = static_cast<std::uint64_t>(c.text_width);
  const auto vw = static_cast<std::uint64_t>(c.vision_width);
  const auto e = static_cast<std::uint64_t>(c.embed_dim);
  const auto ctx = static_cast<std::uint64_t>(kContextLength);
  const auto p = static_cast<std::uint64_t>(c.patch_size);
  const auto grid = static_cast<std::uint64_t>(c.image_resolution / c.patch_size);

  a.entries["text.token_embedding"] = fill.normal({static_cast<std::uint64_t>(vocab_size), tw}, 0.5f);
  a.entries["text.positional_embedding"] = fill.normal({ctx, tw}, 0.1f);
  for (int i = 0; i < c.text_layers; ++i)
    add_block(a, fill, "text.blocks." + std::to_string(i) + ".", tw, tw * c.mlp_ratio);
  a.entries["text.ln_final.weight"] = fill.normal({tw}, 0.1f, 1.0f);
  a.entries["text.ln_final.bias"] = fill.normal({tw}, 0.1f);
  a.entries["text.projection"] = fill.normal({tw, e}, 1.0f / std::sqrt(static_cast<float>(tw)));

  a.entries["vision.patch_embedding"] =
      fill.normal({vw, 3, p, p}, 1.0f / std::sqrt(static_cast<float>(3 * p * p)));
  a.entries["vision.class_embedding"] = fill.normal({vw}, 0.5f);
  a.entries["vision.positional_embedding"] = fill.normal({grid * grid + 1, vw}, 0.1f);
  a.entries["vision.ln_pre.weight"] = fill.normal({vw}, 0.1f, 1.0f);
  a.entries["vision.ln_pre.bias"] = fill.normal({vw}, 0.1f);
  for (int i = 0; i < c.vision_layers; ++i)
    add_block(a, fill, "vision.blocks." + std::to_string(i) + ".", vw, vw * c.mlp_ratio);
  a.entries["vision.ln_post.weight"] = fill.normal({vw}, 0.1f, 1.0f);
  a.entries["vision.ln_post.bias"] = fill.normal({vw}, 0.1f);
  a.entries["vision.projection"] = fill.normal({vw, e}, 1.0f / std::sqrt(static_cast<float>(vw)));

  if (c.with_logit_scale) a.entries["logit_scale"] = Tensor({1}, {std::log(100.0f)});
  a.entries["preprocess.mean"] = Tensor({3}, {0.48145466f, 0.4578275f, 0.40821073f});
  a.entries["preprocess.std"] = Tensor({3}, {0.26862954f, 0.26130258f, 0.27577711f});

  a.metadata["model_id"] = c.model_id;
  a.metadata["embed_dim"] = std::to_string(c.embed_dim);
  a.metadata["vocab_size"] = std::to_string(vocab_size);
  a.metadata["context_length"] = std::to_string(kContextLength);
  a.metadata["image_resolution"] = std::to_string(c.image_resolution);
  a.metadata["patch_size"] = std::to_string(c.patch_size);
  a.metadata["text_heads"] = std::to_string(c.text_heads);
  a.metadata["vision_heads"] = std::to_string(c.vision_heads);
  a.metadata["activation"] = c.activation == Activation::Gelu ? "gelu" : "quick_gelu";
  return a;
}

Vocabulary make_toy_vocabulary() {
  return make_byte_level_vocabulary({
      {"i", "s</w>"},
      {"t", "h"},
      {"th", "is</w>"},
      {"c", "l"},
      {"o", "u"},
      {"cl", "ou"},
      {"d", "s</w>"},
      {"clou", "ds</w>"},
      {"s", "a"},
      {"sa", "t"},
      {"e", "l"},
      {"l", "i"},
      {"sat", "el"},
      {"t", "e</w>"},
      {"li", "te</w>"},
      {"satel", "lite</w>"},
      {"w", "i"},
      {"wi", "th</w>"},
      {"a", "r</w>"},
      {"cl", "e"},
      {"cle", "ar</w>"},
      {"s", "k"},
      {"sk", "y</w>"},
      {"i", "m"},
      {"a", "g"},
      {"im", "ag"},
      {"imag", "e</w>"},
  });
}

}  // namespace cloudgate
