#pragma once

#include <cstdint>
#include <string>

#include "cloudgate/encoder.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/tokenizer.hpp"

namespace cloudgate {

/// Small randomly initialized dual encoder with the full tensor naming
/// scheme. Used by the numeric test suites and for smoke-testing the CLI
/// without real weights.
struct ToyModelConfig {
  std::string model_id = "toy";
  int embed_dim = 32;
  int text_width = 16;
  int text_layers = 2;
  int text_heads = 2;
  int vision_width = 16;
  int vision_layers = 2;
  int vision_heads = 2;
  int image_resolution = 32;
  int patch_size = 8;
  int vocab_size = 0;  // 0: size of make_toy_vocabulary()
  int mlp_ratio = 4;
  Activation activation = Activation::QuickGelu;
  bool with_logit_scale = true;
};

TensorArchive make_toy_archive(const ToyModelConfig& config, std::uint64_t seed);

/// Byte-level vocabulary with a few merges covering the default prompts.
Vocabulary make_toy_vocabulary();

}  // namespace cloudgate
