#pragma once

#include <string>
#include <string_view>

#include "cloudgate/encoder.hpp"
#include "cloudgate/tokenizer.hpp"
#include "cloudgate/verdict.hpp"

namespace cloudgate {

inline constexpr std::string_view kDefaultPositivePrompt = "This is a satellite image with clouds";
inline constexpr std::string_view kDefaultNegativePrompt = "This is a satellite image with clear sky";

struct PromptPair {
  std::string positive_text;
  std::string negative_text;
  Embedding positive_emb;
  Embedding negative_emb;
};

PromptPair make_prompt_pair(const TextEncoder& encoder, const Tokenizer& tokenizer,
                            std::string_view positive = kDefaultPositivePrompt,
                            std::string_view negative = kDefaultNegativePrompt);

/// Throws NotNormalized unless |norm - 1| <= tolerance.
void require_normalized(const Embedding& e, float tolerance = 1e-5f);

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
float similarity(const Embedding& a, const Embedding& b);

Verdict classify_zero_shot(const Embedding& image_emb, const PromptPair& prompts);

}  // namespace cloudgate
