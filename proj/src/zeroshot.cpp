#include "cloudgate/zeroshot.hpp"

#include <algorithm>
#include <cmath>

#include "cloudgate/error.hpp"

namespace cloudgate {

std::string_view to_string(Label label) { return label == Label::Cloudy ? "cloudy" : "clear"; }

Label label_from_string(std::string_view s) {
  if (s == "cloudy" || s == "Cloudy") return Label::Cloudy;
  if (s == "clear" || s == "Clear") return Label::Clear;
  throw Error(Errc::InvalidArgument, "unknown label '" + std::string(s) + "'");
}

Verdict verdict_from_scores(float score_positive, float score_negative) {
  Verdict v;
  v.score_positive = score_positive;
  v.score_negative = score_negative;
  v.label = score_positive >= score_negative ? Label::Cloudy : Label::Clear;
  const double margin = std::abs(static_cast<double>(score_positive) - score_negative);
  v.confidence = static_cast<float>(1.0 / (1.0 + std::exp(-margin)));
  return v;
}

PromptPair make_prompt_pair(const TextEncoder& encoder, const Tokenizer& tokenizer,
                            std::string_view positive, std::string_view negative) {
  PromptPair p;
  p.positive_text = positive;
  p.negative_text = negative;
  p.positive_emb = encoder.encode(tokenizer.tokenize(positive));
  p.negative_emb = encoder.encode(tokenizer.tokenize(negative));
  return p;
}

void require_normalized(const Embedding& e, float tolerance) {
  if (!e.normalized || std::abs(e.values.norm() - 1.0f) > tolerance)
    throw Error(Errc::NotNormalized, "embedding is not unit-norm");
}

float similarity(const Embedding& a, const Embedding& b) {
  require_normalized(a);
  require_normalized(b);
  if (a.dim() != b.dim()) throw Error(Errc::DimensionMismatch, "embedding dimensions differ");
  return std::clamp(a.values.dot(b.values), -1.0f, 1.0f);
}

Verdict classify_zero_shot(const Embedding& image_emb, const PromptPair& prompts) {
  return verdict_from_scores(similarity(image_emb, prompts.positive_emb),
                             similarity(image_emb, prompts.negative_emb));
}

}  // namespace cloudgate
