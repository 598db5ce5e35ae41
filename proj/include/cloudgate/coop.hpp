#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloudgate/encoder.hpp"
#include "cloudgate/probe.hpp"
#include "cloudgate/tokenizer.hpp"
#include "cloudgate/verdict.hpp"

namespace cloudgate {

/// Class index 0 is the cloudy class, 1 the clear class.
struct ClassPrompt {
  std::array<std::string, 2> names{"clouds", "clear sky"};
  std::array<std::vector<int>, 2> token_ids;
  int sot_id = 0;
  int eot_id = 0;
};

ClassPrompt make_class_prompt(const Tokenizer& tokenizer,
                              std::array<std::string, 2> names = {"clouds", "clear sky"});

/// Learned prompt context shared by both classes; the class-name tokens sit
/// at the end of the prompt: [SOT, ctx_1..ctx_M, class tokens, EOT].
struct ContextVectors {
  MatrixF rows;  // [M, text width]
  ClassPrompt classes;
  std::uint64_t seed = 0;
  int steps = 0;
  int batch_size = 0;
  float learning_rate = 0.0f;
  float init_std = 0.0f;
  std::string trained_on;

  int m() const { return static_cast<int>(rows.rows()); }
};

struct CoopConfig {
  int m_context = 16;
  float init_std = 0.02f;
  int steps = 1000;
  int batch_size = 10;
  float learning_rate = 0.002f;
  std::uint64_t seed = 0;

  bool canonical() const { return steps == 1000 && batch_size == 10; }
};

/// Rows drawn i.i.d. from Normal(0, init_std^2). Throws ContextTooLong if
/// either class prompt would not fit the context window.
ContextVectors init_context(const CoopConfig& config, const ClassPrompt& classes, int width);

/// Input rows for one class prompt and the position of its EOT token.
template <typename T>
Matrix<T> coop_prompt_rows(const TextEncoder& encoder, const Matrix<T>& ctx,
                           const ClassPrompt& classes, int class_index, int* eot_position);

Embedding coop_class_embedding(const TextEncoder& encoder, const ContextVectors& ctx,
                               int class_index);

/// Mean cross-entropy over `batch` of softmax(scale * cos(image, class_c))
/// and its gradient with respect to the context rows. `images` holds one
/// unit-norm embedding per row; `labels` uses 1 = cloudy.
template <typename T>
struct CoopObjective {
  T loss = 0;
  Matrix<T> grad_context;
};

template <typename T>
CoopObjective<T> coop_objective(const TextEncoder& encoder, const Matrix<T>& ctx,
                                const ClassPrompt& classes, const Matrix<T>& images,
                                std::span<const int> labels, std::span<const std::size_t> batch,
                                T scale, bool with_gradient = true);

ContextVectors train_coop(std::span<const LabeledVector> embeddings, const CoopConfig& config,
                          const TextEncoder& encoder, const ClassPrompt& classes, float scale,
                          std::string trained_on = {}, const StepObserver& observer = {});

/// Precomputes both class embeddings once for repeated classification.
class CoopClassifier {
 public:
  CoopClassifier(const TextEncoder& encoder, const ContextVectors& ctx);
  Verdict classify(const Embedding& image_emb) const;
  const Embedding& class_embedding(int class_index) const { return class_embs_[class_index]; }

 private:
  std::array<Embedding, 2> class_embs_;
};

Verdict classify_coop(const Embedding& image_emb, const ContextVectors& ctx,
                      const TextEncoder& encoder);

TensorArchive context_to_archive(const ContextVectors& ctx);
ContextVectors context_from_archive(const TensorArchive& archive);

}  // namespace cloudgate
