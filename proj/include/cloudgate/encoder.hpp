#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "cloudgate/image.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/tokenizer.hpp"

namespace cloudgate {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using MatrixF = Matrix<float>;
using VectorF = Vector<float>;

enum class Activation { QuickGelu, Gelu };

struct TowerConfig {
  int width = 0;
  int layers = 0;
  int heads = 0;
};

/// Geometry of a dual encoder. Tower widths and depths are read from tensor
/// shapes; head counts come from metadata ("text_heads", "vision_heads") or
/// default to width / 64.
struct EncoderConfig {
  int embed_dim = 0;
  int context_length = kContextLength;
  int image_resolution = 0;
  int patch_size = 0;
  int vocab_size = 0;
  TowerConfig text;
  TowerConfig vision;
  Activation activation = Activation::QuickGelu;

  int grid() const { return image_resolution / patch_size; }

  static EncoderConfig from_archive(const TensorArchive& archive);
};

/// Output of either encoder.
struct Embedding {
  VectorF values;
  bool normalized = false;

  int dim() const { return static_cast<int>(values.size()); }
};

/// Per-position text transformer inputs before the positional add,
/// shape [context_length, text width].
using TokenEmbeddingMatrix = MatrixF;

/// Text transformer with causal attention, read from an archive by name:
///   text.token_embedding [vocab, w], text.positional_embedding [ctx, w],
///   text.blocks.{i}.{ln_1,ln_2}.{weight,bias},
///   text.blocks.{i}.attn.qkv.{weight [3w, w], bias [3w]},
///   text.blocks.{i}.attn.out.{weight [w, w], bias [w]},
///   text.blocks.{i}.mlp.fc.{weight [4w, w], bias}, text.blocks.{i}.mlp.proj.{weight [w, 4w], bias},
///   text.ln_final.{weight,bias}, text.projection [w, embed_dim].
/// The archive must outlive the encoder.
class TextEncoder {
 public:
  explicit TextEncoder(const TensorArchive& archive);

  const EncoderConfig& config() const { return config_; }
  int width() const { return config_.text.width; }

  TokenEmbeddingMatrix embed_tokens(const TokenSequence& tokens) const;
  Embedding encode(const TokenSequence& tokens) const;
  Embedding encode_from_embeddings(const TokenEmbeddingMatrix& rows, int eot_position) const;

  /// Gradient of <cotangent, encode_from_embeddings(rows)> with respect to rows.
  TokenEmbeddingMatrix vjp(const TokenEmbeddingMatrix& rows, int eot_position,
                           const VectorF& cotangent) const;

  /// Scalar-generic forms; float is the production path, double backs the
  /// gradient checks. Only rows [0, eot_position] are evaluated: under the
  /// causal mask later rows cannot reach the EOT readout. Pass
  /// full_sequence=true to run all rows anyway.
  template <typename T>
  Vector<T> forward(const Matrix<T>& rows, int eot_position, bool full_sequence = false) const;
  template <typename T>
  Matrix<T> backward(const Matrix<T>& rows, int eot_position, const Vector<T>& cotangent) const;

 /// Weights of one residual block; shared with the vision tower.
  struct Block {
    const Tensor* ln1_w;
    const Tensor* ln1_b;
    const Tensor* qkv_w;
    const Tensor* qkv_b;
    const Tensor* out_w;
    const Tensor* out_b;
    const Tensor* ln2_w;
    const Tensor* ln2_b;
    const Tensor* fc_w;
    const Tensor* fc_b;
    const Tensor* proj_w;
    const Tensor* proj_b;
  };

 private:
  friend class ImageEncoder;
  friend struct BlockMath;

  void check_rows(int rows, int cols, int eot_position) const;

  EncoderConfig config_;
  const Tensor* token_embedding_;
  const Tensor* positional_embedding_;
  std::vector<Block> blocks_;
  const Tensor* ln_final_w_;
  const Tensor* ln_final_b_;
  const Tensor* projection_;
};

/// Vision transformer (forward only):
///   vision.patch_embedding [w, 3, p, p], vision.class_embedding [w],
///   vision.positional_embedding [grid^2 + 1, w], vision.ln_pre.*,
///   vision.blocks.{i}.* (same layout as text), vision.ln_post.*,
///   vision.projection [w, embed_dim].
class ImageEncoder {
 public:
  explicit ImageEncoder(const TensorArchive& archive);

  const EncoderConfig& config() const { return config_; }
  Embedding encode(const Image& pixels) const;

 private:
  EncoderConfig config_;
  const Tensor* patch_embedding_;
  const Tensor* class_embedding_;
  const Tensor* positional_embedding_;
  const Tensor* ln_pre_w_;
  const Tensor* ln_pre_b_;
  std::vector<TextEncoder::Block> blocks_;
  const Tensor* ln_post_w_;
  const Tensor* ln_post_b_;
  const Tensor* projection_;
};

Embedding encode_image(const Image& pixels, const TensorArchive& archive);
Embedding encode_text(const TokenSequence& tokens, const TensorArchive& archive);
TokenEmbeddingMatrix embed_tokens(const TokenSequence& tokens, const TensorArchive& archive);
Embedding encode_text_from_embeddings(const TokenEmbeddingMatrix& rows, int eot_position,
                                      const TensorArchive& archive);
TokenEmbeddingMatrix text_encoder_vjp(const TokenEmbeddingMatrix& rows, int eot_position,
                                      const VectorF& cotangent, const TensorArchive& archive);

/// exp of the archive's "logit_scale" tensor, or 100 when absent.
float logit_scale(const TensorArchive& archive);

}  // namespace cloudgate
