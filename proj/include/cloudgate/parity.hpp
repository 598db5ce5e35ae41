#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cloudgate/encoder.hpp"
#include "cloudgate/image.hpp"
#include "cloudgate/tensor.hpp"
#include "cloudgate/tokenizer.hpp"

namespace cloudgate {

/// Golden vectors produced by a reference implementation, stored as a CGT1
/// archive. Metadata: parity_version, prompt_count, image_count, prompt.{i}.
/// Tensors: prompt.{i}.token_ids [77], prompt.{i}.text_embedding [E],
/// image.{j}.composite [3,H,W], image.{j}.pixels [3,R,R],
/// image.{j}.image_embedding [E].
struct ParityBundle {
  struct Prompt {
    std::string text;
    std::vector<int> token_ids;
    VectorF text_embedding;
  };
  struct ImageCase {
    Image composite;
    Image pixels;
    VectorF image_embedding;
  };
  std::vector<Prompt> prompts;
  std::vector<ImageCase> images;
};

inline constexpr int kParityVersion = 1;

/// Validates version, shapes and unit-norm embeddings.
ParityBundle parity_from_archive(const TensorArchive& archive);
TensorArchive parity_to_archive(const ParityBundle& bundle);
ParityBundle load_parity(const std::filesystem::path& path);

struct ParityResult {
  int prompts_checked = 0;
  int token_mismatches = 0;
  double min_text_cosine = 1.0;
  int images_checked = 0;
  double min_image_cosine = 1.0;
  double max_pixel_error = 0.0;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

inline constexpr double kParityCosine = 0.999;
inline constexpr double kParityPixelTolerance = 1e-3;

ParityResult check_parity(const ParityBundle& bundle, const TensorArchive& weights,
                          const Tokenizer& tokenizer);

}  // namespace cloudgate
