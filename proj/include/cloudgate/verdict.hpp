#pragma once

#include <string_view>

namespace cloudgate {

/// Cloudy is the positive class throughout.
enum class Label { Cloudy, Clear };

std::string_view to_string(Label label);
Label label_from_string(std::string_view s);

struct Verdict {
  Label label = Label::Cloudy;
  float score_positive = 0.0f;
  float score_negative = 0.0f;
  /// Probability mass on the chosen label; always in [0.5, 1].
  float confidence = 0.5f;
};

/// Two-way argmax with ties going to Cloudy; confidence is the
/// temperature-1 softmax of the two scores at the chosen label.
Verdict verdict_from_scores(float score_positive, float score_negative);

}  // namespace cloudgate
