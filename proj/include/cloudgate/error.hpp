#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cloudgate {

enum class Errc {
  BadMagic,
  CorruptArchive,
  MissingMetadata,
  MissingTensor,
  IoFailure,
  CorruptVocab,
  ShapeMismatch,
  NotNormalized,
  EmptyTrainingSet,
  SingleClassTrainingSet,
  DimensionMismatch,
  ContextTooLong,
  MissingBand,
  UnknownMaskClass,
  ManifestParseError,
  DuplicateSceneAcrossSplits,
  LengthMismatch,
  Empty,
  InvalidArgument,
};

std::string_view to_string(Errc code);

/// Exception carrying a machine-checkable error code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cloudgate
