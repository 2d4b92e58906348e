#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brainseg {

/// Failure categories raised across the toolkit. Every thrown brainseg::Error
/// carries exactly one of these.
enum class Errc {
  // volume I/O
  BadMagic,
  UnsupportedDatatype,
  TruncatedFile,
  DimMismatch,
  IoError,
  LabelOutOfRange,
  // intensity processing
  SigmaZero,
  ZeroRange,
  DegenerateHistogram,
  InvalidArgument,
  // registration
  SingularAffine,
  DegenerateInput,
  NoOverlap,
  ParseError,
  // network
  ShapeMismatch,
  BadCheckpoint,
  IndivisibleShape,
  ChannelMismatch,
  StaleCache,
  CorruptRecord,
  // sampling
  SizeExceedsVolume,
  // orchestration
  ConfigError,
  MissingTransform,
  IdMismatch,
  UnknownId,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string &what);

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, const std::string &what);

} // namespace brainseg
