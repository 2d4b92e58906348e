#include "brainseg/error.hpp"

namespace brainseg {

std::string_view to_string(Errc code) {
  switch (code) {
  case Errc::BadMagic: return "BadMagic";
  case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
  case Errc::TruncatedFile: return "TruncatedFile";
  case Errc::DimMismatch: return "DimMismatch";
  case Errc::IoError: return "IoError";
  case Errc::LabelOutOfRange: return "LabelOutOfRange";
  case Errc::SigmaZero: return "SigmaZero";
  case Errc::ZeroRange: return "ZeroRange";
  case Errc::DegenerateHistogram: return "DegenerateHistogram";
  case Errc::InvalidArgument: return "InvalidArgument";
  case Errc::SingularAffine: return "SingularAffine";
  case Errc::DegenerateInput: return "DegenerateInput";
  case Errc::NoOverlap: return "NoOverlap";
  case Errc::ParseError: return "ParseError";
  case Errc::ShapeMismatch: return "ShapeMismatch";
  case Errc::BadCheckpoint: return "BadCheckpoint";
  case Errc::IndivisibleShape: return "IndivisibleShape";
  case Errc::ChannelMismatch: return "ChannelMismatch";
  case Errc::StaleCache: return "StaleCache";
  case Errc::CorruptRecord: return "CorruptRecord";
  case Errc::SizeExceedsVolume: return "SizeExceedsVolume";
  case Errc::ConfigError: return "ConfigError";
  case Errc::MissingTransform: return "MissingTransform";
  case Errc::IdMismatch: return "IdMismatch";
  case Errc::UnknownId: return "UnknownId";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string &what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void raise(Errc code, const std::string &what) { throw Error(code, what); }

} // namespace brainseg
