#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chordgen {

enum class ErrorCode {
  unparseable_chord,
  ambiguous_chord,
  palette_mismatch,
  unknown_chord,
  unsupported_meter,
  malformed_sequence,
  empty_corpus,
  insufficient_pop,
  invalid_matrix,
  shape_mismatch,
  all_masked,
  sequence_too_long,
  non_finite_loss,
  empty_records,
  empty_split,
  io_failure,
  invalid_distribution,
  prompt_too_long,
  invalid_argument,
  format_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::unparseable_chord: return "unparseable_chord";
    case ErrorCode::ambiguous_chord: return "ambiguous_chord";
    case ErrorCode::palette_mismatch: return "palette_mismatch";
    case ErrorCode::unknown_chord: return "unknown_chord";
    case ErrorCode::unsupported_meter: return "unsupported_meter";
    case ErrorCode::malformed_sequence: return "malformed_sequence";
    case ErrorCode::empty_corpus: return "empty_corpus";
    case ErrorCode::insufficient_pop: return "insufficient_pop";
    case ErrorCode::invalid_matrix: return "invalid_matrix";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::all_masked: return "all_masked";
    case ErrorCode::sequence_too_long: return "sequence_too_long";
    case ErrorCode::non_finite_loss: return "non_finite_loss";
    case ErrorCode::empty_records: return "empty_records";
    case ErrorCode::empty_split: return "empty_split";
    case ErrorCode::io_failure: return "io_failure";
    case ErrorCode::invalid_distribution: return "invalid_distribution";
    case ErrorCode::prompt_too_long: return "prompt_too_long";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::format_error: return "format_error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace chordgen
