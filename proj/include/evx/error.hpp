#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evx {

enum class ErrorCode {
  // dataset
  EmptyDataset,
  UnreadableRoot,
  CorruptImage,
  // model / training
  ConfigError,
  UnknownBackbone,
  UnknownLayer,
  ClassCountMismatch,
  DivergedLoss,
  ShapeMismatch,
  // explainer
  UnknownClass,
  NonFiniteGradient,
  UnsupportedHead,
  SizeMismatch,
  ParamError,
  // evaluation
  EmptySplit,
  // study
  MissingOverlay,
  EmptyStudy,
  UnknownStudy,
  UnknownAnnotator,
  UnknownTask,
  DuplicateVote,
  InvalidLabel,
  ResolvedTask,
  NoResolvedTasks,
  // generic
  IoError,
  FormatError,
};

std::string_view error_code_name(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers (CLI, HTTP layer, Python) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace evx
