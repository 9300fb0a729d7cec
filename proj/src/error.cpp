#include "evx/error.hpp"

namespace evx {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnreadableRoot: return "UnreadableRoot";
    case ErrorCode::CorruptImage: return "CorruptImage";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UnknownBackbone: return "UnknownBackbone";
    case ErrorCode::UnknownLayer: return "UnknownLayer";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::UnsupportedHead: return "UnsupportedHead";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::ParamError: return "ParamError";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::MissingOverlay: return "MissingOverlay";
    case ErrorCode::EmptyStudy: return "EmptyStudy";
    case ErrorCode::UnknownStudy: return "UnknownStudy";
    case ErrorCode::UnknownAnnotator: return "UnknownAnnotator";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::DuplicateVote: return "DuplicateVote";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::ResolvedTask: return "ResolvedTask";
    case ErrorCode::NoResolvedTasks: return "NoResolvedTasks";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace evx
