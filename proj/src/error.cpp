#include "semcom/error.hpp"

namespace semcom {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ZeroPower: return "ZeroPower";
    case Errc::ConfigError: return "ConfigError";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::AnnotationMissing: return "AnnotationMissing";
    case Errc::BadGeometry: return "BadGeometry";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InsufficientBudget: return "InsufficientBudget";
    case Errc::PlanMismatch: return "PlanMismatch";
    case Errc::CorruptSideInfo: return "CorruptSideInfo";
    case Errc::RatioUnachievable: return "RatioUnachievable";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NoBackbone: return "NoBackbone";
    case Errc::DivergedTraining: return "DivergedTraining";
    case Errc::SkippedMetric: return "SkippedMetric";
    case Errc::MissingCheckpoint: return "MissingCheckpoint";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace semcom
