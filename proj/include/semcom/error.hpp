#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semcom {

enum class Errc {
  ZeroPower,
  ConfigError,
  BackendUnavailable,
  AnnotationMissing,
  BadGeometry,
  DimensionMismatch,
  InsufficientBudget,
  PlanMismatch,
  CorruptSideInfo,
  RatioUnachievable,
  ShapeMismatch,
  NoBackbone,
  DivergedTraining,
  SkippedMetric,
  MissingCheckpoint,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the library; `code()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace semcom
