#pragma once

// Importance-aware dual-path patch codec.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "semcom/channel.hpp"
#include "semcom/image.hpp"
#include "semcom/nn.hpp"

namespace semcom::codec {

enum class PatchLabel : std::uint8_t { Background = 0, Critical = 1 };

struct PatchGrid {
  int patch_size = 8;
  int rows = 0;
  int cols = 0;
  std::vector<PatchLabel> labels;  // row-major
  BinaryMask mask;                 // pixel mask the labels were derived from
  double critical_fraction = 0.5;

  std::size_t count() const noexcept { return labels.size(); }
  std::size_t critical_count() const noexcept;
  bool critical(std::size_t patch) const noexcept { return labels[patch] == PatchLabel::Critical; }
  /// Pixel-resolution mask covering the critical patches.
  BinaryMask critical_region() const;

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

inline constexpr double kDefaultCriticalFraction = 0.5;

/// A patch is critical iff its masked-pixel fraction is >= `critical_fraction`
/// (ties go critical). A fraction of 0 marks every patch touching the mask.
PatchGrid partition(const ImageTensor& image, const BinaryMask& mask, int patch_size,
                    double critical_fraction = kDefaultCriticalFraction);

/// Grid with every patch carrying `label` (mask all ones or all zeros).
PatchGrid uniform_grid(int height, int width, int patch_size, PatchLabel label);

/// Row-major patch `index` flattened in (y, x, c) order.
void extract_patch(const ImageTensor& image, int patch_size, std::size_t index, std::span<float> out);
void insert_patch(ImageTensor& image, int patch_size, std::size_t index, std::span<const float> in);

// Cross-attention scoring.

/// Per-patch descriptors: mean importance, mean R, G, B, luminance std.
inline constexpr int kPatchFeatureDim = 5;

/// feature x patch matrix. `importance` may be empty (treated as zero).
nn::Matrix patch_features(const ImageTensor& image, const ImportanceMap* importance, int patch_size);

/// Importance-weighted mean of the patch features (plain mean when importance is all zero).
nn::Vector query_embedding(const nn::Matrix& features);

/// softmax_j( (Wq q) . (Wk f_j) / sqrt(d) ) with projections d x feature.
std::vector<double> attention_scores(const nn::Matrix& features, const nn::Vector& query,
                                     const nn::Matrix& wq, const nn::Matrix& wk);

class AttentionHead {
 public:
  AttentionHead() = default;
  AttentionHead(int feature_dim, int key_dim, std::uint64_t seed);

  int feature_dim() const noexcept { return static_cast<int>(wq_.value.cols()); }
  int key_dim() const noexcept { return static_cast<int>(wq_.value.rows()); }
  /// Throws DimensionMismatch when features or query disagree with the projections.
  std::vector<double> scores(const nn::Matrix& features, const nn::Vector& query) const;

  nn::Param& wq() noexcept { return wq_; }
  nn::Param& wk() noexcept { return wk_; }
  nn::ParamList params() { return {&wq_, &wk_}; }

 private:
  nn::Param wq_;
  nn::Param wk_;
};

// Bandwidth allocation.

struct BudgetPlan {
  std::vector<int> per_patch_symbols;
  double weight = 1.0;
  int total = 0;

  int sum() const noexcept;
  friend bool operator==(const BudgetPlan&, const BudgetPlan&) = default;
};

/// Real shares b* = total / (n_c w + n_b), c* = w b* are floored (every patch
/// keeps >= 1 symbol) and the leftover symbols go one each to the patches with
/// the largest fractional share. Ties: critical first, then higher attention
/// score, then lower patch index. `scores` may be empty.
BudgetPlan allocate_bandwidth(const PatchGrid& grid, int total, double weight,
                              std::span<const double> scores = {});

/// Structural checks a receiver can make: sizes, positivity, sum <= total and
/// no background patch out-budgeting a critical one. Throws CorruptSideInfo.
void validate_plan(const PatchGrid& grid, const BudgetPlan& plan);

// Side information.

struct SideInfo {
  int height = 0;
  int width = 0;
  int channels = 0;
  PatchGrid grid;
  BudgetPlan plan;

  friend bool operator==(const SideInfo&, const SideInfo&) = default;
};

/// "SMC1" | u16 H W C patch | f64 critical fraction | u32 run count, u16 runs
/// (pixel mask, row-major, starting with unset) | f64 weight | u32 total |
/// u16 budget count, u16 budgets. Little-endian. Patch labels are re-derived
/// from the mask on the receiving side.
std::vector<std::uint8_t> serialize(const SideInfo& side);
/// Throws CorruptSideInfo on any malformed input.
SideInfo deserialize(std::span<const std::uint8_t> bytes);

// Model.

struct CodecConfig {
  int patch_size = 8;
  int channels = 3;
  int code_width = 64;  // max symbols per patch
  std::vector<int> hifi_hidden = {256, 256};
  std::vector<int> light_hidden = {64};
  int attention_dim = 8;
  /// Feed each patch's mask bits (known to both ends via side info) to the
  /// encoder and decoder of both paths.
  bool mask_input = true;
  std::uint64_t seed = 0;

  int patch_dim() const noexcept { return patch_size * patch_size * channels; }
  int mask_dim() const noexcept { return mask_input ? patch_size * patch_size : 0; }
  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

enum class Path { Hifi, Light };

struct PathNets {
  nn::Mlp encoder;  // (patch, mask bits) -> code_width
  nn::Mlp decoder;  // (code, k / code_width, mask bits) -> patch, sigmoid output
};

class CodecModel {
 public:
  CodecModel() = default;
  explicit CodecModel(CodecConfig config);

  const CodecConfig& config() const noexcept { return config_; }
  PathNets& path(Path p) noexcept { return p == Path::Hifi ? hifi_ : light_; }
  const PathNets& path(Path p) const noexcept { return p == Path::Hifi ? hifi_ : light_; }
  AttentionHead& attention() noexcept { return attention_; }
  const AttentionHead& attention() const noexcept { return attention_; }

  std::size_t parameter_count(Path p) const;
  /// Trainable encoder/decoder parameters of both paths.
  nn::ParamList params();
  /// Every tensor including the attention projections.
  nn::ParamList all_params();

 private:
  CodecConfig config_;
  PathNets hifi_;
  PathNets light_;
  AttentionHead attention_;
};

/// Zero every code row at or beyond the patch budget.
void mask_codes(nn::Matrix& codes, std::span<const int> budgets);

/// Mask bits of the listed patches, one column each (patch_size^2 rows).
nn::Matrix patch_mask_bits(const BinaryMask& mask, int patch_size, std::span<const std::size_t> patches);

/// Encoder input: flattened patches stacked over their mask bits (when enabled).
nn::Matrix encoder_input(const ImageTensor& image, const PatchGrid& grid, std::span<const std::size_t> patches,
                         const CodecConfig& cfg);

/// Decoder input: budget-masked code rows, the budget fraction row, then mask bits (when enabled).
nn::Matrix decoder_input(const nn::Matrix& codes, std::span<const int> budgets, const nn::Matrix& mask_bits,
                         const CodecConfig& cfg);

struct Encoded {
  channel::SymbolVector symbols;
  SideInfo side;
};

/// Throws PlanMismatch when the plan does not fit the grid or the model.
Encoded encode(const ImageTensor& image, const PatchGrid& grid, const BudgetPlan& plan, const CodecModel& model);

/// Throws CorruptSideInfo when side information is inconsistent with the
/// symbols or the model.
ImageTensor decode(const channel::SymbolVector& received, const SideInfo& side, const CodecModel& model);

}  // namespace semcom::codec
