#pragma once

// Losses and the training loop for the importance-aware codec.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/codec.hpp"
#include "semcom/guidance.hpp"
#include "semcom/synthetic.hpp"

namespace semcom::training {

/// w * mean(e | masked) + mean(e | unmasked), e = per-pixel squared error
/// averaged over channels; an empty region contributes 0.
double weighted_mse(const ImageTensor& recon, const ImageTensor& target, const BinaryMask& mask, double w);
/// d weighted_mse / d recon.
ImageTensor weighted_mse_grad(const ImageTensor& recon, const ImageTensor& target, const BinaryMask& mask, double w);

struct CodecSample {
  std::string id;
  ImageTensor image;
  BinaryMask mask;  // guidance mask used for partition and loss weighting
  BinaryMask gt_mask;
  std::string query;
};

/// Masks from the guidance backend, binarized at `threshold`.
std::vector<CodecSample> codec_samples(const std::vector<synthetic::Sample>& samples,
                                       const guidance::GuidanceBackend& backend, double threshold = 0.5);

struct TrainConfig {
  double importance_weight = 4.0;
  /// Masked-region loss weight; follows importance_weight when unset.
  std::optional<double> loss_weight;
  int total_symbols = 768;
  double snr_lo_db = 5.0;
  double snr_hi_db = 12.0;
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 1e-3;
  bool cosine_schedule = true;
  std::uint64_t seed = 0;
  double critical_fraction = codec::kDefaultCriticalFraction;
  /// All-ones importance: every patch on the high-fidelity path, uniform budgets, w = 1.
  bool uniform_baseline = false;
  /// Symbols deducted from the frame budget per byte of side information (0 = side info is free).
  double side_info_charge = 0.0;
  codec::CodecConfig model;

  double effective_loss_weight() const noexcept;
  /// Throws ConfigError on invalid values.
  void validate() const;
  nlohmann::json to_json() const;
  /// Stable hex digest of to_json().
  std::string hash() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);

/// Stable 64-bit FNV-1a digest rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

struct FrameLayout {
  codec::PatchGrid grid;
  codec::BudgetPlan plan;
};

/// Serialized side-information size of a frame with this grid (budget values do
/// not change the size).
std::size_t side_info_bytes(const codec::PatchGrid& grid, int channels);

/// Partition and budget plan for one frame under `cfg`; attention scores from
/// the model break allocation ties. With a side-info charge the budget shrinks
/// by ceil(bytes * charge) symbols first.
FrameLayout frame_layout(const ImageTensor& image, const BinaryMask& mask, const TrainConfig& cfg,
                         const codec::CodecModel& model);

struct TrainResult {
  codec::CodecModel model;
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  std::string config_hash;
};

/// End-to-end training through the differentiable AWGN channel; one SNR drawn
/// uniformly from [snr_lo, snr_hi] per batch. Throws DivergedTraining on a
/// non-finite loss.
TrainResult train_codec(const TrainConfig& cfg, std::span<const CodecSample> data);
TrainResult train_codec(const TrainConfig& cfg, const std::vector<synthetic::Sample>& samples,
                        const guidance::GuidanceBackend& backend);

/// train_codec with uniform_baseline forced on.
TrainResult baseline_uniform(TrainConfig cfg, std::span<const CodecSample> data);

/// Mean training loss of `model` on `data` at a fixed SNR without updating it.
double evaluate_loss(const codec::CodecModel& model, const TrainConfig& cfg, std::span<const CodecSample> data,
                     double snr_db, std::uint64_t noise_seed);

/// Loss of `data` as a single batch at a fixed SNR, accumulating parameter
/// gradients into `model` (callers zero them first).
double loss_and_grad(codec::CodecModel& model, const TrainConfig& cfg, std::span<const CodecSample> data,
                     double snr_db, std::uint64_t noise_seed);

/// encode -> AWGN -> decode for one frame.
ImageTensor transmit_image(const codec::CodecModel& model, const TrainConfig& cfg, const ImageTensor& image,
                           const BinaryMask& mask, double snr_db, std::uint64_t noise_seed, std::uint64_t stream = 0);

/// Checkpoint with the training config (and its hash) in the header.
void save_codec(const std::filesystem::path& path, codec::CodecModel& model, const TrainConfig& cfg,
                const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCodec {
  codec::CodecModel model;
  TrainConfig config;
  std::string config_hash;
  nlohmann::json header;
};
/// Throws MissingCheckpoint when absent, IoError when it is not a codec checkpoint.
LoadedCodec load_codec(const std::filesystem::path& path);

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

}  // namespace semcom::training
