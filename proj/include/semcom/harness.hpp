#pragma once

// Dataset ingestion, experiment grids and report emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/config.hpp"
#include "semcom/generative.hpp"
#include "semcom/guidance.hpp"
#include "semcom/metrics.hpp"
#include "semcom/training.hpp"

namespace semcom::harness {

enum class DatasetKind { SyntheticShapes, PhraseRegionDir };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SyntheticShapes;
  std::filesystem::path root;
  int train_size = 2000;
  int test_size = 100;
  int max_shapes = 3;  // synthetic scenes only
};

struct DataItem {
  std::string id;
  ImageTensor image;
  BinaryMask mask;  // ground truth region of the query
  std::string query;
  std::optional<synthetic::ShapeKind> shape;
};

struct Dataset {
  std::vector<DataItem> train;
  std::vector<DataItem> test;
};

/// Synthetic scenes come from `seed`. A directory uses images/NNN.png,
/// masks/NNN.png and queries/NNN.txt, either under root/<split>/ or flat under
/// root (first ids train, last test_size ids test). Training items outside the
/// mask-area band are dropped.
Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// Writes items in the directory layout above (ids zero-padded to 3+ digits).
void write_dataset_dir(const std::filesystem::path& dir, const std::vector<DataItem>& items);

enum class MethodKind { UniformBaseline, ImportanceCodec, GenerativeFull, GenerativeVaeOnly, GenerativeDirectMse };

std::string_view method_kind_name(MethodKind m) noexcept;
std::optional<MethodKind> parse_method_kind(std::string_view name) noexcept;
bool is_generative(MethodKind m) noexcept;

struct ExperimentGrid {
  std::vector<double> snr_points = {5, 7, 9, 12};
  std::vector<double> weights = {1.0, 2.33, 4.0};
  std::vector<MethodKind> methods = {MethodKind::UniformBaseline, MethodKind::ImportanceCodec};
};

/// One aggregate row of the grid.
struct Cell {
  std::size_t index = 0;
  MethodKind method = MethodKind::UniformBaseline;
  double weight = 1.0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

/// Cells in (method, weight, snr) order. The baseline runs at weight 1 only;
/// the importance codec skips weight 1 when the baseline is also requested.
/// Generative methods carry weight 1. Seeds derive from (master seed, index).
std::vector<Cell> expand_grid(const ExperimentGrid& grid, std::uint64_t master_seed);

struct GuidanceSettings {
  guidance::BackendKind backend = guidance::BackendKind::Oracle;
  /// Segmenter for IoU evaluation; none disables the IoU columns.
  std::optional<guidance::BackendKind> eval_backend = guidance::BackendKind::Synthetic;
  double threshold = 0.5;
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string path = "/heatmap";
};

struct GenerativeSettings {
  generative::AutoencoderConfig autoencoder;
  int ae_steps = 3000;
  int ae_batch = 32;
  double ae_learning_rate = 2e-3;
  generative::BackboneConfig backbone;
  int backbone_steps = 12000;
  int backbone_batch = 64;
  double backbone_learning_rate = 1e-3;
  double class_dropout = 0.15;
  int timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  double guidance_scale = generative::kDefaultGuidanceScale;
  generative::GenerativeConfig head;  // method is set per cell
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  int workers = 1;
  bool train = true;  // train missing checkpoints instead of failing
  int grid_samples = 4;
  DatasetSpec dataset;
  ExperimentGrid grid;
  GuidanceSettings guidance;
  training::TrainConfig codec;  // importance_weight / uniform_baseline / seed set per model
  GenerativeSettings generative;

  /// Throws ConfigError on invalid combinations.
  void validate() const;
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// Throws ConfigError on unknown sections/keys or invalid values.
ExperimentConfig experiment_from_config(const ConfigFile& file);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Seed of the dataset stream for this experiment.
std::uint64_t dataset_seed(const ExperimentConfig& cfg);

/// Training configuration of the codec model behind `method` at `weight`.
training::TrainConfig codec_train_config(const ExperimentConfig& cfg, MethodKind method, double weight);

struct SampleRow {
  std::string id;
  double psnr_db = 0.0;
  double masked_psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> iou_original;
  std::optional<double> iou_transmitted;
  std::optional<double> perceptual;
  std::optional<std::size_t> side_info_bytes;  // codec cells; logged, charged only when configured
};

struct CellResult {
  Cell cell;
  metrics::MetricReport report;
  std::vector<SampleRow> samples;
  std::vector<ImageTensor> originals;        // first grid_samples items
  std::vector<ImageTensor> reconstructions;  // same items after transmission
  std::vector<BinaryMask> overlays;          // segmentation (or guidance) masks of the reconstructions
};

struct GridResult {
  std::vector<CellResult> cells;
  std::string config_hash;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains (or loads) every model the grid needs into out_dir/checkpoints.
/// Throws MissingCheckpoint when cfg.train is false and a checkpoint is absent.
void prepare_models(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress = {});

/// Evaluates every cell from checkpoints. Cells run on cfg.workers threads.
GridResult evaluate_grid(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress = {});

/// prepare_models + evaluate_grid + write_outputs.
GridResult run_grid(const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// metrics.csv, metrics.json, table1.md and grids/*.png under out_dir.
void write_outputs(const ExperimentConfig& cfg, const GridResult& result);

/// Rebuilds metrics.csv and table1.md from out_dir/metrics.json.
void regenerate_reports(const std::filesystem::path& out_dir);

std::string metrics_csv(const std::vector<metrics::MetricReport>& rows);
/// Methods as rows, SNR points as column groups, with direction arrows.
std::string table1_markdown(const std::vector<metrics::MetricReport>& rows);

/// Columns = images, rows = the given image lists (each the same length).
ImageTensor tile_images(const std::vector<std::vector<ImageTensor>>& rows, int pad = 2);
/// Reconstruction with mask pixels tinted red.
ImageTensor overlay_mask(const ImageTensor& image, const BinaryMask& mask);

std::unique_ptr<guidance::GuidanceBackend> make_backend(guidance::BackendKind kind, const GuidanceSettings& s,
                                                        const std::vector<DataItem>* annotated = nullptr);

}  // namespace semcom::harness
