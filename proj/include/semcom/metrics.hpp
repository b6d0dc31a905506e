#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/guidance.hpp"
#include "semcom/image.hpp"

namespace semcom::metrics {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at 99 dB.
double psnr(const ImageTensor& a, const ImageTensor& b);
/// PSNR restricted to pixels set in `mask` (cap when the region is empty or exact).
double masked_psnr(const ImageTensor& a, const ImageTensor& b, const BinaryMask& mask);
/// Mean squared error over the pixels where mask == `inside`; 0 for an empty region.
double region_mse(const ImageTensor& a, const ImageTensor& b, const BinaryMask& mask, bool inside);

inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over all 8x8 windows (stride 1) of the channel-mean grayscale images.
double ssim(const ImageTensor& a, const ImageTensor& b);

/// |a & b| / |a | b|; 1 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct IouEval {
  double iou_original = 0.0;
  double iou_transmitted = 0.0;
  double degeneration = 0.0;
};

/// Segment both images with one backend and query, score each against gt.
IouEval iou_degeneration_eval(const ImageTensor& original, const ImageTensor& transmitted, const BinaryMask& gt_mask,
                              const std::string& query, const guidance::GuidanceBackend& backend,
                              double threshold = 0.5);

// External metric adapters (clip_score, lpips, fid, or toy stand-ins).

enum class AdapterName { ClipScore, Lpips, Fid };
std::string_view adapter_name(AdapterName name) noexcept;

using AdapterFn = std::function<double(const std::vector<ImageTensor>&, const std::vector<ImageTensor>&)>;

class AdapterRegistry {
 public:
  void add(AdapterName name, AdapterFn fn);
  bool has(AdapterName name) const noexcept { return adapters_.count(name) != 0; }
  /// Throws SkippedMetric when no adapter is registered under `name`.
  double score(AdapterName name, const std::vector<ImageTensor>& a, const std::vector<ImageTensor>& b) const;
  double score(AdapterName name, const ImageTensor& a, const ImageTensor& b) const;

 private:
  std::map<AdapterName, AdapterFn> adapters_;
};

struct MetricReport {
  std::string method;
  double weight = 1.0;
  double snr_db = 0.0;
  double psnr_db = 0.0;
  double masked_psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> iou_original;
  std::optional<double> iou_transmitted;
  std::optional<double> iou_degeneration;
  std::optional<double> perceptual;  // toy perceptual distance
  std::map<std::string, std::optional<double>> adapter_scores;  // null = skipped
  std::string config_hash;
  std::uint64_t seed = 0;
  int samples = 0;

  /// Sets both IoU fields and their exact difference.
  void set_iou(double original, double transmitted);
};

/// Fixed CSV column order.
const std::vector<std::string>& csv_columns();
std::string csv_header();
std::string csv_row(const MetricReport& report);

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace semcom::metrics
