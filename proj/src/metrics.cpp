#include "semcom/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "semcom/error.hpp"

namespace semcom::metrics {

namespace {

void require_same(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw Error(Errc::DimensionMismatch, "images differ in shape");
}

void require_same(const ImageTensor& a, const BinaryMask& m) {
  if (a.height() != m.height() || a.width() != m.width()) {
    throw Error(Errc::DimensionMismatch, "mask size differs from image");
  }
}

double mse_to_psnr(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b);
  if (a.empty()) throw Error(Errc::DimensionMismatch, "empty image");
  double sum = 0.0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    sum += d * d;
  }
  return mse_to_psnr(sum / static_cast<double>(va.size()));
}

double region_mse(const ImageTensor& a, const ImageTensor& b, const BinaryMask& mask, bool inside) {
  require_same(a, b);
  require_same(a, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (mask.at(y, x) != inside) continue;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - b.at(y, x, c);
        sum += d * d;
      }
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n * a.channels());
}

double masked_psnr(const ImageTensor& a, const ImageTensor& b, const BinaryMask& mask) {
  return mse_to_psnr(region_mse(a, b, mask, true));
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b);
  const int h = a.height();
  const int w = a.width();
  if (h < kSsimWindow || w < kSsimWindow) throw Error(Errc::DimensionMismatch, "image smaller than the SSIM window");

  // Summed-area tables of x, y, x^2, y^2, xy on the grayscale images.
  const int stride = w + 1;
  std::vector<double> sx((h + 1) * stride), sy(sx.size()), sxx(sx.size()), syy(sx.size()), sxy(sx.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double ga = 0.0, gb = 0.0;
      for (int k = 0; k < a.channels(); ++k) {
        ga += a.at(r, c, k);
        gb += b.at(r, c, k);
      }
      ga /= a.channels();
      gb /= a.channels();
      const int i = (r + 1) * stride + c + 1;
      const int up = r * stride + c + 1;
      const int left = (r + 1) * stride + c;
      const int diag = r * stride + c;
      auto acc = [&](std::vector<double>& t, double v) { t[i] = v + t[up] + t[left] - t[diag]; };
      acc(sx, ga);
      acc(sy, gb);
      acc(sxx, ga * ga);
      acc(syy, gb * gb);
      acc(sxy, ga * gb);
    }
  const int n = kSsimWindow;
  const double area = n * n;
  double total = 0.0;
  int windows = 0;
  for (int r = 0; r + n <= h; ++r)
    for (int c = 0; c + n <= w; ++c) {
      auto box = [&](const std::vector<double>& t) {
        return t[(r + n) * stride + c + n] - t[r * stride + c + n] - t[(r + n) * stride + c] + t[r * stride + c];
      };
      const double mx = box(sx) / area;
      const double my = box(sy) / area;
      const double vx = std::max(0.0, box(sxx) / area - mx * mx);
      const double vy = std::max(0.0, box(syy) / area - my * my);
      const double cxy = box(sxy) / area - mx * my;
      total += ((2 * mx * my + kSsimC1) * (2 * cxy + kSsimC2)) /
               ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      ++windows;
    }
  return total / windows;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw Error(Errc::DimensionMismatch, "masks differ in size");
  std::size_t inter = 0, uni = 0;
  const auto ba = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    inter += (ba[i] && bb[i]);
    uni += (ba[i] || bb[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

IouEval iou_degeneration_eval(const ImageTensor& original, const ImageTensor& transmitted, const BinaryMask& gt_mask,
                              const std::string& query, const guidance::GuidanceBackend& backend, double threshold) {
  require_same(original, transmitted);
  require_same(original, gt_mask);
  const auto seg_original = guidance::binarize(backend.importance_map({original, query, std::nullopt}), threshold);
  const auto seg_transmitted =
      guidance::binarize(backend.importance_map({transmitted, query, std::nullopt}), threshold);
  IouEval e;
  e.iou_original = iou(seg_original, gt_mask);
  e.iou_transmitted = iou(seg_transmitted, gt_mask);
  e.degeneration = e.iou_original - e.iou_transmitted;
  return e;
}

std::string_view adapter_name(AdapterName name) noexcept {
  switch (name) {
    case AdapterName::ClipScore: return "clip_score";
    case AdapterName::Lpips: return "lpips";
    case AdapterName::Fid: return "fid";
  }
  return "lpips";
}

void AdapterRegistry::add(AdapterName name, AdapterFn fn) { adapters_.insert_or_assign(name, std::move(fn)); }

double AdapterRegistry::score(AdapterName name, const std::vector<ImageTensor>& a,
                              const std::vector<ImageTensor>& b) const {
  const auto it = adapters_.find(name);
  if (it == adapters_.end()) {
    throw Error(Errc::SkippedMetric, "no adapter registered for " + std::string(adapter_name(name)));
  }
  return it->second(a, b);
}

double AdapterRegistry::score(AdapterName name, const ImageTensor& a, const ImageTensor& b) const {
  return score(name, std::vector<ImageTensor>{a}, std::vector<ImageTensor>{b});
}

void MetricReport::set_iou(double original, double transmitted) {
  iou_original = original;
  iou_transmitted = transmitted;
  iou_degeneration = original - transmitted;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> columns = {
      "method",          "weight",           "snr_db",  "psnr_db",    "masked_psnr_db", "ssim",
      "iou_original",    "iou_transmitted",  "iou_degeneration",      "perceptual",     "clip_score",
      "lpips",           "fid",              "samples", "seed",       "config_hash"};
  return columns;
}

std::string csv_header() {
  std::string out;
  for (const auto& c : csv_columns()) out += (out.empty() ? "" : ",") + c;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::optional<double> adapter_field(const MetricReport& r, const std::string& name) {
  const auto it = r.adapter_scores.find(name);
  return it == r.adapter_scores.end() ? std::nullopt : it->second;
}

}  // namespace

std::string csv_row(const MetricReport& r) {
  std::ostringstream out;
  out << r.method << ',' << fmt(r.weight) << ',' << fmt(r.snr_db) << ',' << fmt(r.psnr_db) << ','
      << fmt(r.masked_psnr_db) << ',' << fmt(r.ssim) << ',' << fmt(r.iou_original) << ','
      << fmt(r.iou_transmitted) << ',' << fmt(r.iou_degeneration) << ',' << fmt(r.perceptual) << ','
      << fmt(adapter_field(r, "clip_score")) << ',' << fmt(adapter_field(r, "lpips")) << ','
      << fmt(adapter_field(r, "fid")) << ',' << r.samples << ',' << r.seed << ',' << r.config_hash;
  return out.str();
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json adapters = nlohmann::json::object();
  for (const auto& [name, value] : r.adapter_scores) adapters[name] = opt(value);
  return {{"method", r.method},
          {"weight", r.weight},
          {"snr_db", r.snr_db},
          {"psnr_db", r.psnr_db},
          {"masked_psnr_db", r.masked_psnr_db},
          {"ssim", r.ssim},
          {"iou_original", opt(r.iou_original)},
          {"iou_transmitted", opt(r.iou_transmitted)},
          {"iou_degeneration", opt(r.iou_degeneration)},
          {"perceptual", opt(r.perceptual)},
          {"adapter_scores", adapters},
          {"samples", r.samples},
          {"seed", r.seed},
          {"config_hash", r.config_hash}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.method = j.at("method").get<std::string>();
  r.weight = j.at("weight").get<double>();
  r.snr_db = j.at("snr_db").get<double>();
  r.psnr_db = j.at("psnr_db").get<double>();
  r.masked_psnr_db = j.at("masked_psnr_db").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.iou_original = opt(j, "iou_original");
  r.iou_transmitted = opt(j, "iou_transmitted");
  r.iou_degeneration = opt(j, "iou_degeneration");
  r.perceptual = opt(j, "perceptual");
  if (j.contains("adapter_scores")) {
    for (const auto& [name, value] : j.at("adapter_scores").items()) {
      r.adapter_scores[name] = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    }
  }
  r.samples = j.at("samples").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

}  // namespace semcom::metrics
