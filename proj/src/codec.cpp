#include "semcom/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "semcom/error.hpp"

namespace semcom::codec {

std::size_t PatchGrid::critical_count() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), PatchLabel::Critical));
}

BinaryMask PatchGrid::critical_region() const {
  BinaryMask mask(rows * patch_size, cols * patch_size);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!critical(static_cast<std::size_t>(r) * cols + c)) continue;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) mask.set(r * patch_size + y, c * patch_size + x, true);
    }
  return mask;
}

namespace {

void check_geometry(int height, int width, int patch_size) {
  if (patch_size <= 0 || height <= 0 || width <= 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw Error(Errc::BadGeometry, "patch size " + std::to_string(patch_size) + " does not tile " +
                                       std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

PatchGrid partition(const ImageTensor& image, const BinaryMask& mask, int patch_size, double critical_fraction) {
  check_geometry(image.height(), image.width(), patch_size);
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw Error(Errc::DimensionMismatch, "mask size differs from image");
  }
  if (!(critical_fraction >= 0.0 && critical_fraction <= 1.0)) {
    throw Error(Errc::ConfigError, "critical fraction must lie in [0, 1]");
  }
  PatchGrid grid{patch_size, image.height() / patch_size, image.width() / patch_size, {}, mask, critical_fraction};
  const int area = patch_size * patch_size;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      int hits = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) hits += mask.at(r * patch_size + y, c * patch_size + x);
      const bool critical = hits > 0 && hits >= critical_fraction * area;
      grid.labels.push_back(critical ? PatchLabel::Critical : PatchLabel::Background);
    }
  return grid;
}

PatchGrid uniform_grid(int height, int width, int patch_size, PatchLabel label) {
  check_geometry(height, width, patch_size);
  const int rows = height / patch_size;
  const int cols = width / patch_size;
  return {patch_size,
          rows,
          cols,
          std::vector<PatchLabel>(static_cast<std::size_t>(rows) * cols, label),
          BinaryMask(height, width, label == PatchLabel::Critical),
          kDefaultCriticalFraction};
}

void extract_patch(const ImageTensor& image, int patch_size, std::size_t index, std::span<float> out) {
  const int cols = image.width() / patch_size;
  const int y0 = static_cast<int>(index / cols) * patch_size;
  const int x0 = static_cast<int>(index % cols) * patch_size;
  const int ch = image.channels();
  std::size_t k = 0;
  for (int y = 0; y < patch_size; ++y)
    for (int x = 0; x < patch_size; ++x)
      for (int c = 0; c < ch; ++c) out[k++] = image.at(y0 + y, x0 + x, c);
}

void insert_patch(ImageTensor& image, int patch_size, std::size_t index, std::span<const float> in) {
  const int cols = image.width() / patch_size;
  const int y0 = static_cast<int>(index / cols) * patch_size;
  const int x0 = static_cast<int>(index % cols) * patch_size;
  const int ch = image.channels();
  std::size_t k = 0;
  for (int y = 0; y < patch_size; ++y)
    for (int x = 0; x < patch_size; ++x)
      for (int c = 0; c < ch; ++c) image.at(y0 + y, x0 + x, c) = in[k++];
}

nn::Matrix patch_features(const ImageTensor& image, const ImportanceMap* importance, int patch_size) {
  check_geometry(image.height(), image.width(), patch_size);
  if (importance && (importance->height != image.height() || importance->width != image.width())) {
    throw Error(Errc::DimensionMismatch, "importance map size differs from image");
  }
  const int rows = image.height() / patch_size;
  const int cols = image.width() / patch_size;
  const int ch = image.channels();
  nn::Matrix features = nn::Matrix::Zero(kPatchFeatureDim, rows * cols);
  const double area = patch_size * patch_size;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double imp = 0.0, lum = 0.0, lum2 = 0.0;
      double rgb[3] = {0.0, 0.0, 0.0};
      for (int y = r * patch_size; y < (r + 1) * patch_size; ++y)
        for (int x = c * patch_size; x < (c + 1) * patch_size; ++x) {
          if (importance) imp += importance->at(y, x);
          double l = 0.0;
          for (int k = 0; k < ch; ++k) {
            l += image.at(y, x, k);
            if (k < 3) rgb[k] += image.at(y, x, k);
          }
          l /= ch;
          lum += l;
          lum2 += l * l;
        }
      const int j = r * cols + c;
      features(0, j) = static_cast<float>(imp / area);
      for (int k = 0; k < 3; ++k) features(1 + k, j) = static_cast<float>(rgb[std::min(k, ch - 1)] / area);
      const double mean = lum / area;
      features(4, j) = static_cast<float>(std::sqrt(std::max(0.0, lum2 / area - mean * mean)));
    }
  return features;
}

nn::Vector query_embedding(const nn::Matrix& features) {
  const double total = features.row(0).sum();
  if (total <= 0.0) return features.rowwise().mean();
  nn::Vector q = features * features.row(0).transpose();
  return q / static_cast<float>(total);
}

std::vector<double> attention_scores(const nn::Matrix& features, const nn::Vector& query, const nn::Matrix& wq,
                                     const nn::Matrix& wk) {
  if (features.cols() == 0) throw Error(Errc::DimensionMismatch, "no patches to score");
  if (features.rows() != wk.cols() || query.size() != wq.cols() || wq.rows() != wk.rows()) {
    throw Error(Errc::DimensionMismatch, "attention projection sizes disagree with features or query");
  }
  const Eigen::VectorXd q = (wq.cast<double>() * query.cast<double>());
  const Eigen::MatrixXd k = wk.cast<double>() * features.cast<double>();
  Eigen::VectorXd logits = (k.transpose() * q) / std::sqrt(static_cast<double>(wq.rows()));
  logits.array() -= logits.maxCoeff();
  const Eigen::VectorXd e = logits.array().exp();
  const double z = e.sum();
  std::vector<double> scores(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) scores[static_cast<std::size_t>(i)] = e[i] / z;
  return scores;
}

AttentionHead::AttentionHead(int feature_dim, int key_dim, std::uint64_t seed)
    : wq_("attention.wq", key_dim, feature_dim), wk_("attention.wk", key_dim, feature_dim) {
  CounterRng rng(seed, 0xA77);
  const float bound = 1.0f / std::sqrt(static_cast<float>(feature_dim));
  for (Eigen::Index i = 0; i < wq_.value.size(); ++i) wq_.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  for (Eigen::Index i = 0; i < wk_.value.size(); ++i) wk_.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
}

std::vector<double> AttentionHead::scores(const nn::Matrix& features, const nn::Vector& query) const {
  return attention_scores(features, query, wq_.value, wk_.value);
}

int BudgetPlan::sum() const noexcept { return std::accumulate(per_patch_symbols.begin(), per_patch_symbols.end(), 0); }

BudgetPlan allocate_bandwidth(const PatchGrid& grid, int total, double weight, std::span<const double> scores) {
  const std::size_t n = grid.count();
  if (n == 0) throw Error(Errc::BadGeometry, "empty patch grid");
  if (!std::isfinite(weight) || weight < 1.0) throw Error(Errc::ConfigError, "importance weight must be >= 1");
  if (total < static_cast<long>(n)) {
    throw Error(Errc::InsufficientBudget,
                "budget " + std::to_string(total) + " below one symbol per patch (" + std::to_string(n) + ")");
  }
  if (!scores.empty() && scores.size() != n) throw Error(Errc::DimensionMismatch, "one score per patch required");

  const long nc = static_cast<long>(grid.critical_count());
  const long nb = static_cast<long>(n) - nc;
  const double b_star = total / (nc * weight + nb);
  const double c_star = weight * b_star;
  const long base_b = std::max(1L, static_cast<long>(std::floor(b_star)));
  long base_c = 0;
  if (nc > 0) base_c = std::max(1L, std::min(static_cast<long>(std::floor(c_star)), (total - nb * base_b) / nc));

  BudgetPlan plan{std::vector<int>(n), weight, total};
  std::vector<double> frac(n);
  for (std::size_t i = 0; i < n; ++i) {
    plan.per_patch_symbols[i] = static_cast<int>(grid.critical(i) ? base_c : base_b);
    frac[i] = grid.critical(i) ? c_star - base_c : b_star - base_b;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(frac[a] - frac[b]) > 1e-9) return frac[a] > frac[b];
    if (grid.critical(a) != grid.critical(b)) return grid.critical(a);
    const double sa = scores.empty() ? 0.0 : scores[a];
    const double sb = scores.empty() ? 0.0 : scores[b];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  long remainder = total - plan.sum();
  for (std::size_t k = 0; remainder > 0; ++k, --remainder) ++plan.per_patch_symbols[order[k % n]];
  return plan;
}

void validate_plan(const PatchGrid& grid, const BudgetPlan& plan) {
  const auto& budgets = plan.per_patch_symbols;
  if (budgets.size() != grid.count()) throw Error(Errc::CorruptSideInfo, "budget count differs from patch count");
  int min_critical = std::numeric_limits<int>::max();
  int max_background = 0;
  long sum = 0;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] < 1) throw Error(Errc::CorruptSideInfo, "patch budget below one symbol");
    sum += budgets[i];
    if (grid.critical(i)) {
      min_critical = std::min(min_critical, budgets[i]);
    } else {
      max_background = std::max(max_background, budgets[i]);
    }
  }
  if (sum > plan.total) throw Error(Errc::CorruptSideInfo, "budgets exceed the declared total");
  if (max_background > min_critical) {
    throw Error(Errc::CorruptSideInfo, "a background patch out-budgets a critical patch");
  }
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(unsigned v) {
    if (v > 0xFFFF) throw Error(Errc::CorruptSideInfo, "value exceeds 16 bits");
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>((v >> s) & 0xFF));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int s = 0; s < 64; s += 8) u8(static_cast<std::uint8_t>((bits >> s) & 0xFF));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  std::uint64_t take(int n) {
    if (pos + static_cast<std::size_t>(n) > bytes.size()) throw Error(Errc::CorruptSideInfo, "truncated side info");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  unsigned u16() { return static_cast<unsigned>(take(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }
  bool done() const noexcept { return pos == bytes.size(); }

 private:
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

constexpr char kMagic[4] = {'S', 'M', 'C', '1'};

}  // namespace

std::vector<std::uint8_t> serialize(const SideInfo& side) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(static_cast<unsigned>(side.height));
  w.u16(static_cast<unsigned>(side.width));
  w.u16(static_cast<unsigned>(side.channels));
  w.u16(static_cast<unsigned>(side.grid.patch_size));
  w.f64(side.grid.critical_fraction);

  // Alternating run lengths starting with unset pixels; a run longer than the
  // 16-bit field is split by an empty run of the other value.
  std::vector<unsigned> runs;
  std::uint8_t current = 0;
  unsigned run = 0;
  for (auto bit : side.grid.mask.bits()) {
    const std::uint8_t v = bit ? 1 : 0;
    if (v != current) {
      runs.push_back(run);
      run = 0;
      current = v;
    } else if (run == 0xFFFF) {
      runs.push_back(run);
      runs.push_back(0);
      run = 0;
    }
    ++run;
  }
  runs.push_back(run);
  w.u32(static_cast<std::uint32_t>(runs.size()));
  for (auto r : runs) w.u16(r);

  w.f64(side.plan.weight);
  w.u32(static_cast<std::uint32_t>(side.plan.total));
  w.u16(static_cast<unsigned>(side.plan.per_patch_symbols.size()));
  for (int b : side.plan.per_patch_symbols) w.u16(static_cast<unsigned>(b));
  return std::move(w.bytes);
}

SideInfo deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.take(1) != static_cast<std::uint8_t>(c)) throw Error(Errc::CorruptSideInfo, "bad side info magic");
  }
  SideInfo side;
  side.height = static_cast<int>(r.u16());
  side.width = static_cast<int>(r.u16());
  side.channels = static_cast<int>(r.u16());
  const int patch = static_cast<int>(r.u16());
  if (side.channels < 1 || patch < 1 || side.height == 0 || side.width == 0 || side.height % patch != 0 ||
      side.width % patch != 0) {
    throw Error(Errc::CorruptSideInfo, "side info geometry is invalid");
  }
  const double fraction = r.f64();
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(Errc::CorruptSideInfo, "bad critical fraction");
  const std::size_t pixels = static_cast<std::size_t>(side.height) * side.width;

  const std::uint32_t n_runs = r.u32();
  if (n_runs == 0 || n_runs > 2 * pixels + 1) throw Error(Errc::CorruptSideInfo, "bad run count");
  std::vector<std::uint8_t> bits;
  bits.reserve(pixels);
  std::uint8_t value = 0;
  for (std::uint32_t i = 0; i < n_runs; ++i) {
    const unsigned len = r.u16();
    if (bits.size() + len > pixels) throw Error(Errc::CorruptSideInfo, "mask runs overflow the image");
    bits.insert(bits.end(), len, value);
    value ^= 1;
  }
  if (bits.size() != pixels) throw Error(Errc::CorruptSideInfo, "mask runs do not cover the image");
  const BinaryMask mask(side.height, side.width, std::move(bits));
  const ImageTensor geometry(side.height, side.width, side.channels);
  side.grid = partition(geometry, mask, patch, fraction);
  const std::size_t count = side.grid.count();

  side.plan.weight = r.f64();
  if (!std::isfinite(side.plan.weight) || side.plan.weight < 1.0) throw Error(Errc::CorruptSideInfo, "bad weight");
  side.plan.total = static_cast<int>(r.u32());
  const unsigned n_budgets = r.u16();
  side.plan.per_patch_symbols.reserve(n_budgets);
  for (unsigned i = 0; i < n_budgets; ++i) side.plan.per_patch_symbols.push_back(static_cast<int>(r.u16()));
  if (!r.done()) throw Error(Errc::CorruptSideInfo, "trailing bytes after side info");
  if (side.plan.per_patch_symbols.size() != count) throw Error(Errc::CorruptSideInfo, "budget count mismatch");
  validate_plan(side.grid, side.plan);
  return side;
}

CodecModel::CodecModel(CodecConfig config) : config_(std::move(config)) {
  if (config_.patch_size < 1 || config_.channels < 1 || config_.code_width < 1 || config_.attention_dim < 1) {
    throw Error(Errc::ConfigError, "codec dimensions must be positive");
  }
  CounterRng rng(config_.seed, 0xC0DEC);
  const int d = config_.patch_dim();
  const int k = config_.code_width;
  auto build = [&](const std::string& name, const std::vector<int>& hidden) {
    std::vector<int> enc{d + config_.mask_dim()};
    enc.insert(enc.end(), hidden.begin(), hidden.end());
    enc.push_back(k);
    std::vector<int> dec{k + 1 + config_.mask_dim()};
    dec.insert(dec.end(), hidden.rbegin(), hidden.rend());
    dec.push_back(d);
    return PathNets{nn::Mlp(name + ".encoder", enc, nn::Activation::Silu, nn::Activation::Identity, rng),
                    nn::Mlp(name + ".decoder", dec, nn::Activation::Silu, nn::Activation::Sigmoid, rng)};
  };
  hifi_ = build("hifi", config_.hifi_hidden);
  light_ = build("light", config_.light_hidden);
  attention_ = AttentionHead(kPatchFeatureDim, config_.attention_dim, config_.seed);
}

std::size_t CodecModel::parameter_count(Path p) const {
  const auto& nets = path(p);
  return nets.encoder.parameter_count() + nets.decoder.parameter_count();
}

nn::ParamList CodecModel::params() {
  nn::ParamList list;
  for (auto* nets : {&hifi_, &light_}) {
    for (auto* p : nets->encoder.params()) list.push_back(p);
    for (auto* p : nets->decoder.params()) list.push_back(p);
  }
  return list;
}

nn::ParamList CodecModel::all_params() {
  auto list = params();
  for (auto* p : attention_.params()) list.push_back(p);
  return list;
}

void mask_codes(nn::Matrix& codes, std::span<const int> budgets) {
  const auto rows = codes.rows();
  for (Eigen::Index j = 0; j < codes.cols(); ++j) {
    const auto k = std::clamp<Eigen::Index>(budgets[static_cast<std::size_t>(j)], 0, rows);
    codes.col(j).tail(rows - k).setZero();
  }
}

nn::Matrix patch_mask_bits(const BinaryMask& mask, int patch_size, std::span<const std::size_t> patches) {
  const int cols = mask.width() / patch_size;
  nn::Matrix bits(patch_size * patch_size, static_cast<Eigen::Index>(patches.size()));
  for (std::size_t j = 0; j < patches.size(); ++j) {
    const int y0 = static_cast<int>(patches[j] / cols) * patch_size;
    const int x0 = static_cast<int>(patches[j] % cols) * patch_size;
    for (int y = 0; y < patch_size; ++y)
      for (int x = 0; x < patch_size; ++x) {
        bits(y * patch_size + x, static_cast<Eigen::Index>(j)) = mask.at(y0 + y, x0 + x) ? 1.0f : 0.0f;
      }
  }
  return bits;
}

nn::Matrix encoder_input(const ImageTensor& image, const PatchGrid& grid, std::span<const std::size_t> patches,
                         const CodecConfig& cfg) {
  const int d = cfg.patch_dim();
  nn::Matrix x(d + cfg.mask_dim(), static_cast<Eigen::Index>(patches.size()));
  std::vector<float> buffer(static_cast<std::size_t>(d));
  for (std::size_t j = 0; j < patches.size(); ++j) {
    extract_patch(image, cfg.patch_size, patches[j], buffer);
    x.col(static_cast<Eigen::Index>(j)).head(d) = Eigen::Map<const nn::Vector>(buffer.data(), d);
  }
  if (cfg.mask_input) x.bottomRows(cfg.mask_dim()) = patch_mask_bits(grid.mask, cfg.patch_size, patches);
  return x;
}

nn::Matrix decoder_input(const nn::Matrix& codes, std::span<const int> budgets, const nn::Matrix& mask_bits,
                         const CodecConfig& cfg) {
  const auto k = codes.rows();
  nn::Matrix in(k + 1 + cfg.mask_dim(), codes.cols());
  in.topRows(k) = codes;
  for (Eigen::Index j = 0; j < codes.cols(); ++j) {
    const auto b = std::clamp<Eigen::Index>(budgets[static_cast<std::size_t>(j)], 0, k);
    in.col(j).segment(b, k - b).setZero();
    in(k, j) = static_cast<float>(budgets[static_cast<std::size_t>(j)]) / static_cast<float>(cfg.code_width);
  }
  if (cfg.mask_input) in.bottomRows(cfg.mask_dim()) = mask_bits;
  return in;
}

namespace {

struct Routing {
  std::vector<std::size_t> patches[2];  // patch indices per path
  std::vector<int> budgets[2];
};

Routing route(const PatchGrid& grid, const BudgetPlan& plan) {
  Routing r;
  for (std::size_t i = 0; i < grid.count(); ++i) {
    const int p = grid.critical(i) ? 0 : 1;
    r.patches[p].push_back(i);
    r.budgets[p].push_back(plan.per_patch_symbols[i]);
  }
  return r;
}

constexpr Path kPaths[2] = {Path::Hifi, Path::Light};

}  // namespace

Encoded encode(const ImageTensor& image, const PatchGrid& grid, const BudgetPlan& plan, const CodecModel& model) {
  const auto& cfg = model.config();
  if (image.channels() != cfg.channels || grid.patch_size != cfg.patch_size ||
      grid.rows * cfg.patch_size != image.height() || grid.cols * cfg.patch_size != image.width()) {
    throw Error(Errc::PlanMismatch, "grid or image geometry does not match the model");
  }
  if (plan.per_patch_symbols.size() != grid.count()) throw Error(Errc::PlanMismatch, "one budget per patch required");
  for (int b : plan.per_patch_symbols) {
    if (b < 1 || b > cfg.code_width) {
      throw Error(Errc::PlanMismatch, "patch budget " + std::to_string(b) + " outside [1, " +
                                          std::to_string(cfg.code_width) + "]");
    }
  }
  if (plan.sum() > plan.total) throw Error(Errc::PlanMismatch, "budgets exceed the plan total");

  if (grid.mask.height() != image.height() || grid.mask.width() != image.width()) {
    throw Error(Errc::PlanMismatch, "grid mask size differs from image");
  }
  const Routing routing = route(grid, plan);
  std::vector<nn::Matrix> codes(grid.count());
  for (int p = 0; p < 2; ++p) {
    const auto& idx = routing.patches[p];
    if (idx.empty()) continue;
    const nn::Matrix c = model.path(kPaths[p]).encoder.forward(encoder_input(image, grid, idx, cfg));
    for (std::size_t j = 0; j < idx.size(); ++j) codes[idx[j]] = c.col(static_cast<Eigen::Index>(j));
  }

  channel::SymbolVector raw;
  raw.values.reserve(static_cast<std::size_t>(plan.sum()));
  for (std::size_t i = 0; i < grid.count(); ++i) {
    for (int k = 0; k < plan.per_patch_symbols[i]; ++k) raw.values.push_back(codes[i](k, 0));
  }
  return {channel::power_normalize(raw), SideInfo{image.height(), image.width(), image.channels(), grid, plan}};
}

ImageTensor decode(const channel::SymbolVector& received, const SideInfo& side, const CodecModel& model) {
  const auto& cfg = model.config();
  if (side.channels != cfg.channels || side.grid.patch_size != cfg.patch_size ||
      side.grid.rows * cfg.patch_size != side.height || side.grid.cols * cfg.patch_size != side.width) {
    throw Error(Errc::CorruptSideInfo, "side info geometry does not match the model");
  }
  validate_plan(side.grid, side.plan);
  for (int b : side.plan.per_patch_symbols) {
    if (b > cfg.code_width) throw Error(Errc::CorruptSideInfo, "patch budget exceeds the code width");
  }
  if (received.length() != static_cast<std::size_t>(side.plan.sum())) {
    throw Error(Errc::CorruptSideInfo, "received " + std::to_string(received.length()) + " symbols, side info expects " +
                                           std::to_string(side.plan.sum()));
  }

  std::vector<std::size_t> offset(side.grid.count());
  std::size_t at = 0;
  for (std::size_t i = 0; i < side.grid.count(); ++i) {
    offset[i] = at;
    at += static_cast<std::size_t>(side.plan.per_patch_symbols[i]);
  }
  const Routing routing = route(side.grid, side.plan);
  ImageTensor out(side.height, side.width, side.channels);
  std::vector<float> buffer(static_cast<std::size_t>(cfg.patch_dim()));
  for (int p = 0; p < 2; ++p) {
    const auto& idx = routing.patches[p];
    if (idx.empty()) continue;
    nn::Matrix codes = nn::Matrix::Zero(cfg.code_width, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      for (int k = 0; k < side.plan.per_patch_symbols[idx[j]]; ++k) {
        codes(k, static_cast<Eigen::Index>(j)) = static_cast<float>(received.values[offset[idx[j]] + k]);
      }
    }
    const nn::Matrix bits =
        cfg.mask_input ? patch_mask_bits(side.grid.mask, cfg.patch_size, idx) : nn::Matrix(0, codes.cols());
    const nn::Matrix y = model.path(kPaths[p]).decoder.forward(decoder_input(codes, routing.budgets[p], bits, cfg));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      for (int k = 0; k < cfg.patch_dim(); ++k) buffer[k] = y(k, static_cast<Eigen::Index>(j));
      insert_patch(out, cfg.patch_size, idx[j], buffer);
    }
  }
  out.clamp01();
  return out;
}

}  // namespace semcom::codec
