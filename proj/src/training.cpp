#include "semcom/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "semcom/checkpoint.hpp"
#include "semcom/error.hpp"

namespace semcom::training {

namespace {

void require_same(const ImageTensor& a, const ImageTensor& b, const BinaryMask& m) {
  if (!a.same_shape(b) || a.height() != m.height() || a.width() != m.width()) {
    throw Error(Errc::DimensionMismatch, "recon, target and mask must agree in size");
  }
}

struct RegionStats {
  std::size_t masked = 0;
  std::size_t unmasked = 0;
};

RegionStats count_regions(const BinaryMask& mask) {
  RegionStats s;
  s.masked = mask.count();
  s.unmasked = mask.pixel_count() - s.masked;
  return s;
}

}  // namespace

double weighted_mse(const ImageTensor& recon, const ImageTensor& target, const BinaryMask& mask, double w) {
  require_same(recon, target, mask);
  double in = 0.0, out = 0.0;
  const int ch = recon.channels();
  for (int y = 0; y < recon.height(); ++y)
    for (int x = 0; x < recon.width(); ++x) {
      double e = 0.0;
      for (int c = 0; c < ch; ++c) {
        const double d = static_cast<double>(recon.at(y, x, c)) - target.at(y, x, c);
        e += d * d;
      }
      (mask.at(y, x) ? in : out) += e / ch;
    }
  const auto n = count_regions(mask);
  return (n.masked ? w * in / static_cast<double>(n.masked) : 0.0) +
         (n.unmasked ? out / static_cast<double>(n.unmasked) : 0.0);
}

ImageTensor weighted_mse_grad(const ImageTensor& recon, const ImageTensor& target, const BinaryMask& mask, double w) {
  require_same(recon, target, mask);
  const auto n = count_regions(mask);
  const int ch = recon.channels();
  const double k_in = n.masked ? 2.0 * w / (static_cast<double>(n.masked) * ch) : 0.0;
  const double k_out = n.unmasked ? 2.0 / (static_cast<double>(n.unmasked) * ch) : 0.0;
  ImageTensor grad(recon.height(), recon.width(), ch);
  for (int y = 0; y < recon.height(); ++y)
    for (int x = 0; x < recon.width(); ++x) {
      const double k = mask.at(y, x) ? k_in : k_out;
      for (int c = 0; c < ch; ++c) {
        grad.at(y, x, c) = static_cast<float>(k * (static_cast<double>(recon.at(y, x, c)) - target.at(y, x, c)));
      }
    }
  return grad;
}

std::vector<CodecSample> codec_samples(const std::vector<synthetic::Sample>& samples,
                                       const guidance::GuidanceBackend& backend, double threshold) {
  std::vector<CodecSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto map = backend.importance_map({s.image, s.query, s.id});
    out.push_back({s.id, s.image, guidance::binarize(map, threshold), s.mask, s.query});
  }
  return out;
}

double TrainConfig::effective_loss_weight() const noexcept {
  if (uniform_baseline) return 1.0;
  return loss_weight.value_or(importance_weight);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
  if (!(importance_weight >= 1.0) || !std::isfinite(importance_weight)) fail("importance_weight must be >= 1");
  if (loss_weight && !(*loss_weight >= 1.0 && std::isfinite(*loss_weight))) fail("loss_weight must be >= 1");
  if (total_symbols < 1) fail("total_symbols must be positive");
  if (!(snr_lo_db <= snr_hi_db) || !std::isfinite(snr_lo_db) || !std::isfinite(snr_hi_db)) {
    fail("training SNR range must be finite with lo <= hi");
  }
  if (epochs < 1 || batch_size < 1) fail("epochs and batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(critical_fraction >= 0.0 && critical_fraction <= 1.0)) fail("critical_fraction must lie in [0, 1]");
  if (!(side_info_charge >= 0.0) || !std::isfinite(side_info_charge)) fail("side_info_charge must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"importance_weight", importance_weight},
          {"loss_weight", loss_weight ? nlohmann::json(*loss_weight) : nlohmann::json(nullptr)},
          {"total_symbols", total_symbols},
          {"snr_lo_db", snr_lo_db},
          {"snr_hi_db", snr_hi_db},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"cosine_schedule", cosine_schedule},
          {"seed", seed},
          {"critical_fraction", critical_fraction},
          {"uniform_baseline", uniform_baseline},
          {"model",
           {{"patch_size", model.patch_size},
            {"channels", model.channels},
            {"code_width", model.code_width},
            {"hifi_hidden", model.hifi_hidden},
            {"light_hidden", model.light_hidden},
            {"attention_dim", model.attention_dim},
            {"mask_input", model.mask_input},
            {"seed", model.seed}}}};
  // only present when charged, so hashes of free-side-info configs stay put
  if (side_info_charge > 0.0) j["side_info_charge"] = side_info_charge;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.importance_weight = j.at("importance_weight").get<double>();
  if (!j.at("loss_weight").is_null()) c.loss_weight = j.at("loss_weight").get<double>();
  c.total_symbols = j.at("total_symbols").get<int>();
  c.snr_lo_db = j.at("snr_lo_db").get<double>();
  c.snr_hi_db = j.at("snr_hi_db").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.cosine_schedule = j.at("cosine_schedule").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.critical_fraction = j.at("critical_fraction").get<double>();
  c.uniform_baseline = j.at("uniform_baseline").get<bool>();
  c.side_info_charge = j.value("side_info_charge", 0.0);
  const auto& m = j.at("model");
  c.model.patch_size = m.at("patch_size").get<int>();
  c.model.channels = m.at("channels").get<int>();
  c.model.code_width = m.at("code_width").get<int>();
  c.model.hifi_hidden = m.at("hifi_hidden").get<std::vector<int>>();
  c.model.light_hidden = m.at("light_hidden").get<std::vector<int>>();
  c.model.attention_dim = m.at("attention_dim").get<int>();
  c.model.mask_input = m.at("mask_input").get<bool>();
  c.model.seed = m.at("seed").get<std::uint64_t>();
  return c;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string TrainConfig::hash() const { return fnv1a_hex(to_json().dump()); }

FrameLayout frame_layout(const ImageTensor& image, const BinaryMask& mask, const TrainConfig& cfg,
                         const codec::CodecModel& model) {
  const int p = cfg.model.patch_size;
  FrameLayout layout;
  if (cfg.uniform_baseline) {
    layout.grid = codec::uniform_grid(image.height(), image.width(), p, codec::PatchLabel::Critical);
  } else {
    layout.grid = codec::partition(image, mask, p, cfg.critical_fraction);
  }
  ImportanceMap importance{mask.height(), mask.width(), {}, ""};
  importance.values.reserve(mask.pixel_count());
  for (auto bit : layout.grid.mask.bits()) importance.values.push_back(bit ? 1.0f : 0.0f);
  const auto features = codec::patch_features(image, &importance, p);
  const auto scores = model.attention().scores(features, codec::query_embedding(features));
  const double weight = cfg.uniform_baseline ? 1.0 : cfg.importance_weight;
  int total = cfg.total_symbols;
  if (cfg.side_info_charge > 0.0) {
    total -= static_cast<int>(std::ceil(static_cast<double>(side_info_bytes(layout.grid, image.channels())) *
                                        cfg.side_info_charge));
  }
  layout.plan = codec::allocate_bandwidth(layout.grid, total, weight, scores);
  return layout;
}

std::size_t side_info_bytes(const codec::PatchGrid& grid, int channels) {
  codec::BudgetPlan plan{std::vector<int>(grid.count(), 1), 1.0, static_cast<int>(grid.count())};
  return codec::serialize({grid.mask.height(), grid.mask.width(), channels, grid, plan}).size();
}

namespace {

constexpr codec::Path kPaths[2] = {codec::Path::Hifi, codec::Path::Light};

struct Column {
  std::size_t frame;
  std::size_t patch;
};

// Forward (and optionally backward) pass over one batch; returns the mean loss.
double run_batch(codec::CodecModel& model, const TrainConfig& cfg, std::span<const CodecSample* const> batch,
                 std::span<const FrameLayout* const> layouts, double snr_db, const CounterRng& noise, bool backward) {
  const auto& mc = model.config();
  const int k_width = mc.code_width;
  const std::size_t n_frames = batch.size();
  const std::size_t n_patches = layouts[0]->grid.count();
  const double sigma = std::sqrt(channel::noise_variance(snr_db));
  const double w_loss = cfg.effective_loss_weight();

  struct PathBatch {
    std::vector<Column> cols;
    std::vector<int> budgets;
    nn::Matrix enc_in, mask_bits, codes, dec_in, out;
    nn::Mlp::Cache enc_cache, dec_cache;
  } paths[2];

  for (std::size_t f = 0; f < n_frames; ++f) {
    const auto& layout = *layouts[f];
    for (std::size_t i = 0; i < n_patches; ++i) {
      auto& pb = paths[layout.grid.critical(i) ? 0 : 1];
      pb.cols.push_back({f, i});
      pb.budgets.push_back(layout.plan.per_patch_symbols[i]);
    }
  }

  // Encode and accumulate per-frame code energy.
  std::vector<double> energy(n_frames, 0.0), budget_sum(n_frames, 0.0);
  std::vector<float> buffer(static_cast<std::size_t>(mc.patch_dim()));
  for (int p = 0; p < 2; ++p) {
    auto& pb = paths[p];
    if (pb.cols.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pb.cols.size());
    pb.enc_in.resize(mc.patch_dim() + mc.mask_dim(), n);
    pb.mask_bits.resize(mc.mask_dim(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& col = pb.cols[static_cast<std::size_t>(j)];
      codec::extract_patch(batch[col.frame]->image, mc.patch_size, col.patch, buffer);
      pb.enc_in.col(j).head(mc.patch_dim()) = Eigen::Map<const nn::Vector>(buffer.data(), mc.patch_dim());
      if (mc.mask_input) {
        const std::size_t one[1] = {col.patch};
        pb.mask_bits.col(j) = codec::patch_mask_bits(layouts[col.frame]->grid.mask, mc.patch_size, one).col(0);
      }
    }
    if (mc.mask_input) pb.enc_in.bottomRows(mc.mask_dim()) = pb.mask_bits;
    pb.codes = model.path(kPaths[p]).encoder.forward(pb.enc_in, &pb.enc_cache);
    codec::mask_codes(pb.codes, pb.budgets);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto f = pb.cols[static_cast<std::size_t>(j)].frame;
      energy[f] += pb.codes.col(j).squaredNorm();
      budget_sum[f] += pb.budgets[static_cast<std::size_t>(j)];
    }
  }
  std::vector<double> scale(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (!(energy[f] > 0.0)) throw Error(Errc::ZeroPower, "frame encoded to all-zero symbols");
    scale[f] = std::sqrt(budget_sum[f] / energy[f]);
  }

  // Normalize, add channel noise, decode, reassemble.
  std::vector<ImageTensor> recon(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    recon[f] = ImageTensor(batch[f]->image.height(), batch[f]->image.width(), batch[f]->image.channels());
  }
  for (int p = 0; p < 2; ++p) {
    auto& pb = paths[p];
    if (pb.cols.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pb.cols.size());
    nn::Matrix received(k_width, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& col = pb.cols[static_cast<std::size_t>(j)];
      const int b = pb.budgets[static_cast<std::size_t>(j)];
      for (int k = 0; k < k_width; ++k) {
        if (k >= b) {
          received(k, j) = 0.0f;
          continue;
        }
        const std::uint64_t index = (col.frame * n_patches + col.patch) * static_cast<std::uint64_t>(k_width) + k;
        received(k, j) = static_cast<float>(pb.codes(k, j) * scale[col.frame] + sigma * noise.normal_at(index));
      }
    }
    pb.dec_in = codec::decoder_input(received, pb.budgets, pb.mask_bits, mc);
    pb.out = model.path(kPaths[p]).decoder.forward(pb.dec_in, &pb.dec_cache);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& col = pb.cols[static_cast<std::size_t>(j)];
      codec::insert_patch(recon[col.frame], mc.patch_size, col.patch,
                          std::span<const float>(pb.out.col(j).data(), static_cast<std::size_t>(mc.patch_dim())));
    }
  }

  double loss = 0.0;
  std::vector<ImageTensor> grads(backward ? n_frames : 0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const auto& loss_mask = layouts[f]->grid.mask;
    loss += weighted_mse(recon[f], batch[f]->image, loss_mask, w_loss);
    if (backward) grads[f] = weighted_mse_grad(recon[f], batch[f]->image, loss_mask, w_loss);
  }
  loss /= static_cast<double>(n_frames);
  if (!std::isfinite(loss)) throw Error(Errc::DivergedTraining, "non-finite codec loss");
  if (!backward) return loss;

  // Backward: decoder, channel (identity), power normalization, encoder.
  const float inv_batch = 1.0f / static_cast<float>(n_frames);
  nn::Matrix d_symbols[2];
  std::vector<double> dot(n_frames, 0.0);
  for (int p = 0; p < 2; ++p) {
    auto& pb = paths[p];
    if (pb.cols.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pb.cols.size());
    nn::Matrix dy(mc.patch_dim(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& col = pb.cols[static_cast<std::size_t>(j)];
      codec::extract_patch(grads[col.frame], mc.patch_size, col.patch, buffer);
      dy.col(j) = Eigen::Map<const nn::Vector>(buffer.data(), mc.patch_dim()) * inv_batch;
    }
    const nn::Matrix d_in = model.path(kPaths[p]).decoder.backward(dy, pb.dec_cache);
    d_symbols[p] = d_in.topRows(k_width);
    codec::mask_codes(d_symbols[p], pb.budgets);
    for (Eigen::Index j = 0; j < n; ++j) {
      dot[pb.cols[static_cast<std::size_t>(j)].frame] += d_symbols[p].col(j).dot(pb.codes.col(j));
    }
  }
  for (int p = 0; p < 2; ++p) {
    auto& pb = paths[p];
    if (pb.cols.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pb.cols.size());
    nn::Matrix d_codes(k_width, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto f = pb.cols[static_cast<std::size_t>(j)].frame;
      const double s = scale[f];
      const double coupling = s * s * s / budget_sum[f] * dot[f];
      d_codes.col(j) = d_symbols[p].col(j) * static_cast<float>(s) - pb.codes.col(j) * static_cast<float>(coupling);
    }
    codec::mask_codes(d_codes, pb.budgets);
    model.path(kPaths[p]).encoder.backward(d_codes, pb.enc_cache);
  }
  return loss;
}

void check_data(std::span<const CodecSample> data) {
  if (data.empty()) throw Error(Errc::ConfigError, "training set is empty");
  for (const auto& s : data) {
    if (s.image.height() != data[0].image.height() || s.image.width() != data[0].image.width() ||
        s.image.channels() != data[0].image.channels()) {
      throw Error(Errc::DimensionMismatch, "training images differ in shape");
    }
  }
}

}  // namespace

TrainResult train_codec(const TrainConfig& cfg, std::span<const CodecSample> data) {
  cfg.validate();
  check_data(data);
  TrainResult result{codec::CodecModel(cfg.model), {}, {}, cfg.hash()};
  auto& model = result.model;

  std::vector<FrameLayout> layouts;
  layouts.reserve(data.size());
  for (const auto& s : data) layouts.push_back(frame_layout(s.image, s.mask, cfg, model));

  nn::Adam adam(model.params(), {static_cast<float>(cfg.learning_rate)});
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::vector<const CodecSample*> batch;
  std::vector<const FrameLayout*> batch_layouts;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle(cfg.seed, 0x5EED0000ull + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      batch.clear();
      batch_layouts.clear();
      for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) {
        batch.push_back(&data[order[i]]);
        batch_layouts.push_back(&layouts[order[i]]);
      }
      const CounterRng step_rng(cfg.seed, 0x57E90000000ull + static_cast<std::uint64_t>(step));
      const double snr = cfg.snr_lo_db + (cfg.snr_hi_db - cfg.snr_lo_db) * step_rng.uniform_at(0);
      const CounterRng noise(step_rng.bits_at(1), 0);
      if (cfg.cosine_schedule) {
        const double lr = 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * step / total_steps));
        adam.set_learning_rate(static_cast<float>(lr));
      }
      const double loss = run_batch(model, cfg, batch, batch_layouts, snr, noise, true);
      adam.step();
      result.step_loss.push_back(loss);
      epoch_sum += loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
  }
  return result;
}

TrainResult train_codec(const TrainConfig& cfg, const std::vector<synthetic::Sample>& samples,
                        const guidance::GuidanceBackend& backend) {
  const auto data = codec_samples(samples, backend);
  return train_codec(cfg, std::span<const CodecSample>(data));
}

TrainResult baseline_uniform(TrainConfig cfg, std::span<const CodecSample> data) {
  cfg.uniform_baseline = true;
  cfg.importance_weight = 1.0;
  cfg.loss_weight.reset();
  return train_codec(cfg, data);
}

double evaluate_loss(const codec::CodecModel& model, const TrainConfig& cfg, std::span<const CodecSample> data,
                     double snr_db, std::uint64_t noise_seed) {
  check_data(data);
  auto& mutable_model = const_cast<codec::CodecModel&>(model);  // forward only; no state is written
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size, ++batches) {
    std::vector<const CodecSample*> batch;
    std::vector<FrameLayout> layouts;
    for (std::size_t i = start; i < std::min(data.size(), start + cfg.batch_size); ++i) {
      batch.push_back(&data[i]);
      layouts.push_back(frame_layout(data[i].image, data[i].mask, cfg, model));
    }
    std::vector<const FrameLayout*> ptrs;
    for (const auto& l : layouts) ptrs.push_back(&l);
    sum += run_batch(mutable_model, cfg, batch, ptrs, snr_db, CounterRng(noise_seed, batches), false);
  }
  return sum / static_cast<double>(batches);
}

double loss_and_grad(codec::CodecModel& model, const TrainConfig& cfg, std::span<const CodecSample> data,
                     double snr_db, std::uint64_t noise_seed) {
  check_data(data);
  std::vector<const CodecSample*> batch;
  std::vector<FrameLayout> layouts;
  for (const auto& s : data) {
    batch.push_back(&s);
    layouts.push_back(frame_layout(s.image, s.mask, cfg, model));
  }
  std::vector<const FrameLayout*> ptrs;
  for (const auto& l : layouts) ptrs.push_back(&l);
  return run_batch(model, cfg, batch, ptrs, snr_db, CounterRng(noise_seed, 0), true);
}

ImageTensor transmit_image(const codec::CodecModel& model, const TrainConfig& cfg, const ImageTensor& image,
                           const BinaryMask& mask, double snr_db, std::uint64_t noise_seed, std::uint64_t stream) {
  const auto layout = frame_layout(image, mask, cfg, model);
  const auto encoded = codec::encode(image, layout.grid, layout.plan, model);
  const auto received = channel::transmit(encoded.symbols, {snr_db, noise_seed, channel::ChannelKind::Awgn}, stream);
  return codec::decode(received, encoded.side, model);
}

void save_codec(const std::filesystem::path& path, codec::CodecModel& model, const TrainConfig& cfg,
                const nlohmann::json& extra) {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["kind"] = "codec";
  header["train_config"] = cfg.to_json();
  header["config_hash"] = cfg.hash();
  save_checkpoint(path, header, model.all_params());
}

LoadedCodec load_codec(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.header.value("kind", "") != "codec") throw Error(Errc::IoError, path.string() + " is not a codec checkpoint");
  LoadedCodec out{codec::CodecModel(), train_config_from_json(ckpt.header.at("train_config")),
                  ckpt.header.value("config_hash", ""), ckpt.header};
  out.model = codec::CodecModel(out.config.model);
  assign_params(ckpt, out.model.all_params());
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.step_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", result.step_loss[i]);
    out << i << ',' << buf << '\n';
  }
}

}  // namespace semcom::training
