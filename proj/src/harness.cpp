#include "semcom/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "semcom/checkpoint.hpp"
#include "semcom/error.hpp"
#include "semcom/rng.hpp"

namespace semcom::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t stream_of(const std::string& name) { return std::stoull(training::fnv1a_hex(name), nullptr, 16); }

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot write " + path.string());
  f << text;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::clamp<int>(workers, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

void note(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

std::vector<std::string> list_ids(const fs::path& images) {
  if (!fs::is_directory(images)) throw Error(Errc::IoError, "missing directory " + images.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<DataItem> load_dir_items(const fs::path& root, const std::vector<std::string>& ids) {
  std::vector<DataItem> out;
  for (const auto& id : ids) {
    DataItem item;
    item.id = id;
    item.image = read_png(root / "images" / (id + ".png"));
    const auto mask_path = root / "masks" / (id + ".png");
    const auto query_path = root / "queries" / (id + ".txt");
    if (!fs::exists(mask_path) || !fs::exists(query_path)) {
      throw Error(Errc::AnnotationMissing, "sample " + id + " lacks a mask or query under " + root.string());
    }
    item.mask = image_to_mask(read_png(mask_path));
    if (item.mask.height() != item.image.height() || item.mask.width() != item.image.width()) {
      throw Error(Errc::DimensionMismatch, "mask of sample " + id + " differs in size from its image");
    }
    if (item.image.channels() == 1) {
      ImageTensor rgb(item.image.height(), item.image.width(), 3);
      for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x)
          for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = item.image.at(y, x, 0);
      item.image = std::move(rgb);
    }
    item.query = read_text(query_path);
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

// Datasets.

Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.train_size < 1 || spec.test_size < 1) throw Error(Errc::ConfigError, "dataset sizes must be positive");
  Dataset data;
  if (spec.kind == DatasetKind::SyntheticShapes) {
    synthetic::SceneOptions options;
    options.max_shapes = spec.max_shapes;
    const auto samples = synthetic::generate_synthetic(spec.train_size + spec.test_size, seed, options);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      DataItem item{s.id, s.image, s.mask, s.query, s.shape};
      (static_cast<int>(i) < spec.train_size ? data.train : data.test).push_back(std::move(item));
    }
  } else {
    if (fs::is_directory(spec.root / "train") && fs::is_directory(spec.root / "test")) {
      auto train_ids = list_ids(spec.root / "train" / "images");
      auto test_ids = list_ids(spec.root / "test" / "images");
      if (train_ids.size() > static_cast<std::size_t>(spec.train_size)) train_ids.resize(spec.train_size);
      if (test_ids.size() > static_cast<std::size_t>(spec.test_size)) test_ids.resize(spec.test_size);
      data.train = load_dir_items(spec.root / "train", train_ids);
      data.test = load_dir_items(spec.root / "test", test_ids);
    } else {
      const auto ids = list_ids(spec.root / "images");
      if (ids.size() < 2) throw Error(Errc::ConfigError, spec.root.string() + " holds fewer than two samples");
      const std::size_t n_test = std::min<std::size_t>(spec.test_size, ids.size() / 2);
      const std::size_t n_train = std::min<std::size_t>(spec.train_size, ids.size() - n_test);
      data.train = load_dir_items(spec.root, {ids.begin(), ids.begin() + static_cast<long>(n_train)});
      data.test = load_dir_items(spec.root, {ids.end() - static_cast<long>(n_test), ids.end()});
    }
    std::erase_if(data.train, [](const DataItem& d) { return !guidance::mask_filter(d.mask); });
    if (data.train.empty()) throw Error(Errc::ConfigError, "no training sample passes the mask-area band");
  }
  return data;
}

void write_dataset_dir(const fs::path& dir, const std::vector<DataItem>& items) {
  for (const char* sub : {"images", "masks", "queries"}) fs::create_directories(dir / sub);
  const int digits = std::max(3, static_cast<int>(std::to_string(items.size()).size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%0*zu", digits, i);
    write_png(dir / "images" / (std::string(id) + ".png"), items[i].image);
    write_png(dir / "masks" / (std::string(id) + ".png"), mask_to_image(items[i].mask));
    write_text(dir / "queries" / (std::string(id) + ".txt"), items[i].query + "\n");
  }
}

// Grid.

std::string_view method_kind_name(MethodKind m) noexcept {
  switch (m) {
    case MethodKind::UniformBaseline: return "uniform_baseline";
    case MethodKind::ImportanceCodec: return "importance_codec";
    case MethodKind::GenerativeFull: return "generative_full";
    case MethodKind::GenerativeVaeOnly: return "generative_vae_only";
    case MethodKind::GenerativeDirectMse: return "generative_direct_mse";
  }
  return "uniform_baseline";
}

std::optional<MethodKind> parse_method_kind(std::string_view name) noexcept {
  for (auto m : {MethodKind::UniformBaseline, MethodKind::ImportanceCodec, MethodKind::GenerativeFull,
                 MethodKind::GenerativeVaeOnly, MethodKind::GenerativeDirectMse}) {
    if (method_kind_name(m) == name) return m;
  }
  return std::nullopt;
}

bool is_generative(MethodKind m) noexcept {
  return m == MethodKind::GenerativeFull || m == MethodKind::GenerativeVaeOnly || m == MethodKind::GenerativeDirectMse;
}

namespace {

generative::Method generative_method(MethodKind m) {
  switch (m) {
    case MethodKind::GenerativeVaeOnly: return generative::Method::VaeOnly;
    case MethodKind::GenerativeDirectMse: return generative::Method::DirectMse;
    default: return generative::Method::Full;
  }
}

std::string model_name(MethodKind method, double weight) {
  if (method == MethodKind::UniformBaseline) return "codec_baseline";
  if (method == MethodKind::ImportanceCodec) return "codec_w" + fmt_g(weight);
  return "head_" + std::string(method_kind_name(method));
}

}  // namespace

std::vector<Cell> expand_grid(const ExperimentGrid& grid, std::uint64_t master_seed) {
  if (grid.snr_points.empty() || grid.weights.empty() || grid.methods.empty()) {
    throw Error(Errc::ConfigError, "experiment grid axes must be nonempty");
  }
  const bool has_baseline = std::count(grid.methods.begin(), grid.methods.end(), MethodKind::UniformBaseline) > 0;
  std::vector<Cell> cells;
  auto add = [&](MethodKind m, double w) {
    for (double snr : grid.snr_points) {
      Cell c;
      c.index = cells.size();
      c.method = m;
      c.weight = w;
      c.snr_db = snr;
      c.seed = derive_seed(master_seed, c.index);
      cells.push_back(c);
    }
  };
  for (auto m : grid.methods) {
    if (m == MethodKind::ImportanceCodec) {
      for (double w : grid.weights) {
        if (!(has_baseline && w == 1.0)) add(m, w);
      }
    } else {
      add(m, 1.0);
    }
  }
  return cells;
}

// Configuration.

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
  if (workers < 1) fail("experiment.workers must be >= 1");
  if (grid_samples < 0) fail("experiment.grid_samples must be >= 0");
  if (grid.snr_points.empty() || grid.weights.empty() || grid.methods.empty()) fail("grid axes must be nonempty");
  for (double w : grid.weights) {
    if (!(w >= 1.0) || !std::isfinite(w)) fail("grid weights must be finite and >= 1");
  }
  for (double s : grid.snr_points) {
    if (std::isnan(s)) fail("grid snr_points must be numbers");
  }
  const bool gen = std::any_of(grid.methods.begin(), grid.methods.end(), is_generative);
  if (gen) {
    for (double s : grid.snr_points) {
      if (!std::isfinite(s)) fail("generative methods need finite SNR points");
    }
  }
  if (!(guidance.threshold > 0.0 && guidance.threshold < 1.0)) fail("guidance.threshold must lie in (0, 1)");
  if (dataset.kind == DatasetKind::PhraseRegionDir && dataset.root.empty()) fail("dataset.root is required");
  if (dataset.train_size < 1 || dataset.test_size < 1) fail("dataset sizes must be positive");
  training::TrainConfig probe = codec;
  probe.validate();
  const auto& g = generative;
  if (g.ae_steps < 1 || g.ae_batch < 1 || g.backbone_steps < 1 || g.backbone_batch < 1 || g.head.steps < 1 ||
      g.head.batch < 1) {
    fail("generative step and batch counts must be positive");
  }
  if (!(g.class_dropout >= 0.0 && g.class_dropout < 1.0)) fail("generative.class_dropout must lie in [0, 1)");
  if (g.head.lambda_g < 0.0 || g.head.beta_kl < 0.0) fail("generative loss weights must be >= 0");
  if (!(g.head.target_ratio > 0.0 && g.head.target_ratio <= 1.0)) fail("generative.target_ratio must lie in (0, 1]");
}

json ExperimentConfig::to_json() const {
  json methods = json::array();
  for (auto m : grid.methods) methods.push_back(method_kind_name(m));
  const auto& g = generative;
  return {{"name", name},
          {"seed", seed},
          {"dataset",
           {{"kind", dataset.kind == DatasetKind::SyntheticShapes ? "synthetic_shapes" : "phrase_region_dir"},
            {"root", dataset.root.string()},
            {"train_size", dataset.train_size},
            {"test_size", dataset.test_size},
            {"max_shapes", dataset.max_shapes}}},
          {"grid", {{"snr_points", grid.snr_points}, {"weights", grid.weights}, {"methods", methods}}},
          {"guidance",
           {{"backend", guidance::backend_name(guidance.backend)},
            {"eval_backend", guidance.eval_backend ? json(guidance::backend_name(*guidance.eval_backend)) : json("none")},
            {"threshold", guidance.threshold},
            {"host", guidance.host},
            {"port", guidance.port},
            {"path", guidance.path}}},
          {"codec", codec.to_json()},
          {"generative",
           {{"ae_steps", g.ae_steps},
            {"ae_batch", g.ae_batch},
            {"ae_learning_rate", g.ae_learning_rate},
            {"ae_encoder_hidden", g.autoencoder.encoder_hidden},
            {"ae_decoder_hidden", g.autoencoder.decoder_hidden},
            {"latent_channels", g.autoencoder.latent_channels},
            {"backbone_steps", g.backbone_steps},
            {"backbone_batch", g.backbone_batch},
            {"backbone_learning_rate", g.backbone_learning_rate},
            {"backbone_hidden", g.backbone.hidden},
            {"class_dropout", g.class_dropout},
            {"timesteps", g.timesteps},
            {"beta_start", g.beta_start},
            {"beta_end", g.beta_end},
            {"guidance_scale", g.guidance_scale},
            {"head", g.head.to_json()}}}};
}

std::string ExperimentConfig::hash() const { return training::fnv1a_hex(to_json().dump()); }

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> known = {
      {"experiment", {"name", "seed", "out_dir", "workers", "train", "grid_samples"}},
      {"dataset", {"kind", "root", "train_size", "test_size", "max_shapes"}},
      {"grid", {"snr_points", "weights", "methods"}},
      {"channel", {"snr_train"}},
      {"guidance", {"backend", "eval_backend", "threshold", "host", "port", "path"}},
      {"codec",
       {"patch_size", "code_width", "total_symbols", "critical_fraction", "mask_input", "hifi_hidden", "light_hidden",
        "attention_dim", "side_info_charge"}},
      {"training", {"epochs", "batch_size", "learning_rate", "cosine_schedule", "loss_weight"}},
      {"generative",
       {"ae_steps", "ae_batch", "ae_learning_rate", "backbone_steps", "backbone_batch", "backbone_learning_rate",
        "backbone_hidden", "class_dropout", "timesteps", "beta_start", "beta_end", "guidance_scale", "head_steps",
        "head_batch", "head_learning_rate", "lambda_g", "beta_kl", "target_ratio"}},
  };
  return known;
}

std::vector<int> int_list(const ConfigFile& f, const std::string& s, const std::string& k, std::vector<int> fallback) {
  if (!f.has(s, k)) return fallback;
  std::vector<int> out;
  for (double v : f.get_doubles(s, k, {})) {
    if (v != std::floor(v) || v < 1) throw Error(Errc::ConfigError, s + "." + k + " must list positive integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_from_config(const ConfigFile& f) {
  f.require_known(known_keys());
  ExperimentConfig c;
  c.name = f.get_string("experiment", "name", c.name);
  c.seed = f.get_u64("experiment", "seed", c.seed);
  c.out_dir = f.get_string("experiment", "out_dir", c.out_dir.string());
  c.workers = f.get_int("experiment", "workers", c.workers);
  c.train = f.get_bool("experiment", "train", c.train);
  c.grid_samples = f.get_int("experiment", "grid_samples", c.grid_samples);

  const std::string kind = f.get_string("dataset", "kind", "synthetic_shapes");
  if (kind == "synthetic_shapes") {
    c.dataset.kind = DatasetKind::SyntheticShapes;
  } else if (kind == "phrase_region_dir") {
    c.dataset.kind = DatasetKind::PhraseRegionDir;
  } else {
    throw Error(Errc::ConfigError, f.origin() + ": dataset.kind '" + kind + "' is not a dataset kind");
  }
  c.dataset.root = f.get_string("dataset", "root", "");
  c.dataset.train_size = f.get_int("dataset", "train_size", c.dataset.train_size);
  c.dataset.test_size = f.get_int("dataset", "test_size", c.dataset.test_size);
  c.dataset.max_shapes = f.get_int("dataset", "max_shapes", c.dataset.max_shapes);

  c.grid.snr_points = f.get_doubles("grid", "snr_points", c.grid.snr_points);
  c.grid.weights = f.get_doubles("grid", "weights", c.grid.weights);
  if (f.has("grid", "methods")) {
    c.grid.methods.clear();
    for (const auto& name : f.get_list("grid", "methods", {})) {
      const auto m = parse_method_kind(name);
      if (!m) throw Error(Errc::ConfigError, f.origin() + ": unknown method '" + name + "'");
      c.grid.methods.push_back(*m);
    }
  }

  const auto snr_train = f.get_doubles("channel", "snr_train", {c.codec.snr_lo_db, c.codec.snr_hi_db});
  if (snr_train.size() != 1 && snr_train.size() != 2) {
    throw Error(Errc::ConfigError, f.origin() + ": channel.snr_train takes one value or a lo, hi pair");
  }
  c.codec.snr_lo_db = snr_train.front();
  c.codec.snr_hi_db = snr_train.back();
  c.generative.head.snr_lo_db = snr_train.front();
  c.generative.head.snr_hi_db = snr_train.back();

  auto backend_of = [&](const std::string& key, const std::string& fallback) {
    const std::string name = f.get_string("guidance", key, fallback);
    const auto b = guidance::parse_backend(name);
    if (!b) throw Error(Errc::ConfigError, f.origin() + ": guidance." + key + " '" + name + "' is not a backend");
    return *b;
  };
  c.guidance.backend = backend_of("backend", "oracle");
  if (f.get_string("guidance", "eval_backend", "synthetic") == "none") {
    c.guidance.eval_backend.reset();
  } else {
    c.guidance.eval_backend = backend_of("eval_backend", "synthetic");
  }
  c.guidance.threshold = f.get_double("guidance", "threshold", c.guidance.threshold);
  c.guidance.host = f.get_string("guidance", "host", c.guidance.host);
  c.guidance.port = f.get_int("guidance", "port", c.guidance.port);
  c.guidance.path = f.get_string("guidance", "path", c.guidance.path);

  auto& m = c.codec.model;
  m.patch_size = f.get_int("codec", "patch_size", m.patch_size);
  m.code_width = f.get_int("codec", "code_width", m.code_width);
  m.hifi_hidden = int_list(f, "codec", "hifi_hidden", m.hifi_hidden);
  m.light_hidden = int_list(f, "codec", "light_hidden", m.light_hidden);
  m.attention_dim = f.get_int("codec", "attention_dim", m.attention_dim);
  m.mask_input = f.get_bool("codec", "mask_input", m.mask_input);
  c.codec.total_symbols = f.get_int("codec", "total_symbols", c.codec.total_symbols);
  c.codec.critical_fraction = f.get_double("codec", "critical_fraction", c.codec.critical_fraction);
  c.codec.side_info_charge = f.get_double("codec", "side_info_charge", c.codec.side_info_charge);
  c.codec.epochs = f.get_int("training", "epochs", c.codec.epochs);
  c.codec.batch_size = f.get_int("training", "batch_size", c.codec.batch_size);
  c.codec.learning_rate = f.get_double("training", "learning_rate", c.codec.learning_rate);
  c.codec.cosine_schedule = f.get_bool("training", "cosine_schedule", c.codec.cosine_schedule);
  if (f.has("training", "loss_weight") && f.get_string("training", "loss_weight", "") != "weight") {
    c.codec.loss_weight = f.get_double("training", "loss_weight", 1.0);
  }

  auto& g = c.generative;
  g.ae_steps = f.get_int("generative", "ae_steps", g.ae_steps);
  g.ae_batch = f.get_int("generative", "ae_batch", g.ae_batch);
  g.ae_learning_rate = f.get_double("generative", "ae_learning_rate", g.ae_learning_rate);
  g.backbone_steps = f.get_int("generative", "backbone_steps", g.backbone_steps);
  g.backbone_batch = f.get_int("generative", "backbone_batch", g.backbone_batch);
  g.backbone_learning_rate = f.get_double("generative", "backbone_learning_rate", g.backbone_learning_rate);
  g.backbone.hidden = f.get_int("generative", "backbone_hidden", g.backbone.hidden);
  g.class_dropout = f.get_double("generative", "class_dropout", g.class_dropout);
  g.timesteps = f.get_int("generative", "timesteps", g.timesteps);
  g.beta_start = f.get_double("generative", "beta_start", g.beta_start);
  g.beta_end = f.get_double("generative", "beta_end", g.beta_end);
  g.guidance_scale = f.get_double("generative", "guidance_scale", g.guidance_scale);
  g.head.steps = f.get_int("generative", "head_steps", g.head.steps);
  g.head.batch = f.get_int("generative", "head_batch", g.head.batch);
  g.head.learning_rate = f.get_double("generative", "head_learning_rate", g.head.learning_rate);
  g.head.lambda_g = f.get_double("generative", "lambda_g", g.head.lambda_g);
  g.head.beta_kl = f.get_double("generative", "beta_kl", g.head.beta_kl);
  g.head.target_ratio = f.get_double("generative", "target_ratio", g.head.target_ratio);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) { return experiment_from_config(ConfigFile::load(path)); }

std::uint64_t dataset_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, stream_of("dataset")); }

training::TrainConfig codec_train_config(const ExperimentConfig& cfg, MethodKind method, double weight) {
  training::TrainConfig t = cfg.codec;
  t.uniform_baseline = method == MethodKind::UniformBaseline;
  t.importance_weight = t.uniform_baseline ? 1.0 : weight;
  if (t.uniform_baseline) t.loss_weight.reset();
  t.seed = derive_seed(cfg.seed, stream_of(model_name(method, weight)));
  t.model.seed = t.seed;
  return t;
}

std::unique_ptr<guidance::GuidanceBackend> make_backend(guidance::BackendKind kind, const GuidanceSettings& s,
                                                        const std::vector<DataItem>* annotated) {
  switch (kind) {
    case guidance::BackendKind::Oracle: {
      auto oracle = std::make_unique<guidance::OracleBackend>();
      if (annotated) {
        for (const auto& item : *annotated) oracle->add(item.id, item.mask);
      }
      return oracle;
    }
    case guidance::BackendKind::Synthetic: return std::make_unique<guidance::SyntheticBackend>();
    case guidance::BackendKind::External:
      return std::make_unique<guidance::ExternalBackend>(s.host, s.port, s.path);
  }
  throw Error(Errc::ConfigError, "unknown guidance backend");
}

// Models.

namespace {

struct GenerativeModels {
  generative::LatentAutoencoder ae;
  generative::Denoiser backbone;
  std::map<MethodKind, generative::VaeHead> heads;
  generative::NoiseSchedule sched = generative::NoiseSchedule::linear();
};

json data_key(const ExperimentConfig& cfg) {
  json d = cfg.to_json()["dataset"];
  d["seed"] = cfg.seed;
  return d;
}

std::string generative_key(const ExperimentConfig& cfg, const std::string& part, const json& extra) {
  json k = {{"part", part}, {"data", data_key(cfg)}, {"extra", extra}};
  return training::fnv1a_hex(k.dump());
}

std::string ae_key(const ExperimentConfig& cfg) {
  const auto& g = cfg.generative;
  return generative_key(cfg, "ae",
                        {{"steps", g.ae_steps},
                         {"batch", g.ae_batch},
                         {"lr", g.ae_learning_rate},
                         {"enc", g.autoencoder.encoder_hidden},
                         {"dec", g.autoencoder.decoder_hidden},
                         {"latent", g.autoencoder.latent_channels}});
}

std::string backbone_key(const ExperimentConfig& cfg) {
  const auto& g = cfg.generative;
  return generative_key(cfg, "backbone",
                        {{"ae", ae_key(cfg)},
                         {"steps", g.backbone_steps},
                         {"batch", g.backbone_batch},
                         {"lr", g.backbone_learning_rate},
                         {"hidden", g.backbone.hidden},
                         {"dropout", g.class_dropout},
                         {"T", g.timesteps},
                         {"b0", g.beta_start},
                         {"b1", g.beta_end}});
}

generative::GenerativeConfig head_config(const ExperimentConfig& cfg, MethodKind method, int latent_dim) {
  generative::GenerativeConfig h = cfg.generative.head;
  h.method = generative_method(method);
  h.seed = derive_seed(cfg.seed, stream_of(model_name(method, 1.0)));
  h.head.seed = h.seed;
  h.head.latent_dim = latent_dim;
  return h;
}

std::string head_key(const ExperimentConfig& cfg, const generative::GenerativeConfig& h) {
  return generative_key(cfg, "head", {{"ae", ae_key(cfg)}, {"config", h.hash()}});
}

bool checkpoint_matches(const fs::path& path, const std::string& key) {
  if (!fs::exists(path)) return false;
  try {
    return load_checkpoint(path).header.value("experiment_key", "") == key;
  } catch (const Error&) {
    return false;
  }
}

fs::path checkpoint_dir(const ExperimentConfig& cfg) { return cfg.out_dir / "checkpoints"; }

generative::NoiseSchedule schedule_of(const ExperimentConfig& cfg) {
  return generative::NoiseSchedule::linear(cfg.generative.timesteps, cfg.generative.beta_start, cfg.generative.beta_end);
}

std::vector<std::pair<MethodKind, double>> codec_models(const ExperimentConfig& cfg) {
  std::vector<std::pair<MethodKind, double>> out;
  for (const auto& cell : expand_grid(cfg.grid, cfg.seed)) {
    if (is_generative(cell.method)) continue;
    const std::pair<MethodKind, double> key{cell.method, cell.weight};
    if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(key);
  }
  return out;
}

std::vector<MethodKind> generative_methods(const ExperimentConfig& cfg) {
  std::vector<MethodKind> out;
  for (auto m : cfg.grid.methods) {
    if (is_generative(m) && std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

std::string codec_key(const ExperimentConfig& cfg, const training::TrainConfig& t) {
  json k = {{"data", data_key(cfg)},
            {"train", t.hash()},
            {"backend", guidance::backend_name(cfg.guidance.backend)},
            {"threshold", cfg.guidance.threshold}};
  return training::fnv1a_hex(k.dump());
}

std::vector<BinaryMask> guidance_masks(const ExperimentConfig& cfg, const std::vector<DataItem>& items) {
  const auto backend = make_backend(cfg.guidance.backend, cfg.guidance, &items);
  std::vector<BinaryMask> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    out.push_back(guidance::binarize(backend->importance_map({item.image, item.query, item.id}), cfg.guidance.threshold));
  }
  return out;
}

std::vector<ImageTensor> images_of(const std::vector<DataItem>& items) {
  std::vector<ImageTensor> out;
  for (const auto& i : items) out.push_back(i.image);
  return out;
}

nn::Matrix encode_items(const generative::LatentAutoencoder& ae, const std::vector<DataItem>& items) {
  std::vector<const ImageTensor*> ptrs;
  for (const auto& i : items) ptrs.push_back(&i.image);
  return ae.encode_batch(ptrs);
}

void prepare_generative(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress) {
  const auto methods = generative_methods(cfg);
  if (methods.empty()) return;
  const auto dir = checkpoint_dir(cfg);
  const auto ae_path = dir / "autoencoder.ckpt";
  const auto bb_path = dir / "backbone.ckpt";
  const auto& g = cfg.generative;
  auto need = [&](const fs::path& p, const std::string& key) {
    if (checkpoint_matches(p, key)) return false;
    if (!cfg.train) throw Error(Errc::MissingCheckpoint, "no up-to-date checkpoint at " + p.string());
    return true;
  };

  generative::LatentAutoencoder ae;
  const std::string akey = ae_key(cfg);
  if (need(ae_path, akey)) {
    note(progress, "training latent autoencoder");
    generative::AutoencoderConfig ac = g.autoencoder;
    ac.seed = derive_seed(cfg.seed, stream_of("autoencoder"));
    ae = generative::LatentAutoencoder(ac);
    ae.train(images_of(data.train), g.ae_steps, g.ae_batch, g.ae_learning_rate, ac.seed);
    json h = ae.header();
    h["experiment_key"] = akey;
    save_checkpoint(ae_path, h, ae.params());
  } else {
    ae = generative::LatentAutoencoder::load(ae_path);
  }
  const nn::Matrix latents = encode_items(ae, data.train);
  const auto sched = schedule_of(cfg);

  const std::string bkey = backbone_key(cfg);
  if (need(bb_path, bkey)) {
    note(progress, "training diffusion backbone");
    generative::BackboneConfig bc = g.backbone;
    bc.latent_dim = static_cast<int>(latents.rows());
    bc.seed = derive_seed(cfg.seed, stream_of("backbone"));
    generative::Denoiser backbone(bc);
    std::vector<int> labels;
    for (const auto& item : data.train) labels.push_back(item.shape ? 1 + static_cast<int>(*item.shape) : 0);
    backbone.train(latents, labels, sched, g.backbone_steps, g.backbone_batch, g.backbone_learning_rate,
                   g.class_dropout, bc.seed);
    json h = backbone.header();
    h["experiment_key"] = bkey;
    save_checkpoint(bb_path, h, backbone.params());
  }

  const int h_lat = data.train.front().image.height() / ae.config().patch_size;
  const int w_lat = data.train.front().image.width() / ae.config().patch_size;
  std::vector<MethodKind> todo;
  for (auto m : methods) {
    const auto hc = head_config(cfg, m, static_cast<int>(latents.rows()));
    if (need(dir / (model_name(m, 1.0) + ".ckpt"), head_key(cfg, hc))) todo.push_back(m);
  }
  parallel_for(todo.size(), cfg.workers, [&](std::size_t i) {
    const auto m = todo[i];
    auto hc = head_config(cfg, m, static_cast<int>(latents.rows()));
    hc.source_elements = data.train.front().image.size();
    note(progress, "training " + std::string(method_kind_name(m)) + " head");
    auto result = generative::train_generative(hc, latents, h_lat, w_lat, ae.config().latent_channels, sched);
    json extra = {{"experiment_key", head_key(cfg, hc)}, {"config", hc.to_json()}, {"config_hash", hc.hash()}};
    result.head.save(dir / (model_name(m, 1.0) + ".ckpt"), extra);
    std::ofstream curve(dir / (model_name(m, 1.0) + ".loss.csv"));
    curve << "step,total,l_vae,l_g\n";
    for (std::size_t s = 0; s < result.losses.size(); ++s) {
      const auto& l = result.losses[s];
      curve << s << ',' << l.total << ',' << l.l_vae << ',' << l.l_g << '\n';
    }
  });
}

}  // namespace

void prepare_models(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress) {
  cfg.validate();
  const auto dir = checkpoint_dir(cfg);
  fs::create_directories(dir);
  const auto models = codec_models(cfg);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto t = codec_train_config(cfg, models[i].first, models[i].second);
    const auto path = dir / (model_name(models[i].first, models[i].second) + ".ckpt");
    if (checkpoint_matches(path, codec_key(cfg, t))) continue;
    if (!cfg.train) throw Error(Errc::MissingCheckpoint, "no up-to-date checkpoint at " + path.string());
    todo.push_back(i);
  }
  if (!todo.empty()) {
    const auto masks = guidance_masks(cfg, data.train);
    std::vector<training::CodecSample> samples;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      const auto& d = data.train[i];
      samples.push_back({d.id, d.image, masks[i], d.mask, d.query});
    }
    parallel_for(todo.size(), cfg.workers, [&](std::size_t k) {
      const auto [method, weight] = models[todo[k]];
      const auto t = codec_train_config(cfg, method, weight);
      const std::string name = model_name(method, weight);
      note(progress, "training " + name);
      auto result = training::train_codec(t, samples);
      save_codec(dir / (name + ".ckpt"), result.model, t, {{"experiment_key", codec_key(cfg, t)}});
      training::write_loss_csv(dir / (name + ".loss.csv"), result);
    });
  }
  prepare_generative(cfg, data, progress);
}

// Evaluation.

namespace {

struct Segmenter {
  std::unique_ptr<guidance::GuidanceBackend> backend;
  double threshold = 0.5;

  BinaryMask segment(const ImageTensor& image, const DataItem& item) const {
    return guidance::binarize(backend->importance_map({image, item.query, std::nullopt}), threshold);
  }
};

void finish_cell(CellResult& r, const ExperimentConfig& cfg) {
  auto& rep = r.report;
  const auto n = static_cast<double>(r.samples.size());
  double psnr = 0, mpsnr = 0, ssim = 0, io = 0, it = 0, perc = 0;
  bool has_iou = true, has_perc = true;
  for (const auto& s : r.samples) {
    psnr += s.psnr_db;
    mpsnr += s.masked_psnr_db;
    ssim += s.ssim;
    if (s.iou_original && s.iou_transmitted) {
      io += *s.iou_original;
      it += *s.iou_transmitted;
    } else {
      has_iou = false;
    }
    if (s.perceptual) {
      perc += *s.perceptual;
    } else {
      has_perc = false;
    }
  }
  rep.method = std::string(method_kind_name(r.cell.method));
  rep.weight = r.cell.weight;
  rep.snr_db = r.cell.snr_db;
  rep.psnr_db = psnr / n;
  rep.masked_psnr_db = mpsnr / n;
  rep.ssim = ssim / n;
  if (has_iou) rep.set_iou(io / n, it / n);
  if (has_perc) rep.perceptual = perc / n;
  for (auto a : {metrics::AdapterName::ClipScore, metrics::AdapterName::Lpips, metrics::AdapterName::Fid}) {
    rep.adapter_scores[std::string(metrics::adapter_name(a))] = std::nullopt;
  }
  rep.config_hash = cfg.hash();
  rep.seed = r.cell.seed;
  rep.samples = static_cast<int>(r.samples.size());
}

SampleRow score_sample(const DataItem& item, const ImageTensor& recon, const Segmenter* seg,
                       const std::optional<BinaryMask>& original_seg, BinaryMask* overlay) {
  SampleRow row;
  row.id = item.id;
  row.psnr_db = metrics::psnr(item.image, recon);
  row.masked_psnr_db = metrics::masked_psnr(item.image, recon, item.mask);
  row.ssim = metrics::ssim(item.image, recon);
  if (seg && original_seg) {
    const BinaryMask trans = seg->segment(recon, item);
    row.iou_original = metrics::iou(*original_seg, item.mask);
    row.iou_transmitted = metrics::iou(trans, item.mask);
    if (overlay) *overlay = trans;
  }
  return row;
}

}  // namespace

GridResult evaluate_grid(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress) {
  cfg.validate();
  if (data.test.empty()) throw Error(Errc::ConfigError, "empty test split");
  const auto cells = expand_grid(cfg.grid, cfg.seed);
  const auto dir = checkpoint_dir(cfg);

  std::map<std::pair<MethodKind, double>, training::LoadedCodec> codecs;
  for (const auto& [method, weight] : codec_models(cfg)) {
    const auto path = dir / (model_name(method, weight) + ".ckpt");
    const auto t = codec_train_config(cfg, method, weight);
    if (!checkpoint_matches(path, codec_key(cfg, t))) {
      throw Error(Errc::MissingCheckpoint, "no up-to-date checkpoint at " + path.string());
    }
    codecs.emplace(std::pair{method, weight}, training::load_codec(path));
  }

  std::optional<GenerativeModels> gen;
  nn::Matrix test_latents;
  if (!generative_methods(cfg).empty()) {
    for (const auto* name : {"autoencoder.ckpt", "backbone.ckpt"}) {
      if (!fs::exists(dir / name)) throw Error(Errc::MissingCheckpoint, "no checkpoint at " + (dir / name).string());
    }
    gen.emplace(GenerativeModels{generative::LatentAutoencoder::load(dir / "autoencoder.ckpt"),
                                 generative::Denoiser::load(dir / "backbone.ckpt"),
                                 {},
                                 schedule_of(cfg)});
    for (auto m : generative_methods(cfg)) {
      const auto path = dir / (model_name(m, 1.0) + ".ckpt");
      if (!fs::exists(path)) throw Error(Errc::MissingCheckpoint, "no checkpoint at " + path.string());
      gen->heads.emplace(m, generative::VaeHead::load(path));
    }
    test_latents = encode_items(gen->ae, data.test);
  }

  const auto masks = guidance_masks(cfg, data.test);
  std::optional<Segmenter> seg;
  std::vector<std::optional<BinaryMask>> original_seg(data.test.size());
  if (cfg.guidance.eval_backend) {
    seg.emplace(Segmenter{make_backend(*cfg.guidance.eval_backend, cfg.guidance, &data.test), cfg.guidance.threshold});
    if (*cfg.guidance.eval_backend == guidance::BackendKind::Oracle) {
      seg.reset();  // an oracle ignores pixels, so IoU would be meaningless
    } else {
      for (std::size_t i = 0; i < data.test.size(); ++i) original_seg[i] = seg->segment(data.test[i].image, data.test[i]);
    }
  }

  GridResult result;
  result.config_hash = cfg.hash();
  result.cells.resize(cells.size());
  const auto keep = static_cast<std::size_t>(cfg.grid_samples);
  parallel_for(cells.size(), cfg.workers, [&](std::size_t ci) {
    const Cell& cell = cells[ci];
    CellResult& r = result.cells[ci];
    r.cell = cell;
    std::vector<ImageTensor> recons;
    std::vector<std::size_t> side_bytes;
    if (!is_generative(cell.method)) {
      const auto& lc = codecs.at({cell.method, cell.weight});
      for (std::size_t i = 0; i < data.test.size(); ++i) {
        recons.push_back(
            training::transmit_image(lc.model, lc.config, data.test[i].image, masks[i], cell.snr_db, cell.seed, i));
        const auto layout = training::frame_layout(data.test[i].image, masks[i], lc.config, lc.model);
        side_bytes.push_back(training::side_info_bytes(layout.grid, data.test[i].image.channels()));
      }
    } else {
      const auto method = generative_method(cell.method);
      const auto& ae = gen->ae;
      const int h_lat = data.test.front().image.height() / ae.config().patch_size;
      const int w_lat = data.test.front().image.width() / ae.config().patch_size;
      const std::vector<double> snr(data.test.size(), cell.snr_db);
      const nn::Matrix y =
          generative::transmit_latents(test_latents, h_lat, w_lat, ae.config().latent_channels,
                                       data.test.front().image.size(), cfg.generative.head.target_ratio, snr,
                                       CounterRng(cell.seed, 1));
      const auto out = generative::receive(gen->heads.at(cell.method), method, gen->backbone, gen->sched, y,
                                           cell.snr_db, CounterRng(cell.seed, 2));
      recons = ae.decode_batch(out.latents, data.test.front().image.height(), data.test.front().image.width());
    }
    nn::Matrix recon_latents;
    const bool perceptual = is_generative(cell.method);
    if (perceptual) {
      std::vector<const ImageTensor*> ptrs;
      for (const auto& img : recons) ptrs.push_back(&img);
      recon_latents = gen->ae.encode_batch(ptrs);
    }
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      BinaryMask overlay = masks[i];
      auto row = score_sample(data.test[i], recons[i], seg ? &*seg : nullptr, original_seg[i], &overlay);
      if (!side_bytes.empty()) row.side_info_bytes = side_bytes[i];
      if (perceptual) {
        const auto col = static_cast<Eigen::Index>(i);
        row.perceptual = (recon_latents.col(col) - test_latents.col(col)).cast<double>().squaredNorm() /
                         static_cast<double>(test_latents.rows());
      }
      r.samples.push_back(std::move(row));
      if (i < keep) {
        r.originals.push_back(data.test[i].image);
        r.reconstructions.push_back(recons[i]);
        r.overlays.push_back(std::move(overlay));
      }
    }
    finish_cell(r, cfg);
    note(progress, "evaluated " + r.report.method + " w=" + fmt_g(cell.weight) + " snr=" + fmt_g(cell.snr_db));
  });
  return result;
}

// Reports.

std::string metrics_csv(const std::vector<metrics::MetricReport>& rows) {
  std::string out = metrics::csv_header() + "\n";
  for (const auto& r : rows) out += metrics::csv_row(r) + "\n";
  return out;
}

std::string table1_markdown(const std::vector<metrics::MetricReport>& rows) {
  std::vector<double> snrs;
  std::vector<std::pair<std::string, double>> methods;
  for (const auto& r : rows) {
    if (std::find(snrs.begin(), snrs.end(), r.snr_db) == snrs.end()) snrs.push_back(r.snr_db);
    const std::pair<std::string, double> key{r.method, r.weight};
    if (std::find(methods.begin(), methods.end(), key) == methods.end()) methods.push_back(key);
  }
  std::sort(snrs.begin(), snrs.end());
  auto find = [&](const std::pair<std::string, double>& m, double snr) -> const metrics::MetricReport* {
    for (const auto& r : rows) {
      if (r.method == m.first && r.weight == m.second && r.snr_db == snr) return &r;
    }
    return nullptr;
  };
  using Getter = std::function<std::optional<double>(const metrics::MetricReport&)>;
  auto adapter = [](const char* name) -> Getter {
    return [name](const metrics::MetricReport& r) -> std::optional<double> {
      const auto it = r.adapter_scores.find(name);
      return it == r.adapter_scores.end() ? std::nullopt : it->second;
    };
  };
  const std::vector<std::tuple<std::string, Getter, int>> metrics_list = {
      {"PSNR ↑", [](const metrics::MetricReport& r) { return std::optional<double>(r.psnr_db); }, 2},
      {"SSIM ↑", [](const metrics::MetricReport& r) { return std::optional<double>(r.ssim); }, 3},
      {"CLIP ↑", adapter("clip_score"), 3},
      {"LPIPS ↓", adapter("lpips"), 3},
      {"Perceptual (toy) ↓", [](const metrics::MetricReport& r) { return r.perceptual; }, 4},
      {"Masked PSNR ↑", [](const metrics::MetricReport& r) { return std::optional<double>(r.masked_psnr_db); }, 2},
      {"IoU degeneration ↓", [](const metrics::MetricReport& r) { return r.iou_degeneration; }, 4},
  };
  std::ostringstream md;
  md << "| Metric | Method | Weight |";
  for (double s : snrs) md << ' ' << fmt_g(s) << "dB |";
  md << "\n|---|---|---|";
  for (std::size_t i = 0; i < snrs.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& [label, get, digits] : metrics_list) {
    bool any = false;
    for (const auto& r : rows) any = any || get(r).has_value();
    if (!any) continue;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      md << "| " << (mi == 0 ? label : "") << " | " << methods[mi].first << " | " << fmt_g(methods[mi].second) << " |";
      for (double s : snrs) {
        const auto* r = find(methods[mi], s);
        const auto v = r ? get(*r) : std::nullopt;
        if (v) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
          md << ' ' << buf << " |";
        } else {
          md << " - |";
        }
      }
      md << "\n";
    }
  }
  return md.str();
}

ImageTensor overlay_mask(const ImageTensor& image, const BinaryMask& mask) {
  ImageTensor out = image;
  if (mask.height() != image.height() || mask.width() != image.width()) return out;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      if (!mask.at(y, x)) continue;
      out.at(y, x, 0) = 0.5f * out.at(y, x, 0) + 0.5f;
      for (int c = 1; c < image.channels(); ++c) out.at(y, x, c) *= 0.5f;
    }
  return out;
}

ImageTensor tile_images(const std::vector<std::vector<ImageTensor>>& rows, int pad) {
  if (rows.empty() || rows.front().empty()) return ImageTensor(1, 1, 3, 1.0f);
  const int h = rows.front().front().height(), w = rows.front().front().width();
  const auto cols = static_cast<int>(rows.front().size());
  const auto nrows = static_cast<int>(rows.size());
  ImageTensor out(nrows * h + (nrows + 1) * pad, cols * w + (cols + 1) * pad, 3, 1.0f);
  for (int r = 0; r < nrows; ++r)
    for (int c = 0; c < cols && c < static_cast<int>(rows[r].size()); ++c) {
      const auto& img = rows[r][c];
      const int y0 = pad + r * (h + pad), x0 = pad + c * (w + pad);
      for (int y = 0; y < std::min(h, img.height()); ++y)
        for (int x = 0; x < std::min(w, img.width()); ++x)
          for (int ch = 0; ch < 3; ++ch) out.at(y0 + y, x0 + x, ch) = img.at(y, x, std::min(ch, img.channels() - 1));
    }
  return out;
}

namespace {

json result_json(const ExperimentConfig& cfg, const GridResult& result) {
  json rows = json::array();
  for (const auto& c : result.cells) {
    json samples = json::array();
    for (const auto& s : c.samples) {
      samples.push_back({{"id", s.id},
                         {"psnr_db", s.psnr_db},
                         {"masked_psnr_db", s.masked_psnr_db},
                         {"ssim", s.ssim},
                         {"iou_original", s.iou_original ? json(*s.iou_original) : json(nullptr)},
                         {"iou_transmitted", s.iou_transmitted ? json(*s.iou_transmitted) : json(nullptr)},
                         {"perceptual", s.perceptual ? json(*s.perceptual) : json(nullptr)},
                         {"side_info_bytes", s.side_info_bytes ? json(*s.side_info_bytes) : json(nullptr)}});
    }
    json side = nullptr;
    if (!c.samples.empty() && c.samples.front().side_info_bytes) {
      double sum = 0.0;
      for (const auto& s : c.samples) sum += static_cast<double>(s.side_info_bytes.value_or(0));
      side = sum / static_cast<double>(c.samples.size());
    }
    rows.push_back({{"cell", c.cell.index},
                    {"report", metrics::to_json(c.report)},
                    {"side_info_bytes_mean", side},
                    {"samples", samples}});
  }
  return {{"name", cfg.name}, {"config", cfg.to_json()}, {"config_hash", result.config_hash}, {"rows", rows}};
}

std::string cell_stem(const Cell& c) {
  return std::string(method_kind_name(c.method)) + "_w" + fmt_g(c.weight) + "_snr" + fmt_g(c.snr_db);
}

}  // namespace

void write_outputs(const ExperimentConfig& cfg, const GridResult& result) {
  fs::create_directories(cfg.out_dir / "grids");
  std::vector<metrics::MetricReport> rows;
  for (const auto& c : result.cells) rows.push_back(c.report);
  write_text(cfg.out_dir / "metrics.csv", metrics_csv(rows));
  write_text(cfg.out_dir / "metrics.json", result_json(cfg, result).dump(2) + "\n");
  write_text(cfg.out_dir / "table1.md", table1_markdown(rows));

  std::map<double, std::vector<const CellResult*>> by_snr;
  for (const auto& c : result.cells) {
    if (c.originals.empty()) continue;
    std::vector<ImageTensor> overlays;
    for (std::size_t i = 0; i < c.reconstructions.size(); ++i) {
      overlays.push_back(overlay_mask(c.reconstructions[i], c.overlays[i]));
    }
    write_png(cfg.out_dir / "grids" / (cell_stem(c.cell) + ".png"),
              tile_images({c.originals, c.reconstructions, overlays}));
    by_snr[c.cell.snr_db].push_back(&c);
  }
  // One figure per SNR: first test sample, one column per method / weight.
  for (const auto& [snr, list] : by_snr) {
    std::vector<ImageTensor> orig, recon, over;
    for (const auto* c : list) {
      orig.push_back(c->originals.front());
      recon.push_back(c->reconstructions.front());
      over.push_back(overlay_mask(c->reconstructions.front(), c->overlays.front()));
    }
    write_png(cfg.out_dir / "grids" / ("figure_snr" + fmt_g(snr) + ".png"), tile_images({orig, recon, over}));
  }
}

GridResult run_grid(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  note(progress, "loading dataset");
  const Dataset data = load_dataset(cfg.dataset, dataset_seed(cfg));
  prepare_models(cfg, data, progress);
  GridResult result = evaluate_grid(cfg, data, progress);
  write_outputs(cfg, result);
  return result;
}

void regenerate_reports(const fs::path& out_dir) {
  const auto path = out_dir / "metrics.json";
  if (!fs::exists(path)) throw Error(Errc::IoError, "no metrics.json under " + out_dir.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, path.string() + ": " + e.what());
  }
  std::vector<metrics::MetricReport> rows;
  for (const auto& r : j.at("rows")) rows.push_back(metrics::report_from_json(r.at("report")));
  write_text(out_dir / "metrics.csv", metrics_csv(rows));
  write_text(out_dir / "table1.md", table1_markdown(rows));
}

}  // namespace semcom::harness
