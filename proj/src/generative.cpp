#include "semcom/generative.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "semcom/channel.hpp"
#include "semcom/checkpoint.hpp"
#include "semcom/error.hpp"
#include "semcom/synthetic.hpp"
#include "semcom/training.hpp"

namespace semcom::generative {

double LatentFeature::compression_ratio() const noexcept {
  return source_elements == 0 ? 0.0 : static_cast<double>(size()) / static_cast<double>(source_elements);
}

namespace {

int pool_factor(int h, int w, int d, std::size_t source_elements, double target_ratio) {
  if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw Error(Errc::ConfigError, "target ratio must lie in (0, 1]");
  if (source_elements == 0) throw Error(Errc::ConfigError, "latent has no source size for the ratio");
  for (int f = 1; f <= std::min(h, w); ++f) {
    if (h % f != 0 || w % f != 0) continue;
    const double ratio = static_cast<double>((h / f) * (w / f) * d) / static_cast<double>(source_elements);
    if (ratio <= target_ratio) return f;
  }
  throw Error(Errc::RatioUnachievable, "no pooling of a " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                                           std::to_string(d) + " latent reaches ratio " + std::to_string(target_ratio));
}

void pool_into(const float* src, int h, int w, int d, int f, float* dst) {
  const int ph = h / f, pw = w / f;
  const float inv = 1.0f / static_cast<float>(f * f);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      for (int c = 0; c < d; ++c) {
        float sum = 0.0f;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) sum += src[((y * f + dy) * w + x * f + dx) * d + c];
        dst[(y * pw + x) * d + c] = sum * inv;
      }
}

}  // namespace

LatentFeature compress_latent(const LatentFeature& z, double target_ratio) {
  if (z.height < 1 || z.width < 1 || z.depth < 1 ||
      z.values.size() != static_cast<std::size_t>(z.height) * z.width * z.depth) {
    throw Error(Errc::ShapeMismatch, "latent geometry does not match its values");
  }
  const int f = pool_factor(z.height, z.width, z.depth, z.source_elements, target_ratio);
  LatentFeature out;
  out.height = z.height / f;
  out.width = z.width / f;
  out.depth = z.depth;
  out.scale_factor = z.scale_factor * f;
  out.snr_db = z.snr_db;
  out.source_elements = z.source_elements;
  out.values.resize(static_cast<std::size_t>(out.height) * out.width * out.depth);
  pool_into(z.values.data(), z.height, z.width, z.depth, f, out.values.data());
  return out;
}

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw Error(Errc::ConfigError, "schedule needs at least one step");
  std::vector<double> ab;
  double acc = 1.0;
  for (int i = 0; i < timesteps; ++i) {
    const double beta = timesteps == 1 ? beta_start
                                       : beta_start + (beta_end - beta_start) * i / static_cast<double>(timesteps - 1);
    acc *= 1.0 - beta;
    ab.push_back(acc);
  }
  return NoiseSchedule(std::move(ab));
}

NoiseSchedule::NoiseSchedule(std::vector<double> alphas_cumprod) : alpha_bar_(std::move(alphas_cumprod)) {
  if (alpha_bar_.empty()) throw Error(Errc::ConfigError, "empty noise schedule");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    if (!(alpha_bar_[i] > 0.0 && alpha_bar_[i] < 1.0)) throw Error(Errc::ConfigError, "alpha_bar outside (0, 1)");
    if (i > 0 && !(alpha_bar_[i] < alpha_bar_[i - 1])) {
      throw Error(Errc::ConfigError, "alpha_bar must be strictly decreasing");
    }
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > timesteps()) throw Error(Errc::ConfigError, "timestep out of range");
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

int snr_to_timestep(double snr_db, const NoiseSchedule& sched) {
  const double target = channel::noise_variance(snr_db);
  int best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= sched.timesteps(); ++t) {
    const double a = sched.alpha_bar(t);
    const double gap = std::abs((1.0 - a) / a - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = t;
    }
  }
  if (std::isinf(target)) return sched.timesteps();
  return best;
}

// Autoencoder.

LatentAutoencoder::LatentAutoencoder(AutoencoderConfig cfg)
    : cfg_(cfg), mean_("ae.latent_mean", cfg.latent_channels, 1), stddev_("ae.latent_std", cfg.latent_channels, 1) {
  CounterRng rng(cfg_.seed, 0xAE);
  const int d = cfg_.patch_size * cfg_.patch_size * cfg_.channels;
  encoder_ = nn::Mlp("ae.encoder", {d, cfg_.encoder_hidden, cfg_.latent_channels}, nn::Activation::Silu,
                     nn::Activation::Identity, rng);
  decoder_ = nn::Mlp("ae.decoder", {9 * cfg_.latent_channels, cfg_.decoder_hidden, d}, nn::Activation::Silu,
                     nn::Activation::Sigmoid, rng);
  stddev_.value.setOnes();
}

nn::Matrix LatentAutoencoder::patches(const std::vector<const ImageTensor*>& images) const {
  const int p = cfg_.patch_size;
  const int d = p * p * cfg_.channels;
  const int rows = images.front()->height() / p;
  const int cols = images.front()->width() / p;
  nn::Matrix x(d, static_cast<Eigen::Index>(images.size()) * rows * cols);
  std::vector<float> buffer(static_cast<std::size_t>(d));
  Eigen::Index j = 0;
  for (const auto* img : images) {
    if (img->height() % p || img->width() % p || img->channels() != cfg_.channels ||
        img->height() / p != rows || img->width() / p != cols) {
      throw Error(Errc::ShapeMismatch, "image does not fit the autoencoder geometry");
    }
    for (int i = 0; i < rows * cols; ++i, ++j) {
      const int y0 = (i / cols) * p, x0 = (i % cols) * p;
      std::size_t k = 0;
      for (int y = 0; y < p; ++y)
        for (int xx = 0; xx < p; ++xx)
          for (int c = 0; c < cfg_.channels; ++c) buffer[k++] = img->at(y0 + y, x0 + xx, c);
      x.col(j) = Eigen::Map<const nn::Vector>(buffer.data(), d);
    }
  }
  return x;
}

nn::Matrix LatentAutoencoder::neighbourhood(const nn::Matrix& raw, int frames, int rows, int cols) const {
  const int c = cfg_.latent_channels;
  nn::Matrix out = nn::Matrix::Zero(9 * c, raw.cols());
  for (int f = 0; f < frames; ++f)
    for (int r = 0; r < rows; ++r)
      for (int q = 0; q < cols; ++q) {
        const Eigen::Index j = (static_cast<Eigen::Index>(f) * rows + r) * cols + q;
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) {
            const int rr = r + i - 1, qq = q + k - 1;
            if (rr < 0 || rr >= rows || qq < 0 || qq >= cols) continue;
            out.col(j).segment((i * 3 + k) * c, c) = raw.col((static_cast<Eigen::Index>(f) * rows + rr) * cols + qq);
          }
      }
  return out;
}

nn::Matrix LatentAutoencoder::neighbourhood_backward(const nn::Matrix& grad, int frames, int rows, int cols) const {
  const int c = cfg_.latent_channels;
  nn::Matrix out = nn::Matrix::Zero(c, grad.cols());
  for (int f = 0; f < frames; ++f)
    for (int r = 0; r < rows; ++r)
      for (int q = 0; q < cols; ++q) {
        const Eigen::Index j = (static_cast<Eigen::Index>(f) * rows + r) * cols + q;
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) {
            const int rr = r + i - 1, qq = q + k - 1;
            if (rr < 0 || rr >= rows || qq < 0 || qq >= cols) continue;
            out.col((static_cast<Eigen::Index>(f) * rows + rr) * cols + qq) += grad.col(j).segment((i * 3 + k) * c, c);
          }
      }
  return out;
}

nn::Matrix LatentAutoencoder::encode_batch(const std::vector<const ImageTensor*>& images) const {
  if (images.empty()) return nn::Matrix(0, 0);
  nn::Matrix raw = encoder_.forward(patches(images));
  raw.colwise() -= mean_.value.col(0);
  raw.array().colwise() /= stddev_.value.col(0).array();
  const Eigen::Index per_frame = raw.size() / static_cast<Eigen::Index>(images.size());
  return Eigen::Map<nn::Matrix>(raw.data(), per_frame, static_cast<Eigen::Index>(images.size()));
}

std::vector<ImageTensor> LatentAutoencoder::decode_batch(const nn::Matrix& latents, int height, int width) const {
  const int p = cfg_.patch_size;
  const int rows = height / p, cols = width / p;
  const int c = cfg_.latent_channels;
  const auto frames = static_cast<int>(latents.cols());
  if (height % p || width % p || latents.rows() != static_cast<Eigen::Index>(rows) * cols * c) {
    throw Error(Errc::ShapeMismatch, "latent size does not match the requested image size");
  }
  nn::Matrix raw = Eigen::Map<const nn::Matrix>(latents.data(), c, static_cast<Eigen::Index>(frames) * rows * cols);
  raw.array().colwise() *= stddev_.value.col(0).array();
  raw.colwise() += mean_.value.col(0);
  const nn::Matrix y = decoder_.forward(neighbourhood(raw, frames, rows, cols));
  std::vector<ImageTensor> out;
  for (int f = 0; f < frames; ++f) {
    ImageTensor img(height, width, cfg_.channels);
    for (int i = 0; i < rows * cols; ++i) {
      const auto col = y.col((static_cast<Eigen::Index>(f) * rows * cols) + i);
      const int y0 = (i / cols) * p, x0 = (i % cols) * p;
      Eigen::Index k = 0;
      for (int yy = 0; yy < p; ++yy)
        for (int xx = 0; xx < p; ++xx)
          for (int ch = 0; ch < cfg_.channels; ++ch) img.at(y0 + yy, x0 + xx, ch) = col[k++];
    }
    img.clamp01();
    out.push_back(std::move(img));
  }
  return out;
}

LatentFeature LatentAutoencoder::encode(const ImageTensor& image) const {
  const nn::Matrix z = encode_batch({&image});
  LatentFeature f;
  f.height = image.height() / cfg_.patch_size;
  f.width = image.width() / cfg_.patch_size;
  f.depth = cfg_.latent_channels;
  f.values.assign(z.data(), z.data() + z.size());
  f.source_elements = image.size();
  return f;
}

ImageTensor LatentAutoencoder::decode(const LatentFeature& z) const {
  if (z.depth != cfg_.latent_channels || z.scale_factor != 1) {
    throw Error(Errc::ShapeMismatch, "decoder needs a full-resolution latent");
  }
  const nn::Matrix m = Eigen::Map<const nn::Matrix>(z.values.data(), static_cast<Eigen::Index>(z.values.size()), 1);
  return decode_batch(m, z.height * cfg_.patch_size, z.width * cfg_.patch_size).front();
}

std::vector<double> LatentAutoencoder::train(const std::vector<ImageTensor>& images, int steps, int batch, double lr,
                                             std::uint64_t seed) {
  if (images.empty() || steps < 1 || batch < 1) throw Error(Errc::ConfigError, "autoencoder training needs data and steps");
  mean_.value.setZero();
  stddev_.value.setOnes();
  nn::ParamList trainable = encoder_.params();
  for (auto* p : decoder_.params()) trainable.push_back(p);
  nn::Adam adam(trainable, {static_cast<float>(lr)});
  const int p = cfg_.patch_size;
  const int rows = images.front().height() / p, cols = images.front().width() / p;
  std::vector<double> losses;
  CounterRng rng(seed, 0xAE7);
  std::vector<const ImageTensor*> chosen(static_cast<std::size_t>(batch));
  for (int step = 0; step < steps; ++step) {
    for (auto& c : chosen) c = &images[rng.below(images.size())];
    const nn::Matrix x = patches(chosen);
    nn::Mlp::Cache enc_cache, dec_cache;
    const nn::Matrix raw = encoder_.forward(x, &enc_cache);
    const nn::Matrix y = decoder_.forward(neighbourhood(raw, batch, rows, cols), &dec_cache);
    const nn::Matrix diff = y - x;
    const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
    if (!std::isfinite(loss)) throw Error(Errc::DivergedTraining, "autoencoder loss is not finite");
    losses.push_back(loss);
    const nn::Matrix dy = diff * (2.0f / static_cast<float>(diff.size()));
    const nn::Matrix dn = decoder_.backward(dy, dec_cache);
    encoder_.backward(neighbourhood_backward(dn, batch, rows, cols), enc_cache);
    adam.step();
  }

  // Latent statistics over the training set.
  const int c = cfg_.latent_channels;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(c), sum2 = Eigen::VectorXd::Zero(c);
  std::size_t n = 0;
  for (std::size_t start = 0; start < images.size(); start += 64) {
    std::vector<const ImageTensor*> chunk;
    for (std::size_t i = start; i < std::min(images.size(), start + 64); ++i) chunk.push_back(&images[i]);
    const nn::Matrix raw = encoder_.forward(patches(chunk));
    sum += raw.cast<double>().rowwise().sum();
    sum2 += raw.cast<double>().array().square().matrix().rowwise().sum();
    n += static_cast<std::size_t>(raw.cols());
  }
  for (int k = 0; k < c; ++k) {
    const double m = sum[k] / n;
    const double var = (sum2[k] - n * m * m) / static_cast<double>(n - 1);
    mean_.value(k, 0) = static_cast<float>(m);
    stddev_.value(k, 0) = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
  }
  return losses;
}

nn::ParamList LatentAutoencoder::params() {
  nn::ParamList list = encoder_.params();
  for (auto* p : decoder_.params()) list.push_back(p);
  list.push_back(&mean_);
  list.push_back(&stddev_);
  return list;
}

nlohmann::json LatentAutoencoder::header() const {
  return {{"kind", "latent_autoencoder"},
          {"patch_size", cfg_.patch_size},
          {"channels", cfg_.channels},
          {"latent_channels", cfg_.latent_channels},
          {"encoder_hidden", cfg_.encoder_hidden},
          {"decoder_hidden", cfg_.decoder_hidden},
          {"seed", cfg_.seed}};
}

void LatentAutoencoder::save(const std::filesystem::path& path) { save_checkpoint(path, header(), params()); }

LatentAutoencoder LatentAutoencoder::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "latent_autoencoder") throw Error(Errc::IoError, "not an autoencoder checkpoint");
  AutoencoderConfig cfg;
  cfg.patch_size = h.at("patch_size").get<int>();
  cfg.channels = h.at("channels").get<int>();
  cfg.latent_channels = h.at("latent_channels").get<int>();
  cfg.encoder_hidden = h.at("encoder_hidden").get<int>();
  cfg.decoder_hidden = h.at("decoder_hidden").get<int>();
  cfg.seed = h.at("seed").get<std::uint64_t>();
  LatentAutoencoder ae(cfg);
  assign_params(ckpt, ae.params());
  return ae;
}

// Backbone.

const std::vector<std::string>& prompt_vocabulary() {
  static const std::vector<std::string> vocab = {"", "circle", "square", "triangle"};
  return vocab;
}

int prompt_class(const std::optional<std::string>& prompt) {
  if (!prompt || prompt->empty()) return 0;
  const auto q = synthetic::parse_query(*prompt);
  if (!q.shape) throw Error(Errc::ConfigError, "prompt '" + *prompt + "' names no shape in the vocabulary");
  return 1 + static_cast<int>(*q.shape);
}

Denoiser::Denoiser(BackboneConfig cfg) : cfg_(cfg), class_embedding_("backbone.class_embedding", cfg.hidden, cfg.classes) {
  CounterRng rng(cfg_.seed, 0xD1FF);
  time_ = nn::Dense("backbone.time", cfg_.time_dim, cfg_.hidden, rng);
  l1_ = nn::Dense("backbone.l1", cfg_.latent_dim, cfg_.hidden, rng);
  l2_ = nn::Dense("backbone.l2", cfg_.hidden, cfg_.hidden, rng);
  l3_ = nn::Dense("backbone.l3", cfg_.hidden, cfg_.hidden, rng);
  out_ = nn::Dense("backbone.out", cfg_.hidden, cfg_.latent_dim, rng);
  for (Eigen::Index i = 0; i < class_embedding_.value.size(); ++i) {
    class_embedding_.value.data()[i] = static_cast<float>(rng.normal());
  }
}

nn::Matrix Denoiser::forward(const nn::Matrix& z, std::span<const int> t, std::span<const int> classes,
                             Cache* cache) const {
  const auto b = z.cols();
  nn::Matrix temb(cfg_.time_dim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    temb.col(j) = nn::sinusoidal_embedding(static_cast<float>(t[static_cast<std::size_t>(j)]), cfg_.time_dim);
  }
  nn::Matrix e = time_.forward(temb);
  for (Eigen::Index j = 0; j < b; ++j) {
    const int c = classes[static_cast<std::size_t>(j)];
    if (c < 0 || c >= cfg_.classes) throw Error(Errc::ConfigError, "class id outside the vocabulary");
    e.col(j) += class_embedding_.value.col(c);
  }
  nn::Matrix pre1 = l1_.forward(z) + e;
  nn::Matrix h1 = nn::activate(nn::Activation::Silu, pre1);
  nn::Matrix pre2 = l2_.forward(h1) + e;
  nn::Matrix h2 = nn::activate(nn::Activation::Silu, pre2) + h1;
  nn::Matrix pre3 = l3_.forward(h2) + e;
  nn::Matrix h3 = nn::activate(nn::Activation::Silu, pre3) + h2;
  nn::Matrix out = out_.forward(h3);
  if (cache) {
    cache->z = z;
    cache->temb = std::move(temb);
    cache->e = std::move(e);
    cache->pre1 = std::move(pre1);
    cache->h1 = std::move(h1);
    cache->pre2 = std::move(pre2);
    cache->h2 = std::move(h2);
    cache->pre3 = std::move(pre3);
    cache->h3 = std::move(h3);
    cache->classes.assign(classes.begin(), classes.end());
  }
  return out;
}

void Denoiser::backward(const nn::Matrix& dout, const Cache& c) {
  nn::Matrix dh3 = out_.backward(c.h3, dout);
  const nn::Matrix dpre3 = nn::activation_backward(nn::Activation::Silu, c.pre3, dh3);
  nn::Matrix dh2 = dh3 + l3_.backward(c.h2, dpre3);
  const nn::Matrix dpre2 = nn::activation_backward(nn::Activation::Silu, c.pre2, dh2);
  nn::Matrix dh1 = dh2 + l2_.backward(c.h1, dpre2);
  const nn::Matrix dpre1 = nn::activation_backward(nn::Activation::Silu, c.pre1, dh1);
  l1_.backward(c.z, dpre1);
  const nn::Matrix de = dpre1 + dpre2 + dpre3;
  time_.backward(c.temb, de);
  for (Eigen::Index j = 0; j < de.cols(); ++j) class_embedding_.grad.col(c.classes[static_cast<std::size_t>(j)]) += de.col(j);
}

std::vector<double> Denoiser::train(const nn::Matrix& latents, std::span<const int> labels, const NoiseSchedule& sched,
                                    int steps, int batch, double lr, double class_dropout, std::uint64_t seed) {
  if (latents.rows() != cfg_.latent_dim || latents.cols() == 0 || labels.size() != static_cast<std::size_t>(latents.cols())) {
    throw Error(Errc::ShapeMismatch, "backbone training data does not match the latent size");
  }
  nn::Adam adam(params(), {static_cast<float>(lr)});
  std::vector<double> losses;
  const int T = sched.timesteps();
  std::vector<int> t(static_cast<std::size_t>(batch)), cls(static_cast<std::size_t>(batch));
  nn::Matrix z0(cfg_.latent_dim, batch), zt(cfg_.latent_dim, batch);
  for (int step = 0; step < steps; ++step) {
    CounterRng rng(seed, 0xB0000000ull + static_cast<std::uint64_t>(step));
    const CounterRng noise(seed, 0xB1000000ull + static_cast<std::uint64_t>(step));
    for (int j = 0; j < batch; ++j) {
      const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(latents.cols())));
      z0.col(j) = latents.col(idx);
      t[j] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
      cls[j] = rng.uniform() < class_dropout ? 0 : labels[static_cast<std::size_t>(idx)];
      const double a = sched.alpha_bar(t[j]);
      const float sa = static_cast<float>(std::sqrt(a)), sn = static_cast<float>(std::sqrt(1.0 - a));
      for (int i = 0; i < cfg_.latent_dim; ++i) zt(i, j) = sa * z0(i, j) + sn * static_cast<float>(noise.normal_at(static_cast<std::uint64_t>(j) * cfg_.latent_dim + i));
    }
    adam.set_learning_rate(static_cast<float>(0.5 * lr * (1.0 + std::cos(std::numbers::pi * step / steps))));
    Cache cache;
    const nn::Matrix pred = forward(zt, t, cls, &cache);
    const nn::Matrix diff = pred - z0;
    const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
    if (!std::isfinite(loss)) throw Error(Errc::DivergedTraining, "backbone loss is not finite");
    losses.push_back(loss);
    backward(diff * (2.0f / static_cast<float>(diff.size())), cache);
    adam.step();
  }
  ready_ = true;
  return losses;
}

nn::ParamList Denoiser::params() {
  nn::ParamList list;
  for (auto* d : {&time_, &l1_, &l2_, &l3_, &out_}) {
    for (auto* p : d->params()) list.push_back(p);
  }
  list.push_back(&class_embedding_);
  return list;
}

nlohmann::json Denoiser::header() const {
  return {{"kind", "diffusion_backbone"},
          {"latent_dim", cfg_.latent_dim},
          {"hidden", cfg_.hidden},
          {"time_dim", cfg_.time_dim},
          {"classes", cfg_.classes},
          {"prediction", "x0"},
          {"prompt_vocabulary", prompt_vocabulary()},
          {"seed", cfg_.seed}};
}

void Denoiser::save(const std::filesystem::path& path) { save_checkpoint(path, header(), params()); }

Denoiser Denoiser::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "diffusion_backbone") throw Error(Errc::IoError, "not a backbone checkpoint");
  BackboneConfig cfg;
  cfg.latent_dim = h.at("latent_dim").get<int>();
  cfg.hidden = h.at("hidden").get<int>();
  cfg.time_dim = h.at("time_dim").get<int>();
  cfg.classes = h.at("classes").get<int>();
  cfg.seed = h.at("seed").get<std::uint64_t>();
  Denoiser d(cfg);
  assign_params(ckpt, d.params());
  d.ready_ = true;
  return d;
}

nn::Matrix ddim(const Denoiser& backbone, const NoiseSchedule& sched, const nn::Matrix& z_t, int t_start,
                std::span<const int> classes, double guidance_scale) {
  if (t_start < 0 || t_start > sched.timesteps()) throw Error(Errc::ConfigError, "start step out of range");
  const auto b = z_t.cols();
  const bool conditional = std::any_of(classes.begin(), classes.end(), [](int c) { return c != 0; });
  const std::vector<int> uncond(static_cast<std::size_t>(b), 0);
  nn::Matrix z = z_t;
  for (int t = t_start; t >= 1; --t) {
    const std::vector<int> ts(static_cast<std::size_t>(b), t);
    nn::Matrix x0 = backbone.forward(z, ts, classes);
    if (conditional && guidance_scale != 1.0) {
      const nn::Matrix x0u = backbone.forward(z, ts, uncond);
      x0 = x0u + static_cast<float>(guidance_scale) * (x0 - x0u);
    }
    const double a = sched.alpha_bar(t);
    const double a_prev = sched.alpha_bar(t - 1);
    const nn::Matrix eps = (z - static_cast<float>(std::sqrt(a)) * x0) / static_cast<float>(std::sqrt(1.0 - a));
    z = static_cast<float>(std::sqrt(a_prev)) * x0 + static_cast<float>(std::sqrt(1.0 - a_prev)) * eps;
  }
  return z;
}

LatentFeature reverse_denoise(const LatentFeature& z_t, int t_star, const NoiseSchedule& sched,
                              const Denoiser* backbone, const std::optional<std::string>& prompt,
                              double guidance_scale) {
  if (t_star == 0) return z_t;
  if (!backbone || !backbone->ready()) throw Error(Errc::NoBackbone, "no trained diffusion backbone loaded");
  if (static_cast<int>(z_t.size()) != backbone->config().latent_dim) {
    throw Error(Errc::ShapeMismatch, "latent size does not match the backbone");
  }
  const nn::Matrix z = Eigen::Map<const nn::Matrix>(z_t.values.data(), static_cast<Eigen::Index>(z_t.size()), 1);
  const int cls[1] = {prompt_class(prompt)};
  const nn::Matrix out = ddim(*backbone, sched, z, t_star, cls, guidance_scale);
  LatentFeature result = z_t;
  result.values.assign(out.data(), out.data() + out.size());
  return result;
}

// VAE head.

VaeHead::VaeHead(VaeHeadConfig cfg) : cfg_(cfg) {
  CounterRng rng(cfg_.seed, 0x5AE);
  if (cfg_.linear) {
    mu_ = nn::Dense("head.mu", cfg_.input_dim, cfg_.latent_dim, rng);
    return;
  }
  body_ = nn::Mlp("head.body", {cfg_.input_dim + 2, cfg_.hidden, cfg_.hidden}, nn::Activation::Silu,
                  nn::Activation::Silu, rng);
  mu_ = nn::Dense("head.mu", cfg_.hidden, cfg_.latent_dim, rng);
  variance_ = nn::Mlp("head.log_var", {cfg_.hidden + 2, cfg_.variance_hidden, cfg_.latent_dim}, nn::Activation::Silu,
                      nn::Activation::Identity, rng);
}

nn::Matrix VaeHead::snr_features(std::span<const double> snr_db) {
  nn::Matrix f(2, static_cast<Eigen::Index>(snr_db.size()));
  for (std::size_t j = 0; j < snr_db.size(); ++j) {
    f(0, static_cast<Eigen::Index>(j)) = static_cast<float>(snr_db[j] / 10.0);
    f(1, static_cast<Eigen::Index>(j)) = 1.0f;
  }
  return f;
}

std::pair<nn::Matrix, nn::Matrix> VaeHead::forward(const nn::Matrix& y, std::span<const double> snr_db,
                                                   Cache* cache) const {
  if (y.rows() != cfg_.input_dim || snr_db.size() != static_cast<std::size_t>(y.cols())) {
    throw Error(Errc::ShapeMismatch, "head input does not match its configuration");
  }
  nn::Matrix mu, lv;
  if (cfg_.linear) {
    mu = mu_.forward(y);
    lv = nn::Matrix::Zero(cfg_.latent_dim, y.cols());
    if (cache) cache->in_b = y;
  } else {
    nn::Matrix f = snr_features(snr_db);
    nn::Matrix in_b(cfg_.input_dim + 2, y.cols());
    in_b << y, f;
    Cache local;
    Cache& c = cache ? *cache : local;
    nn::Matrix h = body_.forward(in_b, &c.body);
    mu = mu_.forward(h);
    nn::Matrix in_v(cfg_.hidden + 2, y.cols());
    in_v << h, f;
    lv = variance_.forward(in_v, &c.variance);
    c.features = std::move(f);
    c.in_b = std::move(in_b);
    c.h = std::move(h);
    c.in_v = std::move(in_v);
  }
  if (log_var_override_) lv.setConstant(*log_var_override_);
  return {std::move(mu), std::move(lv)};
}

void VaeHead::backward(const nn::Matrix& dmu, const nn::Matrix& dlog_var, const Cache& cache) {
  if (cfg_.linear) {
    mu_.backward(cache.in_b, dmu);
    return;
  }
  nn::Matrix dh = mu_.backward(cache.h, dmu);
  dh += variance_.backward(dlog_var, cache.variance).topRows(cfg_.hidden);
  body_.backward(dh, cache.body);
}

nn::ParamList VaeHead::params() {
  nn::ParamList list;
  if (!cfg_.linear) list = body_.params();
  for (auto* p : mu_.params()) list.push_back(p);
  if (!cfg_.linear) {
    for (auto* p : variance_.params()) list.push_back(p);
  }
  return list;
}

nlohmann::json VaeHead::header() const {
  return {{"kind", "vae_head"},
          {"input_dim", cfg_.input_dim},
          {"latent_dim", cfg_.latent_dim},
          {"hidden", cfg_.hidden},
          {"variance_hidden", cfg_.variance_hidden},
          {"linear", cfg_.linear},
          {"seed", cfg_.seed}};
}

void VaeHead::save(const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json h = header();
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) h[k] = v;
  }
  save_checkpoint(path, h, params());
}

VaeHead VaeHead::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "vae_head") throw Error(Errc::IoError, "not a VAE head checkpoint");
  VaeHeadConfig cfg;
  cfg.input_dim = h.at("input_dim").get<int>();
  cfg.latent_dim = h.at("latent_dim").get<int>();
  cfg.hidden = h.at("hidden").get<int>();
  cfg.variance_hidden = h.at("variance_hidden").get<int>();
  cfg.linear = h.at("linear").get<bool>();
  cfg.seed = h.at("seed").get<std::uint64_t>();
  VaeHead head(cfg);
  assign_params(ckpt, head.params());
  return head;
}

VaeOutput vae_reconstruct(const LatentFeature& received, double snr_db, const VaeHead& head, std::uint64_t seed,
                          std::uint64_t stream) {
  if (!std::isfinite(snr_db)) throw Error(Errc::ConfigError, "VAE head needs a finite SNR");
  if (static_cast<int>(received.size()) != head.config().input_dim) {
    throw Error(Errc::ShapeMismatch, "received latent has " + std::to_string(received.size()) +
                                         " elements, head expects " + std::to_string(head.config().input_dim));
  }
  const nn::Matrix y =
      Eigen::Map<const nn::Matrix>(received.values.data(), static_cast<Eigen::Index>(received.size()), 1);
  const double snr[1] = {snr_db};
  const auto [mu, lv] = head.forward(y, snr);
  VaeOutput out;
  out.mu.assign(mu.data(), mu.data() + mu.size());
  out.log_var.assign(lv.data(), lv.data() + lv.size());
  const CounterRng rng(seed, stream);
  out.sample.resize(out.mu.size());
  for (std::size_t i = 0; i < out.mu.size(); ++i) {
    const float scale = std::exp(out.log_var[i] / 2.0f);
    out.sample[i] = out.mu[i] + (scale == 0.0f ? 0.0f : scale * static_cast<float>(rng.normal_at(i)));
  }
  return out;
}

// Losses and training.

namespace {

void check_loss_inputs(std::size_t n, std::size_t a, std::size_t b, int t, const NoiseSchedule& sched) {
  if (n == 0 || a != n || b != n) throw Error(Errc::ShapeMismatch, "guidance loss inputs differ in size");
  if (t < 1 || t > sched.timesteps()) throw Error(Errc::ConfigError, "guidance loss needs t in [1, T]");
}

}  // namespace

double gaussian_kl(double mu_p, double log_var_p, double mu_q, double var_q) {
  const double d = mu_p - mu_q;
  return 0.5 * (std::exp(log_var_p) / var_q + d * d / var_q - 1.0 - log_var_p + std::log(var_q));
}

double guidance_loss(std::span<const double> mu, std::span<const double> log_var, std::span<const double> z_clean,
                     int t, const NoiseSchedule& sched) {
  check_loss_inputs(mu.size(), log_var.size(), z_clean.size(), t, sched);
  const double a = sched.alpha_bar(t);
  const double v = 1.0 - a;
  const double sa = std::sqrt(a);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) sum += gaussian_kl(mu[i], log_var[i], sa * z_clean[i], v);
  return sum / static_cast<double>(mu.size());
}

void guidance_loss_grad(std::span<const double> mu, std::span<const double> log_var, std::span<const double> z_clean,
                        int t, const NoiseSchedule& sched, std::span<double> dmu, std::span<double> dlog_var) {
  check_loss_inputs(mu.size(), log_var.size(), z_clean.size(), t, sched);
  if (dmu.size() != mu.size() || dlog_var.size() != mu.size()) throw Error(Errc::ShapeMismatch, "gradient buffers");
  const double a = sched.alpha_bar(t);
  const double v = 1.0 - a;
  const double sa = std::sqrt(a);
  const double n = static_cast<double>(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    dmu[i] = (mu[i] - sa * z_clean[i]) / (v * n);
    dlog_var[i] = 0.5 * (std::exp(log_var[i]) / v - 1.0) / n;
  }
}

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::Full: return "generative_full";
    case Method::VaeOnly: return "generative_vae_only";
    case Method::DirectMse: return "generative_direct_mse";
  }
  return "generative_full";
}

std::optional<Method> parse_method(std::string_view name) noexcept {
  for (auto m : {Method::Full, Method::VaeOnly, Method::DirectMse}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

double GenerativeConfig::effective_lambda() const noexcept { return method == Method::Full ? lambda_g : 0.0; }

nlohmann::json GenerativeConfig::to_json() const {
  return {{"method", method_name(method)},
          {"lambda_g", effective_lambda()},
          {"beta_kl", beta_kl},
          {"steps", steps},
          {"batch", batch},
          {"learning_rate", learning_rate},
          {"snr_lo_db", snr_lo_db},
          {"snr_hi_db", snr_hi_db},
          {"target_ratio", target_ratio},
          {"source_elements", source_elements},
          {"seed", seed},
          {"head",
           {{"input_dim", head.input_dim},
            {"latent_dim", head.latent_dim},
            {"hidden", head.hidden},
            {"variance_hidden", head.variance_hidden},
            {"linear", method == Method::DirectMse},
            {"seed", head.seed}}}};
}

std::string GenerativeConfig::hash() const { return training::fnv1a_hex(to_json().dump()); }

nn::Matrix transmit_latents(const nn::Matrix& latents, int height, int width, int depth, std::size_t source_elements,
                            double target_ratio, std::span<const double> snr_db, const CounterRng& noise) {
  if (latents.rows() != static_cast<Eigen::Index>(height) * width * depth ||
      snr_db.size() != static_cast<std::size_t>(latents.cols())) {
    throw Error(Errc::ShapeMismatch, "latent batch does not match the stated geometry");
  }
  const int f = pool_factor(height, width, depth, source_elements, target_ratio);
  const int m = (height / f) * (width / f) * depth;
  nn::Matrix out(m, latents.cols());
  for (Eigen::Index j = 0; j < latents.cols(); ++j) {
    pool_into(latents.col(j).data(), height, width, depth, f, out.col(j).data());
    const double power = out.col(j).cast<double>().squaredNorm() / m;
    if (!(power > 0.0)) throw Error(Errc::ZeroPower, "latent pooled to all zeros");
    const double sigma = std::sqrt(channel::noise_variance(snr_db[static_cast<std::size_t>(j)]));
    for (int i = 0; i < m; ++i) {
      const double v = out(i, j) / std::sqrt(power) +
                       sigma * noise.normal_at(static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(m) + i);
      out(i, j) = static_cast<float>(v);
    }
  }
  return out;
}

GenerativeLoss head_loss(VaeHead& head, const GenerativeConfig& cfg, const NoiseSchedule& sched, const nn::Matrix& y,
                         std::span<const double> snr_db, const nn::Matrix& z_clean, const CounterRng& eps_rng,
                         bool grad) {
  VaeHead::Cache cache;
  const auto [mu, lv] = head.forward(y, snr_db, grad ? &cache : nullptr);
  const Eigen::Index d = mu.rows(), b = mu.cols();
  if (z_clean.rows() != d || z_clean.cols() != b) throw Error(Errc::ShapeMismatch, "clean latents mismatch head output");
  const double n = static_cast<double>(d * b);
  GenerativeLoss loss;
  loss.lambda_g = cfg.effective_lambda();
  nn::Matrix dmu(d, b), dlv = nn::Matrix::Zero(d, b);

  if (cfg.method == Method::DirectMse) {
    const nn::Matrix diff = mu - z_clean;
    loss.l_vae = diff.cast<double>().squaredNorm() / n;
    loss.total = loss.l_vae;
    dmu = diff * static_cast<float>(2.0 / n);
  } else {
    double rec = 0.0, kl_prior = 0.0, l_g = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const int t = snr_to_timestep(snr_db[static_cast<std::size_t>(j)], sched);
      const double a = sched.alpha_bar(t), v = 1.0 - a, sa = std::sqrt(a), log_v = std::log(v);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double m = mu(i, j), l = lv(i, j), target = sa * z_clean(i, j);
        const double eps = eps_rng.normal_at(static_cast<std::uint64_t>(j * d + i));
        const double sd = std::exp(l / 2.0);
        const double s = m + sd * eps;
        const double r = s - target;
        rec += r * r;
        kl_prior += 0.5 * (m * m + std::exp(l) - 1.0 - l);
        l_g += 0.5 * (std::exp(l) / v + (m - target) * (m - target) / v - 1.0 - l + log_v);
        if (grad) {
          const double ds = 2.0 * r / n;
          double gm = ds + cfg.beta_kl * m / n;
          double gl = ds * 0.5 * sd * eps + cfg.beta_kl * 0.5 * (std::exp(l) - 1.0) / n;
          gm += loss.lambda_g * (m - target) / (v * n);
          gl += loss.lambda_g * 0.5 * (std::exp(l) / v - 1.0) / n;
          dmu(i, j) = static_cast<float>(gm);
          dlv(i, j) = static_cast<float>(gl);
        }
      }
    }
    loss.l_vae = rec / n + cfg.beta_kl * kl_prior / n;
    loss.l_g = l_g / n;
    loss.total = loss.l_vae + loss.lambda_g * loss.l_g;
  }
  if (!std::isfinite(loss.total)) throw Error(Errc::DivergedTraining, "generative loss is not finite");
  if (grad) head.backward(dmu, dlv, cache);
  return loss;
}

GenerativeTrainResult train_generative(const GenerativeConfig& cfg, const nn::Matrix& latents, int height, int width,
                                       int depth, const NoiseSchedule& sched) {
  if (cfg.steps < 1 || cfg.batch < 1 || !(cfg.learning_rate > 0.0) || cfg.lambda_g < 0.0 || cfg.beta_kl < 0.0) {
    throw Error(Errc::ConfigError, "invalid generative training configuration");
  }
  if (latents.cols() == 0) throw Error(Errc::ConfigError, "no training latents");
  VaeHeadConfig hc = cfg.head;
  hc.linear = cfg.method == Method::DirectMse;
  hc.latent_dim = static_cast<int>(latents.rows());
  hc.input_dim = (height / pool_factor(height, width, depth, cfg.source_elements, cfg.target_ratio)) *
                 (width / pool_factor(height, width, depth, cfg.source_elements, cfg.target_ratio)) * depth;
  GenerativeTrainResult result{VaeHead(hc), {}, cfg.hash()};
  nn::Adam adam(result.head.params(), {static_cast<float>(cfg.learning_rate)});
  nn::Matrix z(latents.rows(), cfg.batch);
  std::vector<double> snr(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    const CounterRng rng(cfg.seed, 0x6E000000ull + static_cast<std::uint64_t>(step));
    for (int j = 0; j < cfg.batch; ++j) {
      z.col(j) = latents.col(static_cast<Eigen::Index>(rng.bits_at(2 * j) % static_cast<std::uint64_t>(latents.cols())));
      snr[static_cast<std::size_t>(j)] = cfg.snr_lo_db + (cfg.snr_hi_db - cfg.snr_lo_db) * rng.uniform_at(2 * j + 1);
    }
    const nn::Matrix y = transmit_latents(z, height, width, depth, cfg.source_elements, cfg.target_ratio, snr,
                                          CounterRng(rng.bits_at(1u << 20), 1));
    result.losses.push_back(head_loss(result.head, cfg, sched, y, snr, z, CounterRng(rng.bits_at(1u << 21), 2), true));
    adam.step();
  }
  return result;
}

ReceiverOutput receive(const VaeHead& head, Method method, const Denoiser& backbone, const NoiseSchedule& sched,
                       const nn::Matrix& received, double snr_db, const CounterRng& eps_rng) {
  if (!backbone.ready()) throw Error(Errc::NoBackbone, "no trained diffusion backbone loaded");
  const std::vector<double> snr(static_cast<std::size_t>(received.cols()), snr_db);
  auto [mu, lv] = head.forward(received, snr);
  nn::Matrix start = mu;
  if (method != Method::DirectMse) {
    for (Eigen::Index j = 0; j < mu.cols(); ++j)
      for (Eigen::Index i = 0; i < mu.rows(); ++i) {
        const float sd = std::exp(lv(i, j) / 2.0f);
        if (sd == 0.0f) continue;
        start(i, j) += sd * static_cast<float>(eps_rng.normal_at(static_cast<std::uint64_t>(j * mu.rows() + i)));
      }
  }
  ReceiverOutput out;
  out.timestep = snr_to_timestep(snr_db, sched);
  const std::vector<int> cls(static_cast<std::size_t>(received.cols()), 0);
  out.latents = ddim(backbone, sched, start, out.timestep, cls, 1.0);
  return out;
}

}  // namespace semcom::generative
