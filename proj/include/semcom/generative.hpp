#pragma once

// Generative decoding path: a small latent autoencoder, a frozen toy diffusion
// backbone, pooled latent transmission and an SNR-conditioned VAE head whose
// samples are matched to the diffusion forward process.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/image.hpp"
#include "semcom/nn.hpp"

namespace semcom::generative {

/// h x w x d grid, (y, x, channel) order.
struct LatentFeature {
  int height = 0;
  int width = 0;
  int depth = 0;
  std::vector<float> values;
  int scale_factor = 1;  // spatial pooling applied relative to the full latent
  double snr_db = std::numeric_limits<double>::infinity();
  std::size_t source_elements = 0;  // pixels x channels of the source image

  std::size_t size() const noexcept { return values.size(); }
  /// size / source_elements (0 when the source size is unknown).
  double compression_ratio() const noexcept;
  float at(int y, int x, int c) const noexcept {
    return values[(static_cast<std::size_t>(y) * width + x) * depth + c];
  }
};

/// Average-pool by the smallest factor (dividing both sides) whose ratio is <= target.
/// Throws RatioUnachievable when even pooling to 1 x 1 is too large, ConfigError
/// when target is outside (0, 1].
LatentFeature compress_latent(const LatentFeature& z, double target_ratio);

class NoiseSchedule {
 public:
  /// Linear betas from beta_1 to beta_T.
  static NoiseSchedule linear(int timesteps = 100, double beta_start = 1e-4, double beta_end = 0.1);
  /// Throws ConfigError unless strictly decreasing inside (0, 1).
  explicit NoiseSchedule(std::vector<double> alphas_cumprod);

  int timesteps() const noexcept { return static_cast<int>(alpha_bar_.size()); }
  /// Cumulative signal retention at step t in [1, T]; t = 0 gives 1.
  double alpha_bar(int t) const;
  const std::vector<double>& alphas_cumprod() const noexcept { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
};

/// argmin_t |(1 - abar_t) / abar_t - 10^(-snr/10)| over t in [1, T]; first index on ties.
int snr_to_timestep(double snr_db, const NoiseSchedule& sched);

// Latent autoencoder.

struct AutoencoderConfig {
  int patch_size = 8;
  int channels = 3;
  int latent_channels = 4;
  int encoder_hidden = 128;
  int decoder_hidden = 256;
  std::uint64_t seed = 0;
};

/// Per-patch encoder to a latent vector; the decoder sees the 3 x 3 latent
/// neighbourhood of each patch. Latents are standardized per channel.
class LatentAutoencoder {
 public:
  LatentAutoencoder() : LatentAutoencoder(AutoencoderConfig{}) {}
  explicit LatentAutoencoder(AutoencoderConfig cfg);

  const AutoencoderConfig& config() const noexcept { return cfg_; }
  LatentFeature encode(const ImageTensor& image) const;
  ImageTensor decode(const LatentFeature& z) const;
  /// Columns are flattened (standardized) latents.
  nn::Matrix encode_batch(const std::vector<const ImageTensor*>& images) const;
  std::vector<ImageTensor> decode_batch(const nn::Matrix& latents, int height, int width) const;

  /// Plain MSE reconstruction training, then latent statistics from `images`.
  /// Returns the per-step loss.
  std::vector<double> train(const std::vector<ImageTensor>& images, int steps, int batch, double lr, std::uint64_t seed);

  nn::ParamList params();
  nlohmann::json header() const;
  void save(const std::filesystem::path& path);
  static LatentAutoencoder load(const std::filesystem::path& path);

 private:
  nn::Matrix neighbourhood(const nn::Matrix& raw, int frames, int rows, int cols) const;
  nn::Matrix neighbourhood_backward(const nn::Matrix& grad, int frames, int rows, int cols) const;
  nn::Matrix patches(const std::vector<const ImageTensor*>& images) const;

  AutoencoderConfig cfg_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  nn::Param mean_;
  nn::Param stddev_;
};

// Diffusion backbone.

/// Conditioning vocabulary of the toy backbone: id 0 is unconditional.
const std::vector<std::string>& prompt_vocabulary();
/// Class id for a free-text prompt (0 for none). Throws ConfigError when the
/// prompt names nothing in the vocabulary.
int prompt_class(const std::optional<std::string>& prompt);

struct BackboneConfig {
  int latent_dim = 256;
  int hidden = 512;
  int time_dim = 32;
  int classes = 4;
  std::uint64_t seed = 0;
};

/// x0-predicting denoiser: h = silu(l1 z + e); two residual blocks
/// h += silu(l h + e); out. e = time projection + class embedding.
class Denoiser {
 public:
  struct Cache {
    nn::Matrix z, temb, e, pre1, h1, pre2, h2, pre3, h3;
    std::vector<int> classes;
  };

  Denoiser() : Denoiser(BackboneConfig{}) {}
  explicit Denoiser(BackboneConfig cfg);

  const BackboneConfig& config() const noexcept { return cfg_; }
  bool ready() const noexcept { return ready_; }
  void mark_ready() noexcept { ready_ = true; }

  nn::Matrix forward(const nn::Matrix& z, std::span<const int> t, std::span<const int> classes,
                     Cache* cache = nullptr) const;
  void backward(const nn::Matrix& dout, const Cache& cache);

  /// Denoising training on clean latents (columns) with class labels in [1, classes).
  std::vector<double> train(const nn::Matrix& latents, std::span<const int> labels, const NoiseSchedule& sched,
                            int steps, int batch, double lr, double class_dropout, std::uint64_t seed);

  nn::ParamList params();
  nlohmann::json header() const;
  void save(const std::filesystem::path& path);
  static Denoiser load(const std::filesystem::path& path);

 private:
  BackboneConfig cfg_;
  nn::Dense time_, l1_, l2_, l3_, out_;
  nn::Param class_embedding_;  // hidden x classes
  bool ready_ = false;
};

/// Deterministic DDIM from step t_start to 0 on latent columns. guidance_scale
/// != 1 mixes conditional and unconditional predictions (classifier-free).
nn::Matrix ddim(const Denoiser& backbone, const NoiseSchedule& sched, const nn::Matrix& z_t, int t_start,
                std::span<const int> classes, double guidance_scale = 1.0);

inline constexpr double kDefaultGuidanceScale = 2.0;

/// Throws NoBackbone when the backbone is untrained; t_star = 0 is the identity.
LatentFeature reverse_denoise(const LatentFeature& z_t, int t_star, const NoiseSchedule& sched,
                              const Denoiser* backbone, const std::optional<std::string>& prompt = std::nullopt,
                              double guidance_scale = kDefaultGuidanceScale);

// SNR-conditioned VAE head.

struct VaeHeadConfig {
  int input_dim = 64;
  int latent_dim = 256;
  int hidden = 512;
  int variance_hidden = 128;
  /// Direct-MSE ablation: one linear SNR-blind layer, no variance.
  bool linear = false;
  std::uint64_t seed = 0;
};

struct VaeOutput {
  std::vector<float> mu;
  std::vector<float> log_var;
  std::vector<float> sample;
};

class VaeHead {
 public:
  struct Cache {
    nn::Matrix features, in_b, h, in_v;
    nn::Mlp::Cache body, variance;
  };

  VaeHead() : VaeHead(VaeHeadConfig{}) {}
  explicit VaeHead(VaeHeadConfig cfg);

  const VaeHeadConfig& config() const noexcept { return cfg_; }
  /// SNR features fed to both sub-networks: (snr/10, 1).
  static nn::Matrix snr_features(std::span<const double> snr_db);

  /// (mu, log_var) per column; log_var is all zero for the linear head.
  std::pair<nn::Matrix, nn::Matrix> forward(const nn::Matrix& y, std::span<const double> snr_db,
                                           Cache* cache = nullptr) const;
  void backward(const nn::Matrix& dmu, const nn::Matrix& dlog_var, const Cache& cache);

  /// Test hook: replace log_var by a constant (e.g. -infinity).
  void set_log_var_override(std::optional<float> value) noexcept { log_var_override_ = value; }

  nn::ParamList params();
  nlohmann::json header() const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {});
  static VaeHead load(const std::filesystem::path& path);

 private:
  VaeHeadConfig cfg_;
  nn::Mlp body_;
  nn::Dense mu_;
  nn::Mlp variance_;
  std::optional<float> log_var_override_;
};

/// mu, log_var, and sample = mu + exp(log_var / 2) * eps with eps drawn from (seed, stream).
/// Throws ShapeMismatch when `received` does not fit the head.
VaeOutput vae_reconstruct(const LatentFeature& received, double snr_db, const VaeHead& head, std::uint64_t seed,
                          std::uint64_t stream = 0);

// Losses.

/// KL(N(mu_p, exp(log_var_p)) || N(mu_q, var_q)) for scalars.
double gaussian_kl(double mu_p, double log_var_p, double mu_q, double var_q);

/// Per-element mean of KL( N(mu, exp(log_var)) || N(sqrt(abar_t) z, 1 - abar_t) ).
double guidance_loss(std::span<const double> mu, std::span<const double> log_var, std::span<const double> z_clean,
                     int t, const NoiseSchedule& sched);
/// Gradients of guidance_loss with respect to mu and log_var.
void guidance_loss_grad(std::span<const double> mu, std::span<const double> log_var, std::span<const double> z_clean,
                        int t, const NoiseSchedule& sched, std::span<double> dmu, std::span<double> dlog_var);

struct GenerativeLoss {
  double l_vae = 0.0;
  double l_g = 0.0;
  double lambda_g = 0.0;
  double total = 0.0;
};

enum class Method { Full, VaeOnly, DirectMse };
std::string_view method_name(Method m) noexcept;
std::optional<Method> parse_method(std::string_view name) noexcept;

struct GenerativeConfig {
  Method method = Method::Full;
  double lambda_g = 1.0;
  double beta_kl = 0.3;  // weight of the KL-to-prior term inside L_VAE
  int steps = 4000;
  int batch = 64;
  double learning_rate = 1e-3;
  double snr_lo_db = 5.0;
  double snr_hi_db = 12.0;
  double target_ratio = 0.013;
  std::size_t source_elements = 64 * 64 * 3;
  std::uint64_t seed = 0;
  VaeHeadConfig head;

  /// lambda_g actually used (0 for the ablations).
  double effective_lambda() const noexcept;
  nlohmann::json to_json() const;
  std::string hash() const;
};

struct GenerativeTrainResult {
  VaeHead head;
  std::vector<GenerativeLoss> losses;
  std::string config_hash;
};

/// Transmission of a latent batch: pool to the target ratio, unit power per
/// column, AWGN. Columns are flattened full latents of the given geometry.
nn::Matrix transmit_latents(const nn::Matrix& latents, int height, int width, int depth, std::size_t source_elements,
                            double target_ratio, std::span<const double> snr_db, const CounterRng& noise);

/// Loss terms (and, with `grad`, parameter gradients) of one batch.
GenerativeLoss head_loss(VaeHead& head, const GenerativeConfig& cfg, const NoiseSchedule& sched, const nn::Matrix& y,
                         std::span<const double> snr_db, const nn::Matrix& z_clean, const CounterRng& eps_rng,
                         bool grad);

/// Optimizes L_VAE + lambda L_g (or MSE to the clean latent for the direct
/// ablation) with the backbone and autoencoder frozen. Throws DivergedTraining.
GenerativeTrainResult train_generative(const GenerativeConfig& cfg, const nn::Matrix& latents, int height, int width,
                                       int depth, const NoiseSchedule& sched);

struct ReceiverOutput {
  nn::Matrix latents;  // denoised full latents, one column per sample
  int timestep = 0;
};

/// Receiver: head -> (sample | mean) -> DDIM from the SNR-matched step.
ReceiverOutput receive(const VaeHead& head, Method method, const Denoiser& backbone, const NoiseSchedule& sched,
                       const nn::Matrix& received, double snr_db, const CounterRng& eps_rng);

}  // namespace semcom::generative
