#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace semcom::channel {

/// Real-valued channel symbols. `length()` is the bandwidth cost.
struct SymbolVector {
  std::vector<double> values;

  std::size_t length() const noexcept { return values.size(); }
  /// mean(values^2)
  double mean_power() const noexcept;

  friend bool operator==(const SymbolVector&, const SymbolVector&) = default;
};

enum class ChannelKind { Awgn };

struct ChannelConfig {
  /// +infinity means noiseless.
  double snr_db = 10.0;
  std::uint64_t seed = 0;
  ChannelKind kind = ChannelKind::Awgn;
};

/// Accepts a decimal number or the sentinel "inf" (noiseless).
double parse_snr_db(const std::string& text);
std::string format_snr_db(double snr_db);

/// sigma^2 = 10^(-snr_db/10) for unit signal power; 0 for +inf.
double noise_variance(double snr_db);

/// Scale to unit mean power. Throws Errc::ZeroPower on an all-zero input.
SymbolVector power_normalize(const SymbolVector& v);

/// AWGN: out = v + n with n ~ N(0, sigma^2 I). Noise sample i depends only on
/// (cfg.seed, stream, i), so equal inputs reproduce bit-identical outputs and
/// the same standard-normal draws are shared across SNR points.
SymbolVector transmit(const SymbolVector& v, const ChannelConfig& cfg, std::uint64_t stream = 0);

/// In-place variant over float buffers used by the codec and generative paths.
void add_awgn(std::span<float> symbols, const ChannelConfig& cfg, std::uint64_t stream = 0);

/// Default experiment grid {5, 7, 9, 12} dB, or `override_points` when given.
/// An explicitly empty override is a ConfigError.
std::vector<double> snr_sweep_points(const std::optional<std::vector<double>>& override_points = std::nullopt);

}  // namespace semcom::channel
