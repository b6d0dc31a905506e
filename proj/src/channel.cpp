#include "semcom/channel.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"

namespace semcom::channel {

double SymbolVector::mean_power() const noexcept {
  if (values.empty()) return 0.0;
  const double sum_sq = std::inner_product(values.begin(), values.end(), values.begin(), 0.0);
  return sum_sq / static_cast<double>(values.size());
}

double parse_snr_db(const std::string& text) {
  if (text == "inf" || text == "+inf" || text == "noiseless") {
    return std::numeric_limits<double>::infinity();
  }
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &consumed);
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "invalid SNR value '" + text + "'");
  }
  if (consumed != text.size() || !std::isfinite(value)) {
    throw Error(Errc::ConfigError, "invalid SNR value '" + text + "'");
  }
  return value;
}

std::string format_snr_db(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return "inf";
  std::ostringstream out;
  out << snr_db;
  return out.str();
}

double noise_variance(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

SymbolVector power_normalize(const SymbolVector& v) {
  const double power = v.mean_power();
  if (v.values.empty() || power <= 0.0) {
    throw Error(Errc::ZeroPower, "cannot normalize a zero-power symbol vector");
  }
  const double scale = 1.0 / std::sqrt(power);
  SymbolVector out;
  out.values.reserve(v.values.size());
  for (double x : v.values) out.values.push_back(x * scale);
  return out;
}

SymbolVector transmit(const SymbolVector& v, const ChannelConfig& cfg, std::uint64_t stream) {
  SymbolVector out = v;
  const double sigma = std::sqrt(noise_variance(cfg.snr_db));
  if (sigma == 0.0) return out;
  const CounterRng rng(cfg.seed, stream);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += sigma * rng.normal_at(i);
  return out;
}

void add_awgn(std::span<float> symbols, const ChannelConfig& cfg, std::uint64_t stream) {
  const double sigma = std::sqrt(noise_variance(cfg.snr_db));
  if (sigma == 0.0) return;
  const CounterRng rng(cfg.seed, stream);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    symbols[i] = static_cast<float>(symbols[i] + sigma * rng.normal_at(i));
  }
}

std::vector<double> snr_sweep_points(const std::optional<std::vector<double>>& override_points) {
  if (!override_points) return {5.0, 7.0, 9.0, 12.0};
  if (override_points->empty()) throw Error(Errc::ConfigError, "SNR sweep list is empty");
  return *override_points;
}

}  // namespace semcom::channel
