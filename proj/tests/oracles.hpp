#pragma once

// Independent reference implementations used as test oracles. They are
// written straight from the textbook definitions and share no code with the
// library.

#include <cstdint>
#include <functional>
#include <vector>

#include "semcom/image.hpp"

namespace oracle {

/// Two-sided one-sample Kolmogorov-Smirnov test against a continuous CDF.
struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);
double standard_normal_cdf(double x);

/// Pixel loops in double precision.
double naive_psnr(const semcom::ImageTensor& a, const semcom::ImageTensor& b);
double naive_ssim(const semcom::ImageTensor& a, const semcom::ImageTensor& b, int window = 8);
double naive_weighted_mse(const semcom::ImageTensor& recon, const semcom::ImageTensor& target,
                          const semcom::BinaryMask& mask, double w);

/// KL between scalar Gaussians given as (mean, standard deviation).
double scalar_kl(double mean_p, double sd_p, double mean_q, double sd_q);

/// Exhaustive search over integer plans x_i >= 1 with sum(x) = total for the
/// plan closest to the real shares target_i in squared distance. Among equally
/// close plans the one that is lexicographically largest in `priority` order wins.
std::vector<int> best_integer_plan(const std::vector<double>& target, int total, const std::vector<int>& priority);

/// Real per-patch shares under a critical:background ratio of w.
std::vector<double> ideal_shares(const std::vector<bool>& critical, int total, double w);

}  // namespace oracle
