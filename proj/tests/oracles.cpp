#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Asymptotic Kolmogorov distribution, Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  // Stephens' small-sample correction
  return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)};
}

double naive_psnr(const semcom::ImageTensor& a, const semcom::ImageTensor& b) {
  double sum = 0.0;
  long count = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < a.channels(); ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - static_cast<double>(b.at(y, x, c));
        sum += d * d;
        ++count;
      }
  const double mse = sum / static_cast<double>(count);
  return mse == 0.0 ? 99.0 : std::min(99.0, -10.0 * std::log10(mse));
}

double naive_ssim(const semcom::ImageTensor& a, const semcom::ImageTensor& b, int window) {
  auto gray = [](const semcom::ImageTensor& im, int y, int x) {
    double s = 0.0;
    for (int c = 0; c < im.channels(); ++c) s += im.at(y, x, c);
    return s / im.channels();
  };
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int windows = 0;
  for (int y0 = 0; y0 + window <= a.height(); ++y0)
    for (int x0 = 0; x0 + window <= a.width(); ++x0) {
      const int n = window * window;
      double ma = 0.0, mb = 0.0;
      for (int y = y0; y < y0 + window; ++y)
        for (int x = x0; x < x0 + window; ++x) {
          ma += gray(a, y, x);
          mb += gray(b, y, x);
        }
      ma /= n;
      mb /= n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int y = y0; y < y0 + window; ++y)
        for (int x = x0; x < x0 + window; ++x) {
          const double da = gray(a, y, x) - ma;
          const double db = gray(b, y, x) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  return total / windows;
}

double naive_weighted_mse(const semcom::ImageTensor& recon, const semcom::ImageTensor& target,
                          const semcom::BinaryMask& mask, double w) {
  std::vector<double> inside, outside;
  for (int y = 0; y < recon.height(); ++y)
    for (int x = 0; x < recon.width(); ++x) {
      double e = 0.0;
      for (int c = 0; c < recon.channels(); ++c) {
        const double d = static_cast<double>(recon.at(y, x, c)) - static_cast<double>(target.at(y, x, c));
        e += d * d;
      }
      (mask.at(y, x) ? inside : outside).push_back(e / recon.channels());
    }
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
  };
  return w * mean(inside) + mean(outside);
}

double scalar_kl(double mean_p, double sd_p, double mean_q, double sd_q) {
  return std::log(sd_q / sd_p) + (sd_p * sd_p + (mean_p - mean_q) * (mean_p - mean_q)) / (2.0 * sd_q * sd_q) - 0.5;
}

std::vector<double> ideal_shares(const std::vector<bool>& critical, int total, double w) {
  double units = 0.0;
  for (bool c : critical) units += c ? w : 1.0;
  std::vector<double> out;
  for (bool c : critical) out.push_back((c ? w : 1.0) * total / units);
  return out;
}

std::vector<int> best_integer_plan(const std::vector<double>& target, int total, const std::vector<int>& priority) {
  const int n = static_cast<int>(target.size());
  if (total < n) throw std::invalid_argument("total below one symbol per patch");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // best[k][r]: minimal cost of patches priority[k..] receiving exactly r symbols
  std::vector<std::vector<double>> best(n + 1, std::vector<double>(total + 1, inf));
  best[n][0] = 0.0;
  for (int k = n - 1; k >= 0; --k) {
    const double s = target[priority[k]];
    for (int r = 0; r <= total; ++r)
      for (int x = 1; x <= r; ++x) {
        const double rest = best[k + 1][r - x];
        if (rest == inf) continue;
        best[k][r] = std::min(best[k][r], (x - s) * (x - s) + rest);
      }
  }
  std::vector<int> plan(n);
  int r = total;
  for (int k = 0; k < n; ++k) {
    const double s = target[priority[k]];
    for (int x = r; x >= 1; --x) {
      const double rest = best[k + 1][r - x];
      if (rest == inf) continue;
      if (std::abs((x - s) * (x - s) + rest - best[k][r]) <= 1e-9) {
        plan[priority[k]] = x;
        r -= x;
        break;
      }
    }
  }
  return plan;
}

}  // namespace oracle
