#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

// Scalar Gaussian helpers shared by the diffusion math and the loss ops.
namespace diffcod::gaussian {

inline constexpr double kBinHalfWidth = 1.0 / 255.0;
inline constexpr double kEdge = 0.999;
inline constexpr double kProbFloor = 1e-12;

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// KL(N(m1, e^lv1) || N(m2, e^lv2)) in nats.
inline double normal_kl(double m1, double lv1, double m2, double lv2) {
  const double d = m1 - m2;
  return 0.5 * (-1.0 + lv2 - lv1 + std::exp(lv1 - lv2) + d * d * std::exp(-lv2));
}

/// Partial derivatives of normal_kl with respect to (m2, lv2).
inline void normal_kl_grad(double m1, double lv1, double m2, double lv2, double& d_m2,
                           double& d_lv2) {
  const double d = m1 - m2;
  d_m2 = -d * std::exp(-lv2);
  d_lv2 = 0.5 * (1.0 - std::exp(lv1 - lv2) - d * d * std::exp(-lv2));
}

/// Negative log-likelihood (nats) of an 8-bit-discretized value x in [-1, 1]
/// under N(mean, e^log_var); the outermost bins extend to +-infinity.
/// Optional outputs receive d NLL / d mean and d NLL / d log_var.
inline double discretized_nll(double x, double mean, double log_var, double* d_mean = nullptr,
                              double* d_log_var = nullptr) {
  const double inv_std = std::exp(-0.5 * log_var);
  const double c = x - mean;
  const double a = inv_std * (c + kBinHalfWidth);
  const double b = inv_std * (c - kBinHalfWidth);
  // da/dmean = -inv_std, da/dlog_var = -a/2 (same for b).
  double prob = 0.0;
  double dprob_dmean = 0.0;
  double dprob_dlv = 0.0;
  if (x < -kEdge) {
    prob = std_normal_cdf(a);
    const double pa = std_normal_pdf(a);
    dprob_dmean = pa * -inv_std;
    dprob_dlv = pa * -0.5 * a;
  } else if (x > kEdge) {
    prob = std_normal_cdf(-b);
    const double pb = std_normal_pdf(b);
    dprob_dmean = -pb * -inv_std;
    dprob_dlv = -pb * -0.5 * b;
  } else {
    prob = std_normal_cdf(a) - std_normal_cdf(b);
    const double pa = std_normal_pdf(a);
    const double pb = std_normal_pdf(b);
    dprob_dmean = (pa - pb) * -inv_std;
    dprob_dlv = -0.5 * (pa * a - pb * b);
  }
  const bool floored = prob < kProbFloor;
  const double nll = -std::log(std::max(prob, kProbFloor));
  if (d_mean) *d_mean = floored ? 0.0 : -dprob_dmean / prob;
  if (d_log_var) *d_log_var = floored ? 0.0 : -dprob_dlv / prob;
  return nll;
}

}  // namespace diffcod::gaussian
