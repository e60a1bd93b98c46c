#ifndef DDRACE_MATH_HPP
#define DDRACE_MATH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace ddrace {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double sq(double x) { return x * x; }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * kLog2Pi); }

inline double norm_log_pdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

// log Phi(x), stable in the far left tail where erfc underflows.
inline double norm_log_cdf(double x) {
  if (x > -10.0) {
    const double p = norm_cdf(x);
    if (p > 0.0) return std::log(p);
  }
  // Asymptotic expansion of Mills' ratio for x << 0.
  const double x2 = x * x;
  double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - 0.5 * kLog2Pi - std::log(-x) + std::log(series);
}

inline double norm_log_pdf(double x, double mean, double var) {
  return -0.5 * kLog2Pi - 0.5 * std::log(var) - 0.5 * sq(x - mean) / var;
}

// log(1 - exp(a)) for a < 0.
inline double log1mexp(double a) {
  if (a >= 0.0) return kNegInf;
  return a > -0.6931471805599453 ? std::log(-std::expm1(a)) : std::log1p(-std::exp(a));
}

inline double logsumexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsumexp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Half-Cauchy C+(0,1) log-density (used here on variance parameters).
inline double half_cauchy_log_pdf(double v) {
  if (v <= 0.0) return kNegInf;
  return std::log(2.0 / 3.14159265358979323846) - std::log1p(v * v);
}

// Empirical quantile, linear interpolation between order statistics
// (the common "type 7" rule). Input must be sorted ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  p = std::clamp(p, 0.0, 1.0);
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> sample, double p) {
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, p);
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += sq(x - m);
  return s / static_cast<double>(v.size() - 1);
}

namespace detail {
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double fa, double fm, double fb,
                               double whole, double tol, int depth, int force) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || (force <= 0 && std::abs(delta) <= 15.0 * tol)) {
    return left + right + delta / 15.0;
  }
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, force - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, force - 1);
}
}  // namespace detail

// Adaptive Simpson; the first min_depth levels subdivide unconditionally so
// mass hiding far from the initial sample points cannot abort the recursion.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-10, int max_depth = 48, int min_depth = 7) {
  if (!(b > a)) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, max_depth, min_depth);
}

}  // namespace ddrace

#endif
