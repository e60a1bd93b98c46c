#ifndef DDRACE_IG_RACE_HPP
#define DDRACE_IG_RACE_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ddrace/math.hpp"
#include "ddrace/rng.hpp"

namespace ddrace {

// One evidence accumulator: Wiener process with unit diffusion coefficient,
// drift mu > 0, boundary b > 0, and non-decision offset delta >= 0 shifting
// the first-passage support to (delta, inf).
struct AccumulatorParams {
  double delta = 0.0;
  double mu = 1.0;
  double b = 1.0;
};

// One race: d0 accumulators under a single stimulus, sharing the offset.
struct RaceParams {
  double delta = 0.0;
  std::vector<double> drift;
  std::vector<double> boundary;

  int n_alternatives() const { return static_cast<int>(drift.size()); }
  AccumulatorParams accumulator(int d) const { return {delta, drift[d], boundary[d]}; }
};

inline bool valid_accumulator(const AccumulatorParams& p) {
  return p.mu > 0.0 && p.b > 0.0 && std::isfinite(p.mu) && std::isfinite(p.b) &&
         std::isfinite(p.delta);
}

// Log first-passage density: b/sqrt(2*pi) * u^{-3/2} * exp(-(b - mu*u)^2 / (2u))
// with u = tau - delta. Total function: -inf outside the support or for
// degenerate parameters (MH treats those as rejections).
inline double ig_log_pdf(const AccumulatorParams& p, double tau) {
  if (!valid_accumulator(p)) return kNegInf;
  const double u = tau - p.delta;
  if (u <= 0.0) return kNegInf;
  return std::log(p.b) - 0.5 * kLog2Pi - 1.5 * std::log(u) - 0.5 * sq(p.b - p.mu * u) / u;
}

// First-passage cdf: Phi((mu*u - b)/sqrt(u)) + e^{2*mu*b} Phi(-(mu*u + b)/sqrt(u)).
// The second term is evaluated in log space; for mu*b beyond ~350 the direct
// product overflows long before the sum leaves [0,1].
inline double ig_cdf(const AccumulatorParams& p, double tau) {
  const double u = tau - p.delta;
  if (u <= 0.0) return 0.0;
  const double r = std::sqrt(u);
  const double z1 = (p.mu * u - p.b) / r;
  const double log_t2 = 2.0 * p.mu * p.b + norm_log_cdf(-(p.mu * u + p.b) / r);
  const double g = norm_cdf(z1) + std::exp(log_t2);
  return std::min(1.0, std::max(0.0, g));
}

// log(1 - G). The survivor function suffers catastrophic cancellation when
// written as 1 - cdf near the upper tail, so it is assembled from the two
// log terms directly: 1 - G = Phi(-z1) - e^{2 mu b} Phi(z2).
inline double ig_log_survival(const AccumulatorParams& p, double tau) {
  if (!valid_accumulator(p)) return kNegInf;
  const double u = tau - p.delta;
  if (u <= 0.0) return 0.0;
  const double r = std::sqrt(u);
  const double z1 = (p.mu * u - p.b) / r;
  const double la = norm_log_cdf(-z1);
  const double lb = 2.0 * p.mu * p.b + norm_log_cdf(-(p.mu * u + p.b) / r);
  if (lb >= la) return kNegInf;
  return la + log1mexp(lb - la);
}

// Joint density of (d, tau): winner's pdf times the losers' survivors (Eq. race).
inline double race_log_lik(const RaceParams& rp, int d, double tau) {
  const int d0 = rp.n_alternatives();
  if (d < 0 || d >= d0) throw std::out_of_range("decision index out of range");
  double ll = ig_log_pdf(rp.accumulator(d), tau);
  if (ll == kNegInf) return kNegInf;
  for (int j = 0; j < d0; ++j) {
    if (j == d) continue;
    ll += ig_log_survival(rp.accumulator(j), tau);
  }
  return ll;
}

// Upper integration limit: beyond it every term of the integrand is below tol.
inline double race_tail_cutoff(const RaceParams& rp, double tol = 1e-12) {
  double q = rp.delta + 1.0;
  double width = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    double worst = kNegInf;
    for (int d = 0; d < rp.n_alternatives(); ++d) {
      worst = std::max(worst, ig_log_survival(rp.accumulator(d), q));
    }
    if (worst < std::log(tol)) return q;
    width *= 2.0;
    q = rp.delta + width;
  }
  return q;
}

// Marginal decision probability (the inverse-probit style integral): quadrature
// of the joint density over the response-time axis.
inline double decision_probability(const RaceParams& rp, int d, double tol = 1e-8) {
  const double hi = race_tail_cutoff(rp);
  auto f = [&](double tau) {
    const double ll = race_log_lik(rp, d, tau);
    return ll == kNegInf ? 0.0 : std::exp(ll);
  };
  return integrate(f, rp.delta, hi, tol);
}

// Exact draw from the shifted inverse Gaussian (mean b/mu, shape b^2) via the
// transformation method with a uniform rejection step.
inline double sample_first_passage(const AccumulatorParams& p, Rng& rng) {
  const double m = p.b / p.mu;
  const double lambda = p.b * p.b;
  const double y = sq(rng.normal());
  const double my = m * y;
  const double half = 0.5 * m / lambda;
  const double x = m + my * half - half * std::sqrt(my * (4.0 * lambda + my));
  if (rng.uniform() > m / (m + x)) return p.delta + m * m / x;
  return p.delta + x;
}

// Simulates one race: each accumulator draws a first-passage time; the observed
// decision is the argmin and the response time the minimum.
inline std::pair<int, double> simulate_trial(const RaceParams& rp, Rng& rng) {
  int winner = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int d = 0; d < rp.n_alternatives(); ++d) {
    const double t = sample_first_passage(rp.accumulator(d), rng);
    if (t < best) {
      best = t;
      winner = d;
    }
  }
  return {winner, best};
}

}  // namespace ddrace

#endif
