#ifndef DDRACE_FIXED_EFFECTS_HPP
#define DDRACE_FIXED_EFFECTS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ddrace/errors.hpp"
#include "ddrace/math.hpp"
#include "ddrace/rng.hpp"

namespace ddrace {

// Local cluster labels z_k^{(x)} for each basis location k and combination
// x = (d, s). Columns for a fixed stimulus s form the hidden layers of one
// factorial HMM.
struct LatentStateMatrix {
  int K = 0;
  int d0 = 0;
  int z_max = 0;
  std::vector<int> z;  // [k * d0*d0 + x], states 0-based

  static LatentStateMatrix zeros(int K, int d0, int z_max) {
    LatentStateMatrix m;
    m.K = K;
    m.d0 = d0;
    m.z_max = z_max;
    m.z.assign(static_cast<std::size_t>(K) * d0 * d0, 0);
    return m;
  }

  int x_index(int d, int s) const { return d * d0 + s; }
  int n_combinations() const { return d0 * d0; }

  int& at(int k, int d, int s) { return z[static_cast<std::size_t>(k) * d0 * d0 + x_index(d, s)]; }
  int at(int k, int d, int s) const {
    return z[static_cast<std::size_t>(k) * d0 * d0 + x_index(d, s)];
  }
  int& at_x(int k, int x) { return z[static_cast<std::size_t>(k) * d0 * d0 + x]; }
  int at_x(int k, int x) const { return z[static_cast<std::size_t>(k) * d0 * d0 + x]; }

  // The d0-vector z_k^{(s)} across response layers d.
  std::vector<int> column(int k, int s) const {
    std::vector<int> v(d0);
    for (int d = 0; d < d0; ++d) v[d] = at(k, d, s);
    return v;
  }
  void set_column(int k, int s, std::span<const int> v) {
    for (int d = 0; d < d0; ++d) at(k, d, s) = v[d];
  }
};

// Shared core spline coefficients beta*_{k,z} for drift and boundary. The
// coefficient expressed by combination x at location k is the core entry
// selected by z_k^{(x)}.
struct CoreCoefficients {
  int K = 0;
  int z_max = 0;
  std::vector<double> mu;  // [k * z_max + z]
  std::vector<double> b;

  static CoreCoefficients zeros(int K, int z_max) {
    CoreCoefficients c;
    c.K = K;
    c.z_max = z_max;
    c.mu.assign(static_cast<std::size_t>(K) * z_max, 0.0);
    c.b.assign(static_cast<std::size_t>(K) * z_max, 0.0);
    return c;
  }

  double& mu_at(int k, int z) { return mu[static_cast<std::size_t>(k) * z_max + z]; }
  double mu_at(int k, int z) const { return mu[static_cast<std::size_t>(k) * z_max + z]; }
  double& b_at(int k, int z) { return b[static_cast<std::size_t>(k) * z_max + z]; }
  double b_at(int k, int z) const { return b[static_cast<std::size_t>(k) * z_max + z]; }
};

// Expressed coefficient vectors (drift, boundary) for combination x = (d, s).
inline std::pair<std::vector<double>, std::vector<double>> expressed_coeffs(
    const LatentStateMatrix& z, const CoreCoefficients& core, int d, int s) {
  std::vector<double> mu(z.K), b(z.K);
  for (int k = 0; k < z.K; ++k) {
    const int state = z.at(k, d, s);
    mu[k] = core.mu_at(k, state);
    b[k] = core.b_at(k, state);
  }
  return {std::move(mu), std::move(b)};
}

struct CorePriorHyper {
  double sigma2_smooth = 1.0;  // sigma^2_{beta,1}
  double mu0 = 0.0;            // unassigned mean
  double sigma2_0 = 4.0;       // unassigned variance
  double sigma2_init = 1e6;    // proper realization of the flat location-1 prior
};

namespace detail {

// Distinct predecessor states {z_{k-1}^{(x)} : x assigned to state at k}.
inline void distinct_predecessors(const LatentStateMatrix& z, int k, int state,
                                  std::vector<int>& preds) {
  preds.clear();
  for (int x = 0; x < z.n_combinations(); ++x) {
    if (z.at_x(k, x) != state) continue;
    const int p = z.at_x(k - 1, x);
    if (std::find(preds.begin(), preds.end(), p) == preds.end()) preds.push_back(p);
  }
  std::sort(preds.begin(), preds.end());
}

inline bool is_assigned(const LatentStateMatrix& z, int k, int state) {
  for (int x = 0; x < z.n_combinations(); ++x) {
    if (z.at_x(k, x) == state) return true;
  }
  return false;
}

}  // namespace detail

// Sequential smoothness prior on one core table (locations 2..K; the first
// location carries a flat prior). Assigned states are centered at the distinct
// core values expressed at the previous location; unassigned states get the
// diffuse Normal(mu0, sigma2_0) term.
inline double smoothness_log_prior(std::span<const double> table,
                                   const LatentStateMatrix& z,
                                   const CorePriorHyper& hyper) {
  const int K = z.K, z_max = z.z_max;
  if (static_cast<int>(table.size()) != K * z_max) {
    throw std::invalid_argument("core table size mismatch");
  }
  auto at = [&](int k, int s) { return table[static_cast<std::size_t>(k) * z_max + s]; };
  double lp = 0.0;
  std::vector<int> preds;
  for (int k = 1; k < K; ++k) {
    for (int state = 0; state < z_max; ++state) {
      if (detail::is_assigned(z, k, state)) {
        detail::distinct_predecessors(z, k, state, preds);
        for (int j : preds) {
          lp += norm_log_pdf(at(k, state), at(k - 1, j), hyper.sigma2_smooth);
        }
      } else {
        lp += norm_log_pdf(at(k, state), hyper.mu0, hyper.sigma2_0);
      }
    }
  }
  return lp;
}

// Full realized prior including the location-1 terms; this is what the MCMC
// conditionals are derived from (and what the reference samplers target).
inline double core_log_prior(std::span<const double> table, const LatentStateMatrix& z,
                             const CorePriorHyper& hyper) {
  double lp = smoothness_log_prior(table, z, hyper);
  auto at = [&](int k, int s) { return table[static_cast<std::size_t>(k) * z.z_max + s]; };
  for (int state = 0; state < z.z_max; ++state) {
    const double var = detail::is_assigned(z, 0, state) ? hyper.sigma2_init : hyper.sigma2_0;
    lp += norm_log_pdf(at(0, state), hyper.mu0, var);
  }
  return lp;
}

// Number of smoothness factors and their sum of squared deviations; these are
// the sigma^2_{beta,1}-dependent statistics of the prior.
inline std::pair<int, double> smoothness_penalty_stats(std::span<const double> table,
                                                       const LatentStateMatrix& z) {
  const int K = z.K, z_max = z.z_max;
  auto at = [&](int k, int s) { return table[static_cast<std::size_t>(k) * z_max + s]; };
  int count = 0;
  double ss = 0.0;
  std::vector<int> preds;
  for (int k = 1; k < K; ++k) {
    for (int state = 0; state < z_max; ++state) {
      if (!detail::is_assigned(z, k, state)) continue;
      detail::distinct_predecessors(z, k, state, preds);
      for (int j : preds) {
        ++count;
        ss += sq(at(k, state) - at(k - 1, j));
      }
    }
  }
  return {count, ss};
}

// All state vectors within Hamming distance m of the center, deduplicated,
// center first, then lexicographic by changed positions/values.
inline std::vector<std::vector<int>> hamming_ball(std::span<const int> center, int m,
                                                  int z_max) {
  const int L = static_cast<int>(center.size());
  m = std::min(m, L);
  std::vector<std::vector<int>> out;
  std::vector<int> cur(center.begin(), center.end());
  // positions[] holds the strictly increasing changed coordinates
  std::vector<int> positions;
  auto recurse = [&](auto&& self, int start, int remaining) -> void {
    out.push_back(cur);
    if (remaining == 0) return;
    for (int pos = start; pos < L; ++pos) {
      const int orig = cur[pos];
      for (int v = 0; v < z_max; ++v) {
        if (v == orig) continue;
        cur[pos] = v;
        self(self, pos + 1, remaining - 1);
      }
      cur[pos] = orig;
    }
  };
  recurse(recurse, 0, m);
  return out;
}

// Row-stochastic transition matrices for the correct (d == s) and incorrect
// (d != s) latent dynamics, with their Dirichlet concentrations.
struct TransitionModel {
  int z_max = 0;
  Eigen::MatrixXd pi_correct;
  Eigen::MatrixXd pi_incorrect;
  double alpha_correct = 1.0;
  double alpha_incorrect = 1.0;

  static TransitionModel uniform(int z_max) {
    TransitionModel tm;
    tm.z_max = z_max;
    tm.pi_correct = Eigen::MatrixXd::Constant(z_max, z_max, 1.0 / z_max);
    tm.pi_incorrect = tm.pi_correct;
    return tm;
  }

  const Eigen::MatrixXd& matrix(bool correct) const {
    return correct ? pi_correct : pi_incorrect;
  }
};

// Transition counts n_{z,z'} over the chains of the requested kind.
inline Eigen::MatrixXd transition_counts(const LatentStateMatrix& z, bool correct) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(z.z_max, z.z_max);
  for (int d = 0; d < z.d0; ++d) {
    for (int s = 0; s < z.d0; ++s) {
      if ((d == s) != correct) continue;
      for (int k = 0; k + 1 < z.K; ++k) {
        counts(z.at(k, d, s), z.at(k + 1, d, s)) += 1.0;
      }
    }
  }
  return counts;
}

// Conjugate row draws: Dir(alpha/z_max + counts).
inline void update_transitions(const LatentStateMatrix& z, TransitionModel& tm, Rng& rng) {
  for (const bool correct : {true, false}) {
    const Eigen::MatrixXd counts = transition_counts(z, correct);
    const double alpha = correct ? tm.alpha_correct : tm.alpha_incorrect;
    Eigen::MatrixXd& pi = correct ? tm.pi_correct : tm.pi_incorrect;
    std::vector<double> a(tm.z_max);
    for (int r = 0; r < tm.z_max; ++r) {
      for (int c = 0; c < tm.z_max; ++c) a[c] = alpha / tm.z_max + counts(r, c);
      const auto row = rng.dirichlet(a);
      for (int c = 0; c < tm.z_max; ++c) pi(r, c) = row[c];
    }
  }
}

namespace detail {

inline double concentration_log_target(double alpha, const Eigen::MatrixXd& pi,
                                       double a_alpha, double b_alpha) {
  if (!(alpha > 0.0)) return kNegInf;
  const int z_max = static_cast<int>(pi.rows());
  double lp = (a_alpha - 1.0) * std::log(alpha) - b_alpha * alpha;
  const double frac = alpha / z_max;
  for (int r = 0; r < z_max; ++r) {
    lp += std::lgamma(alpha) - z_max * std::lgamma(frac);
    for (int c = 0; c < z_max; ++c) lp += (frac - 1.0) * std::log(pi(r, c));
  }
  return lp;
}

}  // namespace detail

// Random-walk MH on log alpha against the Gamma prior times the Dirichlet
// likelihood of the current rows. Returns the acceptance indicators.
inline std::pair<bool, bool> update_concentration(TransitionModel& tm, Rng& rng,
                                                  double a_alpha, double b_alpha,
                                                  double proposal_sd_correct = 0.5,
                                                  double proposal_sd_incorrect = 0.5) {
  std::pair<bool, bool> accepted{false, false};
  for (const bool correct : {true, false}) {
    double& alpha = correct ? tm.alpha_correct : tm.alpha_incorrect;
    const Eigen::MatrixXd& pi = correct ? tm.pi_correct : tm.pi_incorrect;
    const double sd = correct ? proposal_sd_correct : proposal_sd_incorrect;
    const double prop = alpha * std::exp(sd * rng.normal());
    const double log_ratio = detail::concentration_log_target(prop, pi, a_alpha, b_alpha) -
                             detail::concentration_log_target(alpha, pi, a_alpha, b_alpha) +
                             std::log(prop) - std::log(alpha);  // log-normal asymmetry
    if (std::log(rng.uniform()) < log_ratio) {
      alpha = prop;
      (correct ? accepted.first : accepted.second) = true;
    }
  }
  return accepted;
}

}  // namespace ddrace

#endif
