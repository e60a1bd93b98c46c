#ifndef DDRACE_MCMC_HPP
#define DDRACE_MCMC_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ddrace/model.hpp"
#include "ddrace/posterior.hpp"

namespace ddrace {

// ---------------------------------------------------------------------------
// Adaptive Metropolis-Hastings scales: per-parameter proposal standard
// deviations tuned in batches toward the target acceptance rate, frozen after
// burn-in so the post-burn-in kernel is fixed.
// ---------------------------------------------------------------------------

struct AdaptiveScale {
  double log_scale = std::log(0.5);
  int accepted = 0;
  int attempts = 0;
  int batches = 0;
  long total_accepted = 0;
  long total_attempts = 0;
  bool frozen = false;
  bool componentwise = false;  // random-effect blocks may fall back

  double scale() const { return std::exp(log_scale); }

  void record(bool accept, int batch_size, double target) {
    ++attempts;
    ++total_attempts;
    if (accept) {
      ++accepted;
      ++total_accepted;
    }
    if (attempts >= batch_size) {
      ++batches;
      const double rate = static_cast<double>(accepted) / attempts;
      if (!frozen) {
        const double delta = std::min(0.1, 1.0 / std::sqrt(static_cast<double>(batches)));
        log_scale += rate > target ? delta : -delta;
      }
      accepted = 0;
      attempts = 0;
    }
  }

  double overall_rate() const {
    return total_attempts == 0 ? 0.0
                               : static_cast<double>(total_accepted) / total_attempts;
  }
};

// Stable integer keys so the table serializes and parallel updates touch
// disjoint pre-created entries.
enum class ScaleKind : std::uint32_t {
  kOffset = 0,       // index i * d0 + s
  kSmooth = 1,       // 0 = drift table, 1 = boundary table
  kReBlock = 2,      // index i * 4 + family
  kReVariance = 3,   // family for amplitude, 4 + family for smoothness
  kConcentration = 4 // 0 = correct, 1 = incorrect
};

inline std::uint64_t scale_key(ScaleKind kind, std::uint32_t index) {
  return (static_cast<std::uint64_t>(kind) << 32) | index;
}

struct AdaptiveScaleTable {
  std::map<std::uint64_t, AdaptiveScale> entries;
  int batch_size = 50;
  double target = 0.44;

  AdaptiveScale& at(ScaleKind kind, std::uint32_t index) {
    return entries.at(scale_key(kind, index));
  }
  const AdaptiveScale& at(ScaleKind kind, std::uint32_t index) const {
    return entries.at(scale_key(kind, index));
  }
  void freeze_all() {
    for (auto& [k, v] : entries) v.frozen = true;
  }
};

// ---------------------------------------------------------------------------
// Chain state and initialization
// ---------------------------------------------------------------------------

struct ChainState {
  ModelState model;
  AdaptiveScaleTable scales;
  Rng rng;
  int iteration = 0;
  std::vector<std::string> warnings;
};

struct SweepOptions {
  double likelihood_scale = 1.0;  // 0 turns the data off (prior sampling)
  double core_temp = 1.0;         // burn-in tempering for the core-coefficient MH
  bool update_offsets = true;
  bool update_core = true;
  bool update_latents = true;
  bool update_transitions = true;
  bool update_concentration = true;
  bool update_smoothness = true;
  bool update_re_coeffs = true;
  bool update_re_variances = true;
  bool check_finite = true;
};

namespace detail {

inline void parallel_for(int n_units, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n_units <= 1) {
    for (int u = 0; u < n_units; ++u) fn(u);
    return;
  }
  const int workers = std::min(threads, n_units);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int u = w; u < n_units; u += workers) fn(u);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Empirical-moment initialization: drift and boundary start values come from
// the first two response-time moments per (response, stimulus) cell via
// E[tau] = b/mu + delta and var[tau] = b/mu^3; cells with too little data fall
// back to pooled moments. Success curves start in distinct clusters, failure
// curves in one shared cluster.
inline ChainState init_state(const Dataset& ds, const ModelConfig& cfg, Rng rng) {
  ChainState chain;
  chain.rng = rng;
  ModelState& st = chain.model;

  const int T = ds.n_blocks();
  const int d0 = ds.n_categories();
  const int n = ds.n_subjects();
  int z_max = cfg.z_max;
  if (z_max > d0 * d0) {
    z_max = d0 * d0;
    chain.warnings.push_back("z_max clamped to d0^2 = " + std::to_string(z_max));
  }

  st.basis = make_block_basis(T);
  st.n = n;
  st.d0 = d0;
  const int K = st.K();
  st.core = CoreCoefficients::zeros(K, z_max);
  st.latent = LatentStateMatrix::zeros(K, d0, z_max);
  st.trans = TransitionModel::uniform(z_max);
  st.re = RandomEffectCoeffs::zeros(n, K);
  st.offsets.resize(static_cast<std::size_t>(n) * d0);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < d0; ++s) st.offset(i, s) = 0.5 * ds.min_rt(i, s);
  }

  // Pooled response-time moments anchor the diffuse prior location.
  double pooled_sum = 0.0;
  for (const auto& r : ds.records()) pooled_sum += r.rt;
  const double pooled_mean_rt = pooled_sum / ds.records().size();
  st.mu_beta0 = std::log(pooled_mean_rt);
  st.sigma2_beta0 = 4.0;

  // Latent initialization: success combination (j, j) to cluster j, every
  // failure combination to one shared cluster.
  const int failure_state = std::min(d0, z_max - 1);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < d0; ++d) {
      for (int s = 0; s < d0; ++s) {
        st.latent.at(k, d, s) = (d == s) ? std::min(d, z_max - 1) : failure_state;
      }
    }
  }

  // Method-of-moments start values per cell, mapped through log.
  auto cell_moments = [&](int d, int s, double& m, double& v, int& count) {
    double sum = 0.0, sum2 = 0.0;
    count = 0;
    for (const auto& r : ds.records()) {
      if (r.stimulus != s || r.response != d) continue;
      const double u = r.rt - st.offset(r.subject, s);
      sum += u;
      sum2 += u * u;
      ++count;
    }
    if (count > 0) {
      m = sum / count;
      v = count > 1 ? (sum2 - sum * sum / count) / (count - 1) : 0.0;
    }
  };
  auto moments_to_log_params = [](double m, double v, double& log_mu, double& log_b) {
    m = std::max(m, 1e-3);
    v = std::max(v, 1e-4);
    const double mu = std::sqrt(m / v);
    const double b = m * mu;
    log_mu = std::log(mu);
    log_b = std::log(b);
  };

  double pooled_m = 0.0, pooled_v = 0.0;
  {
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (const auto& r : ds.records()) {
      const double u = r.rt - st.offset(r.subject, r.stimulus);
      sum += u;
      sum2 += u * u;
      ++count;
    }
    pooled_m = sum / count;
    pooled_v = count > 1 ? (sum2 - sum * sum / count) / (count - 1) : 0.1;
  }
  double pooled_log_mu, pooled_log_b;
  moments_to_log_params(pooled_m, pooled_v, pooled_log_mu, pooled_log_b);

  std::vector<double> mu_init(z_max, st.mu_beta0), b_init(z_max, st.mu_beta0);
  std::vector<bool> touched(z_max, false);
  // Success states from their own cells.
  for (int j = 0; j < d0; ++j) {
    const int state = std::min(j, z_max - 1);
    double m = 0.0, v = 0.0;
    int count = 0;
    cell_moments(j, j, m, v, count);
    if (count < 5 || v <= 0.0) {
      chain.warnings.push_back("sparse cell (d=s=" + std::to_string(j + 1) +
                               "); using pooled moments");
      mu_init[state] = pooled_log_mu;
      b_init[state] = pooled_log_b;
    } else {
      moments_to_log_params(m, v, mu_init[state], b_init[state]);
    }
    touched[state] = true;
  }
  // Failure state from the pooled failure trials.
  {
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (const auto& r : ds.records()) {
      if (r.response == r.stimulus) continue;
      const double u = r.rt - st.offset(r.subject, r.stimulus);
      sum += u;
      sum2 += u * u;
      ++count;
    }
    if (count >= 5) {
      const double m = sum / count;
      const double v = (sum2 - sum * sum / count) / (count - 1);
      moments_to_log_params(m, std::max(v, 1e-4), mu_init[failure_state],
                            b_init[failure_state]);
    } else {
      mu_init[failure_state] = pooled_log_mu;
      b_init[failure_state] = pooled_log_b;
    }
    touched[failure_state] = true;
  }
  for (int state = 0; state < z_max; ++state) {
    if (!touched[state]) {
      mu_init[state] = pooled_log_mu;
      b_init[state] = pooled_log_b;
    }
    for (int k = 0; k < K; ++k) {
      st.core.mu_at(k, state) = mu_init[state];
      st.core.b_at(k, state) = b_init[state];
    }
  }

  // Scale table with one entry per adapted parameter.
  chain.scales.batch_size = cfg.batch_size;
  chain.scales.target = cfg.target_accept;
  auto add_scale = [&](ScaleKind kind, std::uint32_t idx, double init) {
    AdaptiveScale s;
    s.log_scale = std::log(init);
    chain.scales.entries[scale_key(kind, idx)] = s;
  };
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < d0; ++s) add_scale(ScaleKind::kOffset, i * d0 + s, 0.2);
  }
  add_scale(ScaleKind::kSmooth, 0, 0.5);
  add_scale(ScaleKind::kSmooth, 1, 0.5);
  for (int i = 0; i < n; ++i) {
    for (int f = 0; f < kNumReFamilies; ++f) {
      add_scale(ScaleKind::kReBlock, i * kNumReFamilies + f, 0.1);
    }
  }
  for (int f = 0; f < kNumReFamilies; ++f) {
    add_scale(ScaleKind::kReVariance, f, 0.5);
    add_scale(ScaleKind::kReVariance, 4 + f, 0.5);
  }
  add_scale(ScaleKind::kConcentration, 0, 0.5);
  add_scale(ScaleKind::kConcentration, 1, 0.5);

  return chain;
}

// ---------------------------------------------------------------------------
// Step 1: offsets. Log-normal random walk against Unif(0, min rt) times the
// (subject, stimulus) likelihood slice.
// ---------------------------------------------------------------------------

inline void update_offsets(const FitContext& ctx, ChainState& chain,
                           const SweepOptions& opt = {}) {
  ModelState& st = chain.model;
  for (int i = 0; i < st.n; ++i) {
    for (int s = 0; s < st.d0; ++s) {
      AdaptiveScale& sc = chain.scales.at(ScaleKind::kOffset, i * st.d0 + s);
      const double cur = st.offset(i, s);
      const double prop = cur * std::exp(sc.scale() * chain.rng.normal());
      bool accept = false;
      if (prop > 0.0 && prop < ctx.ds->min_rt(i, s)) {
        const auto& idxs = ctx.ds->trials_for_subject_stim(i, s);
        const double old_ll = dataset_log_lik(ctx, st, idxs);
        st.offset(i, s) = prop;
        const double new_ll = dataset_log_lik(ctx, st, idxs);
        st.offset(i, s) = cur;
        const double log_ratio = opt.likelihood_scale * (new_ll - old_ll) +
                                 std::log(prop) - std::log(cur);
        accept = std::log(chain.rng.uniform()) < log_ratio;
      }
      if (accept) st.offset(i, s) = prop;
      sc.record(accept, chain.scales.batch_size, chain.scales.target);
    }
  }
}

// ---------------------------------------------------------------------------
// Step 2: core coefficients. Assigned (location, state) slots are proposed
// jointly for drift and boundary from the Gaussian full conditional of the
// smoothness prior (predecessor and successor factors), so the MH ratio is
// the likelihood ratio alone. Unassigned slots are exact prior draws.
// ---------------------------------------------------------------------------

namespace detail {

// Gaussian full conditional of one core slot under the sequential prior.
inline void core_slot_conditional(const ModelState& st, std::span<const double> table,
                                  const LatentStateMatrix& z, int k, int state,
                                  double sigma2_smooth, double& mean, double& var) {
  const int z_max = z.z_max;
  auto at = [&](int kk, int ss) { return table[static_cast<std::size_t>(kk) * z_max + ss]; };
  double prec = 0.0, wsum = 0.0;
  std::vector<int> preds;
  if (k == 0) {
    prec += 1.0 / st.sigma2_init;
    wsum += st.mu_beta0 / st.sigma2_init;
  } else {
    distinct_predecessors(z, k, state, preds);
    for (int j : preds) {
      prec += 1.0 / sigma2_smooth;
      wsum += at(k - 1, j) / sigma2_smooth;
    }
  }
  if (k + 1 < z.K) {
    for (int z2 = 0; z2 < z_max; ++z2) {
      if (!is_assigned(z, k + 1, z2)) continue;
      distinct_predecessors(z, k + 1, z2, preds);
      for (int j : preds) {
        if (j != state) continue;
        prec += 1.0 / sigma2_smooth;
        wsum += at(k + 1, z2) / sigma2_smooth;
      }
    }
  }
  var = 1.0 / prec;
  mean = wsum * var;
}

}  // namespace detail

inline void update_core_coeffs(const FitContext& ctx, ChainState& chain,
                               const SweepOptions& opt = {}) {
  ModelState& st = chain.model;
  const int K = st.K();
  const int z_max = st.core.z_max;
  const int T = ctx.n_blocks();
  std::vector<int> members;
  for (int k = 0; k < K; ++k) {
    for (int state = 0; state < z_max; ++state) {
      members.clear();
      for (int x = 0; x < st.latent.n_combinations(); ++x) {
        if (st.latent.at_x(k, x) == state) members.push_back(x);
      }
      if (members.empty()) {
        const double sd = std::sqrt(st.sigma2_beta0);
        st.core.mu_at(k, state) = chain.rng.normal(st.mu_beta0, sd);
        st.core.b_at(k, state) = chain.rng.normal(st.mu_beta0, sd);
        continue;
      }
      double mean_mu, var_mu, mean_b, var_b;
      detail::core_slot_conditional(st, st.core.mu, st.latent, k, state, st.smooth_mu,
                                    mean_mu, var_mu);
      detail::core_slot_conditional(st, st.core.b, st.latent, k, state, st.smooth_b,
                                    mean_b, var_b);
      const double prop_mu = chain.rng.normal(mean_mu, std::sqrt(var_mu));
      const double prop_b = chain.rng.normal(mean_b, std::sqrt(var_b));

      // Coefficient k shapes the curve in blocks k-1 and k only.
      double old_ll = 0.0, new_ll = 0.0;
      const double save_mu = st.core.mu_at(k, state);
      const double save_b = st.core.b_at(k, state);
      auto slice_ll = [&]() {
        double ll = 0.0;
        for (int x : members) {
          const int d = x / st.d0, s = x % st.d0;
          for (int t : {k - 1, k}) {
            if (t < 0 || t >= T) continue;
            const double fmu = expressed_block_value(ctx, st, true, d, s, t);
            const double fb = expressed_block_value(ctx, st, false, d, s, t);
            ll += layer_block_log_lik(ctx, st, d, s, t, fmu, fb);
          }
        }
        return ll;
      };
      old_ll = slice_ll();
      st.core.mu_at(k, state) = prop_mu;
      st.core.b_at(k, state) = prop_b;
      new_ll = slice_ll();
      const double log_ratio = opt.core_temp * opt.likelihood_scale * (new_ll - old_ll);
      if (!(std::log(chain.rng.uniform()) < log_ratio)) {
        st.core.mu_at(k, state) = save_mu;
        st.core.b_at(k, state) = save_b;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Step 3: latent states via the locally informed Hamming ball sampler.
// ---------------------------------------------------------------------------

// Per-block emission tables: entry (a, b) of table (t, d) is the layer-d
// log-likelihood of the block-t trials under stimulus s when locations t and
// t+1 carry core states a and b.
struct EmissionTables {
  int T = 0, d0 = 0, z_max = 0;
  std::vector<double> v;

  double at(int t, int d, int a, int b) const {
    return v[((static_cast<std::size_t>(t) * d0 + d) * z_max + a) * z_max + b];
  }
  double& slot(int t, int d, int a, int b) {
    return v[((static_cast<std::size_t>(t) * d0 + d) * z_max + a) * z_max + b];
  }

  double vector_pair(int t, std::span<const int> za, std::span<const int> zb) const {
    double ll = 0.0;
    for (int d = 0; d < d0; ++d) ll += at(t, d, za[d], zb[d]);
    return ll;
  }
};

inline EmissionTables build_emission_tables(const FitContext& ctx, const ModelState& st,
                                            int s, double likelihood_scale) {
  EmissionTables tab;
  tab.T = ctx.n_blocks();
  tab.d0 = st.d0;
  tab.z_max = st.core.z_max;
  tab.v.assign(static_cast<std::size_t>(tab.T) * tab.d0 * tab.z_max * tab.z_max, 0.0);
  if (likelihood_scale == 0.0) return tab;
  for (int t = 0; t < tab.T; ++t) {
    const bool no_right = ctx.w2[t] == 0.0;  // first block: only location t matters
    const bool no_left = ctx.w1[t] == 0.0;   // last block: only location t+1 matters
    for (int d = 0; d < tab.d0; ++d) {
      for (int a = 0; a < tab.z_max; ++a) {
        if (no_left && a > 0) {
          for (int b = 0; b < tab.z_max; ++b) tab.slot(t, d, a, b) = tab.at(t, d, 0, b);
          continue;
        }
        for (int b = 0; b < tab.z_max; ++b) {
          if (no_right && b > 0) {
            tab.slot(t, d, a, b) = tab.at(t, d, a, 0);
            continue;
          }
          const double fmu =
              ctx.w1[t] * st.core.mu_at(t, a) + ctx.w2[t] * st.core.mu_at(t + 1, b);
          const double fb =
              ctx.w1[t] * st.core.b_at(t, a) + ctx.w2[t] * st.core.b_at(t + 1, b);
          tab.slot(t, d, a, b) =
              likelihood_scale * layer_block_log_lik(ctx, st, d, s, t, fmu, fb);
        }
      }
    }
  }
  return tab;
}

namespace detail {

inline double log_transition(const ModelState& st, int s, std::span<const int> za,
                             std::span<const int> zb) {
  double lp = 0.0;
  for (int d = 0; d < st.d0; ++d) {
    const Eigen::MatrixXd& pi = st.trans.matrix(d == s);
    lp += std::log(pi(za[d], zb[d]));
  }
  return lp;
}

// The sequential core-coefficient prior conditions on the latent assignments,
// so the latent full conditional carries its factors. For a fixed stimulus s
// they reduce to a unary potential at location 0 plus pairwise potentials
// between adjacent locations, which slot straight into the message passing.
struct CorePairPotentials {
  int K = 0, z_max = 0, d0 = 0;
  std::vector<char> fixed_assigned;        // [k * z_max + state]
  std::vector<std::uint32_t> fixed_preds;  // [k * z_max + state], bit mask
  std::vector<double> pair_term;           // [((k) * z_max + state) * z_max + pred], k >= 1
  std::vector<double> unassigned_term;     // [k * z_max + state]
  std::vector<double> init_term;           // [state], location-0 assigned factor

  CorePairPotentials(const ModelState& st, int s) {
    K = st.K();
    z_max = st.core.z_max;
    d0 = st.d0;
    fixed_assigned.assign(static_cast<std::size_t>(K) * z_max, 0);
    fixed_preds.assign(static_cast<std::size_t>(K) * z_max, 0);
    pair_term.assign(static_cast<std::size_t>(K) * z_max * z_max, 0.0);
    unassigned_term.assign(static_cast<std::size_t>(K) * z_max, 0.0);
    init_term.assign(z_max, 0.0);
    for (int k = 0; k < K; ++k) {
      for (int d = 0; d < d0; ++d) {
        for (int s2 = 0; s2 < d0; ++s2) {
          if (s2 == s) continue;
          const int state = st.latent.at(k, d, s2);
          fixed_assigned[static_cast<std::size_t>(k) * z_max + state] = 1;
          if (k > 0) {
            fixed_preds[static_cast<std::size_t>(k) * z_max + state] |=
                1u << st.latent.at(k - 1, d, s2);
          }
        }
      }
      for (int state = 0; state < z_max; ++state) {
        unassigned_term[static_cast<std::size_t>(k) * z_max + state] =
            norm_log_pdf(st.core.mu_at(k, state), st.mu_beta0, st.sigma2_beta0) +
            norm_log_pdf(st.core.b_at(k, state), st.mu_beta0, st.sigma2_beta0);
        if (k == 0) {
          init_term[state] =
              norm_log_pdf(st.core.mu_at(0, state), st.mu_beta0, st.sigma2_init) +
              norm_log_pdf(st.core.b_at(0, state), st.mu_beta0, st.sigma2_init);
          continue;
        }
        for (int pred = 0; pred < z_max; ++pred) {
          pair_term[(static_cast<std::size_t>(k) * z_max + state) * z_max + pred] =
              norm_log_pdf(st.core.mu_at(k, state), st.core.mu_at(k - 1, pred),
                           st.smooth_mu) +
              norm_log_pdf(st.core.b_at(k, state), st.core.b_at(k - 1, pred), st.smooth_b);
        }
      }
    }
  }

  // Prior factors of location-0 core slots under states z0 for stimulus s.
  double unary0(std::span<const int> z0) const {
    double lp = 0.0;
    for (int state = 0; state < z_max; ++state) {
      bool assigned = fixed_assigned[state];
      for (int d = 0; d < d0 && !assigned; ++d) assigned = z0[d] == state;
      lp += assigned ? init_term[state] : unassigned_term[state];
    }
    return lp;
  }

  // Prior factors of the location-k core slots (k >= 1) given states za at
  // k-1 and zb at k.
  double pairwise(int k, std::span<const int> za, std::span<const int> zb) const {
    double lp = 0.0;
    for (int state = 0; state < z_max; ++state) {
      std::uint32_t preds = fixed_preds[static_cast<std::size_t>(k) * z_max + state];
      bool assigned = fixed_assigned[static_cast<std::size_t>(k) * z_max + state];
      for (int d = 0; d < d0; ++d) {
        if (zb[d] == state) {
          assigned = true;
          preds |= 1u << za[d];
        }
      }
      if (!assigned) {
        lp += unassigned_term[static_cast<std::size_t>(k) * z_max + state];
        continue;
      }
      while (preds != 0) {
        const int pred = std::countr_zero(preds);
        preds &= preds - 1;
        lp += pair_term[(static_cast<std::size_t>(k) * z_max + state) * z_max + pred];
      }
    }
    return lp;
  }
};

// Samples an index proportional to exp(log_w - max); falls back to
// `fallback` when all weights vanish.
inline int sample_log_weights(std::span<const double> log_w, Rng& rng, int fallback) {
  double m = kNegInf;
  for (double w : log_w) m = std::max(m, w);
  if (m == kNegInf) return fallback;
  double total = 0.0;
  std::vector<double> w(log_w.size());
  for (std::size_t j = 0; j < log_w.size(); ++j) {
    w[j] = std::exp(log_w[j] - m);
    total += w[j];
  }
  double u = rng.uniform() * total;
  for (std::size_t j = 0; j + 1 < w.size(); ++j) {
    u -= w[j];
    if (u <= 0.0) return static_cast<int>(j);
  }
  return static_cast<int>(w.size()) - 1;
}

}  // namespace detail

// One auxiliary-variable sweep over the stimulus-s latent columns:
// (a) pivots v_k drawn within the Hamming ball of z_k, weighted by
//     g(emission) for k < K (uniform at k = K);
// (b) backward messages over the supports H_m(v_k), with the pivot-proposal
//     normalizer included so the augmented chain leaves the exact posterior
//     invariant;
// (c) forward sampling of z_1..z_K.
inline void sample_latent_states_impl(const FitContext& ctx, ModelState& st, int s,
                                      int radius, double balancing_power,
                                      double likelihood_scale, Rng& rng) {
  const int K = st.K();
  const int z_max = st.core.z_max;
  const double gamma = balancing_power;
  const EmissionTables tab = build_emission_tables(ctx, st, s, likelihood_scale);
  const detail::CorePairPotentials prior(st, s);

  std::vector<std::vector<int>> cur(K);
  for (int k = 0; k < K; ++k) cur[k] = st.latent.column(k, s);

  // (a) pivots
  std::vector<std::vector<int>> pivot(K);
  std::vector<double> log_w;
  for (int k = 0; k < K; ++k) {
    const auto ball = hamming_ball(cur[k], radius, z_max);
    if (k == K - 1) {
      pivot[k] = ball[static_cast<std::size_t>(rng.uniform() * ball.size()) % ball.size()];
      continue;
    }
    log_w.resize(ball.size());
    for (std::size_t j = 0; j < ball.size(); ++j) {
      log_w[j] = gamma * tab.vector_pair(k, ball[j], cur[k + 1]);
    }
    pivot[k] = ball[detail::sample_log_weights(log_w, rng, 0)];
  }

  // supports and the per-candidate balls needed by the pivot normalizer
  std::vector<std::vector<std::vector<int>>> support(K);
  for (int k = 0; k < K; ++k) support[k] = hamming_ball(pivot[k], radius, z_max);

  // log Z_k(za, zb) = log sum_{w in H_m(za)} g{p(y_k | w, zb)}
  auto log_pivot_norm = [&](int k, std::span<const int> za,
                            const std::vector<std::vector<int>>& za_ball,
                            std::span<const int> zb) {
    double m = kNegInf;
    for (const auto& w : za_ball) m = std::max(m, gamma * tab.vector_pair(k, w, zb));
    if (m == kNegInf) return kNegInf;
    double acc = 0.0;
    for (const auto& w : za_ball) {
      acc += std::exp(gamma * tab.vector_pair(k, w, zb) - m);
    }
    return m + std::log(acc);
  };

  // (b) backward messages
  std::vector<std::vector<double>> msg(K);
  msg[K - 1].assign(support[K - 1].size(), 0.0);
  for (int k = K - 2; k >= 0; --k) {
    const auto& sa = support[k];
    const auto& sb = support[k + 1];
    msg[k].assign(sa.size(), kNegInf);
    for (std::size_t ia = 0; ia < sa.size(); ++ia) {
      const auto za_ball = hamming_ball(sa[ia], radius, z_max);
      double best = kNegInf;
      std::vector<double> terms(sb.size(), kNegInf);
      for (std::size_t ib = 0; ib < sb.size(); ++ib) {
        const double lz = log_pivot_norm(k, sa[ia], za_ball, sb[ib]);
        if (lz == kNegInf) continue;
        terms[ib] = gamma * tab.vector_pair(k, pivot[k], sb[ib]) - lz +
                    tab.vector_pair(k, sa[ia], sb[ib]) +
                    detail::log_transition(st, s, sa[ia], sb[ib]) +
                    prior.pairwise(k + 1, sa[ia], sb[ib]) + msg[k + 1][ib];
        best = std::max(best, terms[ib]);
      }
      if (best == kNegInf) continue;
      double acc = 0.0;
      for (double t : terms) {
        if (t != kNegInf) acc += std::exp(t - best);
      }
      msg[k][ia] = best + std::log(acc);
    }
    // normalize to keep magnitudes bounded
    double m = kNegInf;
    for (double v : msg[k]) m = std::max(m, v);
    if (m != kNegInf) {
      for (double& v : msg[k]) v -= m;
    }
  }

  // (c) forward sampling (uniform initial distribution over states, plus the
  // location-0 prior factors)
  std::vector<int> chosen(K, 0);
  {
    log_w.assign(support[0].size(), kNegInf);
    for (std::size_t ia = 0; ia < support[0].size(); ++ia) {
      if (msg[0][ia] == kNegInf) continue;
      log_w[ia] = prior.unary0(support[0][ia]) + msg[0][ia];
    }
    chosen[0] = detail::sample_log_weights(log_w, rng, 0);
  }
  for (int k = 1; k < K; ++k) {
    const auto& prev = support[k - 1][chosen[k - 1]];
    const auto prev_ball = hamming_ball(prev, radius, z_max);
    const auto& sb = support[k];
    log_w.assign(sb.size(), kNegInf);
    for (std::size_t ib = 0; ib < sb.size(); ++ib) {
      const double lz = log_pivot_norm(k - 1, prev, prev_ball, sb[ib]);
      if (lz == kNegInf) continue;
      log_w[ib] = gamma * tab.vector_pair(k - 1, pivot[k - 1], sb[ib]) - lz +
                  tab.vector_pair(k - 1, prev, sb[ib]) +
                  detail::log_transition(st, s, prev, sb[ib]) +
                  prior.pairwise(k, prev, sb[ib]) + msg[k][ib];
    }
    chosen[k] = detail::sample_log_weights(log_w, rng, 0);
  }
  for (int k = 0; k < K; ++k) st.latent.set_column(k, s, support[k][chosen[k]]);
}

// ---------------------------------------------------------------------------
// Step 6: smoothness variances sigma^2_{beta,1} via log-normal MH against the
// prior's own sigma-dependent factors times the half-Cauchy hyperprior.
// ---------------------------------------------------------------------------

inline void update_smoothness(ChainState& chain) {
  ModelState& st = chain.model;
  for (int which = 0; which < 2; ++which) {
    double& value = which == 0 ? st.smooth_mu : st.smooth_b;
    const auto [count, ss] = smoothness_penalty_stats(
        which == 0 ? std::span<const double>(st.core.mu) : std::span<const double>(st.core.b),
        st.latent);
    auto log_target = [&](double v) {
      if (!(v > 0.0)) return kNegInf;
      return -0.5 * count * std::log(v) - 0.5 * ss / v + half_cauchy_log_pdf(v);
    };
    AdaptiveScale& sc = chain.scales.at(ScaleKind::kSmooth, which);
    const double prop = value * std::exp(sc.scale() * chain.rng.normal());
    const double log_ratio =
        log_target(prop) - log_target(value) + std::log(prop) - std::log(value);
    const bool accept = std::log(chain.rng.uniform()) < log_ratio;
    if (accept) value = prop;
    sc.record(accept, chain.scales.batch_size, chain.scales.target);
  }
}

// ---------------------------------------------------------------------------
// Steps 7-8: random effects and their variance components.
// ---------------------------------------------------------------------------

inline void update_re_coeffs_one(const FitContext& ctx, ModelState& st,
                                 AdaptiveScaleTable& scales, int i, Rng& rng,
                                 double likelihood_scale) {
  const int K = st.K();
  const auto& idxs = ctx.ds->trials_for_subject(i);
  double cur_ll = likelihood_scale == 0.0
                      ? 0.0
                      : likelihood_scale * dataset_log_lik(ctx, st, idxs);
  std::vector<double> saved(K);
  for (int f = 0; f < kNumReFamilies; ++f) {
    const ReFamily fam = static_cast<ReFamily>(f);
    const auto [va, vs] = st.re_variances(fam);
    AdaptiveScale& sc = scales.at(ScaleKind::kReBlock, i * kNumReFamilies + f);
    auto coeffs = st.re.coeffs(i, fam);

    const int n_moves = sc.componentwise ? K : 1;
    for (int move = 0; move < n_moves; ++move) {
      for (int k = 0; k < K; ++k) saved[k] = coeffs[k];
      const double prior_old = re_log_prior(coeffs, va, vs);
      if (sc.componentwise) {
        coeffs[move] += sc.scale() * rng.normal();
      } else {
        for (int k = 0; k < K; ++k) coeffs[k] += sc.scale() * rng.normal();
      }
      const double prior_new = re_log_prior(coeffs, va, vs);
      const double new_ll = likelihood_scale == 0.0
                                ? 0.0
                                : likelihood_scale * dataset_log_lik(ctx, st, idxs);
      const double log_ratio = (new_ll - cur_ll) + prior_new - prior_old;
      const bool accept = std::log(rng.uniform()) < log_ratio;
      if (accept) {
        cur_ll = new_ll;
      } else {
        for (int k = 0; k < K; ++k) coeffs[k] = saved[k];
      }
      sc.record(accept, scales.batch_size, scales.target);
    }
    // Block proposals that essentially never move fall back to componentwise.
    if (!sc.componentwise && sc.batches >= 4 && sc.overall_rate() < 0.05 && !sc.frozen) {
      sc.componentwise = true;
    }
  }
}

inline void update_re_variances(ChainState& chain) {
  ModelState& st = chain.model;
  const int K = st.K();
  for (int f = 0; f < kNumReFamilies; ++f) {
    const ReFamily fam = static_cast<ReFamily>(f);
    double sum_identity = 0.0, sum_penalty = 0.0;
    for (int i = 0; i < st.n; ++i) {
      const auto c = st.re.coeffs(i, fam);
      for (int k = 0; k < K; ++k) sum_identity += sq(c[k]);
      for (int k = 0; k + 1 < K; ++k) sum_penalty += sq(c[k + 1] - c[k]);
    }
    auto log_target = [&](double va, double vs) {
      if (!(va > 0.0) || !(vs > 0.0)) return kNegInf;
      const Eigen::MatrixXd Q = re_precision(K, va, vs);
      const Eigen::LLT<Eigen::MatrixXd> llt(Q);
      double log_det = 0.0;
      for (int k = 0; k < K; ++k) log_det += 2.0 * std::log(llt.matrixL()(k, k));
      return 0.5 * st.n * log_det - 0.5 * (sum_identity / va + sum_penalty / vs) +
             half_cauchy_log_pdf(va) + half_cauchy_log_pdf(vs);
    };
    // amplitude then smoothness, each by log-normal MH
    for (int which = 0; which < 2; ++which) {
      double& value = which == 0 ? st.re_var.amplitude[f] : st.re_var.smoothness[f];
      AdaptiveScale& sc = chain.scales.at(ScaleKind::kReVariance, which == 0 ? f : 4 + f);
      const double prop = value * std::exp(sc.scale() * chain.rng.normal());
      const double va_new = which == 0 ? prop : st.re_var.amplitude[f];
      const double vs_new = which == 0 ? st.re_var.smoothness[f] : prop;
      const double log_ratio = log_target(va_new, vs_new) -
                               log_target(st.re_var.amplitude[f], st.re_var.smoothness[f]) +
                               std::log(prop) - std::log(value);
      const bool accept = std::log(chain.rng.uniform()) < log_ratio;
      if (accept) value = prop;
      sc.record(accept, chain.scales.batch_size, chain.scales.target);
    }
  }
}

// ---------------------------------------------------------------------------
// Full sweep: S.5.2-style step order with deterministic per-unit child
// streams for the parallel sections.
// ---------------------------------------------------------------------------

inline void sweep(const FitContext& ctx, ChainState& chain, const ModelConfig& cfg,
                  const SweepOptions& opt = {}) {
  ModelState& st = chain.model;
  if (opt.update_offsets) update_offsets(ctx, chain, opt);
  if (opt.update_core) update_core_coeffs(ctx, chain, opt);
  if (opt.update_latents) {
    detail::parallel_for(st.d0, cfg.threads, [&](int s) {
      Rng local = Rng::child(cfg.seed, {0x1a7e57ULL, static_cast<std::uint64_t>(chain.iteration),
                                        static_cast<std::uint64_t>(s)});
      sample_latent_states_impl(ctx, st, s, cfg.hamming_radius, cfg.balancing_power,
                                opt.likelihood_scale, local);
    });
  }
  if (opt.update_transitions) update_transitions(st.latent, st.trans, chain.rng);
  if (opt.update_concentration) {
    const double sd_c = chain.scales.at(ScaleKind::kConcentration, 0).scale();
    const double sd_i = chain.scales.at(ScaleKind::kConcentration, 1).scale();
    const auto acc = update_concentration(st.trans, chain.rng, cfg.a_alpha, cfg.b_alpha,
                                          sd_c, sd_i);
    chain.scales.at(ScaleKind::kConcentration, 0)
        .record(acc.first, chain.scales.batch_size, chain.scales.target);
    chain.scales.at(ScaleKind::kConcentration, 1)
        .record(acc.second, chain.scales.batch_size, chain.scales.target);
  }
  if (opt.update_smoothness) update_smoothness(chain);
  if (opt.update_re_coeffs) {
    detail::parallel_for(st.n, cfg.threads, [&](int i) {
      Rng local = Rng::child(cfg.seed, {0x50b7ec7ULL, static_cast<std::uint64_t>(chain.iteration),
                                        static_cast<std::uint64_t>(i)});
      update_re_coeffs_one(ctx, st, chain.scales, i, local, opt.likelihood_scale);
    });
  }
  if (opt.update_re_variances) update_re_variances(chain);
  ++chain.iteration;

  if (opt.check_finite && opt.likelihood_scale > 0.0) {
    const double total = dataset_log_lik(ctx, st);
    if (!std::isfinite(total)) {
      throw NumericalError("non-finite log-likelihood at iteration " +
                           std::to_string(chain.iteration));
    }
  }
}

// ---------------------------------------------------------------------------
// Chain driver: burn-in tempering schedule, draw recording, scale freezing.
// ---------------------------------------------------------------------------

inline ParameterDraw record_draw(const ChainState& chain) {
  const ModelState& st = chain.model;
  const int K = st.K();
  const int x_max = st.latent.n_combinations();
  ParameterDraw dr;
  dr.expressed_mu.resize(static_cast<std::size_t>(x_max) * K);
  dr.expressed_b.resize(static_cast<std::size_t>(x_max) * K);
  for (int d = 0; d < st.d0; ++d) {
    for (int s = 0; s < st.d0; ++s) {
      const int x = st.latent.x_index(d, s);
      for (int k = 0; k < K; ++k) {
        const int z = st.latent.at(k, d, s);
        dr.expressed_mu[static_cast<std::size_t>(x) * K + k] = st.core.mu_at(k, z);
        dr.expressed_b[static_cast<std::size_t>(x) * K + k] = st.core.b_at(k, z);
      }
    }
  }
  dr.latent = st.latent.z;
  dr.offsets = st.offsets;
  dr.re_coeffs = st.re.values;
  dr.smooth_mu = st.smooth_mu;
  dr.smooth_b = st.smooth_b;
  dr.re_amplitude = st.re_var.amplitude;
  dr.re_smoothness = st.re_var.smoothness;
  dr.alpha_correct = st.trans.alpha_correct;
  dr.alpha_incorrect = st.trans.alpha_incorrect;
  return dr;
}

// Likelihood tempering for the core-coefficient MH during burn-in only; the
// post-burn-in kernel always runs at temperature 1.
inline double burn_in_core_temp(int iteration, int burn_in) {
  if (iteration >= burn_in) return 1.0;
  constexpr double ladder[3] = {1.0, 0.5, 0.25};
  return ladder[iteration % 3];
}

class ChainRunner {
 public:
  ChainRunner(const Dataset& ds, const ModelConfig& cfg)
      : ctx_(ds), cfg_(cfg) {
    cfg_.validate();
    chain_ = init_state(ds, cfg_, Rng(cfg_.seed));
    draws_.n = chain_.model.n;
    draws_.d0 = chain_.model.d0;
    draws_.K = chain_.model.K();
    draws_.T = chain_.model.T();
    draws_.basis = chain_.model.basis;
    draws_.config = cfg_;
    draws_.warnings = chain_.warnings;
  }

  void step() {
    SweepOptions opt;
    opt.core_temp = burn_in_core_temp(chain_.iteration, cfg_.burn_in);
    sweep(ctx_, chain_, cfg_, opt);
    if (chain_.iteration == cfg_.burn_in) chain_.scales.freeze_all();
    if (chain_.iteration > cfg_.burn_in &&
        (chain_.iteration - cfg_.burn_in) % cfg_.thin == 0) {
      draws_.draws.push_back(record_draw(chain_));
    }
  }

  bool done() const { return chain_.iteration >= cfg_.iterations; }
  int iteration() const { return chain_.iteration; }
  const ModelConfig& config() const { return cfg_; }
  ChainState& chain() { return chain_; }
  const ChainState& chain() const { return chain_; }
  PosteriorDraws& draws() { return draws_; }

  PosteriorDraws finish() {
    draws_.acceptance = acceptance_table();
    return draws_;
  }

  std::vector<std::pair<std::string, double>> acceptance_table() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& [key, sc] : chain_.scales.entries) {
      const auto kind = static_cast<ScaleKind>(key >> 32);
      const auto idx = static_cast<std::uint32_t>(key & 0xffffffffu);
      std::string name;
      switch (kind) {
        case ScaleKind::kOffset:
          name = "offset_i" + std::to_string(idx / chain_.model.d0 + 1) + "_s" +
                 std::to_string(idx % chain_.model.d0 + 1);
          break;
        case ScaleKind::kSmooth:
          name = idx == 0 ? "smooth_drift" : "smooth_boundary";
          break;
        case ScaleKind::kReBlock:
          name = "re_i" + std::to_string(idx / kNumReFamilies + 1) + "_" +
                 kReFamilyNames[idx % kNumReFamilies];
          break;
        case ScaleKind::kReVariance:
          name = std::string("re_var_") + (idx < 4 ? "amplitude_" : "smoothness_") +
                 kReFamilyNames[idx % 4];
          break;
        case ScaleKind::kConcentration:
          name = idx == 0 ? "alpha_correct" : "alpha_incorrect";
          break;
      }
      out.emplace_back(name, sc.overall_rate());
    }
    return out;
  }

 private:
  FitContext ctx_;
  ModelConfig cfg_;
  ChainState chain_;
  PosteriorDraws draws_;

  friend struct ChainRunnerSerializer;
};

// Runs the full chain in memory.
inline PosteriorDraws run_chain(const Dataset& ds, const ModelConfig& cfg) {
  ChainRunner runner(ds, cfg);
  while (!runner.done()) runner.step();
  return runner.finish();
}

}  // namespace ddrace

#endif
