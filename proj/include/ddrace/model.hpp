#ifndef DDRACE_MODEL_HPP
#define DDRACE_MODEL_HPP

#include <cmath>
#include <span>
#include <vector>

#include "ddrace/bspline.hpp"
#include "ddrace/data.hpp"
#include "ddrace/fixed_effects.hpp"
#include "ddrace/ig_race.hpp"
#include "ddrace/random_effects.hpp"

namespace ddrace {

// Full parameter state of the longitudinal drift-diffusion mixed model.
struct ModelState {
  SplineBasis basis;
  int n = 0;   // subjects
  int d0 = 0;  // categories

  CoreCoefficients core;
  LatentStateMatrix latent;
  TransitionModel trans;
  RandomEffectCoeffs re;
  VarianceComponents re_var;  // one (amplitude, smoothness) pair per family
  double smooth_mu = 1.0;  // sigma^2_{beta,1} for the drift core table
  double smooth_b = 1.0;   // and for the boundary core table
  std::vector<double> offsets;  // [i * d0 + s], seconds

  double mu_beta0 = 0.0;    // unassigned-slot prior mean (set from the data)
  double sigma2_beta0 = 4.0;
  double sigma2_init = 1e6;

  int K() const { return basis.size(); }
  int T() const { return basis.n_sub + 1; }

  double offset(int i, int s) const { return offsets[static_cast<std::size_t>(i) * d0 + s]; }
  double& offset(int i, int s) { return offsets[static_cast<std::size_t>(i) * d0 + s]; }

  CorePriorHyper hyper_mu() const { return {smooth_mu, mu_beta0, sigma2_beta0, sigma2_init}; }
  CorePriorHyper hyper_b() const { return {smooth_b, mu_beta0, sigma2_beta0, sigma2_init}; }

  // sigma^2_{u,a}, sigma^2_{u,s} for one of the four subject-curve families.
  std::pair<double, double> re_variances(ReFamily fam) const {
    const int f = static_cast<int>(fam);
    return {re_var.amplitude[f], re_var.smoothness[f]};
  }
};

// Precomputed quantities tied to one dataset/basis combination. Because the
// interior knots sit at the blocks, the curve value at block t involves only
// coefficients t and t+1; w1/w2 hold those two basis weights.
struct FitContext {
  const Dataset* ds = nullptr;
  SplineBasis basis;
  std::vector<double> w1, w2;

  FitContext() = default;
  explicit FitContext(const Dataset& dataset)
      : ds(&dataset), basis(make_block_basis(dataset.n_blocks())) {
    const int T = dataset.n_blocks();
    w1.resize(T);
    w2.resize(T);
    std::vector<double> v(basis.size());
    for (int t = 0; t < T; ++t) {
      eval_basis(basis, t + 1.0, v);
      w1[t] = v[t];
      w2[t] = v[t + 1];
      for (int k = 0; k < basis.size(); ++k) {
        if (k != t && k != t + 1 && v[k] != 0.0) {
          throw NumericalError("basis support wider than adjacent coefficients");
        }
      }
    }
  }

  int n_blocks() const { return static_cast<int>(w1.size()); }
};

// Curve value at block t from a length-K coefficient vector.
inline double block_value(const FitContext& ctx, std::span<const double> coeffs, int t) {
  return ctx.w1[t] * coeffs[t] + ctx.w2[t] * coeffs[t + 1];
}

// Fixed-effect value at block t for combination (d, s) under the current
// latent assignment, for one core table.
inline double expressed_block_value(const FitContext& ctx, const ModelState& st,
                                    bool drift, int d, int s, int t) {
  const int za = st.latent.at(t, d, s);
  const int zb = st.latent.at(t + 1, d, s);
  const auto& tab = drift ? st.core.mu : st.core.b;
  const int zm = st.core.z_max;
  return ctx.w1[t] * tab[static_cast<std::size_t>(t) * zm + za] +
         ctx.w2[t] * tab[static_cast<std::size_t>(t + 1) * zm + zb];
}

inline double re_block_value(const FitContext& ctx, const ModelState& st, int i,
                             ReFamily fam, int t) {
  return ctx.w1[t] * st.re.at(i, fam, t) + ctx.w2[t] * st.re.at(i, fam, t + 1);
}

// Accumulator parameters theta_{d,s}^{(i)}(t) = (delta_s^{(i)}, e^{f+u}, e^{f+u}).
inline AccumulatorParams trial_accumulator(const FitContext& ctx, const ModelState& st,
                                           int i, int d, int s, int t) {
  const bool correct = (d == s);
  const double log_mu = expressed_block_value(ctx, st, true, d, s, t) +
                        re_block_value(ctx, st, i, re_family(true, correct), t);
  const double log_b = expressed_block_value(ctx, st, false, d, s, t) +
                       re_block_value(ctx, st, i, re_family(false, correct), t);
  return {st.offset(i, s), std::exp(log_mu), std::exp(log_b)};
}

// One race layer's contribution for a trial: winner density or loser survivor.
inline double layer_term(const AccumulatorParams& acc, int d, int response, double rt) {
  return d == response ? ig_log_pdf(acc, rt) : ig_log_survival(acc, rt);
}

inline double trial_log_lik(const FitContext& ctx, const ModelState& st,
                            const TrialRecord& r) {
  double ll = 0.0;
  for (int d = 0; d < st.d0; ++d) {
    ll += layer_term(trial_accumulator(ctx, st, r.subject, d, r.stimulus, r.block), d,
                     r.response, r.rt);
  }
  return ll;
}

inline double dataset_log_lik(const FitContext& ctx, const ModelState& st,
                              std::span<const int> record_indices) {
  double ll = 0.0;
  for (int idx : record_indices) ll += trial_log_lik(ctx, st, ctx.ds->records()[idx]);
  return ll;
}

inline double dataset_log_lik(const FitContext& ctx, const ModelState& st) {
  double ll = 0.0;
  for (const auto& r : ctx.ds->records()) ll += trial_log_lik(ctx, st, r);
  return ll;
}

// Likelihood over all trials with a per-(i,d,s,t) parameter surface; the
// simulator and tests use this with surfaces detached from any ModelState.
template <typename Surface>
double dataset_log_lik(const Dataset& ds, Surface&& params) {
  double ll = 0.0;
  for (const auto& r : ds.records()) {
    for (int d = 0; d < ds.n_categories(); ++d) {
      ll += layer_term(params(r.subject, d, r.stimulus, r.block), d, r.response, r.rt);
    }
  }
  return ll;
}

// Layer-d log-likelihood of the block-t trials under stimulus s, with the
// layer's fixed-effect values supplied by the caller. Random effects and
// offsets come from the state. This is the kernel behind both the emission
// tables of the latent-state sampler and the core-coefficient updates.
inline double layer_block_log_lik(const FitContext& ctx, const ModelState& st, int d,
                                  int s, int t, double fixed_log_mu, double fixed_log_b) {
  const bool correct = (d == s);
  const ReFamily fam_mu = re_family(true, correct);
  const ReFamily fam_b = re_family(false, correct);
  double ll = 0.0;
  for (int idx : ctx.ds->trials_for(s, t)) {
    const auto& r = ctx.ds->records()[idx];
    const double log_mu = fixed_log_mu + re_block_value(ctx, st, r.subject, fam_mu, t);
    const double log_b = fixed_log_b + re_block_value(ctx, st, r.subject, fam_b, t);
    const AccumulatorParams acc{st.offset(r.subject, s), std::exp(log_mu), std::exp(log_b)};
    ll += layer_term(acc, d, r.response, r.rt);
  }
  return ll;
}

// p(y_k | z_k, z_{k+1}) for the stimulus-s factorial HMM: the joint
// likelihood of all block-k trials under stimulus s when locations k and k+1
// carry the given state vectors (k is a block index, 0..T-1).
inline double block_emission_log_lik(const FitContext& ctx, const ModelState& st, int s,
                                     int k, std::span<const int> zk,
                                     std::span<const int> zk1) {
  double ll = 0.0;
  for (int d = 0; d < st.d0; ++d) {
    const double fmu = ctx.w1[k] * st.core.mu_at(k, zk[d]) +
                       ctx.w2[k] * st.core.mu_at(k + 1, zk1[d]);
    const double fb = ctx.w1[k] * st.core.b_at(k, zk[d]) +
                      ctx.w2[k] * st.core.b_at(k + 1, zk1[d]);
    ll += layer_block_log_lik(ctx, st, d, s, k, fmu, fb);
  }
  return ll;
}

}  // namespace ddrace

#endif
