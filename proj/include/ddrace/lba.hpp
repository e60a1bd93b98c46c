#ifndef DDRACE_LBA_HPP
#define DDRACE_LBA_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ddrace/data.hpp"
#include "ddrace/math.hpp"
#include "ddrace/nelder_mead.hpp"
#include "ddrace/rng.hpp"

namespace ddrace {

// Linear ballistic accumulator: deterministic linear growth with a normally
// distributed slope per trial, crossing the shared boundary at b / slope.
// Negative slopes never finish; the distribution is defective and the
// survivor terms carry the missing mass (no renormalization).
struct LbaAccumulator {
  double slope_mean = 1.0;
  double slope_var = 1.0;
  double boundary = 1.0;
};

inline constexpr double kLbaVarFloor = 1e-6;

inline double lba_cdf(const LbaAccumulator& p, double tau) {
  if (!(tau > 0.0)) throw DataError("lba cdf requires tau > 0");
  const double z = (p.boundary / tau - p.slope_mean) / std::sqrt(p.slope_var);
  return 1.0 - norm_cdf(z);
}

inline double lba_pdf(const LbaAccumulator& p, double tau) {
  if (!(tau > 0.0)) throw DataError("lba pdf requires tau > 0");
  const double sd = std::sqrt(p.slope_var);
  const double z = (p.boundary / tau - p.slope_mean) / sd;
  return norm_pdf(z) / sd * p.boundary / (tau * tau);
}

inline double lba_log_pdf(const LbaAccumulator& p, double tau) {
  const double sd = std::sqrt(p.slope_var);
  const double z = (p.boundary / tau - p.slope_mean) / sd;
  return norm_log_pdf(z) - std::log(sd) + std::log(p.boundary) - 2.0 * std::log(tau);
}

// log(1 - F) = log Phi((b/tau - m)/sd)
inline double lba_log_survival(const LbaAccumulator& p, double tau) {
  const double z = (p.boundary / tau - p.slope_mean) / std::sqrt(p.slope_var);
  return norm_log_cdf(z);
}

// Per-stimulus parameters at one block: shared boundary, per-response slope
// moments.
struct LbaStimulusParams {
  double boundary = 1.0;
  std::vector<double> slope_mean;
  std::vector<double> slope_var;

  LbaAccumulator accumulator(int d) const { return {slope_mean[d], slope_var[d], boundary}; }
};

struct LbaBlockParams {
  std::vector<LbaStimulusParams> per_stimulus;  // d0 entries
};

inline double lba_trial_log_lik(const LbaStimulusParams& p, int response, double rt) {
  const int d0 = static_cast<int>(p.slope_mean.size());
  double ll = lba_log_pdf(p.accumulator(response), rt);
  for (int d = 0; d < d0; ++d) {
    if (d == response) continue;
    ll += lba_log_survival(p.accumulator(d), rt);
  }
  return ll;
}

// Log-likelihood of all block-t trials; rt_offset (optional, per stimulus) is
// subtracted from the response times first.
inline double lba_block_log_lik(const Dataset& ds, int t, const LbaBlockParams& params,
                                const std::vector<double>& rt_offset = {}) {
  double ll = 0.0;
  for (int s = 0; s < ds.n_categories(); ++s) {
    const auto& p = params.per_stimulus[s];
    const double off = rt_offset.empty() ? 0.0 : rt_offset[s];
    for (int idx : ds.trials_for(s, t)) {
      const auto& r = ds.records()[idx];
      const double rt = r.rt - off;
      if (!(rt > 0.0)) return kNegInf;
      ll += lba_trial_log_lik(p, r.response, rt);
    }
  }
  return ll;
}

struct LbaFitResult {
  LbaBlockParams params;
  double log_lik = kNegInf;
  // best objective achieved by each restart, per stimulus
  std::vector<std::vector<double>> restart_objectives;
};

namespace detail {

// The block likelihood is invariant under (b, m, sqrt(v)) -> (cb, cm, c sqrt(v)),
// so estimates are reported in the gauge min_d m_d = 1, the discrete-choice
// style normalization of one alternative's scale.
inline void normalize_gauge(LbaStimulusParams& p) {
  const double m_min = *std::min_element(p.slope_mean.begin(), p.slope_mean.end());
  if (!(m_min > 0.0)) return;
  p.boundary /= m_min;
  for (double& m : p.slope_mean) m /= m_min;
  for (double& v : p.slope_var) v /= m_min * m_min;
}

}  // namespace detail

// Maximum likelihood per (stimulus, block) by multi-start Nelder-Mead on
// [log b, m_1..m_d0, log v_1..log v_d0], slope variances floored at 1e-6.
inline LbaFitResult fit_block(const Dataset& ds, int t, int restarts, Rng& rng,
                              const std::vector<double>& rt_offset = {}) {
  if (t < 0 || t >= ds.n_blocks()) throw DataError("block out of range");
  const int d0 = ds.n_categories();
  for (int s = 0; s < d0; ++s) {
    if (ds.trials_for(s, t).empty()) {
      throw DataError("block " + std::to_string(t + 1) + " has no trials for stimulus " +
                      std::to_string(s + 1));
    }
  }
  LbaFitResult fit;
  fit.params.per_stimulus.resize(d0);
  fit.restart_objectives.assign(d0, {});
  fit.log_lik = 0.0;
  // One base value so restart r starts identically regardless of how many
  // restarts were requested.
  const std::uint64_t restart_base = rng.next_u64();

  for (int s = 0; s < d0; ++s) {
    const auto& idxs = ds.trials_for(s, t);
    const double off = rt_offset.empty() ? 0.0 : rt_offset[s];
    std::vector<std::pair<int, double>> obs;
    obs.reserve(idxs.size());
    double rt_sum = 0.0;
    for (int idx : idxs) {
      const auto& r = ds.records()[idx];
      const double rt = r.rt - off;
      if (!(rt > 0.0)) throw DataError("nonpositive response time after offset subtraction");
      obs.emplace_back(r.response, rt);
      rt_sum += rt;
    }
    const double rt_mean = rt_sum / obs.size();

    auto unpack = [d0](const std::vector<double>& x) {
      LbaStimulusParams p;
      p.boundary = std::exp(std::clamp(x[0], -20.0, 20.0));
      p.slope_mean.resize(d0);
      p.slope_var.resize(d0);
      for (int d = 0; d < d0; ++d) {
        p.slope_mean[d] = x[1 + d];
        p.slope_var[d] =
            std::max(kLbaVarFloor, std::exp(std::clamp(x[1 + d0 + d], -20.0, 20.0)));
      }
      return p;
    };
    auto objective = [&](const std::vector<double>& x) {
      const LbaStimulusParams p = unpack(x);
      double ll = 0.0;
      for (const auto& [resp, rt] : obs) ll += lba_trial_log_lik(p, resp, rt);
      return std::isfinite(ll) ? -ll : 1e300;
    };

    // Base start: boundary at the mean response time (slope scale near 1),
    // the empirically dominant response slightly ahead.
    std::vector<int> wins(d0, 0);
    for (const auto& [resp, rt] : obs) ++wins[resp];
    const int dominant =
        static_cast<int>(std::max_element(wins.begin(), wins.end()) - wins.begin());

    double best_obj = 1e301;
    std::vector<double> best_x;
    auto& objectives = fit.restart_objectives[s];
    for (int r = 0; r < restarts; ++r) {
      Rng local = Rng::child(restart_base, {static_cast<std::uint64_t>(s),
                                            static_cast<std::uint64_t>(r)});
      std::vector<double> x(1 + 2 * d0);
      for (int attempt = 0; attempt < 50; ++attempt) {
        x[0] = std::log(rt_mean) + (r == 0 ? 0.0 : 0.5 * local.normal());
        for (int d = 0; d < d0; ++d) {
          x[1 + d] = (d == dominant ? 1.5 : 1.0) + (r == 0 ? 0.0 : 0.4 * local.normal());
          x[1 + d0 + d] = std::log(0.25) + (r == 0 ? 0.0 : 0.8 * local.normal());
        }
        if (objective(x) < 1e300) break;  // resample non-finite starts
      }
      auto res = nelder_mead(objective, x, 0.4, 1e-10, 40000);
      // polish from the found optimum
      res = nelder_mead(objective, res.x, 0.05, 1e-12, 20000);
      objectives.push_back(-res.value);
      if (res.value < best_obj) {
        best_obj = res.value;
        best_x = res.x;
      }
    }
    LbaStimulusParams p = unpack(best_x);
    detail::normalize_gauge(p);
    fit.params.per_stimulus[s] = p;
    fit.log_lik += -best_obj;
  }
  return fit;
}

// Simulates one LBA trial; trials where no accumulator finishes (all slopes
// negative) are redrawn.
inline std::pair<int, double> simulate_lba_trial(const LbaStimulusParams& p, Rng& rng) {
  const int d0 = static_cast<int>(p.slope_mean.size());
  for (;;) {
    int winner = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int d = 0; d < d0; ++d) {
      const double slope = rng.normal(p.slope_mean[d], std::sqrt(p.slope_var[d]));
      if (slope <= 0.0) continue;
      const double t = p.boundary / slope;
      if (t < best) {
        best = t;
        winner = d;
      }
    }
    if (winner >= 0) return {winner, best};
  }
}

// CSV report: per block and stimulus, boundary plus per-response slope
// moments, the block log-likelihood, and the restart objective table.
inline void save_lba_report(const Dataset& ds, const std::vector<LbaFitResult>& fits,
                            const std::string& outdir) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  char buf[64];
  {
    std::ofstream out(fs::path(outdir) / "lba_estimates.csv");
    if (!out) throw DataError("cannot write lba_estimates.csv");
    out << "block,stimulus,response,boundary,slope_mean,slope_var,block_loglik\n";
    for (int t = 0; t < static_cast<int>(fits.size()); ++t) {
      for (int s = 0; s < ds.n_categories(); ++s) {
        const auto& p = fits[t].params.per_stimulus[s];
        for (int d = 0; d < ds.n_categories(); ++d) {
          std::snprintf(buf, sizeof buf, "%.8g,%.8g,%.8g,%.8g", p.boundary,
                        p.slope_mean[d], p.slope_var[d], fits[t].log_lik);
          out << (t + 1) << ',' << (s + 1) << ',' << (d + 1) << ',' << buf << '\n';
        }
      }
    }
  }
  {
    std::ofstream out(fs::path(outdir) / "lba_restarts.csv");
    if (!out) throw DataError("cannot write lba_restarts.csv");
    out << "block,stimulus,restart,objective\n";
    for (int t = 0; t < static_cast<int>(fits.size()); ++t) {
      for (int s = 0; s < ds.n_categories(); ++s) {
        const auto& objs = fits[t].restart_objectives[s];
        for (int r = 0; r < static_cast<int>(objs.size()); ++r) {
          std::snprintf(buf, sizeof buf, "%.8g", objs[r]);
          out << (t + 1) << ',' << (s + 1) << ',' << (r + 1) << ',' << buf << '\n';
        }
      }
    }
  }
}

}  // namespace ddrace

#endif
