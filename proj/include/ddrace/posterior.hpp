#ifndef DDRACE_POSTERIOR_HPP
#define DDRACE_POSTERIOR_HPP

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ddrace/bspline.hpp"
#include "ddrace/data.hpp"
#include "ddrace/fixed_effects.hpp"
#include "ddrace/math.hpp"
#include "ddrace/random_effects.hpp"

namespace ddrace {

// One thinned post-burn-in sample of everything the summaries need.
struct ParameterDraw {
  std::vector<double> expressed_mu;  // [x * K + k], x = d * d0 + s
  std::vector<double> expressed_b;
  std::vector<int> latent;           // [k * x_max + x]
  std::vector<double> offsets;       // [i * d0 + s]
  std::vector<double> re_coeffs;     // [((i * 4) + family) * K + k]
  double smooth_mu = 1.0;
  double smooth_b = 1.0;
  std::array<double, kNumReFamilies> re_amplitude{};
  std::array<double, kNumReFamilies> re_smoothness{};
  double alpha_correct = 1.0;
  double alpha_incorrect = 1.0;
};

struct PosteriorDraws {
  int n = 0;
  int d0 = 0;
  int K = 0;
  int T = 0;
  SplineBasis basis;
  ModelConfig config;
  std::vector<ParameterDraw> draws;
  std::vector<std::pair<std::string, double>> acceptance;
  std::vector<std::string> warnings;

  int x_index(int d, int s) const { return d * d0 + s; }
  int n_combinations() const { return d0 * d0; }

  double expressed(const ParameterDraw& dr, bool drift, int x, int k) const {
    const auto& v = drift ? dr.expressed_mu : dr.expressed_b;
    return v[static_cast<std::size_t>(x) * K + k];
  }
  double re_coeff(const ParameterDraw& dr, int i, ReFamily fam, int k) const {
    return dr.re_coeffs[(static_cast<std::size_t>(i) * kNumReFamilies +
                         static_cast<int>(fam)) * K + k];
  }
};

// Dense evaluation grid over [1, T], points_per_block per knot interval.
inline std::vector<double> evaluation_grid(int T, int points_per_block = 10) {
  std::vector<double> g;
  const int segments = T - 1;
  for (int seg = 0; seg < segments; ++seg) {
    for (int j = 0; j < points_per_block; ++j) {
      g.push_back(1.0 + seg + static_cast<double>(j) / points_per_block);
    }
  }
  g.push_back(static_cast<double>(T));
  return g;
}

struct TrajectorySummary {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
};

namespace detail {

template <typename PerDraw>
TrajectorySummary summarize_curves(const std::vector<double>& grid, int n_draws,
                                   PerDraw&& value_at, double lo_q, double hi_q) {
  TrajectorySummary out;
  out.grid = grid;
  out.mean.resize(grid.size());
  out.lower.resize(grid.size());
  out.upper.resize(grid.size());
  std::vector<double> vals(n_draws);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (int m = 0; m < n_draws; ++m) vals[m] = value_at(m, g);
    out.mean[g] = mean(vals);
    std::sort(vals.begin(), vals.end());
    out.lower[g] = quantile_sorted(vals, lo_q);
    out.upper[g] = quantile_sorted(vals, hi_q);
  }
  return out;
}

}  // namespace detail

// Individual-level trajectory exp{f_x(t) + u^{(i)}(t)} summarized pointwise.
inline TrajectorySummary individual_trajectory(const PosteriorDraws& pd, int i, int d,
                                               int s, bool drift,
                                               const std::vector<double>& grid,
                                               double lo_q = 0.05, double hi_q = 0.95) {
  if (i < 0 || i >= pd.n || d < 0 || d >= pd.d0 || s < 0 || s >= pd.d0) {
    throw DataError("trajectory index out of range");
  }
  const int x = pd.x_index(d, s);
  const ReFamily fam = re_family(drift, d == s);
  const int M = static_cast<int>(pd.draws.size());
  // cache per-draw curve values
  std::vector<double> fixed_coef(pd.K), re_coef(pd.K);
  std::vector<std::vector<double>> curve(M, std::vector<double>(grid.size()));
  for (int m = 0; m < M; ++m) {
    const auto& dr = pd.draws[m];
    for (int k = 0; k < pd.K; ++k) {
      fixed_coef[k] = pd.expressed(dr, drift, x, k);
      re_coef[k] = pd.re_coeff(dr, i, fam, k);
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      curve[m][g] = std::exp(eval_function(pd.basis, fixed_coef, grid[g]) +
                             eval_function(pd.basis, re_coef, grid[g]));
    }
  }
  return detail::summarize_curves(grid, M, [&](int m, std::size_t g) { return curve[m][g]; },
                                  lo_q, hi_q);
}

// Population-level trajectory: the random effects integrate out to a
// log-normal mean factor, estimated per draw by the cross-subject empirical
// variance of the subject curves, exp{f_x(t) + var_i(u)/2}.
inline TrajectorySummary population_trajectory(const PosteriorDraws& pd, int d, int s,
                                               bool drift,
                                               const std::vector<double>& grid,
                                               double lo_q = 0.05, double hi_q = 0.95,
                                               bool* variance_warning = nullptr) {
  if (d < 0 || d >= pd.d0 || s < 0 || s >= pd.d0) throw DataError("unknown combination");
  const int x = pd.x_index(d, s);
  const ReFamily fam = re_family(drift, d == s);
  const int M = static_cast<int>(pd.draws.size());
  if (pd.n < 2 && variance_warning) *variance_warning = true;
  std::vector<double> fixed_coef(pd.K), re_coef(pd.K), u(pd.n);
  std::vector<std::vector<double>> curve(M, std::vector<double>(grid.size()));
  for (int m = 0; m < M; ++m) {
    const auto& dr = pd.draws[m];
    for (int k = 0; k < pd.K; ++k) fixed_coef[k] = pd.expressed(dr, drift, x, k);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      for (int i = 0; i < pd.n; ++i) {
        for (int k = 0; k < pd.K; ++k) re_coef[k] = pd.re_coeff(dr, i, fam, k);
        u[i] = eval_function(pd.basis, re_coef, grid[g]);
      }
      const double var_u = pd.n >= 2 ? variance(u) : 0.0;
      curve[m][g] = std::exp(eval_function(pd.basis, fixed_coef, grid[g]) + 0.5 * var_u);
    }
  }
  return detail::summarize_curves(grid, M, [&](int m, std::size_t g) { return curve[m][g]; },
                                  lo_q, hi_q);
}

// Pairwise posterior co-clustering probabilities of the success combinations
// at block t (0-based): the curves coincide at block t exactly when both the
// t and t+1 latent labels agree, so that joint event is what gets counted.
inline Eigen::MatrixXd coclustering_matrix(const PosteriorDraws& pd, int t) {
  if (t < 0 || t >= pd.T) throw DataError("block out of range");
  Eigen::MatrixXd prob = Eigen::MatrixXd::Zero(pd.d0, pd.d0);
  const int x_max = pd.n_combinations();
  for (const auto& dr : pd.draws) {
    for (int j1 = 0; j1 < pd.d0; ++j1) {
      for (int j2 = 0; j2 < pd.d0; ++j2) {
        const int x1 = pd.x_index(j1, j1), x2 = pd.x_index(j2, j2);
        const bool same =
            dr.latent[static_cast<std::size_t>(t) * x_max + x1] ==
                dr.latent[static_cast<std::size_t>(t) * x_max + x2] &&
            dr.latent[static_cast<std::size_t>(t + 1) * x_max + x1] ==
                dr.latent[static_cast<std::size_t>(t + 1) * x_max + x2];
        if (same) prob(j1, j2) += 1.0;
      }
    }
  }
  if (!pd.draws.empty()) prob /= static_cast<double>(pd.draws.size());
  return prob;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

}  // namespace detail

struct ExportOptions {
  std::vector<int> subjects;  // individual trajectories for these subjects
  double lower_q = 0.05;
  double upper_q = 0.95;
  int points_per_block = 10;
};

// Writes the standard summary files into outdir: population trajectories per
// combination, co-clustering long format per block, offset posterior
// summaries, and optionally per-subject trajectories.
inline void export_summaries(const PosteriorDraws& pd, const std::string& outdir,
                             const ExportOptions& opt = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  const auto grid = evaluation_grid(pd.T, opt.points_per_block);

  for (const bool drift : {true, false}) {
    auto out = detail::open_out(fs::path(outdir) /
                                (drift ? "population_drift.csv" : "population_boundary.csv"));
    out << "response,stimulus,t,mean,lower,upper\n";
    for (int d = 0; d < pd.d0; ++d) {
      for (int s = 0; s < pd.d0; ++s) {
        const auto tr = population_trajectory(pd, d, s, drift, grid, opt.lower_q, opt.upper_q);
        for (std::size_t g = 0; g < grid.size(); ++g) {
          out << (d + 1) << ',' << (s + 1) << ',' << detail::fmt(tr.grid[g]) << ','
              << detail::fmt(tr.mean[g]) << ',' << detail::fmt(tr.lower[g]) << ','
              << detail::fmt(tr.upper[g]) << '\n';
        }
      }
    }
  }

  for (int i : opt.subjects) {
    for (const bool drift : {true, false}) {
      auto out = detail::open_out(
          fs::path(outdir) / ("subject" + std::to_string(i + 1) +
                              (drift ? "_drift.csv" : "_boundary.csv")));
      out << "response,stimulus,t,mean,lower,upper\n";
      for (int d = 0; d < pd.d0; ++d) {
        for (int s = 0; s < pd.d0; ++s) {
          const auto tr =
              individual_trajectory(pd, i, d, s, drift, grid, opt.lower_q, opt.upper_q);
          for (std::size_t g = 0; g < grid.size(); ++g) {
            out << (d + 1) << ',' << (s + 1) << ',' << detail::fmt(tr.grid[g]) << ','
                << detail::fmt(tr.mean[g]) << ',' << detail::fmt(tr.lower[g]) << ','
                << detail::fmt(tr.upper[g]) << '\n';
          }
        }
      }
    }
  }

  {
    auto out = detail::open_out(fs::path(outdir) / "coclustering.csv");
    out << "block,x1,x2,probability\n";
    for (int t = 0; t < pd.T; ++t) {
      const auto prob = coclustering_matrix(pd, t);
      for (int j1 = 0; j1 < pd.d0; ++j1) {
        for (int j2 = 0; j2 < pd.d0; ++j2) {
          out << (t + 1) << ',' << (j1 + 1) << ',' << (j2 + 1) << ','
              << detail::fmt(prob(j1, j2)) << '\n';
        }
      }
    }
  }

  {
    auto out = detail::open_out(fs::path(outdir) / "offsets_summary.csv");
    out << "subject,stimulus,mean,lower,upper\n";
    std::vector<double> vals(pd.draws.size());
    for (int i = 0; i < pd.n; ++i) {
      for (int s = 0; s < pd.d0; ++s) {
        for (std::size_t m = 0; m < pd.draws.size(); ++m) {
          vals[m] = pd.draws[m].offsets[static_cast<std::size_t>(i) * pd.d0 + s];
        }
        const double mu = mean(vals);
        std::sort(vals.begin(), vals.end());
        out << (i + 1) << ',' << (s + 1) << ',' << detail::fmt(mu) << ','
            << detail::fmt(quantile_sorted(vals, opt.lower_q)) << ','
            << detail::fmt(quantile_sorted(vals, opt.upper_q)) << '\n';
      }
    }
  }
}

}  // namespace ddrace

#endif
