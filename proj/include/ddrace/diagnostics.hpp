#ifndef DDRACE_DIAGNOSTICS_HPP
#define DDRACE_DIAGNOSTICS_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ddrace/errors.hpp"
#include "ddrace/math.hpp"
#include "ddrace/posterior.hpp"

namespace ddrace {

struct GewekeResult {
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;
  double frac_a = 0.1;
  double frac_b = 0.5;
};

namespace detail {

// Spectral density at frequency zero via a Bartlett lag window with
// bandwidth floor(sqrt(n)).
inline double spectral_density_zero(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  const double m = mean(x);
  const int bw = static_cast<int>(std::sqrt(static_cast<double>(n)));
  auto gamma = [&](int lag) {
    double s = 0.0;
    for (int i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
    return s / n;
  };
  double spec = gamma(0);
  for (int lag = 1; lag <= bw; ++lag) {
    spec += 2.0 * (1.0 - static_cast<double>(lag) / (bw + 1)) * gamma(lag);
  }
  return spec;
}

}  // namespace detail

// Geweke's stationarity statistic: standardized difference between the mean
// of the first frac_a and last frac_b of a chain, with spectral variance
// estimates on each segment.
inline GewekeResult geweke_z(std::span<const double> series, double frac_a = 0.1,
                             double frac_b = 0.5) {
  if (frac_a <= 0.0 || frac_b <= 0.0 || frac_a + frac_b > 1.0) {
    throw DataError("geweke window fractions must be positive with frac_a + frac_b <= 1");
  }
  const int n = static_cast<int>(series.size());
  if (n < 50) throw DataError("geweke needs at least 50 samples");
  GewekeResult res;
  res.frac_a = frac_a;
  res.frac_b = frac_b;
  const int na = static_cast<int>(frac_a * n);
  const int nb = static_cast<int>(frac_b * n);
  const auto seg_a = series.subspan(0, na);
  const auto seg_b = series.subspan(n - nb, nb);
  const double sa = detail::spectral_density_zero(seg_a);
  const double sb = detail::spectral_density_zero(seg_b);
  const double denom = sa / na + sb / nb;
  if (!(denom > 0.0)) {
    res.degenerate = true;
    res.z = 0.0;
    res.p = 1.0;
    return res;
  }
  res.z = (mean(seg_a) - mean(seg_b)) / std::sqrt(denom);
  res.p = 2.0 * norm_cdf(-std::abs(res.z));
  return res;
}

struct GewekeRow {
  std::string parameter;
  int block = 0;  // 0 when not block-indexed
  GewekeResult result;
};

struct DiagnosticsReport {
  std::vector<GewekeRow> geweke;
  std::vector<std::pair<std::string, double>> acceptance;
};

// Geweke diagnostics over the tracked parameter registry: block-wise drift
// and boundary for a designated subject's success combinations, offsets per
// stimulus, and the variance components.
inline DiagnosticsReport diagnostics_report(const PosteriorDraws& pd, int subject = 0,
                                            double frac_a = 0.1, double frac_b = 0.5) {
  if (pd.draws.empty()) throw DataError("no draws to diagnose");
  DiagnosticsReport rep;
  const std::size_t M = pd.draws.size();
  std::vector<double> series(M);

  auto push = [&](const std::string& name, int block) {
    rep.geweke.push_back({name, block, geweke_z(series, frac_a, frac_b)});
  };

  // individual drift/boundary at each block for the success combinations
  std::vector<double> fixed(pd.K), re(pd.K);
  for (const bool drift : {true, false}) {
    for (int j = 0; j < pd.d0; ++j) {
      const int x = pd.x_index(j, j);
      const ReFamily fam = re_family(drift, true);
      for (int t = 1; t <= pd.T; ++t) {
        for (std::size_t m = 0; m < M; ++m) {
          const auto& dr = pd.draws[m];
          for (int k = 0; k < pd.K; ++k) {
            fixed[k] = pd.expressed(dr, drift, x, k);
            re[k] = pd.re_coeff(dr, subject, fam, k);
          }
          series[m] = std::exp(eval_function(pd.basis, fixed, t) +
                               eval_function(pd.basis, re, t));
        }
        push((drift ? "drift_s" : "boundary_s") + std::to_string(j + 1), t);
      }
    }
  }
  // offsets of the designated subject, one per stimulus
  for (int s = 0; s < pd.d0; ++s) {
    for (std::size_t m = 0; m < M; ++m) {
      series[m] = pd.draws[m].offsets[static_cast<std::size_t>(subject) * pd.d0 + s];
    }
    push("offset_s" + std::to_string(s + 1), 0);
  }
  // variance components
  auto scalar_series = [&](const std::string& name, auto&& get) {
    for (std::size_t m = 0; m < M; ++m) series[m] = get(pd.draws[m]);
    push(name, 0);
  };
  scalar_series("smooth_drift", [](const ParameterDraw& d) { return d.smooth_mu; });
  scalar_series("smooth_boundary", [](const ParameterDraw& d) { return d.smooth_b; });
  for (int f = 0; f < kNumReFamilies; ++f) {
    scalar_series(std::string("re_amplitude_") + kReFamilyNames[f],
                  [f](const ParameterDraw& d) { return d.re_amplitude[f]; });
    scalar_series(std::string("re_smoothness_") + kReFamilyNames[f],
                  [f](const ParameterDraw& d) { return d.re_smoothness[f]; });
  }
  rep.acceptance = pd.acceptance;
  return rep;
}

inline void save_diagnostics(const DiagnosticsReport& rep, const std::string& outdir) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  {
    std::ofstream out(fs::path(outdir) / "geweke.csv");
    if (!out) throw DataError("cannot write geweke.csv");
    out << "parameter,block,z,p,degenerate\n";
    char buf[64];
    for (const auto& row : rep.geweke) {
      std::snprintf(buf, sizeof buf, "%.6g,%.6g", row.result.z, row.result.p);
      out << row.parameter << ',' << row.block << ',' << buf << ','
          << (row.result.degenerate ? 1 : 0) << '\n';
    }
  }
  {
    std::ofstream out(fs::path(outdir) / "acceptance.csv");
    if (!out) throw DataError("cannot write acceptance.csv");
    out << "parameter,rate\n";
    char buf[32];
    for (const auto& [name, rate] : rep.acceptance) {
      std::snprintf(buf, sizeof buf, "%.6g", rate);
      out << name << ',' << buf << '\n';
    }
  }
}

}  // namespace ddrace

#endif
