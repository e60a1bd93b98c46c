#ifndef DDRACE_SIMULATOR_HPP
#define DDRACE_SIMULATOR_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddrace/data.hpp"
#include "ddrace/ig_race.hpp"
#include "ddrace/model.hpp"
#include "ddrace/posterior.hpp"
#include "ddrace/random_effects.hpp"

namespace ddrace {

// True parameter surfaces for synthetic data generation, specified the same
// way the model expresses them: a true latent assignment plus core tables,
// subject curves either given or drawn from the random-effects prior.
struct ScenarioSpec {
  std::string name = "custom";
  int n = 20;
  int T = 10;
  int L = 40;
  int d0 = 4;
  int z_true = 1;
  std::vector<int> true_latent;    // [k * d0*d0 + x]
  std::vector<double> core_mu;     // [k * z_true + z], log scale
  std::vector<double> core_b;
  std::array<double, kNumReFamilies> re_amplitude{0.04, 0.04, 0.04, 0.04};
  std::array<double, kNumReFamilies> re_smoothness{0.01, 0.01, 0.01, 0.01};
  std::vector<double> re_coeffs;   // optional explicit [((i*4)+fam)*K + k]
  std::vector<double> offsets;     // optional explicit [i * d0 + s]
  double offset_lo = 0.25;
  double offset_hi = 0.35;
  bool balanced_stimuli = true;    // each stimulus L/d0 times per block
  std::uint64_t seed = 1;

  int K() const { return T + 1; }
  int x_index(int d, int s) const { return d * d0 + s; }
};

// Realized truth stored alongside the dataset for recovery scoring.
struct TruthRecord {
  int n = 0, T = 0, d0 = 0, z_true = 0;
  std::vector<int> true_latent;
  std::vector<double> core_mu, core_b;
  std::vector<double> re_coeffs;
  std::vector<double> offsets;

  int K() const { return T + 1; }
  int x_index(int d, int s) const { return d * d0 + s; }

  double expressed(bool drift, int x, int k) const {
    const int z = true_latent[static_cast<std::size_t>(k) * d0 * d0 + x];
    const auto& tab = drift ? core_mu : core_b;
    return tab[static_cast<std::size_t>(k) * z_true + z];
  }
  double re_coeff(int i, ReFamily fam, int k) const {
    return re_coeffs[(static_cast<std::size_t>(i) * kNumReFamilies +
                      static_cast<int>(fam)) * K() + k];
  }
};

// The default synthetic design: success drifts rise and split into two
// groups ({1,3} vs {2,4}) midway through training; failure curves share one
// cluster with a globally different boundary.
inline ScenarioSpec builtin_scenario(const std::string& name) {
  ScenarioSpec spec;
  if (name == "s7-default" || name == "default") {
    spec.name = "s7-default";
    spec.n = 20;
    spec.T = 10;
    spec.L = 40;
    spec.d0 = 4;
  } else if (name == "small") {
    spec.name = "small";
    spec.n = 10;
    spec.T = 10;
    spec.L = 20;
    spec.d0 = 4;
  } else if (name == "tiny") {
    spec.name = "tiny";
    spec.n = 2;
    spec.T = 3;
    spec.L = 10;
    spec.d0 = 2;
  } else {
    throw DataError("unknown scenario '" + name + "' (try s7-default, small, tiny)");
  }
  const int K = spec.K();
  const int d0 = spec.d0;

  if (spec.d0 == 2) {
    // two categories: one success state per tone, one failure pool
    spec.z_true = 3;
    spec.true_latent.assign(static_cast<std::size_t>(K) * d0 * d0, 2);
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < d0; ++j) spec.true_latent[static_cast<std::size_t>(k) * d0 * d0 +
                                                    spec.x_index(j, j)] = j;
    }
    spec.core_mu.assign(static_cast<std::size_t>(K) * spec.z_true, 0.0);
    spec.core_b.assign(static_cast<std::size_t>(K) * spec.z_true, 0.0);
    for (int k = 0; k < K; ++k) {
      const double rise = static_cast<double>(k) / (K - 1);
      spec.core_mu[k * spec.z_true + 0] = std::log(1.6) + rise * std::log(3.4 / 1.6);
      spec.core_mu[k * spec.z_true + 1] = std::log(1.5) + rise * std::log(2.4 / 1.5);
      spec.core_mu[k * spec.z_true + 2] = 0.0;
      spec.core_b[k * spec.z_true + 0] = std::log(2.0);
      spec.core_b[k * spec.z_true + 1] = std::log(2.0);
      spec.core_b[k * spec.z_true + 2] = std::log(2.4);
    }
    return spec;
  }

  // States: 0 = success group {1,3} (and all successes before the split),
  // 1 = success group {2,4} after the split, 2 = failure pool.
  spec.z_true = 3;
  const int split = (K + 1) / 2;
  spec.true_latent.assign(static_cast<std::size_t>(K) * d0 * d0, 2);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < d0; ++j) {
      const bool group_b = (k >= split) && (j % 2 == 1);
      spec.true_latent[static_cast<std::size_t>(k) * d0 * d0 + spec.x_index(j, j)] =
          group_b ? 1 : 0;
    }
  }
  spec.core_mu.assign(static_cast<std::size_t>(K) * spec.z_true, 0.0);
  spec.core_b.assign(static_cast<std::size_t>(K) * spec.z_true, 0.0);
  for (int k = 0; k < K; ++k) {
    const double rise = static_cast<double>(k) / (K - 1);
    spec.core_mu[k * spec.z_true + 0] = std::log(1.6) + rise * std::log(3.6 / 1.6);
    spec.core_mu[k * spec.z_true + 1] = std::log(1.6) + rise * std::log(2.2 / 1.6);
    spec.core_mu[k * spec.z_true + 2] = 0.0;
    spec.core_b[k * spec.z_true + 0] = std::log(2.0);
    spec.core_b[k * spec.z_true + 1] = std::log(2.0);
    spec.core_b[k * spec.z_true + 2] = std::log(2.4);
  }
  return spec;
}

// Draws a dataset from the generative model and records the realized truth.
inline std::pair<Dataset, TruthRecord> generate_dataset(const ScenarioSpec& spec, Rng& rng) {
  const int K = spec.K();
  const int d0 = spec.d0;
  if (static_cast<int>(spec.true_latent.size()) != K * d0 * d0) {
    throw DataError("scenario latent table has wrong size");
  }
  if (static_cast<int>(spec.core_mu.size()) != K * spec.z_true ||
      static_cast<int>(spec.core_b.size()) != K * spec.z_true) {
    throw DataError("scenario core tables have wrong size");
  }

  TruthRecord truth;
  truth.n = spec.n;
  truth.T = spec.T;
  truth.d0 = d0;
  truth.z_true = spec.z_true;
  truth.true_latent = spec.true_latent;
  truth.core_mu = spec.core_mu;
  truth.core_b = spec.core_b;

  if (!spec.re_coeffs.empty()) {
    truth.re_coeffs = spec.re_coeffs;
  } else {
    truth.re_coeffs.resize(static_cast<std::size_t>(spec.n) * kNumReFamilies * K);
    for (int i = 0; i < spec.n; ++i) {
      for (int f = 0; f < kNumReFamilies; ++f) {
        const auto draw = sample_re_prior(K, spec.re_amplitude[f], spec.re_smoothness[f], rng);
        for (int k = 0; k < K; ++k) {
          truth.re_coeffs[(static_cast<std::size_t>(i) * kNumReFamilies + f) * K + k] =
              draw[k];
        }
      }
    }
  }
  if (!spec.offsets.empty()) {
    truth.offsets = spec.offsets;
  } else {
    truth.offsets.resize(static_cast<std::size_t>(spec.n) * d0);
    for (auto& v : truth.offsets) v = rng.uniform(spec.offset_lo, spec.offset_hi);
  }

  const SplineBasis basis = make_block_basis(spec.T);
  std::vector<double> w(basis.size());
  std::vector<TrialRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n) * spec.T * spec.L);
  for (int i = 0; i < spec.n; ++i) {
    for (int t = 0; t < spec.T; ++t) {
      eval_basis(basis, t + 1.0, w);
      for (int ell = 0; ell < spec.L; ++ell) {
        const int s = spec.balanced_stimuli
                          ? ell % d0
                          : static_cast<int>(rng.uniform() * d0) % d0;
        RaceParams rp;
        rp.delta = truth.offsets[static_cast<std::size_t>(i) * d0 + s];
        rp.drift.resize(d0);
        rp.boundary.resize(d0);
        for (int d = 0; d < d0; ++d) {
          const int x = spec.x_index(d, s);
          double f_mu = 0.0, f_b = 0.0, u_mu = 0.0, u_b = 0.0;
          for (int k = 0; k < K; ++k) {
            if (w[k] == 0.0) continue;
            f_mu += w[k] * truth.expressed(true, x, k);
            f_b += w[k] * truth.expressed(false, x, k);
            u_mu += w[k] * truth.re_coeff(i, re_family(true, d == s), k);
            u_b += w[k] * truth.re_coeff(i, re_family(false, d == s), k);
          }
          rp.drift[d] = std::exp(f_mu + u_mu);
          rp.boundary[d] = std::exp(f_b + u_b);
        }
        const auto [winner, tau] = simulate_trial(rp, rng);
        TrialRecord r;
        r.subject = i;
        r.block = t;
        r.trial = ell + 1;
        r.stimulus = s;
        r.response = winner;
        r.rt = tau;
        records.push_back(r);
      }
    }
  }
  return {Dataset::from_records(std::move(records), d0), truth};
}

// ---------------------------------------------------------------------------
// Recovery scoring against the truth record
// ---------------------------------------------------------------------------

struct CurveScore {
  int d = 0, s = 0;
  bool drift = true;
  double coverage = 0.0;  // fraction of grid points inside the 90% band
  double mare = 0.0;      // mean absolute relative error of the posterior mean
};

struct RecoveryScore {
  std::vector<CurveScore> curves;
  double coclustering_agreement = 0.0;  // Rand-type, over success pairs and blocks
};

// True population curve on the grid: exp{f_x(t) + var_i(u(t))/2} with the
// empirical cross-subject variance of the realized subject curves.
inline std::vector<double> truth_population_curve(const TruthRecord& truth, int d, int s,
                                                  bool drift,
                                                  const std::vector<double>& grid) {
  const SplineBasis basis = make_block_basis(truth.T);
  const int K = truth.K();
  const int x = truth.x_index(d, s);
  const ReFamily fam = re_family(drift, d == s);
  std::vector<double> fixed(K), re(K), u(truth.n), out(grid.size());
  for (int k = 0; k < K; ++k) fixed[k] = truth.expressed(drift, x, k);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (int i = 0; i < truth.n; ++i) {
      for (int k = 0; k < K; ++k) re[k] = truth.re_coeff(i, fam, k);
      u[i] = eval_function(basis, re, grid[g]);
    }
    const double var_u = truth.n >= 2 ? variance(u) : 0.0;
    out[g] = std::exp(eval_function(basis, fixed, grid[g]) + 0.5 * var_u);
  }
  return out;
}

inline bool truth_coclustered(const TruthRecord& truth, int j1, int j2, int t) {
  const int x_max = truth.d0 * truth.d0;
  const int x1 = truth.x_index(j1, j1), x2 = truth.x_index(j2, j2);
  return truth.true_latent[static_cast<std::size_t>(t) * x_max + x1] ==
             truth.true_latent[static_cast<std::size_t>(t) * x_max + x2] &&
         truth.true_latent[static_cast<std::size_t>(t + 1) * x_max + x1] ==
             truth.true_latent[static_cast<std::size_t>(t + 1) * x_max + x2];
}

inline RecoveryScore recovery_score(const TruthRecord& truth, const PosteriorDraws& pd,
                                    int points_per_block = 10) {
  if (truth.T != pd.T || truth.d0 != pd.d0 || truth.n != pd.n) {
    throw DataError("truth and draws describe different designs");
  }
  RecoveryScore score;
  const auto grid = evaluation_grid(pd.T, points_per_block);
  for (const bool drift : {true, false}) {
    for (int d = 0; d < pd.d0; ++d) {
      for (int s = 0; s < pd.d0; ++s) {
        const auto band = population_trajectory(pd, d, s, drift, grid);
        const auto tru = truth_population_curve(truth, d, s, drift, grid);
        CurveScore cs;
        cs.d = d;
        cs.s = s;
        cs.drift = drift;
        int inside = 0;
        double err = 0.0;
        for (std::size_t g = 0; g < grid.size(); ++g) {
          if (band.lower[g] <= tru[g] && tru[g] <= band.upper[g]) ++inside;
          err += std::abs(band.mean[g] - tru[g]) / tru[g];
        }
        cs.coverage = static_cast<double>(inside) / grid.size();
        cs.mare = err / grid.size();
        score.curves.push_back(cs);
      }
    }
  }
  // Modal co-clustering vs the true partition over success pairs and blocks.
  int agree = 0, total = 0;
  for (int t = 0; t < pd.T; ++t) {
    const auto prob = coclustering_matrix(pd, t);
    for (int j1 = 0; j1 < pd.d0; ++j1) {
      for (int j2 = j1 + 1; j2 < pd.d0; ++j2) {
        const bool modal = prob(j1, j2) > 0.5;
        if (modal == truth_coclustered(truth, j1, j2, t)) ++agree;
        ++total;
      }
    }
  }
  score.coclustering_agreement = total > 0 ? static_cast<double>(agree) / total : 1.0;
  return score;
}

// ---------------------------------------------------------------------------
// Scenario and truth (de)serialization
// ---------------------------------------------------------------------------

inline void save_truth(const TruthRecord& truth, const std::string& path) {
  nlohmann::json j;
  j["n"] = truth.n;
  j["T"] = truth.T;
  j["d0"] = truth.d0;
  j["z_true"] = truth.z_true;
  j["true_latent"] = truth.true_latent;
  j["core_mu"] = truth.core_mu;
  j["core_b"] = truth.core_b;
  j["re_coeffs"] = truth.re_coeffs;
  j["offsets"] = truth.offsets;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write truth record: " + path);
  out << j.dump(2) << '\n';
}

inline TruthRecord load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth record: " + path);
  const auto j = nlohmann::json::parse(in);
  TruthRecord truth;
  truth.n = j.at("n");
  truth.T = j.at("T");
  truth.d0 = j.at("d0");
  truth.z_true = j.at("z_true");
  truth.true_latent = j.at("true_latent").get<std::vector<int>>();
  truth.core_mu = j.at("core_mu").get<std::vector<double>>();
  truth.core_b = j.at("core_b").get<std::vector<double>>();
  truth.re_coeffs = j.at("re_coeffs").get<std::vector<double>>();
  truth.offsets = j.at("offsets").get<std::vector<double>>();
  return truth;
}

inline void save_scenario(const ScenarioSpec& spec, const std::string& path) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["n"] = spec.n;
  j["T"] = spec.T;
  j["L"] = spec.L;
  j["d0"] = spec.d0;
  j["z_true"] = spec.z_true;
  j["true_latent"] = spec.true_latent;
  j["core_mu"] = spec.core_mu;
  j["core_b"] = spec.core_b;
  j["re_amplitude"] = spec.re_amplitude;
  j["re_smoothness"] = spec.re_smoothness;
  j["re_coeffs"] = spec.re_coeffs;
  j["offsets"] = spec.offsets;
  j["offset_lo"] = spec.offset_lo;
  j["offset_hi"] = spec.offset_hi;
  j["balanced_stimuli"] = spec.balanced_stimuli;
  j["seed"] = spec.seed;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scenario: " + path);
  out << j.dump(2) << '\n';
}

inline ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenario: " + path);
  const auto j = nlohmann::json::parse(in);
  ScenarioSpec spec;
  spec.name = j.value("name", "custom");
  spec.n = j.at("n");
  spec.T = j.at("T");
  spec.L = j.at("L");
  spec.d0 = j.at("d0");
  spec.z_true = j.at("z_true");
  spec.true_latent = j.at("true_latent").get<std::vector<int>>();
  spec.core_mu = j.at("core_mu").get<std::vector<double>>();
  spec.core_b = j.at("core_b").get<std::vector<double>>();
  if (j.contains("re_amplitude")) spec.re_amplitude = j.at("re_amplitude");
  if (j.contains("re_smoothness")) spec.re_smoothness = j.at("re_smoothness");
  if (j.contains("re_coeffs")) spec.re_coeffs = j.at("re_coeffs").get<std::vector<double>>();
  if (j.contains("offsets")) spec.offsets = j.at("offsets").get<std::vector<double>>();
  spec.offset_lo = j.value("offset_lo", 0.25);
  spec.offset_hi = j.value("offset_hi", 0.35);
  spec.balanced_stimuli = j.value("balanced_stimuli", true);
  spec.seed = j.value("seed", std::uint64_t{1});
  return spec;
}

}  // namespace ddrace

#endif
