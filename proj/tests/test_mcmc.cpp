#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>

#include "ddrace/mcmc.hpp"
#include "ddrace/simulator.hpp"
#include "ddrace/store.hpp"
#include "support/reference_sampler.hpp"

using namespace ddrace;
namespace fs = std::filesystem;

namespace {

// The smallest model exercised by the exactness tests: d0=2, T=2 (K=3),
// n=2, L=10.
ScenarioSpec tiny_exactness_scenario() {
  ScenarioSpec spec;
  spec.name = "tiny-exact";
  spec.n = 2;
  spec.T = 2;
  spec.L = 10;
  spec.d0 = 2;
  spec.z_true = 2;
  const int K = spec.K();
  spec.true_latent.assign(static_cast<std::size_t>(K) * 4, 1);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < 2; ++j) {
      spec.true_latent[static_cast<std::size_t>(k) * 4 + spec.x_index(j, j)] = 0;
    }
  }
  spec.core_mu.assign(static_cast<std::size_t>(K) * 2, 0.0);
  spec.core_b.assign(static_cast<std::size_t>(K) * 2, 0.0);
  for (int k = 0; k < K; ++k) {
    spec.core_mu[k * 2 + 0] = std::log(2.0) + 0.1 * k;
    spec.core_mu[k * 2 + 1] = 0.0;
    spec.core_b[k * 2 + 0] = std::log(1.5);
    spec.core_b[k * 2 + 1] = std::log(1.8);
  }
  spec.re_amplitude = {0.02, 0.02, 0.02, 0.02};
  spec.re_smoothness = {0.005, 0.005, 0.005, 0.005};
  spec.offset_lo = 0.15;
  spec.offset_hi = 0.25;
  return spec;
}

Dataset tiny_dataset(std::uint64_t seed) {
  auto spec = tiny_exactness_scenario();
  Rng rng(seed);
  return generate_dataset(spec, rng).first;
}

int encode_config(const ModelState& st, int s) {
  int code = 0;
  int base = 1;
  for (int k = 0; k < st.K(); ++k) {
    for (int d = 0; d < st.d0; ++d) {
      code += st.latent.at(k, d, s) * base;
      base *= st.core.z_max;
    }
  }
  return code;
}

}  // namespace

TEST_CASE("initialization follows the clustering and moment rules") {
  auto spec = builtin_scenario("small");
  spec.re_amplitude = {0.0, 0.0, 0.0, 0.0};  // no subject noise for the moment check
  spec.re_smoothness = {0.0, 0.0, 0.0, 0.0};
  spec.re_coeffs.assign(static_cast<std::size_t>(spec.n) * kNumReFamilies * spec.K(), 0.0);
  Rng rng(5);
  auto [ds, truth] = generate_dataset(spec, rng);
  ModelConfig cfg;
  const auto chain = init_state(ds, cfg, Rng(7));
  const ModelState& st = chain.model;

  CHECK(st.K() == ds.n_blocks() + 1);

  // success curves in distinct clusters, failures shared
  for (int k = 0; k < st.K(); ++k) {
    for (int j = 0; j < st.d0; ++j) CHECK(st.latent.at(k, j, j) == j);
    for (int d = 0; d < st.d0; ++d) {
      for (int s = 0; s < st.d0; ++s) {
        if (d != s) CHECK(st.latent.at(k, d, s) == st.d0);
      }
    }
  }

  // offsets strictly inside (0, min rt)
  for (int i = 0; i < st.n; ++i) {
    for (int s = 0; s < st.d0; ++s) {
      CHECK(st.offset(i, s) > 0.0);
      CHECK(st.offset(i, s) < ds.min_rt(i, s));
    }
  }

  // expressed initial drift within a factor of 3 of the truth per success cell
  FitContext ctx(ds);
  for (int j = 0; j < st.d0; ++j) {
    for (int t = 0; t < ds.n_blocks(); ++t) {
      const double init_drift = std::exp(expressed_block_value(ctx, st, true, j, j, t));
      double truth_drift = 0.0;
      std::vector<double> w(st.basis.size());
      eval_basis(st.basis, t + 1.0, w);
      for (int k = 0; k < st.K(); ++k) {
        truth_drift += w[k] * truth.expressed(true, truth.x_index(j, j), k);
      }
      truth_drift = std::exp(truth_drift);
      CHECK(init_drift > truth_drift / 3.0);
      CHECK(init_drift < truth_drift * 3.0);
    }
  }
}

TEST_CASE("z_max is clamped to the number of combinations") {
  const Dataset ds = tiny_dataset(9);
  ModelConfig cfg;
  cfg.z_max = 8;  // d0 = 2 allows at most 4
  const auto chain = init_state(ds, cfg, Rng(1));
  CHECK(chain.model.core.z_max == 4);
  REQUIRE_FALSE(chain.warnings.empty());
}

TEST_CASE("identical seeds give bit-identical chains, independent of threads") {
  auto spec = tiny_exactness_scenario();
  Rng rng(21);
  const Dataset ds = generate_dataset(spec, rng).first;
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;
  cfg.iterations = 60;
  cfg.burn_in = 20;
  cfg.thin = 2;
  cfg.seed = 123;
  cfg.checkpoint_every = 0;

  cfg.threads = 1;
  const auto a = run_chain(ds, cfg);
  const auto b = run_chain(ds, cfg);
  cfg.threads = 2;
  const auto c = run_chain(ds, cfg);

  REQUIRE(a.draws.size() == b.draws.size());
  REQUIRE(a.draws.size() == c.draws.size());
  for (std::size_t m = 0; m < a.draws.size(); ++m) {
    CHECK(a.draws[m].expressed_mu == b.draws[m].expressed_mu);
    CHECK(a.draws[m].expressed_mu == c.draws[m].expressed_mu);
    CHECK(a.draws[m].latent == b.draws[m].latent);
    CHECK(a.draws[m].latent == c.draws[m].latent);
    CHECK(a.draws[m].offsets == c.draws[m].offsets);
    CHECK(a.draws[m].re_coeffs == c.draws[m].re_coeffs);
  }
}

TEST_CASE("adaptive scales freeze at the end of burn-in") {
  const Dataset ds = tiny_dataset(33);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.iterations = 160;
  cfg.burn_in = 80;
  cfg.thin = 1;
  cfg.batch_size = 10;
  cfg.checkpoint_every = 0;
  ChainRunner runner(ds, cfg);
  std::map<std::uint64_t, double> at_freeze;
  while (!runner.done()) {
    runner.step();
    if (runner.iteration() == cfg.burn_in) {
      for (const auto& [k, sc] : runner.chain().scales.entries) at_freeze[k] = sc.log_scale;
    }
  }
  for (const auto& [k, sc] : runner.chain().scales.entries) {
    CHECK(sc.log_scale == at_freeze.at(k));
    CHECK(sc.frozen);
  }
}

TEST_CASE("every stored draw satisfies the state invariants") {
  const Dataset ds = tiny_dataset(41);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 1;
  cfg.iterations = 120;
  cfg.burn_in = 40;
  cfg.thin = 2;
  cfg.checkpoint_every = 0;
  const auto pd = run_chain(ds, cfg);
  CHECK(pd.draws.size() == 40);
  for (const auto& d : pd.draws) {
    CHECK(d.smooth_mu > 0.0);
    CHECK(d.smooth_b > 0.0);
    for (int f = 0; f < kNumReFamilies; ++f) {
      CHECK(d.re_amplitude[f] > 0.0);
      CHECK(d.re_smoothness[f] > 0.0);
    }
    for (int z : d.latent) {
      CHECK(z >= 0);
      CHECK(z < 2);
    }
    for (int i = 0; i < pd.n; ++i) {
      for (int s = 0; s < pd.d0; ++s) {
        const double off = d.offsets[static_cast<std::size_t>(i) * pd.d0 + s];
        CHECK(off > 0.0);
        CHECK(off < ds.min_rt(i, s));
      }
    }
  }
}

TEST_CASE("flat likelihood turns the offset update into a uniform sampler") {
  const Dataset ds = tiny_dataset(55);
  ModelConfig cfg;
  cfg.z_max = 2;
  auto chain = init_state(ds, cfg, Rng(3));
  SweepOptions opt;
  opt.likelihood_scale = 0.0;
  const double dmax = ds.min_rt(0, 0);
  std::vector<double> draws;
  const int n_sweeps = 30000;
  for (int it = 0; it < n_sweeps; ++it) {
    update_offsets(FitContext(ds), chain, opt);
    draws.push_back(chain.model.offset(0, 0));
  }
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double emp = static_cast<double>(i + 1) / draws.size();
    CHECK(draws[i] > 0.0);
    CHECK(draws[i] < dmax);
    ks = std::max(ks, std::abs(emp - draws[i] / dmax));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("prior-only sweeps recover the priors") {
  const Dataset ds = tiny_dataset(77);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;
  cfg.seed = 11;
  FitContext ctx(ds);
  auto chain = init_state(ds, cfg, Rng(cfg.seed));
  SweepOptions opt;
  opt.likelihood_scale = 0.0;
  opt.check_finite = false;
  std::vector<double> smooth_draws, amp_draws;
  Eigen::MatrixXd mean_rows = Eigen::MatrixXd::Zero(2, 2);
  const int n_sweeps = 30000;
  for (int it = 0; it < n_sweeps; ++it) {
    sweep(ctx, chain, cfg, opt);
    smooth_draws.push_back(chain.model.smooth_mu);
    amp_draws.push_back(chain.model.re_var.amplitude[0]);
    mean_rows += chain.model.trans.pi_correct / n_sweeps;
  }
  // half-Cauchy medians near 1
  CHECK(quantile(smooth_draws, 0.5) == Catch::Approx(1.0).epsilon(0.10));
  CHECK(quantile(amp_draws, 0.5) == Catch::Approx(1.0).epsilon(0.10));
  // symmetric Dirichlet rows average 1/z_max
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      CHECK(mean_rows(r, c) == Catch::Approx(0.5).margin(0.02));
    }
  }
}

TEST_CASE("latent chain samples its prior when the likelihood is flat") {
  const Dataset ds = tiny_dataset(99);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;
  FitContext ctx(ds);
  auto chain = init_state(ds, cfg, Rng(5));
  // fix an asymmetric transition matrix and keep it fixed
  chain.model.trans.pi_correct << 0.8, 0.2, 0.35, 0.65;
  chain.model.trans.pi_incorrect << 0.55, 0.45, 0.25, 0.75;
  SweepOptions opt;
  opt.likelihood_scale = 0.0;
  opt.check_finite = false;
  opt.update_transitions = false;
  opt.update_concentration = false;
  opt.update_offsets = false;
  opt.update_re_coeffs = false;
  opt.update_re_variances = false;
  opt.update_smoothness = false;
  // core updates stay on so (z, beta*) jointly follow the prior

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(2, 2);
  const int n_sweeps = 40000;
  for (int it = 0; it < n_sweeps; ++it) {
    sweep(ctx, chain, cfg, opt);
    const auto& st = chain.model;
    for (int k = 0; k + 1 < st.K(); ++k) {
      for (int j = 0; j < st.d0; ++j) {
        counts(st.latent.at(k, j, j), st.latent.at(k + 1, j, j)) += 1.0;
      }
    }
  }
  for (int r = 0; r < 2; ++r) {
    const double row_total = counts.row(r).sum();
    for (int c = 0; c < 2; ++c) {
      CHECK(counts(r, c) / row_total ==
            Catch::Approx(chain.model.trans.pi_correct(r, c)).margin(0.02));
    }
  }
}

TEST_CASE("hamming ball sweeps match exact enumeration on the tiny model") {
  const Dataset ds = tiny_dataset(111);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;  // full space
  FitContext ctx(ds);
  auto chain = init_state(ds, cfg, Rng(7));
  // stir the continuous state, then freeze it
  {
    SweepOptions warm;
    for (int it = 0; it < 50; ++it) sweep(ctx, chain, cfg, warm);
  }
  ModelState& st = chain.model;
  const int s = 0;
  const int n_configs = 64;  // (z_max^{d0})^K = 4^3

  // exact conditional over the 64 configurations of stimulus s
  std::vector<double> log_w(n_configs);
  const auto saved_cols = st.latent;
  for (int code = 0; code < n_configs; ++code) {
    int c = code;
    for (int k = 0; k < st.K(); ++k) {
      std::vector<int> col(st.d0);
      for (int d = 0; d < st.d0; ++d) {
        col[d] = c % 2;
        c /= 2;
      }
      st.latent.set_column(k, s, col);
    }
    double lp = core_log_prior(st.core.mu, st.latent, st.hyper_mu()) +
                core_log_prior(st.core.b, st.latent, st.hyper_b());
    for (int d = 0; d < st.d0; ++d) {
      const auto& pi = st.trans.matrix(d == s);
      for (int k = 0; k + 1 < st.K(); ++k) {
        lp += std::log(pi(st.latent.at(k, d, s), st.latent.at(k + 1, d, s)));
      }
    }
    for (int t = 0; t < ctx.n_blocks(); ++t) {
      lp += block_emission_log_lik(ctx, st, s, t, st.latent.column(t, s),
                                   st.latent.column(t + 1, s));
    }
    log_w[code] = lp;
  }
  st.latent = saved_cols;
  const double lse = logsumexp(log_w);
  std::vector<double> exact(n_configs);
  for (int c = 0; c < n_configs; ++c) exact[c] = std::exp(log_w[c] - lse);

  auto run_tv = [&](double gamma) {
    ModelState work = chain.model;
    Rng rng(99);
    std::vector<double> freq(n_configs, 0.0);
    const int n_sweeps = 30000;
    for (int it = 0; it < n_sweeps; ++it) {
      sample_latent_states_impl(ctx, work, s, cfg.hamming_radius, gamma, 1.0, rng);
      freq[encode_config(work, s)] += 1.0 / n_sweeps;
    }
    double tv = 0.0;
    for (int c = 0; c < n_configs; ++c) tv += std::abs(freq[c] - exact[c]);
    return 0.5 * tv;
  };

  CHECK(run_tv(0.5) < 0.05);  // g = square root (the default)
  CHECK(run_tv(1.0) < 0.05);  // g = identity has the same stationary law
}

TEST_CASE("full chain matches an independent vanilla sampler on the tiny model") {
  const Dataset ds = tiny_dataset(131);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;
  cfg.seed = 17;
  FitContext ctx(ds);

  const int K = ds.n_blocks() + 1;
  const int n_q = 4 * K;  // expressed drift coefficients per x and k
  auto collect = [&](auto&& stepper, ModelState& st, int sweeps, int burn,
                     std::vector<std::vector<double>>& series) {
    series.assign(n_q, {});
    for (int it = 0; it < sweeps; ++it) {
      stepper();
      if (it < burn) continue;
      for (int x = 0; x < 4; ++x) {
        const int d = x / 2, s = x % 2;
        for (int k = 0; k < K; ++k) {
          series[x * K + k].push_back(st.core.mu_at(k, st.latent.at(k, d, s)));
        }
      }
    }
  };

  auto batch_se = [](const std::vector<double>& v, double& mean_out) {
    const int B = 40;
    const std::size_t len = v.size() / B;
    std::vector<double> means(B, 0.0);
    for (int b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < len; ++i) means[b] += v[b * len + i] / len;
    }
    mean_out = mean(means);
    return std::sqrt(variance(means) / B);
  };

  // production sampler
  auto chain = init_state(ds, cfg, Rng(cfg.seed));
  std::vector<std::vector<double>> main_series;
  {
    SweepOptions opt;
    collect([&] { sweep(ctx, chain, cfg, opt); }, chain.model, 24000, 4000, main_series);
  }

  // reference sampler from a different starting point
  auto init2 = init_state(ds, cfg, Rng(cfg.seed + 1));
  init2.rng = Rng(4242);
  testsupport::ReferenceSampler ref(ds, cfg, init2);
  std::vector<std::vector<double>> ref_series;
  collect([&] { ref.sweep(); }, ref.state(), 24000, 4000, ref_series);

  int failures = 0;
  for (int q = 0; q < n_q; ++q) {
    double m1, m2;
    const double se1 = batch_se(main_series[q], m1);
    const double se2 = batch_se(ref_series[q], m2);
    const double tol = 2.0 * std::sqrt(se1 * se1 + se2 * se2);
    INFO("quantity " << q << ": " << m1 << " vs " << m2 << " +- " << tol);
    if (std::abs(m1 - m2) > tol) ++failures;
  }
  // allow one marginal exceedance across the 12 quantities
  CHECK(failures <= 1);
}

TEST_CASE("checkpoint replay reproduces an uninterrupted run") {
  const Dataset ds = tiny_dataset(151);
  ModelConfig cfg;
  cfg.z_max = 2;
  cfg.hamming_radius = 2;
  cfg.iterations = 120;
  cfg.burn_in = 40;
  cfg.thin = 2;
  cfg.seed = 5;
  cfg.checkpoint_every = 50;

  const auto dir_a = fs::temp_directory_path() / "ddrace_run_a";
  const auto dir_b = fs::temp_directory_path() / "ddrace_run_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  const auto full = fit_run(ds, cfg, dir_a.string());

  // emulate a kill at iteration 100: keep only the checkpoint, then resume
  fs::create_directories(dir_b);
  fs::copy_file(dir_a / "checkpoint-100.json", dir_b / "checkpoint-100.json");
  const auto resumed = fit_run(ds, cfg, dir_b.string(), true);

  REQUIRE(full.draws.size() == resumed.draws.size());
  for (std::size_t m = 0; m < full.draws.size(); ++m) {
    CHECK(full.draws[m].expressed_mu == resumed.draws[m].expressed_mu);
    CHECK(full.draws[m].latent == resumed.draws[m].latent);
    CHECK(full.draws[m].offsets == resumed.draws[m].offsets);
  }

  // the draw files on disk are byte-identical
  for (const char* name : {"expressed_drift.csv", "latent_states.csv", "offsets.csv",
                           "variances.csv", "re_coeffs.csv"}) {
    std::ifstream fa(dir_a / "draws" / name), fb(dir_b / "draws" / name);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("non-finite likelihood aborts") {
  const Dataset ds = tiny_dataset(171);
  ModelConfig cfg;
  cfg.z_max = 2;
  FitContext ctx(ds);
  auto chain = init_state(ds, cfg, Rng(1));
  chain.model.offset(0, 0) = ds.min_rt(0, 0) + 1.0;  // support violation
  SweepOptions opt;
  opt.update_offsets = false;
  opt.update_core = false;
  opt.update_latents = false;
  opt.update_transitions = false;
  opt.update_concentration = false;
  opt.update_smoothness = false;
  opt.update_re_coeffs = false;
  opt.update_re_variances = false;
  CHECK_THROWS_AS(sweep(ctx, chain, cfg, opt), NumericalError);
}
