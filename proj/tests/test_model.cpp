#include <catch2/catch_amalgamated.hpp>

#include "ddrace/mcmc.hpp"
#include "ddrace/model.hpp"
#include "ddrace/simulator.hpp"

using namespace ddrace;

namespace {

// Small fitted-shape state over a simulated dataset.
struct Fixture {
  Dataset ds;
  FitContext ctx;
  ChainState chain;

  explicit Fixture(std::uint64_t seed = 1, const std::string& scenario = "tiny")
      : ds(make_ds(seed, scenario)), ctx(ds) {
    ModelConfig cfg;
    cfg.z_max = 4;
    chain = init_state(ds, cfg, Rng(seed));
  }

  static Dataset make_ds(std::uint64_t seed, const std::string& scenario) {
    auto spec = builtin_scenario(scenario);
    spec.seed = seed;
    Rng rng(seed);
    return generate_dataset(spec, rng).first;
  }
};

}  // namespace

TEST_CASE("block emission equals the matching dataset likelihood slice") {
  Fixture fx(3);
  ModelState& st = fx.chain.model;
  Rng rng(7);
  // randomize the state a little so the check is not at the symmetric init
  for (auto& v : st.core.mu) v += 0.2 * rng.normal();
  for (auto& v : st.core.b) v += 0.2 * rng.normal();
  for (auto& v : st.re.values) v = 0.1 * rng.normal();

  for (int s = 0; s < st.d0; ++s) {
    for (int t = 0; t < fx.ctx.n_blocks(); ++t) {
      const auto zk = st.latent.column(t, s);
      const auto zk1 = st.latent.column(t + 1, s);
      const double emission = block_emission_log_lik(fx.ctx, st, s, t, zk, zk1);
      const double slice = dataset_log_lik(fx.ctx, st, fx.ds.trials_for(s, t));
      CHECK(emission == Catch::Approx(slice).margin(1e-10));
    }
  }
}

TEST_CASE("block emission of an empty block-stimulus cell is zero") {
  // build a dataset where stimulus 2 never appears in block 2
  std::vector<TrialRecord> recs;
  Rng rng(5);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 2; ++t) {
      for (int ell = 0; ell < 6; ++ell) {
        TrialRecord r;
        r.subject = i;
        r.block = t;
        r.trial = ell + 1;
        r.stimulus = (t == 1) ? 0 : (ell % 2);
        r.response = static_cast<int>(rng.uniform() * 2) % 2;
        r.rt = rng.uniform(0.4, 2.0);
        recs.push_back(r);
      }
    }
  }
  const Dataset ds = Dataset::from_records(recs);
  FitContext ctx(ds);
  ModelConfig cfg;
  cfg.z_max = 2;
  auto chain = init_state(ds, cfg, Rng(1));
  const auto zk = chain.model.latent.column(1, 1);
  const auto zk1 = chain.model.latent.column(2, 1);
  CHECK(block_emission_log_lik(ctx, chain.model, 1, 1, zk, zk1) == 0.0);
}

TEST_CASE("perturbed state vectors match a by-hand recomputation") {
  Fixture fx(11);
  ModelState& st = fx.chain.model;
  Rng rng(13);
  for (auto& v : st.re.values) v = 0.15 * rng.normal();

  const int s = 1, t = 0;
  std::vector<int> zk = st.latent.column(t, s);
  std::vector<int> zk1 = st.latent.column(t + 1, s);
  zk[0] = (zk[0] + 1) % st.core.z_max;
  zk1[1] = (zk1[1] + 3) % st.core.z_max;

  double manual = 0.0;
  for (int idx : fx.ds.trials_for(s, t)) {
    const auto& r = fx.ds.records()[idx];
    RaceParams rp;
    rp.delta = st.offset(r.subject, s);
    for (int d = 0; d < st.d0; ++d) {
      const double fmu = fx.ctx.w1[t] * st.core.mu_at(t, zk[d]) +
                         fx.ctx.w2[t] * st.core.mu_at(t + 1, zk1[d]);
      const double fb = fx.ctx.w1[t] * st.core.b_at(t, zk[d]) +
                        fx.ctx.w2[t] * st.core.b_at(t + 1, zk1[d]);
      const double umu = re_block_value(fx.ctx, st, r.subject, re_family(true, d == s), t);
      const double ub = re_block_value(fx.ctx, st, r.subject, re_family(false, d == s), t);
      rp.drift.push_back(std::exp(fmu + umu));
      rp.boundary.push_back(std::exp(fb + ub));
    }
    manual += race_log_lik(rp, r.response, r.rt);
  }
  CHECK(block_emission_log_lik(fx.ctx, st, s, t, zk, zk1) ==
        Catch::Approx(manual).margin(1e-10));
}

TEST_CASE("dataset likelihood: subsets, additivity and the naive oracle") {
  Fixture fx(17);
  const ModelState& st = fx.chain.model;

  CHECK(dataset_log_lik(fx.ctx, st, std::vector<int>{}) == 0.0);

  const std::vector<int> one{3};
  CHECK(dataset_log_lik(fx.ctx, st, one) ==
        Catch::Approx(trial_log_lik(fx.ctx, st, fx.ds.records()[3])).margin(1e-13));

  // naive unvectorized oracle over the whole dataset
  double naive = 0.0;
  for (const auto& r : fx.ds.records()) {
    for (int d = 0; d < st.d0; ++d) {
      const AccumulatorParams acc = trial_accumulator(fx.ctx, st, r.subject, d, r.stimulus,
                                                      r.block);
      naive += d == r.response ? ig_log_pdf(acc, r.rt) : ig_log_survival(acc, r.rt);
    }
  }
  CHECK(dataset_log_lik(fx.ctx, st) == Catch::Approx(naive).margin(1e-10));

  // parameter-surface form agrees with the state-bound form
  const double via_surface = dataset_log_lik(fx.ds, [&](int i, int d, int s, int t) {
    return trial_accumulator(fx.ctx, st, i, d, s, t);
  });
  CHECK(via_surface == Catch::Approx(dataset_log_lik(fx.ctx, st)).margin(1e-10));
}

TEST_CASE("matching latent pairs force equal curves at the block") {
  Fixture fx(19);
  ModelState& st = fx.chain.model;
  Rng rng(23);
  for (auto& v : st.core.mu) v = rng.normal();

  // make combinations (0,0) and (1,1) agree at locations t and t+1 only
  const int t = 1;
  auto z = st.latent;
  for (int k = 0; k < st.K(); ++k) {
    z.at(k, 0, 0) = (k == t || k == t + 1) ? 1 : 0;
    z.at(k, 1, 1) = (k == t || k == t + 1) ? 1 : 2;
  }
  const auto [mu_a, b_a] = expressed_coeffs(z, st.core, 0, 0);
  const auto [mu_b, b_b] = expressed_coeffs(z, st.core, 1, 1);
  const double fa = eval_function(st.basis, mu_a, t + 1.0);
  const double fb = eval_function(st.basis, mu_b, t + 1.0);
  CHECK(fa == fb);  // exact equality, not approximate
  // and they differ at the neighboring block
  CHECK(eval_function(st.basis, mu_a, t + 2.0) !=
        eval_function(st.basis, mu_b, t + 2.0));
}

TEST_CASE("core pair potentials reproduce the full core prior") {
  Fixture fx(29);
  ModelState& st = fx.chain.model;
  Rng rng(31);
  for (auto& v : st.core.mu) v = rng.normal();
  for (auto& v : st.core.b) v = rng.normal();
  auto& latent = st.latent;
  for (int k = 0; k < st.K(); ++k) {
    for (int x = 0; x < latent.n_combinations(); ++x) {
      latent.at_x(k, x) = static_cast<int>(rng.uniform() * st.core.z_max) % st.core.z_max;
    }
  }

  for (int s = 0; s < st.d0; ++s) {
    const detail::CorePairPotentials pot(st, s);
    double via_potentials = pot.unary0(latent.column(0, s));
    for (int k = 1; k < st.K(); ++k) {
      via_potentials += pot.pairwise(k, latent.column(k - 1, s), latent.column(k, s));
    }
    const double direct = core_log_prior(st.core.mu, latent, st.hyper_mu()) +
                          core_log_prior(st.core.b, latent, st.hyper_b());
    CHECK(via_potentials == Catch::Approx(direct).epsilon(1e-12));
  }
}
