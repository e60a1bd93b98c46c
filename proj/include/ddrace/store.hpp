#ifndef DDRACE_STORE_HPP
#define DDRACE_STORE_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddrace/mcmc.hpp"

namespace ddrace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON encodings. Doubles round-trip exactly through nlohmann's shortest
// representation, which checkpoint replay relies on.
// ---------------------------------------------------------------------------

inline json config_to_json(const ModelConfig& cfg) {
  return json{{"z_max", cfg.z_max},
              {"hamming_radius", cfg.hamming_radius},
              {"iterations", cfg.iterations},
              {"burn_in", cfg.burn_in},
              {"thin", cfg.thin},
              {"batch_size", cfg.batch_size},
              {"target_accept", cfg.target_accept},
              {"a_alpha", cfg.a_alpha},
              {"b_alpha", cfg.b_alpha},
              {"balancing_power", cfg.balancing_power},
              {"seed", cfg.seed},
              {"threads", cfg.threads},
              {"checkpoint_every", cfg.checkpoint_every},
              {"grid_per_block", cfg.grid_per_block}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.z_max = j.at("z_max");
  cfg.hamming_radius = j.at("hamming_radius");
  cfg.iterations = j.at("iterations");
  cfg.burn_in = j.at("burn_in");
  cfg.thin = j.at("thin");
  cfg.batch_size = j.at("batch_size");
  cfg.target_accept = j.at("target_accept");
  cfg.a_alpha = j.at("a_alpha");
  cfg.b_alpha = j.at("b_alpha");
  cfg.balancing_power = j.at("balancing_power");
  cfg.seed = j.at("seed");
  cfg.threads = j.at("threads");
  cfg.checkpoint_every = j.at("checkpoint_every");
  cfg.grid_per_block = j.at("grid_per_block");
  return cfg;
}

namespace detail {

inline json model_to_json(const ModelState& st) {
  json j;
  j["basis"] = {{"a", st.basis.a}, {"b", st.basis.b}, {"n_sub", st.basis.n_sub}};
  j["n"] = st.n;
  j["d0"] = st.d0;
  j["core"] = {{"K", st.core.K}, {"z_max", st.core.z_max}, {"mu", st.core.mu}, {"b", st.core.b}};
  j["latent"] = {{"K", st.latent.K}, {"d0", st.latent.d0}, {"z_max", st.latent.z_max},
                 {"z", st.latent.z}};
  std::vector<double> pc(st.trans.pi_correct.data(),
                         st.trans.pi_correct.data() + st.trans.pi_correct.size());
  std::vector<double> pi(st.trans.pi_incorrect.data(),
                         st.trans.pi_incorrect.data() + st.trans.pi_incorrect.size());
  j["trans"] = {{"z_max", st.trans.z_max},
                {"pi_correct", pc},
                {"pi_incorrect", pi},
                {"alpha_correct", st.trans.alpha_correct},
                {"alpha_incorrect", st.trans.alpha_incorrect}};
  j["re"] = {{"n", st.re.n}, {"K", st.re.K}, {"values", st.re.values}};
  j["re_var"] = {{"amplitude", st.re_var.amplitude}, {"smoothness", st.re_var.smoothness}};
  j["smooth_mu"] = st.smooth_mu;
  j["smooth_b"] = st.smooth_b;
  j["offsets"] = st.offsets;
  j["mu_beta0"] = st.mu_beta0;
  j["sigma2_beta0"] = st.sigma2_beta0;
  j["sigma2_init"] = st.sigma2_init;
  return j;
}

inline ModelState model_from_json(const json& j) {
  ModelState st;
  st.basis.a = j.at("basis").at("a");
  st.basis.b = j.at("basis").at("b");
  st.basis.n_sub = j.at("basis").at("n_sub");
  st.n = j.at("n");
  st.d0 = j.at("d0");
  st.core.K = j.at("core").at("K");
  st.core.z_max = j.at("core").at("z_max");
  st.core.mu = j.at("core").at("mu").get<std::vector<double>>();
  st.core.b = j.at("core").at("b").get<std::vector<double>>();
  st.latent.K = j.at("latent").at("K");
  st.latent.d0 = j.at("latent").at("d0");
  st.latent.z_max = j.at("latent").at("z_max");
  st.latent.z = j.at("latent").at("z").get<std::vector<int>>();
  st.trans.z_max = j.at("trans").at("z_max");
  const auto pc = j.at("trans").at("pi_correct").get<std::vector<double>>();
  const auto pi = j.at("trans").at("pi_incorrect").get<std::vector<double>>();
  st.trans.pi_correct = Eigen::Map<const Eigen::MatrixXd>(pc.data(), st.trans.z_max,
                                                          st.trans.z_max);
  st.trans.pi_incorrect = Eigen::Map<const Eigen::MatrixXd>(pi.data(), st.trans.z_max,
                                                            st.trans.z_max);
  st.trans.alpha_correct = j.at("trans").at("alpha_correct");
  st.trans.alpha_incorrect = j.at("trans").at("alpha_incorrect");
  st.re.n = j.at("re").at("n");
  st.re.K = j.at("re").at("K");
  st.re.values = j.at("re").at("values").get<std::vector<double>>();
  st.re_var.amplitude = j.at("re_var").at("amplitude");
  st.re_var.smoothness = j.at("re_var").at("smoothness");
  st.smooth_mu = j.at("smooth_mu");
  st.smooth_b = j.at("smooth_b");
  st.offsets = j.at("offsets").get<std::vector<double>>();
  st.mu_beta0 = j.at("mu_beta0");
  st.sigma2_beta0 = j.at("sigma2_beta0");
  st.sigma2_init = j.at("sigma2_init");
  return st;
}

inline json scales_to_json(const AdaptiveScaleTable& t) {
  json entries = json::array();
  for (const auto& [key, sc] : t.entries) {
    entries.push_back(json{{"key", key},
                           {"log_scale", sc.log_scale},
                           {"accepted", sc.accepted},
                           {"attempts", sc.attempts},
                           {"batches", sc.batches},
                           {"total_accepted", sc.total_accepted},
                           {"total_attempts", sc.total_attempts},
                           {"frozen", sc.frozen},
                           {"componentwise", sc.componentwise}});
  }
  return json{{"batch_size", t.batch_size}, {"target", t.target}, {"entries", entries}};
}

inline AdaptiveScaleTable scales_from_json(const json& j) {
  AdaptiveScaleTable t;
  t.batch_size = j.at("batch_size");
  t.target = j.at("target");
  for (const auto& e : j.at("entries")) {
    AdaptiveScale sc;
    sc.log_scale = e.at("log_scale");
    sc.accepted = e.at("accepted");
    sc.attempts = e.at("attempts");
    sc.batches = e.at("batches");
    sc.total_accepted = e.at("total_accepted");
    sc.total_attempts = e.at("total_attempts");
    sc.frozen = e.at("frozen");
    sc.componentwise = e.at("componentwise");
    t.entries[e.at("key").get<std::uint64_t>()] = sc;
  }
  return t;
}

inline json draw_to_json(const ParameterDraw& d) {
  return json{{"expressed_mu", d.expressed_mu},
              {"expressed_b", d.expressed_b},
              {"latent", d.latent},
              {"offsets", d.offsets},
              {"re_coeffs", d.re_coeffs},
              {"smooth_mu", d.smooth_mu},
              {"smooth_b", d.smooth_b},
              {"re_amplitude", d.re_amplitude},
              {"re_smoothness", d.re_smoothness},
              {"alpha_correct", d.alpha_correct},
              {"alpha_incorrect", d.alpha_incorrect}};
}

inline ParameterDraw draw_from_json(const json& j) {
  ParameterDraw d;
  d.expressed_mu = j.at("expressed_mu").get<std::vector<double>>();
  d.expressed_b = j.at("expressed_b").get<std::vector<double>>();
  d.latent = j.at("latent").get<std::vector<int>>();
  d.offsets = j.at("offsets").get<std::vector<double>>();
  d.re_coeffs = j.at("re_coeffs").get<std::vector<double>>();
  d.smooth_mu = j.at("smooth_mu");
  d.smooth_b = j.at("smooth_b");
  d.re_amplitude = j.at("re_amplitude");
  d.re_smoothness = j.at("re_smoothness");
  d.alpha_correct = j.at("alpha_correct");
  d.alpha_incorrect = j.at("alpha_incorrect");
  return d;
}

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoints: the complete runner state, so a killed run resumes to the
// same bytes as an uninterrupted one.
// ---------------------------------------------------------------------------

struct ChainRunnerSerializer {
  static json save(const ChainRunner& runner) {
    json j;
    j["iteration"] = runner.chain_.iteration;
    std::ostringstream rng_state;
    runner.chain_.rng.save(rng_state);
    j["rng"] = rng_state.str();
    j["model"] = detail::model_to_json(runner.chain_.model);
    j["scales"] = detail::scales_to_json(runner.chain_.scales);
    j["warnings"] = runner.chain_.warnings;
    json draws = json::array();
    for (const auto& d : runner.draws_.draws) draws.push_back(detail::draw_to_json(d));
    j["draws"] = draws;
    j["config"] = config_to_json(runner.cfg_);
    return j;
  }

  static void restore(ChainRunner& runner, const json& j) {
    runner.chain_.iteration = j.at("iteration");
    std::istringstream rng_state(j.at("rng").get<std::string>());
    runner.chain_.rng.load(rng_state);
    runner.chain_.model = detail::model_from_json(j.at("model"));
    runner.chain_.scales = detail::scales_from_json(j.at("scales"));
    runner.chain_.warnings = j.at("warnings").get<std::vector<std::string>>();
    runner.draws_.draws.clear();
    for (const auto& d : j.at("draws")) {
      runner.draws_.draws.push_back(detail::draw_from_json(d));
    }
    runner.draws_.warnings = runner.chain_.warnings;
  }
};

// ---------------------------------------------------------------------------
// Run directory layout:
//   config.json, meta.json, checkpoint-<iter>.json (latest kept),
//   draws/<family>.csv (columnar, decimal text, one file per family)
// ---------------------------------------------------------------------------

inline void save_draw_files(const PosteriorDraws& pd, const std::string& run_dir) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(run_dir) / "draws";
  fs::create_directories(dir);
  const int K = pd.K;

  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw DataError(std::string("cannot write draws file ") + name);
    return out;
  };

  {
    auto mu = open("expressed_drift.csv");
    auto bd = open("expressed_boundary.csv");
    mu << "draw,response,stimulus,k,value\n";
    bd << "draw,response,stimulus,k,value\n";
    for (std::size_t m = 0; m < pd.draws.size(); ++m) {
      for (int d = 0; d < pd.d0; ++d) {
        for (int s = 0; s < pd.d0; ++s) {
          const int x = pd.x_index(d, s);
          for (int k = 0; k < K; ++k) {
            mu << m << ',' << (d + 1) << ',' << (s + 1) << ',' << (k + 1) << ','
               << detail::fmt17(pd.draws[m].expressed_mu[static_cast<std::size_t>(x) * K + k])
               << '\n';
            bd << m << ',' << (d + 1) << ',' << (s + 1) << ',' << (k + 1) << ','
               << detail::fmt17(pd.draws[m].expressed_b[static_cast<std::size_t>(x) * K + k])
               << '\n';
          }
        }
      }
    }
  }
  {
    auto out = open("latent_states.csv");
    out << "draw,response,stimulus,k,state\n";
    const int x_max = pd.n_combinations();
    for (std::size_t m = 0; m < pd.draws.size(); ++m) {
      for (int d = 0; d < pd.d0; ++d) {
        for (int s = 0; s < pd.d0; ++s) {
          const int x = pd.x_index(d, s);
          for (int k = 0; k < K; ++k) {
            out << m << ',' << (d + 1) << ',' << (s + 1) << ',' << (k + 1) << ','
                << (pd.draws[m].latent[static_cast<std::size_t>(k) * x_max + x] + 1) << '\n';
          }
        }
      }
    }
  }
  {
    auto out = open("offsets.csv");
    out << "draw,subject,stimulus,value\n";
    for (std::size_t m = 0; m < pd.draws.size(); ++m) {
      for (int i = 0; i < pd.n; ++i) {
        for (int s = 0; s < pd.d0; ++s) {
          out << m << ',' << (i + 1) << ',' << (s + 1) << ','
              << detail::fmt17(pd.draws[m].offsets[static_cast<std::size_t>(i) * pd.d0 + s])
              << '\n';
        }
      }
    }
  }
  {
    auto out = open("re_coeffs.csv");
    out << "draw,subject,family,k,value\n";
    for (std::size_t m = 0; m < pd.draws.size(); ++m) {
      for (int i = 0; i < pd.n; ++i) {
        for (int f = 0; f < kNumReFamilies; ++f) {
          for (int k = 0; k < K; ++k) {
            out << m << ',' << (i + 1) << ',' << kReFamilyNames[f] << ',' << (k + 1) << ','
                << detail::fmt17(
                       pd.draws[m].re_coeffs[(static_cast<std::size_t>(i) * kNumReFamilies + f) *
                                                 K + k])
                << '\n';
          }
        }
      }
    }
  }
  {
    auto out = open("variances.csv");
    out << "draw,name,value\n";
    for (std::size_t m = 0; m < pd.draws.size(); ++m) {
      const auto& d = pd.draws[m];
      out << m << ",smooth_drift," << detail::fmt17(d.smooth_mu) << '\n';
      out << m << ",smooth_boundary," << detail::fmt17(d.smooth_b) << '\n';
      for (int f = 0; f < kNumReFamilies; ++f) {
        out << m << ",re_amplitude_" << kReFamilyNames[f] << ','
            << detail::fmt17(d.re_amplitude[f]) << '\n';
        out << m << ",re_smoothness_" << kReFamilyNames[f] << ','
            << detail::fmt17(d.re_smoothness[f]) << '\n';
      }
      out << m << ",alpha_correct," << detail::fmt17(d.alpha_correct) << '\n';
      out << m << ",alpha_incorrect," << detail::fmt17(d.alpha_incorrect) << '\n';
    }
  }
}

inline void save_run(const PosteriorDraws& pd, const std::string& run_dir,
                     double wall_seconds = 0.0) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  save_draw_files(pd, run_dir);
  json meta;
  meta["n"] = pd.n;
  meta["d0"] = pd.d0;
  meta["K"] = pd.K;
  meta["T"] = pd.T;
  meta["draw_count"] = pd.draws.size();
  meta["config"] = config_to_json(pd.config);
  json acc = json::array();
  for (const auto& [name, rate] : pd.acceptance) {
    acc.push_back(json{{"parameter", name}, {"rate", rate}});
  }
  meta["acceptance"] = acc;
  meta["warnings"] = pd.warnings;
  meta["wall_seconds"] = wall_seconds;
  std::ofstream out(fs::path(run_dir) / "meta.json");
  if (!out) throw DataError("cannot write meta.json in " + run_dir);
  out << meta.dump(2) << '\n';
}

// Reloads a finished run (meta + draw files) for the summarize/diagnose
// commands.
inline PosteriorDraws load_run(const std::string& run_dir) {
  namespace fs = std::filesystem;
  std::ifstream meta_in(fs::path(run_dir) / "meta.json");
  if (!meta_in) throw DataError("no meta.json in " + run_dir + "; not a finished run?");
  json meta = json::parse(meta_in);
  PosteriorDraws pd;
  pd.n = meta.at("n");
  pd.d0 = meta.at("d0");
  pd.K = meta.at("K");
  pd.T = meta.at("T");
  pd.basis = make_block_basis(pd.T);
  pd.config = config_from_json(meta.at("config"));
  pd.warnings = meta.at("warnings").get<std::vector<std::string>>();
  for (const auto& a : meta.at("acceptance")) {
    pd.acceptance.emplace_back(a.at("parameter"), a.at("rate"));
  }
  const std::size_t M = meta.at("draw_count");
  const int K = pd.K, x_max = pd.n_combinations();
  pd.draws.assign(M, ParameterDraw{});
  for (auto& d : pd.draws) {
    d.expressed_mu.assign(static_cast<std::size_t>(x_max) * K, 0.0);
    d.expressed_b.assign(static_cast<std::size_t>(x_max) * K, 0.0);
    d.latent.assign(static_cast<std::size_t>(K) * x_max, 0);
    d.offsets.assign(static_cast<std::size_t>(pd.n) * pd.d0, 0.0);
    d.re_coeffs.assign(static_cast<std::size_t>(pd.n) * kNumReFamilies * K, 0.0);
  }

  auto for_each_row = [&](const char* name, auto&& fn) {
    std::ifstream in(fs::path(run_dir) / "draws" / name);
    if (!in) throw DataError(std::string("missing draws file ") + name + " in " + run_dir);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      fn(detail::split_csv_line(line));
    }
  };

  for_each_row("expressed_drift.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    const int x = (std::stoi(f[1]) - 1) * pd.d0 + (std::stoi(f[2]) - 1);
    pd.draws[m].expressed_mu[static_cast<std::size_t>(x) * K + std::stoi(f[3]) - 1] =
        std::stod(f[4]);
  });
  for_each_row("expressed_boundary.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    const int x = (std::stoi(f[1]) - 1) * pd.d0 + (std::stoi(f[2]) - 1);
    pd.draws[m].expressed_b[static_cast<std::size_t>(x) * K + std::stoi(f[3]) - 1] =
        std::stod(f[4]);
  });
  for_each_row("latent_states.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    const int x = (std::stoi(f[1]) - 1) * pd.d0 + (std::stoi(f[2]) - 1);
    pd.draws[m].latent[static_cast<std::size_t>(std::stoi(f[3]) - 1) * x_max + x] =
        std::stoi(f[4]) - 1;
  });
  for_each_row("offsets.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    pd.draws[m].offsets[static_cast<std::size_t>(std::stoi(f[1]) - 1) * pd.d0 +
                        std::stoi(f[2]) - 1] = std::stod(f[3]);
  });
  for_each_row("re_coeffs.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    int fam = 0;
    for (int g = 0; g < kNumReFamilies; ++g) {
      if (f[2] == kReFamilyNames[g]) fam = g;
    }
    pd.draws[m].re_coeffs[(static_cast<std::size_t>(std::stoi(f[1]) - 1) * kNumReFamilies +
                           fam) * K + std::stoi(f[3]) - 1] = std::stod(f[4]);
  });
  for_each_row("variances.csv", [&](const std::vector<std::string>& f) {
    const std::size_t m = std::stoul(f[0]);
    const std::string& name = f[1];
    const double v = std::stod(f[2]);
    auto& d = pd.draws[m];
    if (name == "smooth_drift") d.smooth_mu = v;
    else if (name == "smooth_boundary") d.smooth_b = v;
    else if (name == "alpha_correct") d.alpha_correct = v;
    else if (name == "alpha_incorrect") d.alpha_incorrect = v;
    else {
      for (int g = 0; g < kNumReFamilies; ++g) {
        if (name == std::string("re_amplitude_") + kReFamilyNames[g]) d.re_amplitude[g] = v;
        if (name == std::string("re_smoothness_") + kReFamilyNames[g]) d.re_smoothness[g] = v;
      }
    }
  });
  return pd;
}

// Fits with periodic checkpoints into run_dir; with resume = true continues
// from the latest checkpoint. The final draws are byte-identical either way.
inline PosteriorDraws fit_run(const Dataset& ds, const ModelConfig& cfg,
                              const std::string& run_dir, bool resume = false) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  const auto t0 = std::chrono::steady_clock::now();

  ChainRunner runner(ds, cfg);
  std::optional<fs::path> last_checkpoint;
  if (resume) {
    int best_iter = -1;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("checkpoint-", 0) == 0 && name.size() > 16) {
        const int it = std::stoi(name.substr(11, name.size() - 11 - 5));
        if (it > best_iter) {
          best_iter = it;
          last_checkpoint = entry.path();
        }
      }
    }
    if (last_checkpoint) {
      std::ifstream in(*last_checkpoint);
      ChainRunnerSerializer::restore(runner, json::parse(in));
    }
  } else {
    std::ofstream cfg_out(fs::path(run_dir) / "config.json");
    cfg_out << config_to_json(cfg).dump(2) << '\n';
  }

  while (!runner.done()) {
    runner.step();
    if (cfg.checkpoint_every > 0 && runner.iteration() % cfg.checkpoint_every == 0 &&
        !runner.done()) {
      const fs::path p = fs::path(run_dir) /
                         ("checkpoint-" + std::to_string(runner.iteration()) + ".json");
      {
        std::ofstream out(p);
        out << ChainRunnerSerializer::save(runner).dump() << '\n';
      }
      if (last_checkpoint && *last_checkpoint != p) fs::remove(*last_checkpoint);
      last_checkpoint = p;
    }
  }

  PosteriorDraws pd = runner.finish();
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_run(pd, run_dir, wall);
  return pd;
}

}  // namespace ddrace

#endif
