// Command-line front end: simulate | fit | summarize | diagnose | lba.
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
// abort.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "ddrace/diagnostics.hpp"
#include "ddrace/lba.hpp"
#include "ddrace/mcmc.hpp"
#include "ddrace/simulator.hpp"
#include "ddrace/store.hpp"

namespace fs = std::filesystem;
using ddrace::json;

namespace {

// Relative output paths live under DDRACE_OUT_ROOT when it is set.
std::string resolve_out(const std::string& out) {
  const char* root = std::getenv("DDRACE_OUT_ROOT");
  if (root && *root && fs::path(out).is_relative()) {
    return (fs::path(root) / out).string();
  }
  return out;
}

void write_metadata(const std::string& dir, const json& extra) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "metadata.json");
  out << extra.dump(2) << '\n';
}

int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

struct FitOptions {
  std::string data_path;
  std::string out;
  std::string config_path;
  bool resume = false;
  ddrace::ModelConfig cfg;
};

void add_config_flags(CLI::App* cmd, ddrace::ModelConfig& cfg) {
  cmd->add_option("--iterations", cfg.iterations, "MCMC iterations");
  cmd->add_option("--burn-in", cfg.burn_in, "burn-in iterations to discard");
  cmd->add_option("--thin", cfg.thin, "thinning interval");
  cmd->add_option("--z-max", cfg.z_max, "latent state count");
  cmd->add_option("--hamming-radius", cfg.hamming_radius, "Hamming ball radius m");
  cmd->add_option("--batch-size", cfg.batch_size, "adaptive MH batch size");
  cmd->add_option("--target-accept", cfg.target_accept, "adaptive MH target rate");
  cmd->add_option("--balancing-power", cfg.balancing_power,
                  "exponent of the locally informed weight g(p) = p^gamma");
  cmd->add_option("--a-alpha", cfg.a_alpha, "Gamma prior shape for the concentrations");
  cmd->add_option("--b-alpha", cfg.b_alpha, "Gamma prior rate for the concentrations");
  cmd->add_option("--seed", cfg.seed, "random seed");
  cmd->add_option("--threads", cfg.threads, "worker threads");
  cmd->add_option("--checkpoint-every", cfg.checkpoint_every,
                  "checkpoint cadence in iterations (0 disables)");
  cmd->add_option("--grid-per-block", cfg.grid_per_block, "summary grid density");
}

int run_simulate(const std::string& scenario_arg, std::uint64_t seed, bool seed_given,
                 const std::string& out_arg, bool uniform_stimuli) {
  const std::string out = resolve_out(out_arg);
  ddrace::ScenarioSpec spec;
  if (fs::exists(scenario_arg)) {
    spec = ddrace::load_scenario(scenario_arg);
  } else {
    spec = ddrace::builtin_scenario(scenario_arg);
  }
  if (seed_given) spec.seed = seed;
  if (uniform_stimuli) spec.balanced_stimuli = false;
  fs::create_directories(out);

  ddrace::Rng rng(spec.seed);
  auto [ds, truth] = ddrace::generate_dataset(spec, rng);
  ddrace::save_dataset(ds, (fs::path(out) / "dataset.csv").string());
  ddrace::save_truth(truth, (fs::path(out) / "truth.json").string());
  ddrace::save_scenario(spec, (fs::path(out) / "scenario.json").string());
  write_metadata(out, json{{"command", "simulate"},
                           {"scenario", spec.name},
                           {"seed", spec.seed},
                           {"trials", ds.records().size()},
                           {"n", spec.n},
                           {"T", spec.T},
                           {"L", spec.L},
                           {"d0", spec.d0}});
  std::cout << "wrote " << ds.records().size() << " trials to " << out << "/dataset.csv\n";
  return 0;
}

int run_fit(FitOptions& opt) {
  const std::string out = resolve_out(opt.out);
  const ddrace::Dataset ds = ddrace::load_dataset(opt.data_path);
  opt.cfg.validate();
  const ddrace::PosteriorDraws draws = ddrace::fit_run(ds, opt.cfg, out, opt.resume);
  write_metadata(out, json{{"command", "fit"},
                           {"data", opt.data_path},
                           {"seed", opt.cfg.seed},
                           {"config", ddrace::config_to_json(opt.cfg)},
                           {"draws", draws.draws.size()}});
  std::cout << "stored " << draws.draws.size() << " draws in " << out << "\n";
  return 0;
}

int run_summarize(const std::string& run_dir, const std::string& out_arg,
                  int grid_per_block, double lower_q, double upper_q,
                  const std::vector<int>& subjects) {
  const std::string out = out_arg.empty() ? (fs::path(run_dir) / "summaries").string()
                                          : resolve_out(out_arg);
  const ddrace::PosteriorDraws pd = ddrace::load_run(run_dir);
  ddrace::ExportOptions eo;
  eo.points_per_block = grid_per_block;
  eo.lower_q = lower_q;
  eo.upper_q = upper_q;
  for (int s : subjects) eo.subjects.push_back(s - 1);
  ddrace::export_summaries(pd, out, eo);
  write_metadata(out, json{{"command", "summarize"},
                           {"run", run_dir},
                           {"grid_per_block", grid_per_block},
                           {"lower_q", lower_q},
                           {"upper_q", upper_q}});
  std::cout << "summaries written to " << out << "\n";
  return 0;
}

int run_diagnose(const std::string& run_dir, const std::string& out_arg, int subject,
                 double frac_a, double frac_b) {
  const std::string out = out_arg.empty() ? (fs::path(run_dir) / "diagnostics").string()
                                          : resolve_out(out_arg);
  const ddrace::PosteriorDraws pd = ddrace::load_run(run_dir);
  const auto rep = ddrace::diagnostics_report(pd, subject - 1, frac_a, frac_b);
  ddrace::save_diagnostics(rep, out);
  write_metadata(out, json{{"command", "diagnose"},
                           {"run", run_dir},
                           {"subject", subject},
                           {"frac_a", frac_a},
                           {"frac_b", frac_b}});
  std::cout << "diagnostics written to " << out << "\n";
  return 0;
}

int run_lba(const std::string& data_path, const std::string& out_arg, int restarts,
            std::uint64_t seed, const std::vector<double>& lba_offset) {
  const std::string out = resolve_out(out_arg);
  const ddrace::Dataset ds = ddrace::load_dataset(data_path);
  std::vector<double> offsets = lba_offset;
  if (offsets.size() == 1) offsets.assign(ds.n_categories(), lba_offset[0]);
  if (!offsets.empty() && static_cast<int>(offsets.size()) != ds.n_categories()) {
    throw ddrace::DataError("--lba-offset needs 1 value or one per stimulus");
  }
  ddrace::Rng rng(seed);
  std::vector<ddrace::LbaFitResult> fits;
  for (int t = 0; t < ds.n_blocks(); ++t) {
    fits.push_back(ddrace::fit_block(ds, t, restarts, rng, offsets));
  }
  ddrace::save_lba_report(ds, fits, out);
  write_metadata(out, json{{"command", "lba"},
                           {"data", data_path},
                           {"restarts", restarts},
                           {"seed", seed},
                           {"offsets", offsets}});
  std::cout << "LBA estimates written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian longitudinal drift-diffusion race models for "
               "multi-alternative choice and response-time data"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string scenario = "s7-default";
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  bool uniform_stimuli = false;
  sim->add_option("--scenario", scenario, "builtin name or scenario file path");
  auto* seed_opt = sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_flag("--uniform-stimuli", uniform_stimuli,
                "draw stimuli uniformly instead of the balanced schedule");

  // fit
  auto* fitc = app.add_subcommand("fit", "run the MCMC sampler on a dataset");
  FitOptions fit_opt;
  fit_opt.cfg.threads = default_threads();
  fitc->add_option("data", fit_opt.data_path, "dataset CSV")->required();
  fitc->add_option("--out", fit_opt.out, "run directory")->required();
  fitc->add_option("--config", fit_opt.config_path, "key=value config file");
  fitc->add_flag("--resume", fit_opt.resume, "resume from the latest checkpoint");
  add_config_flags(fitc, fit_opt.cfg);

  // summarize
  auto* sum = app.add_subcommand("summarize", "posterior trajectory and co-clustering CSVs");
  std::string sum_run, sum_out;
  int grid_per_block = 10;
  double lower_q = 0.05, upper_q = 0.95;
  std::vector<int> sum_subjects;
  sum->add_option("--run", sum_run, "run directory")->required();
  sum->add_option("--out", sum_out, "output directory (default <run>/summaries)");
  sum->add_option("--grid-per-block", grid_per_block, "grid points per block interval");
  sum->add_option("--lower-q", lower_q, "lower band quantile");
  sum->add_option("--upper-q", upper_q, "upper band quantile");
  sum->add_option("--subjects", sum_subjects, "also export these subjects' trajectories");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Geweke and acceptance-rate reports");
  std::string diag_run, diag_out;
  int diag_subject = 1;
  double frac_a = 0.1, frac_b = 0.5;
  diag->add_option("--run", diag_run, "run directory")->required();
  diag->add_option("--out", diag_out, "output directory (default <run>/diagnostics)");
  diag->add_option("--subject", diag_subject, "subject tracked in the Geweke table");
  diag->add_option("--frac-a", frac_a, "early window fraction");
  diag->add_option("--frac-b", frac_b, "late window fraction");

  // lba
  auto* lba = app.add_subcommand("lba", "blockwise linear ballistic accumulator fit");
  std::string lba_data, lba_out;
  int restarts = 20;
  std::uint64_t lba_seed = 1;
  std::vector<double> lba_offset;
  lba->add_option("data", lba_data, "dataset CSV")->required();
  lba->add_option("--out", lba_out, "output directory")->required();
  lba->add_option("--restarts", restarts, "optimizer restarts per block and stimulus");
  lba->add_option("--seed", lba_seed, "random seed");
  lba->add_option("--lba-offset", lba_offset,
                  "constant(s) subtracted from response times, one value or one per stimulus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      return run_simulate(scenario, sim_seed, seed_opt->count() > 0, sim_out,
                          uniform_stimuli);
    }
    if (fitc->parsed()) {
      if (!fit_opt.config_path.empty()) {
        ddrace::ModelConfig file_cfg = ddrace::load_model_config(fit_opt.config_path);
        // flags given on the command line win over the file
        ddrace::ModelConfig flag_defaults;
        flag_defaults.threads = default_threads();
        auto pick = [&](auto member, auto flag_value) {
          return flag_value != member(flag_defaults) ? flag_value : member(file_cfg);
        };
        ddrace::ModelConfig merged = file_cfg;
        merged.iterations = pick([](auto& c) { return c.iterations; }, fit_opt.cfg.iterations);
        merged.burn_in = pick([](auto& c) { return c.burn_in; }, fit_opt.cfg.burn_in);
        merged.thin = pick([](auto& c) { return c.thin; }, fit_opt.cfg.thin);
        merged.z_max = pick([](auto& c) { return c.z_max; }, fit_opt.cfg.z_max);
        merged.hamming_radius =
            pick([](auto& c) { return c.hamming_radius; }, fit_opt.cfg.hamming_radius);
        merged.batch_size = pick([](auto& c) { return c.batch_size; }, fit_opt.cfg.batch_size);
        merged.target_accept =
            pick([](auto& c) { return c.target_accept; }, fit_opt.cfg.target_accept);
        merged.balancing_power =
            pick([](auto& c) { return c.balancing_power; }, fit_opt.cfg.balancing_power);
        merged.a_alpha = pick([](auto& c) { return c.a_alpha; }, fit_opt.cfg.a_alpha);
        merged.b_alpha = pick([](auto& c) { return c.b_alpha; }, fit_opt.cfg.b_alpha);
        merged.seed = pick([](auto& c) { return c.seed; }, fit_opt.cfg.seed);
        merged.threads = pick([](auto& c) { return c.threads; }, fit_opt.cfg.threads);
        merged.checkpoint_every =
            pick([](auto& c) { return c.checkpoint_every; }, fit_opt.cfg.checkpoint_every);
        merged.grid_per_block =
            pick([](auto& c) { return c.grid_per_block; }, fit_opt.cfg.grid_per_block);
        fit_opt.cfg = merged;
      }
      return run_fit(fit_opt);
    }
    if (sum->parsed()) {
      return run_summarize(sum_run, sum_out, grid_per_block, lower_q, upper_q, sum_subjects);
    }
    if (diag->parsed()) {
      return run_diagnose(diag_run, diag_out, diag_subject, frac_a, frac_b);
    }
    if (lba->parsed()) {
      return run_lba(lba_data, lba_out, restarts, lba_seed, lba_offset);
    }
  } catch (const ddrace::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const ddrace::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
