// End-to-end exercise of the command-line interface. Takes the path to the
// built binary as argv[1] and walks simulate -> fit -> summarize -> diagnose
// -> lba in a scratch directory, checking outputs and exit codes.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (ok) {
    std::cout << "ok: " << what << "\n";
  } else {
    ++failures;
    std::cout << "FAILED: " << what << "\n";
  }
}

int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: cli_workflow <path-to-cli>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path root = fs::temp_directory_path() / "ddrace_cli_workflow";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string quiet = " > /dev/null 2>&1";

  // usage errors exit with 1
  expect(run(cli + " simulate" + quiet) == 1, "missing --out is a usage error");
  expect(run(cli + " frobnicate" + quiet) == 1, "unknown subcommand is a usage error");

  // simulate twice with the same seed: identical bytes
  const auto sim1 = root / "sim1";
  const auto sim2 = root / "sim2";
  expect(run(cli + " simulate --scenario tiny --seed 7 --out " + sim1.string() + quiet) == 0,
         "simulate runs");
  expect(run(cli + " simulate --scenario tiny --seed 7 --out " + sim2.string() + quiet) == 0,
         "simulate runs again");
  expect(fs::exists(sim1 / "dataset.csv"), "dataset written");
  expect(fs::exists(sim1 / "truth.json"), "truth written");
  expect(fs::exists(sim1 / "metadata.json"), "metadata written");
  expect(slurp(sim1 / "dataset.csv") == slurp(sim2 / "dataset.csv"),
         "same seed gives identical datasets");

  // data errors exit with 2
  expect(run(cli + " fit /nonexistent.csv --out " + (root / "runx").string() + quiet) == 2,
         "missing dataset is a data error");
  {
    std::ofstream bad(root / "bad.csv");
    bad << "subject,block,trial,stimulus,response,rt\n1,1,1,1,1,-2.0\n";
  }
  expect(run(cli + " fit " + (root / "bad.csv").string() + " --out " +
             (root / "runy").string() + quiet) == 2,
         "negative response time is a data error");

  // a small fit
  const auto run_dir = root / "run1";
  const std::string fit_cmd = cli + " fit " + (sim1 / "dataset.csv").string() +
                              " --out " + run_dir.string() +
                              " --iterations 80 --burn-in 30 --thin 2 --z-max 2" +
                              " --seed 5 --threads 2 --checkpoint-every 40";
  expect(run(fit_cmd + quiet) == 0, "fit completes");
  expect(fs::exists(run_dir / "meta.json"), "run meta written");
  expect(fs::exists(run_dir / "draws" / "expressed_drift.csv"), "draw files written");
  expect(fs::exists(run_dir / "config.json"), "config echo written");

  // summarize
  expect(run(cli + " summarize --run " + run_dir.string() + " --subjects 1" + quiet) == 0,
         "summarize runs");
  expect(fs::exists(run_dir / "summaries" / "population_drift.csv"),
         "population trajectories written");
  expect(fs::exists(run_dir / "summaries" / "coclustering.csv"), "co-clustering written");
  expect(fs::exists(run_dir / "summaries" / "subject1_drift.csv"),
         "subject trajectories written");

  // diagnose
  expect(run(cli + " diagnose --run " + run_dir.string() + quiet) == 0, "diagnose runs");
  expect(fs::exists(run_dir / "diagnostics" / "geweke.csv"), "geweke table written");
  expect(fs::exists(run_dir / "diagnostics" / "acceptance.csv"), "acceptance table written");

  // lba
  const auto lba_dir = root / "lba1";
  expect(run(cli + " lba " + (sim1 / "dataset.csv").string() + " --out " + lba_dir.string() +
             " --restarts 3 --seed 3" + quiet) == 0,
         "lba fit runs");
  expect(fs::exists(lba_dir / "lba_estimates.csv"), "lba estimates written");
  expect(fs::exists(lba_dir / "lba_restarts.csv"), "lba restart table written");

  // deterministic refit into a fresh directory
  const auto run_dir2 = root / "run2";
  const std::string fit_cmd2 = cli + " fit " + (sim1 / "dataset.csv").string() +
                               " --out " + run_dir2.string() +
                               " --iterations 80 --burn-in 30 --thin 2 --z-max 2" +
                               " --seed 5 --threads 1 --checkpoint-every 40";
  expect(run(fit_cmd2 + quiet) == 0, "refit completes");
  expect(slurp(run_dir / "draws" / "expressed_drift.csv") ==
             slurp(run_dir2 / "draws" / "expressed_drift.csv"),
         "same seed and config give identical draws regardless of threads");

  // environment-variable output root
  const auto env_root = root / "env_root";
  fs::create_directories(env_root);
  const std::string env_cmd = "DDRACE_OUT_ROOT=" + env_root.string() + " " + cli +
                              " simulate --scenario tiny --seed 1 --out nested/sim" + quiet;
  expect(run(env_cmd) == 0, "simulate under DDRACE_OUT_ROOT");
  expect(fs::exists(env_root / "nested" / "sim" / "dataset.csv"),
         "output root prefix honored");

  std::cout << (failures == 0 ? "cli workflow passed\n" : "cli workflow FAILED\n");
  return failures == 0 ? 0 : 1;
}
