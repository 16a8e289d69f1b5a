#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mpgp/config.hpp"
#include "mpgp/simulation.hpp"

namespace fs = std::filesystem;
using namespace mpgp;

namespace {

std::vector<BaselineKind> parse_methods(const std::string& list) {
  std::vector<BaselineKind> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(baseline_from_string(item));
  }
  if (out.empty()) throw std::invalid_argument("no methods given");
  return out;
}

std::string regeneration_csv(const std::string& scenario, double sigma,
                             const std::vector<RegenerationResult>& results) {
  std::ostringstream os;
  os << "scenario,seed,sigma,constraint_active,error_full,error_kkt,steps_full,steps_kkt\n";
  for (const auto& r : results) {
    os << scenario << ',' << r.seed << ',' << format_number(sigma) << ','
       << (r.constraint_active ? 1 : 0) << ',' << format_number(r.error_full) << ','
       << format_number(r.error_kkt) << ',' << r.steps_full << ',' << r.steps_kkt << '\n';
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo harness for adaptive game-theoretic planning"};
  app.require_subcommand(1);

  std::string scenario_path, methods = "adaptive_mpgp,cv_mpc,kkt_constrained", out_dir = "results";
  int trials = 20, workers = 1, ticks = -1;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "run a Monte Carlo study");
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--methods", methods, "comma-separated methods");
  run->add_option("--trials", trials, "number of trials")->check(CLI::NonNegativeNumber);
  run->add_option("--seed", seed, "seed of the first trial");
  run->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--ticks", ticks, "episode length override");
  run->add_option("--out", out_dir, "output directory");

  std::string in_dir;
  auto* metrics = app.add_subcommand("metrics", "recompute the summary from episodes.csv");
  metrics->add_option("--in", in_dir, "result directory")->required()->check(CLI::ExistingDirectory);

  double sigma = 0.0;
  int regen_ticks = 30;
  auto* regen = app.add_subcommand("regenerate", "parameter regeneration study");
  regen->add_option("--scenario", scenario_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
  regen->add_option("--trials", trials, "number of trials")->check(CLI::NonNegativeNumber);
  regen->add_option("--seed", seed, "seed of the first trial");
  regen->add_option("--sigma", sigma, "observation noise")->check(CLI::NonNegativeNumber);
  regen->add_option("--ticks", regen_ticks, "ticks per trial")->check(CLI::PositiveNumber);
  regen->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const ScenarioModel model(load_scenario(scenario_path));
      MonteCarloConfig mc;
      mc.methods = parse_methods(methods);
      mc.trials = trials;
      mc.seed = seed;
      mc.workers = workers;
      mc.ticks = ticks;
      const auto records = run_monte_carlo(model, mc);
      write_results(out_dir, records);
      std::cout << summarize(records).dump(2) << '\n';
    } else if (*metrics) {
      std::ifstream in(fs::path(in_dir) / "episodes.csv");
      if (!in) throw std::runtime_error("cannot open " + (fs::path(in_dir) / "episodes.csv").string());
      std::cout << summarize(parse_episodes_csv(in)).dump(2) << '\n';
    } else if (*regen) {
      const ScenarioModel model(load_scenario(scenario_path));
      std::vector<RegenerationResult> results;
      for (int t = 0; t < trials; ++t) {
        results.push_back(
            run_regeneration(model, model.sample(seed + static_cast<std::uint64_t>(t)), sigma, regen_ticks));
      }
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "regeneration.csv")
          << regeneration_csv(model.config().name, sigma, results);
      std::vector<double> full, kkt;
      for (const auto& r : results) {
        full.push_back(r.error_full);
        kkt.push_back(r.error_kkt);
      }
      nlohmann::json summary = {{"full", statistic_json(describe(full))},
                                {"kkt_constrained", statistic_json(describe(kkt))}};
      std::cout << summary.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
