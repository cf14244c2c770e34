#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedga/config.hpp"
#include "fedga/parallel.hpp"
#include "fedga/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Local SGD simulator and Gaussian-approximation experiment runner"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  int workers = fedga::default_workers();

  for (const auto& id : fedga::experiment_ids()) {
    auto* sub = app.add_subcommand(id, "Run the " + id + " experiment");
    sub->add_option("--config", config_path, "key=value or JSON config file");
    sub->add_option("--set", overrides, "Override a config entry (key=value), repeatable");
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--seed", seed, "Master seed")->required();
    sub->add_option("--workers", workers, "Worker threads (default: FEDGA_WORKERS or hardware threads)")
        ->check(CLI::PositiveNumber);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    fedga::ExperimentRequest req;
    req.id = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) req.config = fedga::Config::from_file(config_path);
    for (const auto& o : overrides) req.config.apply_override(o);
    req.out_dir = out_dir;
    req.seed = seed;
    req.workers = workers;
    const auto summary = fedga::run_experiment(req);
    std::cout << summary.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "fedga: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
