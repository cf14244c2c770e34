#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedga/config.hpp"

namespace fedga {

/// Experiment ids accepted by run_experiment().
const std::vector<std::string>& experiment_ids();

struct ExperimentRequest {
  std::string id;
  Config config;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Runs one experiment, writes its CSV outputs plus `<id>_summary.json` into
/// `out_dir`, and returns the summary document.
nlohmann::json run_experiment(const ExperimentRequest& request);

}  // namespace fedga
