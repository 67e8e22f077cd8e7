#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mvh/hedge.hpp"

namespace mvh {

// A fully parsed experiment: everything the pipelines need, with owning
// closures so the JSON document can be discarded after loading.
struct PolicyDef {
  std::string name;
  ClaimSpec claim;
};

struct Experiment {
  MarketSpec market;
  RiskPremiumModel rp;
  ChainModel chain;
  std::vector<CountingChannel> channels;
  Vec q0;

  double horizon = 1.0;
  double step = 0.01;
  double solver_step = 0.01;

  ClaimSpec claim;  // payoff may be null when the config has no claim block
  double w0 = 0.0;
  double control_scale = 1.0;
  Vec w_grid;  // empty unless given

  int paths = 1000;
  int fit_paths = 1000;
  int v1_paths = 10000;
  int v0_paths = 1000;

  std::vector<PolicyDef> policies;
};

// Parses and validates; throws ConfigInvalid naming the offending field.
Experiment load_experiment(const nlohmann::json& doc);
Experiment load_experiment_file(const std::string& path);

}  // namespace mvh
