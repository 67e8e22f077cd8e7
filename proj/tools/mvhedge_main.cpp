#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "mvh/pipelines.hpp"

namespace {

const char* describe(const std::string& name) {
  if (name == "simulate") return "simulate one path and write it out";
  if (name == "filter") return "run both filters along a simulated path";
  if (name == "riccati") return "solve the deterministic expansions";
  if (name == "price") return "point estimate of the value components";
  if (name == "value") return "fit the value surface and assemble V(w)";
  if (name == "hedge") return "backtest the variance-optimal control";
  if (name == "compare-policies") return "rank cashflow packages in wealth";
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"minimum-variance hedging under partially observed flows"};
  app.require_subcommand(1);

  mvh::PipelineArgs args;
  std::string chosen;
  for (const std::string& name : mvh::pipeline_names()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", args.config_path, "experiment JSON file")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory")->required();
    sub->add_option("--seed", args.seed, "random seed (default 1)");
    sub->add_option("--threads", args.threads,
                    "worker threads; results do not depend on this");
    sub->callback([&chosen, name] { chosen = name; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    mvh::run_pipeline(chosen, args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
