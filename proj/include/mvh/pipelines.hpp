#pragma once

#include <string>
#include <vector>

#include "mvh/config.hpp"

namespace mvh {

struct PipelineArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 1;
  int threads = 1;
};

// Named entry points; each writes its data files plus run.json and a
// manifest.json with per-file digests into out_dir. All output is
// byte-reproducible for a fixed (config, seed), independent of threads.
void run_simulate(const PipelineArgs& args);
void run_filter(const PipelineArgs& args);
void run_riccati(const PipelineArgs& args);
void run_price(const PipelineArgs& args);
void run_value(const PipelineArgs& args);
void run_hedge(const PipelineArgs& args);
void run_compare_policies(const PipelineArgs& args);

// Dispatch by name; throws PipelineFailed for an unknown name.
void run_pipeline(const std::string& name, const PipelineArgs& args);
std::vector<std::string> pipeline_names();

// Formatting and integrity helpers, exposed for tests.
std::string format_num(double x);          // shortest round-trip via %.17g
std::string csv_escape(const std::string& field);
std::string sha256_file(const std::string& path);
void write_manifest(const std::string& out_dir);

// Equal-width histogram whose outer edges are exactly the sample min/max.
struct Histogram {
  Vec edges;  // n_bins + 1
  std::vector<long> counts;
};
Histogram make_histogram(std::span<const double> xs, int n_bins);

}  // namespace mvh
