#include "mvh/pipelines.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvh/value_function.hpp"

namespace mvh {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

class CsvFile {
 public:
  explicit CsvFile(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw PipelineFailed("cannot open " + path.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_escape(cells[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

std::string num(double x) { return format_num(x); }
std::string inum(long x) { return std::to_string(x); }

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineFailed("cannot open " + path.string());
  out << doc.dump(2) << '\n';
}

json mean_se_json(const MeanSe& v) {
  return json{{"mean", v.mean}, {"se", v.se}};
}

fs::path prepare_out_dir(const PipelineArgs& args) {
  if (args.out_dir.empty()) throw PipelineFailed("output directory not set");
  fs::path dir(args.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_run_json(const fs::path& dir, const char* pipeline,
                    const PipelineArgs& args) {
  // threads deliberately absent: outputs must not depend on them
  json doc{{"pipeline", pipeline},
           {"seed", args.seed},
           {"config_sha256", sha256_file(args.config_path)}};
  write_json_file(dir / "run.json", doc);
}

struct Loaded {
  Experiment ex;
  EngineModels models;
};

Loaded load_models(const PipelineArgs& args) {
  Experiment ex = load_experiment_file(args.config_path);
  EngineModels models =
      build_models(ex.market, ex.rp, ex.chain, ex.channels, ex.q0, ex.horizon,
                   ex.solver_step);
  return {std::move(ex), std::move(models)};
}

void require_claim(const Experiment& ex, const char* pipeline) {
  if (!ex.claim.payoff)
    throw ConfigInvalid(std::string("claim: required for the ") + pipeline +
                        " pipeline");
}

void write_events_csv(const fs::path& dir,
                      const std::vector<CountingChannel>& channels,
                      const std::vector<Event>& events) {
  CsvFile csv(dir / "events.csv");
  csv.row({"t", "channel", "name", "mark"});
  for (const Event& ev : events) {
    std::string mark =
        std::isnan(ev.mark) ? std::string() : num(ev.mark);
    csv.row({num(ev.t), inum(ev.channel),
             channels[static_cast<size_t>(ev.channel)].name, mark});
  }
}

}  // namespace

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineFailed("cannot hash " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw PipelineFailed("digest init failed");
  if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw PipelineFailed("digest init failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    std::streamsize got = in.gcount();
    if (got > 0 &&
        EVP_DigestUpdate(ctx, buf, static_cast<size_t>(got)) != 1) {
      EVP_MD_CTX_free(ctx);
      throw PipelineFailed("digest update failed");
    }
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw PipelineFailed("digest final failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

void write_manifest(const std::string& out_dir) {
  fs::path dir(out_dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  json files = json::array();
  for (const std::string& name : names) {
    fs::path p = dir / name;
    files.push_back(json{{"path", name},
                         {"sha256", sha256_file(p.string())},
                         {"bytes", fs::file_size(p)}});
  }
  write_json_file(dir / "manifest.json", json{{"files", files}});
}

Histogram make_histogram(std::span<const double> xs, int n_bins) {
  if (xs.empty() || n_bins < 1)
    throw EngineError("histogram needs data and at least one bin");
  double lo = xs[0], hi = xs[0];
  for (double x : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  Histogram h;
  if (!(hi > lo)) {
    h.edges = Vec::Constant(2, lo);
    h.edges[1] = hi;
    h.counts.assign(1, static_cast<long>(xs.size()));
    return h;
  }
  h.edges.resize(n_bins + 1);
  for (int i = 0; i <= n_bins; ++i)
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / n_bins;
  h.edges[0] = lo;  // outer edges are the exact extremes
  h.edges[n_bins] = hi;
  h.counts.assign(static_cast<size_t>(n_bins), 0);
  for (double x : xs) {
    int b = static_cast<int>((x - lo) / (hi - lo) * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    ++h.counts[static_cast<size_t>(b)];
  }
  return h;
}

void run_simulate(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  Experiment ex = load_experiment_file(args.config_path);
  TruthPath truth =
      simulate_truth(ex.market, ex.rp, ex.chain, ex.channels, ex.q0,
                     ex.horizon, ex.step, args.seed);
  ObservedPath obs = observable_projection(truth);
  auto counts = obs.counts_grid();

  {
    CsvFile csv(dir / "path.csv");
    std::vector<std::string> header{"t"};
    for (int i = 0; i < obs.d; ++i) header.push_back("S" + std::to_string(i));
    for (int i = 0; i < obs.m; ++i) header.push_back("Y" + std::to_string(i));
    for (int i = 0; i < obs.Q.cols(); ++i)
      header.push_back("Q" + std::to_string(i));
    for (const auto& ch : ex.channels) header.push_back("n_" + ch.name);
    csv.row(header);
    for (int k = 0; k <= obs.grid.steps; ++k) {
      std::vector<std::string> row{num(obs.t(k))};
      for (int i = 0; i < obs.d; ++i) row.push_back(num(obs.S(k, i)));
      for (int i = 0; i < obs.m; ++i) row.push_back(num(obs.Y(k, i)));
      for (int i = 0; i < obs.Q.cols(); ++i) row.push_back(num(obs.Q(k, i)));
      for (size_t c = 0; c < ex.channels.size(); ++c)
        row.push_back(inum(counts[static_cast<size_t>(k)][c]));
      csv.row(row);
    }
  }
  {
    CsvFile csv(dir / "truth.csv");
    std::vector<std::string> header{"t"};
    for (int i = 0; i < truth.n; ++i) header.push_back("z" + std::to_string(i));
    header.push_back("chain_state");
    csv.row(header);
    for (int k = 0; k <= truth.grid.steps; ++k) {
      std::vector<std::string> row{num(truth.grid.t(k))};
      for (int i = 0; i < truth.n; ++i) row.push_back(num(truth.z(k, i)));
      row.push_back(inum(truth.chain_state[static_cast<size_t>(k)]));
      csv.row(row);
    }
  }
  write_events_csv(dir, ex.channels, obs.events);
  write_run_json(dir, "simulate", args);
  write_manifest(args.out_dir);
}

void run_filter(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  TruthPath truth =
      simulate_truth(ex.market, ex.rp, ex.chain, ex.channels, ex.q0,
                     ex.horizon, ex.step, args.seed);
  ObservedPath obs = observable_projection(truth);
  KalmanRun kal = run_kalman(obs, ex.market, ex.rp, models.cov, ex.rp.z0);
  ChainFilterRun cf =
      run_chain_filter(obs, ex.chain, ex.channels, ex.chain.x0_dist);

  {
    CsvFile csv(dir / "filter.csv");
    std::vector<std::string> header{"t"};
    int n = ex.rp.n();
    for (int i = 0; i < n; ++i) header.push_back("zhat" + std::to_string(i));
    for (int i = 0; i < n; ++i) header.push_back("z" + std::to_string(i));
    for (int i = 0; i < ex.chain.num_states; ++i)
      header.push_back("xhat" + std::to_string(i));
    header.push_back("chain_state");
    for (const auto& ch : ex.channels) header.push_back("lam_" + ch.name);
    csv.row(header);
    for (int k = 0; k <= obs.grid.steps; ++k) {
      std::vector<std::string> row{num(obs.t(k))};
      for (int i = 0; i < n; ++i) row.push_back(num(kal.z_hat(k, i)));
      for (int i = 0; i < n; ++i) row.push_back(num(truth.z(k, i)));
      for (int i = 0; i < ex.chain.num_states; ++i)
        row.push_back(num(cf.x_hat(k, i)));
      row.push_back(inum(truth.chain_state[static_cast<size_t>(k)]));
      for (size_t c = 0; c < ex.channels.size(); ++c)
        row.push_back(num(cf.lambda_hat(k, static_cast<int>(c))));
      csv.row(row);
    }
  }
  write_events_csv(dir, ex.channels, obs.events);
  write_run_json(dir, "filter", args);
  write_manifest(args.out_dir);
}

void run_riccati(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  const int n = ex.rp.n();

  {
    CsvFile csv(dir / "riccati.csv");
    std::vector<std::string> header{"t"};
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        header.push_back("sig" + std::to_string(i) + std::to_string(j));
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        header.push_back("a2_" + std::to_string(i) + std::to_string(j));
    for (int i = 0; i < n; ++i) header.push_back("a1_" + std::to_string(i));
    header.push_back("a0");
    header.push_back("v2_z0");
    csv.row(header);
    for (int k = 0; k <= models.cov.grid.steps; ++k) {
      double t = models.cov.grid.t(k);
      std::vector<std::string> row{num(t)};
      const Mat& sig = models.cov.node(k);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) row.push_back(num(sig(i, j)));
      const Mat& a2 = models.riccati.a2[static_cast<size_t>(k)];
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) row.push_back(num(a2(i, j)));
      const Vec& a1 = models.riccati.a1[static_cast<size_t>(k)];
      for (int i = 0; i < n; ++i) row.push_back(num(a1[i]));
      row.push_back(num(models.riccati.a0[static_cast<size_t>(k)]));
      row.push_back(num(v2(models.riccati, t, ex.rp.z0)));
      csv.row(row);
    }
  }
  write_run_json(dir, "riccati", args);
  write_manifest(args.out_dir);
}

void run_price(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  require_claim(ex, "price");
  SystemState from = initial_state(models);
  double v2_0 = v2(models.riccati, from.t, from.z_hat);
  MeanSe v1 = estimate_v1(models, ex.claim, from, ex.step, ex.v1_paths,
                          args.seed, args.threads, kV1Ensemble);
  json doc{{"t", from.t},
           {"v2", v2_0},
           {"v1", mean_se_json(v1)},
           {"w_star", v1.mean / v2_0},
           {"w_star_se", v1.se / v2_0}};
  write_json_file(dir / "price.json", doc);
  write_run_json(dir, "price", args);
  write_manifest(args.out_dir);
}

void run_value(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  require_claim(ex, "value");
  SystemState from = initial_state(models);
  LsmSurface surface = fit_surface(models, ex.claim, from, ex.step,
                                   ex.fit_paths, args.seed, args.threads);
  ValueQuadratic quad =
      assemble_value(models, ex.claim, surface, from, ex.step, ex.v1_paths,
                     ex.v0_paths, args.seed, args.threads);
  json doc{{"t", quad.t},
           {"v2", quad.v2},
           {"v1", mean_se_json(quad.v1)},
           {"v0", mean_se_json(quad.v0)},
           {"w_star", quad.minimizer()},
           {"min_value", quad.min_value()}};
  write_json_file(dir / "value.json", doc);

  {
    CsvFile csv(dir / "surface.csv");
    csv.row({"slice", "t", "kept", "ridged", "r2"});
    for (int k = 0; k <= surface.grid.steps; ++k)
      csv.row(
          {inum(k), num(from.t + surface.grid.t(k)),
           inum(static_cast<long>(
               surface.kept[static_cast<size_t>(k)].size())),
           inum(surface.ridged[static_cast<size_t>(k)]),
           num(surface.r2[static_cast<size_t>(k)])});
  }
  write_run_json(dir, "value", args);
  write_manifest(args.out_dir);
}

void run_hedge(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  require_claim(ex, "hedge");
  SystemState from = initial_state(models);
  LsmSurface surface = fit_surface(models, ex.claim, from, ex.step,
                                   ex.fit_paths, args.seed, args.threads);
  ValueQuadratic quad =
      assemble_value(models, ex.claim, surface, from, ex.step, ex.v1_paths,
                     ex.v0_paths, args.seed, args.threads);
  HedgePolicy policy = optimal_control(models, surface, ex.control_scale);
  HedgeReport report =
      backtest(models, ex.claim, policy, ex.w0, ex.step, ex.paths, args.seed,
               args.threads, kBacktestEnsemble,
               quadratic_monitor(models, surface));
  DriftStat drift = drift_statistic(report, quad);

  json doc{{"w0", report.w0},
           {"n_paths", report.n_paths},
           {"control_scale", ex.control_scale},
           {"terminal_error", mean_se_json(report.terminal_error)},
           {"error_std", report.error_std},
           {"realized_msq", mean_se_json(report.realized_msq)},
           {"claim_std", report.claim_std},
           {"value",
            json{{"v2", quad.v2},
                 {"v1", mean_se_json(quad.v1)},
                 {"v0", mean_se_json(quad.v0)},
                 {"w_star", quad.minimizer()}}},
           {"drift", json{{"drift", drift.drift}, {"se", drift.se}}}};
  write_json_file(dir / "hedge.json", doc);

  {
    CsvFile csv(dir / "wealth.csv");
    csv.row({"t", "wealth_mean", "monitor_mean"});
    for (int k = 0; k < report.time.size(); ++k)
      csv.row({num(report.time[k]), num(report.wealth_mean[k]),
               num(report.monitor_mean[k])});
  }
  {
    Histogram h = make_histogram(report.errors, 32);
    CsvFile csv(dir / "histogram.csv");
    csv.row({"bin_lo", "bin_hi", "count"});
    for (size_t b = 0; b < h.counts.size(); ++b)
      csv.row({num(h.edges[static_cast<int>(b)]),
               num(h.edges[static_cast<int>(b) + 1]), inum(h.counts[b])});
  }
  write_run_json(dir, "hedge", args);
  write_manifest(args.out_dir);
}

void run_compare_policies(const PipelineArgs& args) {
  fs::path dir = prepare_out_dir(args);
  auto [ex, models] = load_models(args);
  if (ex.policies.empty())
    throw ConfigInvalid(
        "policies: required for the compare-policies pipeline");
  SystemState from = initial_state(models);
  std::vector<ClaimSpec> claims;
  claims.reserve(ex.policies.size());
  for (const auto& p : ex.policies) claims.push_back(p.claim);
  PolicyComparison cmp =
      compare_policies(models, claims, from, ex.step, ex.fit_paths,
                       ex.v1_paths, ex.v0_paths, args.seed, args.threads,
                       ex.w_grid);

  {
    CsvFile csv(dir / "compare.csv");
    std::vector<std::string> header{"w"};
    for (const auto& p : ex.policies) {
      header.push_back("value_" + p.name);
      header.push_back("se_" + p.name);
    }
    csv.row(header);
    for (int j = 0; j < cmp.w_grid.size(); ++j) {
      std::vector<std::string> row{num(cmp.w_grid[j])};
      for (size_t i = 0; i < ex.policies.size(); ++i) {
        row.push_back(num(cmp.value(static_cast<int>(i), j)));
        row.push_back(num(cmp.value_se(static_cast<int>(i), j)));
      }
      csv.row(row);
    }
  }
  {
    CsvFile csv(dir / "pairs.csv");
    csv.row({"a", "b", "name_a", "name_b", "d1_mean", "d1_se", "d0_mean",
             "d0_se", "crossing", "a_dominates", "b_dominates"});
    for (const auto& pd : cmp.diffs)
      csv.row({inum(pd.a), inum(pd.b),
               ex.policies[static_cast<size_t>(pd.a)].name,
               ex.policies[static_cast<size_t>(pd.b)].name, num(pd.d1.mean),
               num(pd.d1.se), num(pd.d0.mean), num(pd.d0.se),
               num(cmp.crossing(pd.a, pd.b)),
               inum(cmp.dominates(pd.a, pd.b) ? 1 : 0),
               inum(cmp.dominates(pd.b, pd.a) ? 1 : 0)});
  }
  json pols = json::array();
  for (size_t i = 0; i < ex.policies.size(); ++i) {
    const ValueQuadratic& q = cmp.quad[i];
    pols.push_back(json{{"name", ex.policies[i].name},
                        {"v1", mean_se_json(q.v1)},
                        {"v0", mean_se_json(q.v0)},
                        {"w_star", q.minimizer()}});
  }
  write_json_file(dir / "compare.json",
                  json{{"v2", cmp.v2}, {"policies", pols}});
  write_run_json(dir, "compare-policies", args);
  write_manifest(args.out_dir);
}

void run_pipeline(const std::string& name, const PipelineArgs& args) {
  if (name == "simulate") return run_simulate(args);
  if (name == "filter") return run_filter(args);
  if (name == "riccati") return run_riccati(args);
  if (name == "price") return run_price(args);
  if (name == "value") return run_value(args);
  if (name == "hedge") return run_hedge(args);
  if (name == "compare-policies") return run_compare_policies(args);
  throw PipelineFailed("unknown pipeline '" + name + "'");
}

std::vector<std::string> pipeline_names() {
  return {"simulate", "filter",          "riccati", "price",
          "value",    "hedge",           "compare-policies"};
}

}  // namespace mvh
