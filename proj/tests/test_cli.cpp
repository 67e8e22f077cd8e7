#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mvh/pipelines.hpp"

using namespace mvh;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& tag) {
    root = fs::temp_directory_path() /
           ("mvhcli_" + std::to_string(::getpid()) + "_" + tag);
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  fs::path operator/(const std::string& s) const { return root / s; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

struct CliResult {
  int exit = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const TempTree& scratch) {
  fs::path so = scratch / "stdout.txt", se = scratch / "stderr.txt";
  std::string cmd = std::string("\"") + MVHEDGE_BIN + "\" " + args + " > \"" +
                    so.string() + "\" 2> \"" + se.string() + "\"";
  int rc = std::system(cmd.c_str());
  CliResult r;
  if (WIFEXITED(rc)) r.exit = WEXITSTATUS(rc);
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t pos = 0;
    while (true) {
      size_t c = line.find(',', pos);
      if (c == std::string::npos) {
        cells.push_back(line.substr(pos));
        break;
      }
      cells.push_back(line.substr(pos, c - pos));
      pos = c + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Every manifest entry must match the file actually on disk (catches
// digests taken while an output stream was still buffered), and the
// manifest must cover the whole directory except itself.
void check_manifest_integrity(const fs::path& dir) {
  json man = json::parse(slurp(dir / "manifest.json"));
  std::vector<std::string> listed;
  for (const auto& f : man["files"]) {
    std::string name = f["path"].get<std::string>();
    listed.push_back(name);
    CAPTURE(name);
    fs::path p = dir / name;
    REQUIRE(fs::exists(p));
    CHECK(f["bytes"].get<uint64_t>() == fs::file_size(p));
    CHECK(f["sha256"].get<std::string>() == sha256_file(p.string()));
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name == "manifest.json") continue;
    CAPTURE(name);
    CHECK(std::find(listed.begin(), listed.end(), name) != listed.end());
  }
}

// flat scalar market, premium known exactly: theta = 0.3 forever
json base_config() {
  return json{{"horizon", 1.0},
              {"step", 0.01},
              {"market",
               {{"d", 1},
                {"s0", 100.0},
                {"sigma", json::array({json::array({0.2})})}}},
              {"risk_premium", {{"z0", 0.3}}}};
}

}  // namespace

TEST_CASE("format_num round-trips doubles exactly") {
  for (double x : {0.1, 1.0 / 3.0, 123456.789, 1e300, 5e-324,
                   2.2250738585072014e-308, -17.25, 0.0}) {
    std::string s = format_num(x);
    CHECK(std::strtod(s.c_str(), nullptr) == x);
  }
  CHECK(std::signbit(std::strtod(format_num(-0.0).c_str(), nullptr)));
  CHECK(format_num(2.0) == "2");
}

TEST_CASE("csv_escape quotes only when needed") {
  CHECK(csv_escape("plain_007") == "plain_007");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("line\nbreak") == "\"line\nbreak\"");
  CHECK(csv_escape("") == "");
}

TEST_CASE("sha256 matches the reference vector and manifests cover the dir") {
  TempTree tmp("sha");
  spit(tmp / "abc.txt", "abc");
  CHECK(sha256_file((tmp / "abc.txt").string()) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  write_manifest(tmp.root.string());
  json man = json::parse(slurp(tmp / "manifest.json"));
  REQUIRE(man["files"].size() == 1);
  CHECK(man["files"][0]["path"] == "abc.txt");
  CHECK(man["files"][0]["bytes"] == 3);
  CHECK(man["files"][0]["sha256"] ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("histogram edges hit the sample extremes") {
  std::vector<double> xs{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Histogram h = make_histogram(xs, 5);
  REQUIRE(h.edges.size() == 6);
  CHECK(h.edges[0] == 0.0);
  CHECK(h.edges[5] == 10.0);
  long total = 0;
  for (long c : h.counts) total += c;
  CHECK(total == 11);
  CHECK(h.counts.back() == 3);  // the max clamps into the last bin

  std::vector<double> flat{3.0, 3.0, 3.0};
  Histogram d = make_histogram(flat, 4);
  REQUIRE(d.edges.size() == 2);
  CHECK(d.edges[0] == 3.0);
  CHECK(d.edges[1] == 3.0);
  REQUIRE(d.counts.size() == 1);
  CHECK(d.counts[0] == 3);

  CHECK_THROWS_AS(make_histogram(std::span<const double>{}, 4), EngineError);
  CHECK_THROWS_AS(make_histogram(xs, 0), EngineError);
}

TEST_CASE("riccati pipeline reproduces the flat-premium solution") {
  TempTree tmp("ric");
  spit(tmp / "c.json", base_config().dump());
  fs::path out = tmp / "out";
  CliResult r = run_cli("riccati --config \"" + (tmp / "c.json").string() +
                            "\" --out \"" + out.string() + "\" --seed 5",
                        tmp);
  REQUIRE(r.exit == 0);

  auto rows = read_csv(out / "riccati.csv");
  REQUIRE(rows.size() == 102);  // header + 101 grid points
  REQUIRE(rows[0].size() == 6);
  CHECK(rows[0][2] == "a2_00");
  CHECK(rows[0][5] == "v2_z0");

  // with no hidden noise the expansion is classical: a2 = -2(T-t), the rest 0
  CHECK(std::stod(rows[1][1]) == 0.0);
  CHECK(std::stod(rows[1][2]) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(std::stod(rows[1][3]) == 0.0);
  CHECK(std::stod(rows[1][4]) == 0.0);
  CHECK(std::stod(rows[1][5]) ==
        doctest::Approx(std::exp(-0.09)).epsilon(1e-12));
  CHECK(std::stod(rows[101][2]) == 0.0);
  CHECK(std::stod(rows[101][5]) == 1.0);

  json run = json::parse(slurp(out / "run.json"));
  CHECK(run["pipeline"] == "riccati");
  CHECK(run["seed"] == 5);
  CHECK(run["config_sha256"].get<std::string>().size() == 64);
  CHECK(!run.contains("threads"));

  json man = json::parse(slurp(out / "manifest.json"));
  std::vector<std::string> names;
  for (const auto& f : man["files"])
    names.push_back(f["path"].get<std::string>());
  CHECK(std::find(names.begin(), names.end(), "riccati.csv") != names.end());
  CHECK(std::find(names.begin(), names.end(), "run.json") != names.end());
  CHECK(std::find(names.begin(), names.end(), "manifest.json") == names.end());
  check_manifest_integrity(out);
}

TEST_CASE("value pipeline output is byte-identical across thread counts") {
  TempTree tmp("thr");
  json cfg = base_config();
  cfg["horizon"] = 0.5;
  cfg["step"] = 0.05;
  cfg["claim"] = {{"form", "terminal_price"}};
  cfg["mc"] = {{"fit_paths", 200}, {"v1_paths", 300}, {"v0_paths", 120}};
  spit(tmp / "c.json", cfg.dump());

  fs::path a = tmp / "a", b = tmp / "b";
  CliResult ra = run_cli("value --config \"" + (tmp / "c.json").string() +
                             "\" --out \"" + a.string() +
                             "\" --seed 11 --threads 1",
                         tmp);
  REQUIRE(ra.exit == 0);
  CliResult rb = run_cli("value --config \"" + (tmp / "c.json").string() +
                             "\" --out \"" + b.string() +
                             "\" --seed 11 --threads 4",
                         tmp);
  REQUIRE(rb.exit == 0);

  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(slurp(a / "value.json") == slurp(b / "value.json"));
  CHECK(slurp(a / "surface.csv") == slurp(b / "surface.csv"));

  // complete market: the replication cost of S_T is spot, up to noise
  json val = json::parse(slurp(a / "value.json"));
  double v2 = val["v2"].get<double>();
  CHECK(v2 == doctest::Approx(std::exp(-0.045)).epsilon(1e-10));
  double v1_se = val["v1"]["se"].get<double>();
  CHECK(v1_se > 0.0);
  CHECK(std::abs(val["w_star"].get<double>() - 100.0) < 5.0 * v1_se / v2);

  check_manifest_integrity(a);
}

TEST_CASE("hedge pipeline writes the full report set") {
  TempTree tmp("hdg");
  json cfg = base_config();
  cfg["horizon"] = 0.5;
  cfg["step"] = 0.05;
  cfg["claim"] = {{"form", "terminal_price"}};
  cfg["hedge"] = {{"w0", 100.0}};
  cfg["mc"] = {{"paths", 60},
               {"fit_paths", 150},
               {"v1_paths", 200},
               {"v0_paths", 80}};
  spit(tmp / "c.json", cfg.dump());
  fs::path out = tmp / "out";
  CliResult r = run_cli("hedge --config \"" + (tmp / "c.json").string() +
                            "\" --out \"" + out.string() + "\" --seed 3",
                        tmp);
  REQUIRE(r.exit == 0);

  json doc = json::parse(slurp(out / "hedge.json"));
  CHECK(doc["n_paths"] == 60);
  CHECK(doc["w0"] == 100.0);
  CHECK(doc["claim_std"].get<double>() > 0.0);
  CHECK(doc["value"]["v2"].get<double>() > 0.0);
  CHECK(doc.contains("drift"));

  auto wealth = read_csv(out / "wealth.csv");
  CHECK(wealth.size() == 12);  // header + 11 grid points
  CHECK(wealth[0] ==
        std::vector<std::string>{"t", "wealth_mean", "monitor_mean"});

  auto hist = read_csv(out / "histogram.csv");
  long total = 0;
  for (size_t i = 1; i < hist.size(); ++i) total += std::stol(hist[i][2]);
  CHECK(total == 60);

  check_manifest_integrity(out);
}

TEST_CASE("compare-policies settles two cash books exactly") {
  TempTree tmp("cmp");
  json cfg = base_config();
  cfg["horizon"] = 0.5;
  cfg["step"] = 0.05;
  cfg["hedge"] = {{"w_grid", json::array({0.0, 1.0, 2.0, 3.0, 4.0})}};
  cfg["mc"] = {{"fit_paths", 150}, {"v1_paths", 200}, {"v0_paths", 80}};
  cfg["policies"] = json::array(
      {json{{"name", "low"}, {"claim", {{"form", "constant"}, {"value", 2.0}}}},
       json{{"name", "high"},
            {"claim", {{"form", "constant"}, {"value", 3.0}}}}});
  spit(tmp / "c.json", cfg.dump());
  fs::path out = tmp / "out";
  CliResult r = run_cli("compare-policies --config \"" +
                            (tmp / "c.json").string() + "\" --out \"" +
                            out.string() + "\" --seed 9",
                        tmp);
  REQUIRE(r.exit == 0);

  double v2 = std::exp(-0.045);
  auto grid = read_csv(out / "compare.csv");
  REQUIRE(grid.size() == 6);
  CHECK(grid[0] == std::vector<std::string>{"w", "value_low", "se_low",
                                            "value_high", "se_high"});
  // at w = 0 the quadratic reads V0 = c^2 v2, up to O(step) integrator bias
  CHECK(std::stod(grid[1][0]) == 0.0);
  CHECK(std::stod(grid[1][1]) == doctest::Approx(4.0 * v2).epsilon(5e-3));
  CHECK(std::stod(grid[1][3]) == doctest::Approx(9.0 * v2).epsilon(5e-3));

  auto pairs = read_csv(out / "pairs.csv");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1][2] == "low");
  CHECK(pairs[1][3] == "high");
  // diffs are first-minus-second; certain premium makes V1 noiseless
  CHECK(std::stod(pairs[1][4]) == doctest::Approx(-v2).epsilon(1e-9));
  CHECK(std::stod(pairs[1][8]) == doctest::Approx(2.5).epsilon(5e-3));
  CHECK(pairs[1][9] == "0");  // the parabolas cross inside the grid
  CHECK(pairs[1][10] == "0");

  json doc = json::parse(slurp(out / "compare.json"));
  CHECK(doc["v2"].get<double>() == doctest::Approx(v2).epsilon(1e-10));
  REQUIRE(doc["policies"].size() == 2);
  CHECK(doc["policies"][0]["w_star"].get<double>() ==
        doctest::Approx(2.0).epsilon(1e-9));
  CHECK(doc["policies"][1]["w_star"].get<double>() ==
        doctest::Approx(3.0).epsilon(1e-9));

  check_manifest_integrity(out);
}

TEST_CASE("simulate and filter manifests match the files on disk") {
  TempTree tmp("sim");
  json cfg = base_config();
  cfg["step"] = 0.05;
  cfg["chain"] = {{"num_states", 2},
                  {"generator", {{-1.0, 1.0}, {1.0, -1.0}}},
                  {"x0", {0.5, 0.5}}};
  cfg["funds"] = {{"q0", 2.0}};
  cfg["channels"] = json::array(
      {{{"name", "sub"},
        {"effect", "inflow"},
        {"fund", 0},
        {"intensity", {{"base", {2.0, 0.5}}}}}});
  spit(tmp / "c.json", cfg.dump());
  for (const char* p : {"simulate", "filter"}) {
    fs::path out = tmp / p;
    CliResult r =
        run_cli(std::string(p) + " --config \"" + (tmp / "c.json").string() +
                    "\" --out \"" + out.string() + "\" --seed 3",
                tmp);
    REQUIRE(r.exit == 0);
    check_manifest_integrity(out);
  }
}

TEST_CASE("bad configs and bad invocations fail loudly") {
  TempTree tmp("bad");

  json broken = base_config();
  broken["market"].erase("s0");
  spit(tmp / "broken.json", broken.dump());
  CliResult r1 = run_cli("riccati --config \"" +
                             (tmp / "broken.json").string() + "\" --out \"" +
                             (tmp / "o1").string() + "\"",
                         tmp);
  CHECK(r1.exit == 1);
  CHECK(r1.err.find("market.s0") != std::string::npos);

  spit(tmp / "ok.json", base_config().dump());
  CliResult r2 = run_cli("compare-policies --config \"" +
                             (tmp / "ok.json").string() + "\" --out \"" +
                             (tmp / "o2").string() + "\"",
                         tmp);
  CHECK(r2.exit == 1);
  CHECK(r2.err.find("policies") != std::string::npos);

  CliResult r3 = run_cli("", tmp);
  CHECK(r3.exit != 0);

  CliResult r4 = run_cli("riccati --out \"" + (tmp / "o4").string() + "\"",
                         tmp);
  CHECK(r4.exit != 0);
  CHECK(!r4.err.empty());

  CliResult r5 = run_cli("price --config \"" + (tmp / "ok.json").string() +
                             "\" --out \"" + (tmp / "o5").string() + "\"",
                         tmp);
  CHECK(r5.exit == 1);
  CHECK(r5.err.find("claim") != std::string::npos);
}
