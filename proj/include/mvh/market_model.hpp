#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvh/common.hpp"
#include "mvh/rng.hpp"

namespace mvh {

// Observable information available to coefficient and intensity functions at
// the instant just before an event (left limits everywhere).
struct ObsSnapshot {
  double t = 0.0;
  const Vec* S = nullptr;
  const Vec* Y = nullptr;
  std::span<const long> counts;    // per channel, cumulative
  std::span<const double> queues;  // per fund
};

using StateCoeffFn = std::function<Mat(double, const Vec&, const Vec&)>;
using IntensityFn = std::function<double(const ObsSnapshot&, int chain_state)>;
using FeeFn = std::function<double(const ObsSnapshot&)>;
using LossFn = std::function<double(double, double)>;  // l(t, x)

struct MarketSpec {
  int d = 1;  // tradable assets
  int m = 0;  // non-tradable factors
  StateCoeffFn sigma;      // d x d
  StateCoeffFn sigma_bar;  // m x d
  StateCoeffFn rho;        // m x m
  Vec s0, y0;
  int n() const { return d + m; }
  void validate() const;
};

// Hidden linear-Gaussian risk premium z = (theta; alpha):
//   dz = (mu(t) - F(t) z) dt + delta(t) dV.
struct RiskPremiumModel {
  int p = 1;  // driving noise dimension
  TimeVecFn mu;
  TimeMatFn bigF;
  TimeMatFn delta;
  Vec z0;      // prior mean
  Mat sigma0;  // prior covariance
  int n() const { return static_cast<int>(z0.size()); }
  void validate() const;
};

// Finite-state hidden chain. generator(t)(i, j) is the rate of j -> i, so
// columns sum to zero and off-diagonals are nonnegative.
struct ChainModel {
  int num_states = 1;
  TimeMatFn generator;
  Vec x0_dist;
  void validate() const;
};

enum class QueueEffect { none, inflow, outflow, transfer };

// Mark distribution on a compact support [lo, hi], lo > 0.
struct MarkLaw {
  double lo = 1.0;
  double hi = 2.0;
  std::function<double(double, double)> density;  // nu_t(x)
  void validate() const;
};

struct CountingChannel {
  std::string name;
  IntensityFn intensity;  // per chain state, strictly positive
  int gate_fund = -1;     // -1: ungated, else fires only while Q[gate] > 0
  QueueEffect effect = QueueEffect::none;
  int fund = -1;     // effect target; transfer source
  int fund_to = -1;  // transfer destination
  std::optional<MarkLaw> mark;
};

void validate_channels(const std::vector<CountingChannel>& channels,
                       int n_funds, int n_states);

struct Event {
  double t = 0.0;
  int channel = -1;
  double mark = 0.0;  // NaN for unmarked channels
};

struct ChainJump {
  double t = 0.0;
  int state = 0;  // state entered at t
};

// What a G-adapted observer sees: prices, factors, events, queues. No z, no X.
struct ObservedPath {
  TimeGrid grid;
  double t_start = 0.0;
  int d = 0, m = 0;
  Mat S, Y;                   // (steps+1) x dim
  std::vector<Event> events;  // strictly increasing times in (t_start, T]
  Mat Q;                      // (steps+1) x n_funds, value at grid time
  int n_channels = 0;
  std::vector<long> counts0;  // per-channel counts before t_start
  Vec queues0;

  double t(int k) const { return t_start + grid.t(k); }
  std::vector<long> terminal_counts() const;
  // per-grid-point cumulative counts, row k = counts at t(k) inclusive
  std::vector<std::vector<long>> counts_grid() const;
};

struct TruthPath {
  TimeGrid grid;
  int d = 0, m = 0, n = 0, p = 0;
  Mat S, Y, z;       // (steps+1) x dim
  Mat dW, dB, dV;    // steps x dim
  std::vector<int> chain_state;  // per grid point
  std::vector<ChainJump> chain_jumps;
  std::vector<Event> events;
  Mat Q;
  int n_channels = 0;
  int num_chain_states = 1;
};

TruthPath simulate_truth(const MarketSpec& market, const RiskPremiumModel& rp,
                         const ChainModel& chain,
                         const std::vector<CountingChannel>& channels,
                         const Vec& q0, double horizon, double step,
                         uint64_t seed, uint32_t path_index = 0,
                         uint32_t ensemble_id = 0);

ObservedPath observable_projection(const TruthPath& path);
ObservedPath observable_projection(const ObservedPath& path);  // identity

// Coefficient evaluation with shape and conditioning checks.
Mat eval_coeff(const StateCoeffFn& fn, double t, const Vec& S, const Vec& Y,
               int rows, int cols, const char* what);
double condition_number(const Mat& a);

bool gate_open(const CountingChannel& ch, std::span<const double> queues);
void apply_queue_effect(const CountingChannel& ch, Vec& queues);
// max over chain states of the channel intensity at a snapshot
double max_state_intensity(const CountingChannel& ch, const ObsSnapshot& snap,
                           int n_states);

}  // namespace mvh
