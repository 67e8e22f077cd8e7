#pragma once

#include <functional>
#include <vector>

#include "mvh/chain_filter.hpp"
#include "mvh/insurance.hpp"
#include "mvh/kalman.hpp"
#include "mvh/market_model.hpp"
#include "mvh/riccati.hpp"

namespace mvh {

// Everything that defines the environment but not the claim: market
// coefficients, hidden premium and chain, event channels, initial fund
// sizes, and the precomputed deterministic solutions on a shared grid.
struct EngineModels {
  MarketSpec market;
  RiskPremiumModel rp;
  ChainModel chain;
  std::vector<CountingChannel> channels;
  Vec q0;
  double horizon = 1.0;
  CovarianceSolution cov;
  RiccatiSolution riccati;

  int n_funds() const { return static_cast<int>(q0.size()); }
};

// Validates the pieces, solves the covariance ODE on `solver_step` and the
// backward expansion on the same grid.
EngineModels build_models(MarketSpec market, RiskPremiumModel rp,
                          ChainModel chain,
                          std::vector<CountingChannel> channels, Vec q0,
                          double horizon, double solver_step);

// A G-adapted evaluation point: the observable coordinates plus the two
// sufficient statistics of the filters.
struct SystemState {
  double t = 0.0;
  Vec S, Y;
  Vec z_hat;
  Vec q;  // chain filter weights, unit mass
  std::vector<long> counts;
  Vec queues;
};

SystemState initial_state(const EngineModels& models);

// Signed cash conventions: kappa * Q accrues to the hedger continuously,
// an event on channel k pays the hedger fee_k (negative for charges), and a
// marked event costs loss(t, x) so its signed flow is -loss.
struct ChannelFlow {
  FeeFn fee;    // unmarked channels; evaluated at the pre-event snapshot
  LossFn loss;  // marked channels; per-event payout, charged to the hedger
};

struct CashflowSpec {
  Vec kappa;                       // per fund; empty means zero
  std::vector<ChannelFlow> flows;  // per channel; may be shorter than channels
};

struct ClaimSpec {
  std::function<double(const ObservedPath&)> payoff;  // terminal, G-measurable
  CashflowSpec flows;
};

// Mean signed flow of channel k at a snapshot: fee for unmarked channels,
// minus the expected payout for marked ones. Zero when no flow is attached.
double flow_mean(const CashflowSpec& flows,
                 const std::vector<CountingChannel>& channels, int channel,
                 const ObsSnapshot& snap);
// Mean squared signed flow (fee^2, or the expected squared payout).
double flow_mean_sq(const CashflowSpec& flows,
                    const std::vector<CountingChannel>& channels, int channel,
                    const ObsSnapshot& snap);
// Realized signed flow at an event.
double flow_realized(const CashflowSpec& flows,
                     const std::vector<CountingChannel>& channels,
                     const Event& ev, const ObsSnapshot& snap);

enum class Measure {
  physical,  // observable dynamics under the innovations representation
  hedging    // the claim-pricing tilt: price drift -Z_L, discount exp(-int eta)
};

// One simulated path of the observable system together with the filters that
// were run along it. Everything an estimator needs, nothing hidden.
struct FilteredPath {
  ObservedPath obs;
  Mat z_hat;       // (steps+1) x n
  Mat x_hat;       // (steps+1) x N
  Mat q;           // (steps+1) x N, unit mass
  Mat lambda_hat;  // (steps+1) x n_channels, gate applied
  Vec discount;    // cumulative exp(-int eta); all ones under physical
  std::vector<std::vector<long>> counts;  // per grid point, per channel

  SystemState state_at(int k) const;
};

FilteredPath simulate_filtered(const EngineModels& models,
                               const SystemState& from, double step,
                               Measure measure, uint64_t seed,
                               uint32_t path_index = 0,
                               uint32_t ensemble_id = 0);

// Running mean-flow rate c(t) entering the linear value component: kappa.Q
// plus the gated compensator intensities weighted by their mean signed flows.
double mean_flow_rate(const EngineModels& models, const CashflowSpec& flows,
                      const FilteredPath& fp, int k);

// Monte Carlo samples of the linear value component at `from`:
//   sample = D_T H - sum_k dt D_k c_k V2_k,
// one entry per path, ordering fixed by path index.
std::vector<double> v1_samples(const EngineModels& models,
                               const ClaimSpec& claim, const SystemState& from,
                               double step, int n_paths, uint64_t seed,
                               int threads = 1, uint32_t ensemble_id = 0);

MeanSe estimate_v1(const EngineModels& models, const ClaimSpec& claim,
                   const SystemState& from, double step, int n_paths,
                   uint64_t seed, int threads = 1, uint32_t ensemble_id = 0);

// Price-exposure vector of the linear component by central differences in the
// continuous coordinates, common random numbers across bumps:
//   Z1 = sigma' dV1/dS + sigma_bar' dV1/dY + (Sigma' dV1/dz_hat) restricted
// to the tradable block.
Vec estimate_z1_fd(const EngineModels& models, const ClaimSpec& claim,
                   const SystemState& from, double step, int n_paths,
                   uint64_t seed, int threads = 1, uint32_t ensemble_id = 0,
                   double rel_bump = 1e-4);

// State reached by letting channel `ch` fire at s.t: count up, Bayes update
// of the chain weights, queue moved. The mark does not enter the state.
SystemState apply_event_to_state(const EngineModels& models,
                                 const SystemState& s, int ch);

// V1(s + event on ch) - V1(s), both sides estimated with the same seeds.
MeanSe estimate_event_shift(const EngineModels& models, const ClaimSpec& claim,
                            const SystemState& from, int ch, double step,
                            int n_paths, uint64_t seed, int threads = 1,
                            uint32_t ensemble_id = 0);

// A hedging rule: shares held per tradable asset as a function of the
// filtered state and current wealth.
struct HedgePolicy {
  std::function<Vec(const SystemState&, double wealth)> control;
};

struct HedgeReport {
  int n_paths = 0;
  double w0 = 0.0;
  MeanSe terminal_error;  // mean of H - W_T
  double error_std = 0.0;
  MeanSe realized_msq;  // mean of (H - W_T)^2
  double claim_std = 0.0;
  Vec time;          // grid times
  Vec wealth_mean;   // per grid point
  Vec monitor_mean;  // per grid point, empty unless a monitor was passed
  std::vector<double> errors;  // per path, H - W_T
};

// Simulates the true (hidden-state) world, runs both filters on the
// observable projection, applies the policy on the grid and accrues the
// signed cashflows. `monitor` is an optional diagnostic functional of
// (state, wealth) averaged over paths at every grid point.
HedgeReport backtest(
    const EngineModels& models, const ClaimSpec& claim,
    const HedgePolicy& policy, double w0, double step, int n_paths,
    uint64_t seed, int threads = 1, uint32_t ensemble_id = 0,
    const std::function<double(const SystemState&, double)>& monitor = nullptr);

}  // namespace mvh
