#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvh/hedge.hpp"
#include "mvh/market_model.hpp"

namespace mvh {

// A network of managed pools: per-pool subscriptions A(i) and redemptions
// D(i), inter-pool switches F(i,j), and marked claim arrivals N(i) that
// leave the pool sizes untouched.  Everything compiles down to the generic
// counting-channel machinery; this header only adds the bookkeeping.

struct NetworkSpec {
  struct MarkedArrival {
    int fund = 0;
    IntensityFn intensity;
    MarkLaw mark;
  };

  int n_funds = 0;
  Vec q0;
  std::vector<IntensityFn> inflow;                 // null entries allowed
  std::vector<IntensityFn> outflow;                // gated on the own pool
  std::vector<std::vector<IntensityFn>> transfer;  // [from][to], null allowed
  std::vector<MarkedArrival> marked;

  void validate() const;
};

struct NetworkChannels {
  std::vector<CountingChannel> channels;
  std::vector<int> inflow;    // channel index per fund, -1 if absent
  std::vector<int> outflow;   // likewise
  Eigen::MatrixXi transfer;   // [from][to], -1 if absent
  std::vector<int> marked;    // parallel to NetworkSpec::marked
};

NetworkChannels build_network_channels(const NetworkSpec& spec);

// Gross inflow per pool: own subscriptions plus switches in.
Vec arrivals_total(const NetworkSpec& spec, const NetworkChannels& nc,
                   std::span<const long> counts);

// Gross outflow per pool: own redemptions plus switches out.
Vec departures_total(const NetworkSpec& spec, const NetworkChannels& nc,
                     std::span<const long> counts);

// Pool sizes implied by the event counts alone; simulated queues must agree
// with this exactly.
Vec network_queue_from_counts(const NetworkSpec& spec,
                              const NetworkChannels& nc,
                              std::span<const long> counts);

// Signed per-event fees and claim severities for the network; entries may be
// left null where no cash changes hands.
struct NetworkCashflow {
  Vec kappa;
  std::vector<FeeFn> inflow_fee;
  std::vector<FeeFn> outflow_fee;
  std::vector<std::vector<FeeFn>> transfer_fee;
  std::vector<LossFn> marked_loss;  // parallel to NetworkSpec::marked
};

CashflowSpec network_cashflow(const NetworkSpec& spec,
                              const NetworkChannels& nc,
                              const NetworkCashflow& cf);

}  // namespace mvh
