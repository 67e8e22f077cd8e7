#pragma once

#include <vector>

#include "mvh/market_model.hpp"

namespace mvh {

// Unnormalized conditional law q of the hidden chain given observed events.
// Scale carries no information: the normalized estimate is q / (1'q), and a
// renormalization shifts the discarded magnitude into log_scale.
struct UnnormalizedFilter {
  double t = 0.0;
  Vec q;
  double log_scale = 0.0;
  Vec x_hat() const { return q / q.sum(); }
};

// Fixed observable context bracketing one grid step. S/Y are interpolated
// linearly across [t0, t1]; counts and queues are constant between events.
struct FilterSegment {
  double t0 = 0.0, t1 = 0.0;  // interpolation bracket
  const Vec* s_begin = nullptr;
  const Vec* s_end = nullptr;
  const Vec* y_begin = nullptr;
  const Vec* y_end = nullptr;
  std::span<const long> counts;
  std::span<const double> queues;
};

struct FilterContext {
  const ChainModel* chain = nullptr;
  const std::vector<CountingChannel>* channels = nullptr;
};

// One RK4 step of dq = [R(t) - sum_k g_k (Lambda_k(t) - I)] q dt over
// [from, to] inside the bracket; precondition: no event inside (from, to].
void evolve_between_events(UnnormalizedFilter& f, const FilterContext& ctx,
                           const FilterSegment& seg, double from, double to);

// Bayes update at an observed event on `channel`: q <- Lambda_k(t) q.
void apply_event(UnnormalizedFilter& f, const FilterContext& ctx, int channel,
                 const ObsSnapshot& snap);

// Gate-adjusted compensator intensity (lambda_k(t, .) . x_hat) 1{gate open}.
double filtered_intensity(const UnnormalizedFilter& f, const FilterContext& ctx,
                          int channel, const ObsSnapshot& snap);

// Renormalize when 1'q leaves [lo, hi]; returns true if rescaled.
bool renormalize_if_needed(UnnormalizedFilter& f, double lo = 1e-30,
                           double hi = 1e30);

struct ChainFilterRun {
  TimeGrid grid;
  double t_start = 0.0;
  Mat x_hat;       // (steps+1) x N
  Mat q;           // (steps+1) x N, renormalized to unit mass at export
  Mat lambda_hat;  // (steps+1) x n_channels, gate applied
  double log_scale_total = 0.0;
};

ChainFilterRun run_chain_filter(const ObservedPath& path, const ChainModel& chain,
                                const std::vector<CountingChannel>& channels,
                                const Vec& q0);

}  // namespace mvh
