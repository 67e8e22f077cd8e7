#pragma once

#include <vector>

#include "mvh/market_model.hpp"

namespace mvh {

// Inverse-CDF draw from the mark law at time t, via a 256-point tabulated CDF.
double sample_mark(const MarkLaw& law, double t, RngStream& rng);

// Expected payout per event at time t: integral of l(t, x) nu_t(x) dx over
// the support, 32-point Gauss-Legendre.
double lbar(const MarkLaw& law, const LossFn& l, double t);
// Same for the squared payout l(t, x)^2.
double lbar_sq(const MarkLaw& law, const LossFn& l, double t);

// Gauss-Legendre nodes/weights on [a, b].
void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights);

// Realized cumulative payout of a marked channel along a path: a right-
// continuous step function jumping by l(t_i, x_i) at each event.
struct LossPath {
  std::vector<double> times;
  std::vector<double> cum;
  double at(double t) const;
  double terminal() const { return cum.empty() ? 0.0 : cum.back(); }
};
LossPath cumulative_loss(const ObservedPath& path, int channel, const LossFn& l);

// Queue with one entry and two exit channels: Q = Q0 + A - C - D.
// Returns the per-grid-point queue and validates nonnegativity.
std::vector<double> two_exit_queue(double q0, const ObservedPath& path,
                                   int a_channel, int c_channel, int d_channel);

// Severity-graded hidden state space. Grades j = 0..n_g ride along the
// fund-factor index i = 0..n_f-1, giving N = n_f * (n_g + 1) states indexed
// idx = i * (n_g + 1) + j. The generator is the fund-factor generator acting
// on i plus escalation (j -> j+1) and relaxation (j -> j-1) acting on j, so
// grades mean-revert toward j = 0.
struct GradedRecipe {
  double on_grade_loading = 4.0;  // event-rate multiplier on states with j == k
  Vec base_event_rate;            // per grade k = 1..n_g (size n_g)
  Vec base_inflow;                // per fund factor i (size n_f)
  Vec base_outflow;               // per fund factor i (size n_f)
  Vec grade_factor_inflow;        // per grade j (size n_g + 1)
  Vec grade_factor_outflow;       // per grade j (size n_g + 1)
  double relax_rate = 1.0;
  double escalate_rate = 0.2;
};

struct GradedSpace {
  int n_f = 1, n_g = 0;
  ChainModel chain;
  int index(int i, int j) const { return i * (n_g + 1) + j; }
  // per-state intensity vectors, length n_f * (n_g + 1)
  std::vector<Vec> event_rates;  // one per grade channel k = 1..n_g
  Vec inflow_rate, outflow_rate;
};

GradedSpace build_graded_state_space(int n_f, int n_g, const TimeMatFn& factor_gen,
                                     const Vec& factor_x0,
                                     const GradedRecipe& recipe);

// Wraps a per-state rate vector as an IntensityFn.
IntensityFn state_rate_intensity(Vec rates);

}  // namespace mvh
