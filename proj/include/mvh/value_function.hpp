#pragma once

#include <vector>

#include "mvh/hedge.hpp"

namespace mvh {

// Default ensemble ids so the standard stages draw independent noise without
// the caller having to bookkeep: surface fitting, the quadratic component,
// the point estimate of the linear component, and backtests.
inline constexpr uint32_t kFitEnsemble = 1;
inline constexpr uint32_t kV0Ensemble = 2;
inline constexpr uint32_t kV1Ensemble = 3;
inline constexpr uint32_t kBacktestEnsemble = 4;

// Least-squares value surface over grid slices. The regression basis is all
// monomials of total degree <= 2 in the continuous block (S, Y, z_hat) plus
// linear terms in the event counts, the fund sizes, and the first N-1 chain
// weights. Features are standardized per slice; constant features drop out.
struct LsmSurface {
  TimeGrid grid;
  double t_start = 0.0;
  int d = 0, m = 0, n = 0;
  int n_channels = 0, n_funds = 0, n_states = 1;

  std::vector<Vec> mu, sd;             // per slice, full feature vector
  std::vector<std::vector<int>> kept;  // per slice, surviving feature indices
  std::vector<Vec> coef;  // per slice, intercept followed by kept features
  std::vector<char> ridged;
  std::vector<double> r2;

  int n_features() const;
  bool fitted() const { return !coef.empty(); }
  // Nearest slice; throws when t is not on the slice grid.
  int slice_of(double t) const;
  void features(const SystemState& s, Vec& f) const;
  double value(const SystemState& s) const;
  double value_at_slice(int k, const SystemState& s) const;
  // Gradient in the continuous block (size d+m+n). Slice 0 is fit against a
  // single deterministic state, so its gradient is read from slice 1.
  Vec cont_gradient(const SystemState& s) const;
};

// Fits one surface per claim from a single common set of paths: the path law
// does not depend on the claim, so all responses share features and Gram
// matrix. Two streaming passes; paths are regenerated identically.
std::vector<LsmSurface> fit_surfaces(const EngineModels& models,
                                     const std::vector<ClaimSpec>& claims,
                                     const SystemState& from, double step,
                                     int n_paths, uint64_t seed,
                                     int threads = 1,
                                     uint32_t ensemble_id = kFitEnsemble);

LsmSurface fit_surface(const EngineModels& models, const ClaimSpec& claim,
                       const SystemState& from, double step, int n_paths,
                       uint64_t seed, int threads = 1,
                       uint32_t ensemble_id = kFitEnsemble);

// Exposure vector of the linear component read off the fitted surface.
Vec surface_z1(const EngineModels& models, const LsmSurface& surface,
               const SystemState& s);

// Monte Carlo samples of the quadratic component at `from` under the
// physical measure, with the surface supplying the linear component inside
// the integrand. One entry per path, ordering fixed by path index.
std::vector<double> v0_samples(const EngineModels& models,
                               const ClaimSpec& claim,
                               const LsmSurface& surface,
                               const SystemState& from, double step,
                               int n_paths, uint64_t seed, int threads = 1,
                               uint32_t ensemble_id = kV0Ensemble);

MeanSe estimate_v0(const EngineModels& models, const ClaimSpec& claim,
                   const LsmSurface& surface, const SystemState& from,
                   double step, int n_paths, uint64_t seed, int threads = 1,
                   uint32_t ensemble_id = kV0Ensemble);

// The value function in wealth at a fixed state: V(w) = w^2 v2 - 2 w v1 + v0.
struct ValueQuadratic {
  double t = 0.0;
  double v2 = 1.0;
  MeanSe v1, v0;
  double at(double w) const { return w * w * v2 - 2.0 * w * v1.mean + v0.mean; }
  double se_at(double w) const {
    return std::sqrt(4.0 * w * w * v1.se * v1.se + v0.se * v0.se);
  }
  double minimizer() const { return v1.mean / v2; }
  double min_value() const { return v0.mean - v1.mean * v1.mean / v2; }
};

// v2 exactly from the backward expansion, v1 as a plain Monte Carlo mean
// (free of regression bias), v0 through the surface machinery. The two
// estimates use independent ensembles so their errors combine in quadrature.
ValueQuadratic assemble_value(const EngineModels& models,
                              const ClaimSpec& claim,
                              const LsmSurface& surface,
                              const SystemState& from, double step,
                              int n_v1_paths, int n_v0_paths, uint64_t seed,
                              int threads = 1);

// Variance-optimal hedge ratio from the fitted surface, optionally scaled
// (scale = 1 is the optimum; other values give deliberately detuned rules).
HedgePolicy optimal_control(const EngineModels& models,
                            const LsmSurface& surface, double scale = 1.0);

// Diagnostic functional w^2 v2 - 2 w V1(state) for backtest monitoring.
std::function<double(const SystemState&, double)> quadratic_monitor(
    const EngineModels& models, const LsmSurface& surface);

struct DriftStat {
  double drift = 0.0;  // realized mean square error minus assembled value
  double se = 0.0;
};

DriftStat drift_statistic(const HedgeReport& report,
                          const ValueQuadratic& quad);

// Same-state comparison of claim/cashflow packages. All policies share v2
// and the simulation noise; pairwise differences are estimated path by path.
struct PolicyComparison {
  double v2 = 1.0;
  std::vector<ValueQuadratic> quad;
  Vec w_grid;
  Mat value;     // policy x grid point
  Mat value_se;  // policy x grid point

  struct PairDiff {
    int a = 0, b = 0;
    MeanSe d1, d0;  // v1_a - v1_b, v0_a - v0_b
  };
  std::vector<PairDiff> diffs;

  const PairDiff& pair(int a, int b) const;
  // Difference of the two parabolas at w (the quadratic term cancels).
  double diff_at(int a, int b, double w) const;
  double diff_se_at(int a, int b, double w) const;
  // Wealth level where the two value functions cross; NaN when parallel.
  double crossing(int a, int b) const;
  // True when a is below b across the whole grid with 3-se margin.
  bool dominates(int a, int b) const;
};

PolicyComparison compare_policies(const EngineModels& models,
                                  const std::vector<ClaimSpec>& policies,
                                  const SystemState& from, double step,
                                  int fit_paths, int v1_paths, int v0_paths,
                                  uint64_t seed, int threads,
                                  const Vec& w_grid);

}  // namespace mvh
