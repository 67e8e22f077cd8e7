#pragma once

#include <vector>

#include "mvh/kalman.hpp"

namespace mvh {

// Backward quadratic expansion of the log of the pure-investment value:
// V_L(t, z_hat) = 0.5 z_hat' a2 z_hat + a1' z_hat + a0 with a2(T) = a1(T) = 0,
// a0(T) = 0, integrated on the covariance grid. v2 = exp(V_L) lies in (0, 1].
struct RiccatiSolution {
  TimeGrid grid;
  int d = 1, m = 0;
  std::vector<Mat> a2;
  std::vector<Vec> a1;
  std::vector<double> a0;
  Mat a2_at(double t) const;
  Vec a1_at(double t) const;
  double a0_at(double t) const;
};

// Integrates the coupled backward system on the covariance solution's grid
// (pairwise RK4 steps hit stored covariance nodes exactly). Throws
// BlowUpError with the divergence time when the solution norm crosses 1e8.
RiccatiSolution solve_riccati(const RiskPremiumModel& rp,
                              const CovarianceSolution& cov, int d,
                              double horizon);

double v_l(const RiccatiSolution& sol, double t, const Vec& z_hat);
double v2(const RiccatiSolution& sol, double t, const Vec& z_hat);

// Martingale loadings of V_L and the tradable loading of v2:
// (z_l; gamma_l) = Sigma(t) (a1 + a2 z_hat), z2 = v2 * z_l.
struct HedgeLoadings {
  Vec z_l;      // d
  Vec gamma_l;  // m
  Vec z2;       // d
};
HedgeLoadings hedge_loadings(const RiccatiSolution& sol,
                             const CovarianceSolution& cov, double t,
                             const Vec& z_hat);

}  // namespace mvh
