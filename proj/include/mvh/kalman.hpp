#pragma once

#include <vector>

#include "mvh/market_model.hpp"

namespace mvh {

// Deterministic conditional covariance of the hidden premium given the
// observation filtration: dSigma/dt = delta delta' - F Sigma - Sigma F' - Sigma^2.
struct CovarianceSolution {
  TimeGrid grid;           // solver grid
  std::vector<Mat> sigma;  // per grid point, symmetric PSD
  Mat at(double t) const;  // linear interpolation, clamped to [0, horizon]
  const Mat& node(int k) const { return sigma[k]; }
};

CovarianceSolution solve_covariance(const RiskPremiumModel& rp, double horizon,
                                    double step);

struct KalmanState {
  double t = 0.0;
  Vec z_hat;
};

// One Euler step of dz_hat = (mu - F z_hat) dt + Sigma(t) (dw - z_hat dt),
// where dw is the reconstructed observation increment over [t, t+dt].
KalmanState propagate(const KalmanState& state, const CovarianceSolution& cov,
                      const RiskPremiumModel& rp, const Vec& dw_tilde,
                      double dt);

// Observation increment (dW~; dB~) rebuilt from price/factor increments:
// dW~ = sigma^{-1} dS, dB~ = rho^{-1} (dY - sigma_bar sigma^{-1} dS).
Vec wtilde_increment(const MarketSpec& market, double t, const Vec& S,
                     const Vec& Y, const Vec& dS, const Vec& dY);

struct KalmanRun {
  TimeGrid grid;
  double t_start = 0.0;
  Mat z_hat;        // (steps+1) x n
  Mat innovations;  // (steps+1) x n, cumulative (N_t; M_t)
  Mat dn;           // steps x n, innovation increments
};

KalmanRun run_kalman(const ObservedPath& path, const MarketSpec& market,
                     const RiskPremiumModel& rp, const CovarianceSolution& cov,
                     const Vec& z_hat0);

}  // namespace mvh
