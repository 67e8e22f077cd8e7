#include "mvh/kalman.hpp"

#include <algorithm>
#include <cmath>

namespace mvh {

namespace {

constexpr double kPsdFloor = -1e-10;

Mat riccati_rhs(const RiskPremiumModel& rp, double t, const Mat& s) {
  Mat f = rp.bigF(t);
  Mat de = rp.delta(t);
  return de * de.transpose() - f * s - s * f.transpose() - s * s;
}

// Symmetrize, then clip tiny negative eigenvalues; anything materially
// negative means the step was too coarse for this coefficient set.
Mat repair_psd(Mat s, double t) {
  s = 0.5 * (s + s.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  double lo = es.eigenvalues().minCoeff();
  if (lo >= 0.0) return s;
  if (lo < kPsdFloor)
    throw StepTooCoarse("covariance lost positive semidefiniteness at t = " +
                        std::to_string(t));
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Mat CovarianceSolution::at(double t) const {
  if (sigma.empty()) throw EngineError("covariance solution is empty");
  double pos = t / grid.dt;
  if (pos <= 0.0) return sigma.front();
  if (pos >= grid.steps) return sigma.back();
  int k = static_cast<int>(pos);
  double w = pos - k;
  return (1.0 - w) * sigma[k] + w * sigma[k + 1];
}

CovarianceSolution solve_covariance(const RiskPremiumModel& rp, double horizon,
                                    double step) {
  rp.validate();
  CovarianceSolution out;
  out.grid.dt = step;
  out.grid.steps = steps_for(horizon, step);
  out.sigma.resize(out.grid.steps + 1);
  Mat s = repair_psd(rp.sigma0, 0.0);
  out.sigma[0] = s;
  for (int k = 0; k < out.grid.steps; ++k) {
    double t = out.grid.t(k);
    Mat k1 = riccati_rhs(rp, t, s);
    Mat k2 = riccati_rhs(rp, t + 0.5 * step, s + 0.5 * step * k1);
    Mat k3 = riccati_rhs(rp, t + 0.5 * step, s + 0.5 * step * k2);
    Mat k4 = riccati_rhs(rp, t + step, s + step * k3);
    s += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s = repair_psd(std::move(s), out.grid.t(k + 1));
    out.sigma[k + 1] = s;
  }
  return out;
}

KalmanState propagate(const KalmanState& state, const CovarianceSolution& cov,
                      const RiskPremiumModel& rp, const Vec& dw_tilde,
                      double dt) {
  if (!(dt > 0.0)) throw EngineError("propagate: dt must be positive");
  KalmanState next;
  next.t = state.t + dt;
  Mat s = cov.at(state.t);
  Vec dn = dw_tilde - state.z_hat * dt;
  next.z_hat = state.z_hat + (rp.mu(state.t) - rp.bigF(state.t) * state.z_hat) * dt +
               s * dn;
  return next;
}

Vec wtilde_increment(const MarketSpec& market, double t, const Vec& S,
                     const Vec& Y, const Vec& dS, const Vec& dY) {
  const int d = market.d, m = market.m;
  Mat sg = eval_coeff(market.sigma, t, S, Y, d, d, "sigma");
  if (condition_number(sg) > 1e12)
    throw NonInvertibleCoefficient("sigma ill-conditioned at t = " +
                                   std::to_string(t));
  Vec out(d + m);
  Vec dw = sg.partialPivLu().solve(dS);
  out.head(d) = dw;
  if (m > 0) {
    Mat sb = eval_coeff(market.sigma_bar, t, S, Y, m, d, "sigma_bar");
    Mat rh = eval_coeff(market.rho, t, S, Y, m, m, "rho");
    if (condition_number(rh) > 1e12)
      throw NonInvertibleCoefficient("rho ill-conditioned at t = " +
                                     std::to_string(t));
    out.tail(m) = rh.partialPivLu().solve(dY - sb * dw);
  }
  return out;
}

KalmanRun run_kalman(const ObservedPath& path, const MarketSpec& market,
                     const RiskPremiumModel& rp, const CovarianceSolution& cov,
                     const Vec& z_hat0) {
  const int n = rp.n();
  const int K = path.grid.steps;
  KalmanRun run;
  run.grid = path.grid;
  run.t_start = path.t_start;
  run.z_hat.resize(K + 1, n);
  run.innovations.setZero(K + 1, n);
  run.dn.resize(K, n);

  KalmanState st{path.t_start, z_hat0};
  run.z_hat.row(0) = st.z_hat.transpose();
  Vec cum = Vec::Zero(n);
  for (int k = 0; k < K; ++k) {
    double t = path.t(k);
    Vec S = path.S.row(k).transpose();
    Vec dS = path.S.row(k + 1).transpose() - S;
    Vec Y(path.m), dY(path.m);
    if (path.m > 0) {
      Y = path.Y.row(k).transpose();
      dY = path.Y.row(k + 1).transpose() - Y;
    }
    Vec dw = wtilde_increment(market, t, S, Y, dS, dY);
    Vec dn = dw - st.z_hat * path.grid.dt;
    run.dn.row(k) = dn.transpose();
    cum += dn;
    run.innovations.row(k + 1) = cum.transpose();
    st = propagate(st, cov, rp, dw, path.grid.dt);
    run.z_hat.row(k + 1) = st.z_hat.transpose();
  }
  return run;
}

}  // namespace mvh
