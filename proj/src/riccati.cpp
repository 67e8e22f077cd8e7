#include "mvh/riccati.hpp"

#include <cmath>

namespace mvh {

namespace {

constexpr double kBlowUpNorm = 1e8;

struct RiccatiState {
  Mat a2;
  Vec a1;
  double a0;
};

struct Coeffs {
  Mat xi;       // Sigma_d' Sigma_d - Sigma_m' Sigma_m
  Mat sig;      // Sigma(t)
  Mat f;        // F(t)
  Vec mu;       // mu(t)
  Mat proj_d;   // diag(1 x d, 0 x m)
};

Coeffs coeffs_at(const RiskPremiumModel& rp, const CovarianceSolution& cov,
                 double t, int d) {
  Coeffs c;
  c.sig = cov.at(t);
  const int n = static_cast<int>(c.sig.rows());
  Mat sd = c.sig.topRows(d);
  Mat sm = c.sig.bottomRows(n - d);
  c.xi = sd.transpose() * sd - sm.transpose() * sm;
  c.f = rp.bigF(t);
  c.mu = rp.mu(t);
  c.proj_d = Mat::Zero(n, n);
  for (int i = 0; i < d; ++i) c.proj_d(i, i) = 1.0;
  return c;
}

RiccatiState rhs(const RiccatiState& s, const Coeffs& c) {
  RiccatiState r;
  r.a2 = 2.0 * c.proj_d + s.a2 * c.xi * s.a2 + c.f.transpose() * s.a2 +
         s.a2 * c.f +
         2.0 * (c.proj_d * c.sig * s.a2 + s.a2 * c.sig * c.proj_d);
  r.a1 = -s.a2 * c.mu +
         (c.f.transpose() + s.a2 * c.xi + 2.0 * c.proj_d * c.sig) * s.a1;
  r.a0 = -c.mu.dot(s.a1) - 0.5 * (s.a2 * c.sig * c.sig).trace() +
         0.5 * s.a1.dot(c.xi * s.a1);
  return r;
}

RiccatiState axpy(const RiccatiState& s, double h, const RiccatiState& k) {
  return {s.a2 + h * k.a2, s.a1 + h * k.a1, s.a0 + h * k.a0};
}

}  // namespace

Mat RiccatiSolution::a2_at(double t) const {
  double pos = t / grid.dt;
  if (pos <= 0.0) return a2.front();
  if (pos >= grid.steps) return a2.back();
  int k = static_cast<int>(pos);
  double w = pos - k;
  return (1.0 - w) * a2[k] + w * a2[k + 1];
}

Vec RiccatiSolution::a1_at(double t) const {
  double pos = t / grid.dt;
  if (pos <= 0.0) return a1.front();
  if (pos >= grid.steps) return a1.back();
  int k = static_cast<int>(pos);
  double w = pos - k;
  return (1.0 - w) * a1[k] + w * a1[k + 1];
}

double RiccatiSolution::a0_at(double t) const {
  double pos = t / grid.dt;
  if (pos <= 0.0) return a0.front();
  if (pos >= grid.steps) return a0.back();
  int k = static_cast<int>(pos);
  double w = pos - k;
  return (1.0 - w) * a0[k] + w * a0[k + 1];
}

RiccatiSolution solve_riccati(const RiskPremiumModel& rp,
                              const CovarianceSolution& cov, int d,
                              double horizon) {
  const int n = rp.n();
  if (d < 1 || d > n) throw EngineError("riccati: bad tradable dimension");
  if (std::abs(cov.grid.horizon() - horizon) > 1e-9)
    throw EngineError("riccati: covariance grid does not span the horizon");

  RiccatiSolution sol;
  sol.grid = cov.grid;
  sol.d = d;
  sol.m = n - d;
  const int K = sol.grid.steps;
  sol.a2.resize(K + 1);
  sol.a1.resize(K + 1);
  sol.a0.resize(K + 1);
  sol.a2[K] = Mat::Zero(n, n);
  sol.a1[K] = Vec::Zero(n);
  sol.a0[K] = 0.0;

  // Backward integration, two covariance nodes per RK4 step so every stage
  // evaluates Sigma at a stored node rather than an interpolant.
  RiccatiState s{sol.a2[K], sol.a1[K], sol.a0[K]};
  int k = K;
  while (k > 0) {
    int stride = k >= 2 ? 2 : 1;
    double h = -stride * sol.grid.dt;
    double t_hi = sol.grid.t(k);
    double t_mid = sol.grid.t(k) + 0.5 * h;
    double t_lo = sol.grid.t(k - stride);
    Coeffs c_hi = coeffs_at(rp, cov, t_hi, d);
    Coeffs c_mid = coeffs_at(rp, cov, t_mid, d);
    Coeffs c_lo = coeffs_at(rp, cov, t_lo, d);
    RiccatiState k1 = rhs(s, c_hi);
    RiccatiState k2 = rhs(axpy(s, 0.5 * h, k1), c_mid);
    RiccatiState k3 = rhs(axpy(s, 0.5 * h, k2), c_mid);
    RiccatiState k4 = rhs(axpy(s, h, k3), c_lo);
    s.a2 += (h / 6.0) * (k1.a2 + 2.0 * k2.a2 + 2.0 * k3.a2 + k4.a2);
    s.a1 += (h / 6.0) * (k1.a1 + 2.0 * k2.a1 + 2.0 * k3.a1 + k4.a1);
    s.a0 += (h / 6.0) * (k1.a0 + 2.0 * k2.a0 + 2.0 * k3.a0 + k4.a0);
    s.a2 = 0.5 * (s.a2 + s.a2.transpose()).eval();
    if (!s.a2.allFinite() || !s.a1.allFinite() || !std::isfinite(s.a0) ||
        s.a2.cwiseAbs().maxCoeff() > kBlowUpNorm ||
        s.a1.cwiseAbs().maxCoeff() > kBlowUpNorm || std::abs(s.a0) > kBlowUpNorm)
      throw BlowUpError(t_lo);
    k -= stride;
    sol.a2[k] = s.a2;
    sol.a1[k] = s.a1;
    sol.a0[k] = s.a0;
    if (stride == 2) {
      // fill the skipped node for interpolation-based evaluation
      sol.a2[k + 1] = 0.5 * (sol.a2[k] + sol.a2[k + 2]);
      sol.a1[k + 1] = 0.5 * (sol.a1[k] + sol.a1[k + 2]);
      sol.a0[k + 1] = 0.5 * (sol.a0[k] + sol.a0[k + 2]);
    }
  }
  return sol;
}

double v_l(const RiccatiSolution& sol, double t, const Vec& z_hat) {
  Mat a2 = sol.a2_at(t);
  Vec a1 = sol.a1_at(t);
  return 0.5 * z_hat.dot(a2 * z_hat) + a1.dot(z_hat) + sol.a0_at(t);
}

double v2(const RiccatiSolution& sol, double t, const Vec& z_hat) {
  return std::exp(v_l(sol, t, z_hat));
}

HedgeLoadings hedge_loadings(const RiccatiSolution& sol,
                             const CovarianceSolution& cov, double t,
                             const Vec& z_hat) {
  Mat sig = cov.at(t);
  Vec load = sig * (sol.a1_at(t) + sol.a2_at(t) * z_hat);
  HedgeLoadings out;
  out.z_l = load.head(sol.d);
  out.gamma_l = load.tail(sol.m);
  out.z2 = v2(sol, t, z_hat) * out.z_l;
  return out;
}

}  // namespace mvh
