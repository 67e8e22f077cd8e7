#include "mvh/value_function.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace mvh {

namespace {

std::pair<int, int> quad_pair(int nc, int q) {
  for (int i = 0; i < nc; ++i) {
    int row = nc - i;
    if (q < row) return {i, i + q};
    q -= row;
  }
  throw EngineError("surface: quadratic feature index out of range");
}

// Backward-expansion coefficients frozen on the slice grid, so per-path
// evaluation is a quadratic form instead of an interpolation.
struct RiccatiSlices {
  std::vector<Mat> a2;
  std::vector<Vec> a1;
  std::vector<double> a0;

  double v2_at(int k, const Vec& z) const {
    double vl = 0.5 * z.dot(a2[k] * z) + a1[k].dot(z) + a0[k];
    return std::exp(vl);
  }
};

RiccatiSlices riccati_slices(const RiccatiSolution& sol, double t_start,
                             const TimeGrid& grid) {
  RiccatiSlices rs;
  rs.a2.reserve(grid.steps + 1);
  rs.a1.reserve(grid.steps + 1);
  rs.a0.reserve(grid.steps + 1);
  for (int k = 0; k <= grid.steps; ++k) {
    double t = t_start + grid.t(k);
    rs.a2.push_back(sol.a2_at(t));
    rs.a1.push_back(sol.a1_at(t));
    rs.a0.push_back(sol.a0_at(t));
  }
  return rs;
}

// Mark integrals of the signed flows on the slice grid; zero rows for
// channels without marks or without a loss attached.
struct MarkTables {
  Mat lbar_pos;  // expected payout per event
  Mat lbar2;     // expected squared payout
};

MarkTables mark_tables(const EngineModels& models, const CashflowSpec& flows,
                       double t_start, const TimeGrid& grid) {
  const int n_ch = static_cast<int>(models.channels.size());
  MarkTables mt;
  mt.lbar_pos = Mat::Zero(grid.steps + 1, n_ch);
  mt.lbar2 = Mat::Zero(grid.steps + 1, n_ch);
  for (int ch = 0; ch < n_ch && ch < static_cast<int>(flows.flows.size());
       ++ch) {
    if (!models.channels[ch].mark || !flows.flows[ch].loss) continue;
    const MarkLaw& law = *models.channels[ch].mark;
    const LossFn& loss = flows.flows[ch].loss;
    for (int k = 0; k <= grid.steps; ++k) {
      double t = t_start + grid.t(k);
      mt.lbar_pos(k, ch) = lbar(law, loss, t);
      mt.lbar2(k, ch) = lbar_sq(law, loss, t);
    }
  }
  return mt;
}

// Mean signed flow rate with the mark integrals read from the tables.
double flow_rate_tab(const EngineModels& models, const CashflowSpec& flows,
                     const Mat& lbar_pos, const FilteredPath& fp, int k,
                     const SystemState& st) {
  double c = 0.0;
  if (flows.kappa.size() > 0) c += flows.kappa.dot(st.queues);
  const int n_ch = static_cast<int>(models.channels.size());
  if (n_ch == 0 || flows.flows.empty()) return c;
  ObsSnapshot snap{st.t, &st.S, &st.Y, std::span<const long>(st.counts),
                   std::span<const double>(st.queues.data(),
                                           static_cast<size_t>(st.queues.size()))};
  for (int ch = 0; ch < n_ch; ++ch) {
    double lam = fp.lambda_hat(k, ch);
    if (lam <= 0.0 || ch >= static_cast<int>(flows.flows.size())) continue;
    if (models.channels[ch].mark) {
      c -= lbar_pos(k, ch) * lam;
    } else if (flows.flows[ch].fee) {
      c += flows.flows[ch].fee(snap) * lam;
    }
  }
  return c;
}

int chunk_size(int K, int F) {
  double budget = 2.0e6 / (static_cast<double>(K + 1) * F + 1.0);
  return std::max(8, std::min(512, static_cast<int>(budget)));
}

}  // namespace

int LsmSurface::n_features() const {
  int nc = d + m + n;
  return nc + nc * (nc + 1) / 2 + n_channels + n_funds +
         std::max(n_states - 1, 0);
}

int LsmSurface::slice_of(double t) const {
  double pos = (t - t_start) / grid.dt;
  int k = static_cast<int>(std::lround(pos));
  if (k < 0 || k > grid.steps || std::abs(pos - k) > 1e-6)
    throw EngineError("surface evaluated off its slice grid at t = " +
                      std::to_string(t));
  return k;
}

void LsmSurface::features(const SystemState& s, Vec& f) const {
  const int nc = d + m + n;
  int idx = 0;
  for (int i = 0; i < d; ++i) f[idx++] = s.S[i];
  for (int i = 0; i < m; ++i) f[idx++] = s.Y[i];
  for (int i = 0; i < n; ++i) f[idx++] = s.z_hat[i];
  for (int i = 0; i < nc; ++i)
    for (int j = i; j < nc; ++j) f[idx++] = f[i] * f[j];
  for (int c = 0; c < n_channels; ++c)
    f[idx++] = static_cast<double>(s.counts[static_cast<size_t>(c)]);
  for (int i = 0; i < n_funds; ++i) f[idx++] = s.queues[i];
  for (int i = 0; i + 1 < n_states; ++i) f[idx++] = s.q[i];
}

double LsmSurface::value(const SystemState& s) const {
  return value_at_slice(slice_of(s.t), s);
}

double LsmSurface::value_at_slice(int k, const SystemState& s) const {
  if (!fitted()) throw SurfaceNotFitted("surface has no fitted coefficients");
  Vec f(n_features());
  features(s, f);
  const Vec& c = coef[k];
  const auto& kp = kept[k];
  double acc = c[0];
  for (size_t j = 0; j < kp.size(); ++j) {
    int idx = kp[j];
    acc += c[static_cast<int>(j) + 1] * (f[idx] - mu[k][idx]) / sd[k][idx];
  }
  return acc;
}

Vec LsmSurface::cont_gradient(const SystemState& s) const {
  if (!fitted()) throw SurfaceNotFitted("surface has no fitted coefficients");
  int k = slice_of(s.t);
  // slice 0 is fit against a single deterministic state
  if (k == 0 && grid.steps >= 1) k = 1;
  const int nc = d + m + n;
  Vec u(nc);
  int idx = 0;
  for (int i = 0; i < d; ++i) u[idx++] = s.S[i];
  for (int i = 0; i < m; ++i) u[idx++] = s.Y[i];
  for (int i = 0; i < n; ++i) u[idx++] = s.z_hat[i];

  const int n_quad = nc * (nc + 1) / 2;
  Vec g = Vec::Zero(nc);
  const Vec& c = coef[k];
  const auto& kp = kept[k];
  for (size_t j = 0; j < kp.size(); ++j) {
    int f = kp[j];
    double w = c[static_cast<int>(j) + 1] / sd[k][f];
    if (f < nc) {
      g[f] += w;
    } else if (f < nc + n_quad) {
      auto [a, b] = quad_pair(nc, f - nc);
      if (a == b) {
        g[a] += 2.0 * w * u[a];
      } else {
        g[a] += w * u[b];
        g[b] += w * u[a];
      }
    }
    // counts, fund sizes, and chain weights carry no continuous derivative
  }
  return g;
}

std::vector<LsmSurface> fit_surfaces(const EngineModels& models,
                                     const std::vector<ClaimSpec>& claims,
                                     const SystemState& from, double step,
                                     int n_paths, uint64_t seed, int threads,
                                     uint32_t ensemble_id) {
  if (claims.empty()) throw EngineError("fit_surfaces: no claims");
  if (n_paths < 2) throw EngineError("fit_surfaces: need at least two paths");
  const int n_cl = static_cast<int>(claims.size());

  LsmSurface proto;
  proto.grid = TimeGrid{step, steps_for(models.horizon - from.t, step)};
  proto.t_start = from.t;
  proto.d = models.market.d;
  proto.m = models.market.m;
  proto.n = models.rp.n();
  proto.n_channels = static_cast<int>(models.channels.size());
  proto.n_funds = models.n_funds();
  proto.n_states = models.chain.num_states;
  const int K = proto.grid.steps;
  const int F = proto.n_features();
  const int M = chunk_size(K, F);

  RiccatiSlices rs = riccati_slices(models.riccati, from.t, proto.grid);
  std::vector<MarkTables> tabs;
  tabs.reserve(claims.size());
  for (const auto& cl : claims)
    tabs.push_back(mark_tables(models, cl.flows, from.t, proto.grid));

  std::vector<double> featbuf(static_cast<size_t>(M) * (K + 1) * F);
  auto featurize_chunk = [&](int c0, int cnt) {
    for_blocks(cnt, 8, threads, [&](int b, int e, int) {
      Vec f(F);
      for (int lp = b; lp < e; ++lp) {
        FilteredPath fp = simulate_filtered(
            models, from, step, Measure::hedging, seed,
            static_cast<uint32_t>(c0 + lp), ensemble_id);
        for (int k = 0; k <= K; ++k) {
          SystemState st = fp.state_at(k);
          proto.features(st, f);
          double* dst =
              featbuf.data() + (static_cast<size_t>(lp) * (K + 1) + k) * F;
          for (int j = 0; j < F; ++j) dst[j] = f[j];
        }
      }
    });
  };

  // Pass one: per-slice feature moments, accumulated in path order so the
  // fit does not depend on the thread count.
  std::vector<Vec> mean(K + 1, Vec::Zero(F)), m2(K + 1, Vec::Zero(F));
  long count = 0;
  for (int c0 = 0; c0 < n_paths; c0 += M) {
    int cnt = std::min(M, n_paths - c0);
    featurize_chunk(c0, cnt);
    for (int lp = 0; lp < cnt; ++lp) {
      ++count;
      for (int k = 0; k <= K; ++k) {
        const double* src =
            featbuf.data() + (static_cast<size_t>(lp) * (K + 1) + k) * F;
        for (int j = 0; j < F; ++j) {
          double delta = src[j] - mean[k][j];
          mean[k][j] += delta / static_cast<double>(count);
          m2[k][j] += delta * (src[j] - mean[k][j]);
        }
      }
    }
  }

  proto.mu.assign(K + 1, Vec::Zero(F));
  proto.sd.assign(K + 1, Vec::Ones(F));
  proto.kept.assign(K + 1, {});
  for (int k = 0; k <= K; ++k) {
    proto.mu[k] = mean[k];
    for (int j = 0; j < F; ++j) {
      double s = std::sqrt(std::max(m2[k][j], 0.0) /
                           static_cast<double>(n_paths - 1));
      if (s > 1e-12 * std::max(1.0, std::abs(mean[k][j]))) {
        proto.sd[k][j] = s;
        proto.kept[k].push_back(j);
      }
    }
  }

  // Pass two: normal equations on the standardized kept features, identical
  // paths regenerated from the same counters; responses per claim.
  std::vector<Mat> gram(K + 1), rhs(K + 1);
  for (int k = 0; k <= K; ++k) {
    int P = static_cast<int>(proto.kept[k].size());
    gram[k] = Mat::Zero(P + 1, P + 1);
    rhs[k] = Mat::Zero(P + 1, n_cl);
  }
  Mat ysum = Mat::Zero(K + 1, n_cl), ysum2 = Mat::Zero(K + 1, n_cl);

  std::vector<double> respbuf(static_cast<size_t>(M) * (K + 1) * n_cl);
  auto respond_chunk = [&](int c0, int cnt) {
    for_blocks(cnt, 8, threads, [&](int b, int e, int) {
      Vec f(F);
      std::vector<double> v2k(K + 1), integ(K + 1);
      for (int lp = b; lp < e; ++lp) {
        FilteredPath fp = simulate_filtered(
            models, from, step, Measure::hedging, seed,
            static_cast<uint32_t>(c0 + lp), ensemble_id);
        for (int k = 0; k <= K; ++k) {
          SystemState st = fp.state_at(k);
          proto.features(st, f);
          double* dst =
              featbuf.data() + (static_cast<size_t>(lp) * (K + 1) + k) * F;
          for (int j = 0; j < F; ++j) dst[j] = f[j];
          Vec zh = fp.z_hat.row(k).transpose();
          v2k[k] = rs.v2_at(k, zh);
        }
        for (int c = 0; c < n_cl; ++c) {
          double G = fp.discount[K] * claims[c].payoff(fp.obs);
          integ[0] = 0.0;
          for (int k = 0; k < K; ++k) {
            SystemState st = fp.state_at(k);
            double cr = flow_rate_tab(models, claims[c].flows,
                                      tabs[c].lbar_pos, fp, k, st);
            integ[k + 1] = integ[k] + step * fp.discount[k] * cr * v2k[k];
          }
          for (int k = 0; k <= K; ++k) {
            double y = (G - integ[K] + integ[k]) / fp.discount[k];
            respbuf[(static_cast<size_t>(lp) * (K + 1) + k) * n_cl + c] = y;
          }
        }
      }
    });
  };

  for (int c0 = 0; c0 < n_paths; c0 += M) {
    int cnt = std::min(M, n_paths - c0);
    respond_chunk(c0, cnt);
    for (int lp = 0; lp < cnt; ++lp) {
      for (int k = 0; k <= K; ++k) {
        const auto& kp = proto.kept[k];
        int P = static_cast<int>(kp.size());
        Vec z(P + 1);
        z[0] = 1.0;
        const double* src =
            featbuf.data() + (static_cast<size_t>(lp) * (K + 1) + k) * F;
        for (int j = 0; j < P; ++j)
          z[j + 1] = (src[kp[j]] - proto.mu[k][kp[j]]) / proto.sd[k][kp[j]];
        gram[k].selfadjointView<Eigen::Lower>().rankUpdate(z);
        const double* yr =
            respbuf.data() + (static_cast<size_t>(lp) * (K + 1) + k) * n_cl;
        for (int c = 0; c < n_cl; ++c) {
          rhs[k].col(c) += z * yr[c];
          ysum(k, c) += yr[c];
          ysum2(k, c) += yr[c] * yr[c];
        }
      }
    }
  }

  std::vector<LsmSurface> out(claims.size(), proto);
  for (auto& s : out) {
    s.coef.assign(K + 1, Vec());
    s.ridged.assign(K + 1, 0);
    s.r2.assign(K + 1, 0.0);
  }
  for (int k = 0; k <= K; ++k) {
    Mat G = gram[k].selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Mat> es(G);
    if (es.info() != Eigen::Success || !es.eigenvalues().allFinite())
      throw RankDeficientBasis("surface slice " + std::to_string(k) +
                               ": normal equations are not finite");
    double maxe = es.eigenvalues().maxCoeff();
    if (!(maxe > 0.0))
      throw RankDeficientBasis("surface slice " + std::to_string(k) +
                               ": degenerate normal equations");
    double mine = es.eigenvalues().minCoeff();
    double lam = mine < maxe * 1e-10 ? maxe * 1e-10 : 0.0;
    Vec inv = (es.eigenvalues().array() + lam).inverse().matrix();
    Mat solver =
        es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    for (int c = 0; c < n_cl; ++c) {
      Vec beta = solver * rhs[k].col(c);
      out[static_cast<size_t>(c)].coef[k] = beta;
      out[static_cast<size_t>(c)].ridged[k] = lam > 0.0 ? 1 : 0;
      double yy = ysum2(k, c);
      double sse = yy - 2.0 * beta.dot(rhs[k].col(c)) + beta.dot(G * beta);
      double sst =
          yy - ysum(k, c) * ysum(k, c) / static_cast<double>(n_paths);
      out[static_cast<size_t>(c)].r2[k] =
          sst > 0.0 ? std::max(0.0, 1.0 - sse / sst) : 0.0;
    }
  }
  return out;
}

LsmSurface fit_surface(const EngineModels& models, const ClaimSpec& claim,
                       const SystemState& from, double step, int n_paths,
                       uint64_t seed, int threads, uint32_t ensemble_id) {
  std::vector<ClaimSpec> one{claim};
  return fit_surfaces(models, one, from, step, n_paths, seed, threads,
                      ensemble_id)[0];
}

Vec surface_z1(const EngineModels& models, const LsmSurface& surface,
               const SystemState& s) {
  const int d = models.market.d, m = models.market.m;
  const int n = models.rp.n();
  Vec grad = surface.cont_gradient(s);
  Mat sg = eval_coeff(models.market.sigma, s.t, s.S, s.Y, d, d, "sigma");
  Vec z1 = sg.transpose() * grad.head(d);
  if (m > 0) {
    Mat sb = eval_coeff(models.market.sigma_bar, s.t, s.S, s.Y, m, d,
                        "sigma_bar");
    z1 += sb.transpose() * grad.segment(d, m);
  }
  Mat sig_t = models.cov.at(s.t);
  z1 += (sig_t.transpose() * grad.tail(n)).head(d);
  return z1;
}

std::vector<double> v0_samples(const EngineModels& models,
                               const ClaimSpec& claim,
                               const LsmSurface& surface,
                               const SystemState& from, double step,
                               int n_paths, uint64_t seed, int threads,
                               uint32_t ensemble_id) {
  if (!surface.fitted()) throw SurfaceNotFitted("v0 needs a fitted surface");
  TimeGrid grid{step, steps_for(models.horizon - from.t, step)};
  if (std::abs(surface.grid.dt - step) > 1e-12 ||
      surface.grid.steps != grid.steps ||
      std::abs(surface.t_start - from.t) > 1e-12)
    throw EngineError("v0: surface was fitted on a different grid");
  const int K = grid.steps;
  const int d = models.market.d, m = models.market.m;
  const int n = models.rp.n();
  const int n_ch = static_cast<int>(models.channels.size());

  RiccatiSlices rs = riccati_slices(models.riccati, from.t, grid);
  MarkTables tabs = mark_tables(models, claim.flows, from.t, grid);
  std::vector<Mat> cov_k(K + 1);
  for (int k = 0; k <= K; ++k) cov_k[k] = models.cov.at(from.t + grid.t(k));

  std::vector<double> out(static_cast<size_t>(n_paths));
  for_blocks(n_paths, 64, threads, [&](int b, int e, int) {
    for (int p = b; p < e; ++p) {
      FilteredPath fp =
          simulate_filtered(models, from, step, Measure::physical, seed,
                            static_cast<uint32_t>(p), ensemble_id);
      double H = claim.payoff(fp.obs);
      double acc = H * H;
      for (int k = 0; k < K; ++k) {
        SystemState st = fp.state_at(k);
        double v1k = surface.value_at_slice(k, st);
        Vec grad = surface.cont_gradient(st);
        Mat sg = eval_coeff(models.market.sigma, st.t, st.S, st.Y, d, d,
                            "sigma");
        Vec z1 = sg.transpose() * grad.head(d);
        if (m > 0) {
          Mat sb = eval_coeff(models.market.sigma_bar, st.t, st.S, st.Y, m, d,
                              "sigma_bar");
          z1 += sb.transpose() * grad.segment(d, m);
        }
        z1 += (cov_k[k].transpose() * grad.tail(n)).head(d);

        Vec zh = fp.z_hat.row(k).transpose();
        double v2k = rs.v2_at(k, zh);
        Vec theta = zh.head(d);
        Vec load = z1 + v1k * theta;
        double run = load.squaredNorm() / v2k;
        if (claim.flows.kappa.size() > 0)
          run += 2.0 * claim.flows.kappa.dot(st.queues) * v1k;
        acc -= step * run;

        if (n_ch > 0 && !claim.flows.flows.empty()) {
          ObsSnapshot snap{st.t, &st.S, &st.Y,
                           std::span<const long>(st.counts),
                           std::span<const double>(
                               st.queues.data(),
                               static_cast<size_t>(st.queues.size()))};
          for (int ch = 0;
               ch < n_ch && ch < static_cast<int>(claim.flows.flows.size());
               ++ch) {
            double lam = fp.lambda_hat(k, ch);
            if (lam <= 0.0) continue;
            const ChannelFlow& fl = claim.flows.flows[ch];
            bool marked = static_cast<bool>(models.channels[ch].mark);
            if (marked && !fl.loss) continue;
            if (!marked && !fl.fee) continue;
            SystemState shifted = apply_event_to_state(models, st, ch);
            double j1 = surface.value_at_slice(k, shifted) - v1k;
            double term;
            if (marked) {
              term = tabs.lbar2(k, ch) * v2k +
                     2.0 * tabs.lbar_pos(k, ch) * (j1 + v1k);
            } else {
              double fee = fl.fee(snap);
              term = fee * fee * v2k - 2.0 * fee * (j1 + v1k);
            }
            acc += step * lam * term;
          }
        }
      }
      out[static_cast<size_t>(p)] = acc;
    }
  });
  return out;
}

MeanSe estimate_v0(const EngineModels& models, const ClaimSpec& claim,
                   const LsmSurface& surface, const SystemState& from,
                   double step, int n_paths, uint64_t seed, int threads,
                   uint32_t ensemble_id) {
  auto xs = v0_samples(models, claim, surface, from, step, n_paths, seed,
                       threads, ensemble_id);
  return mean_se(xs);
}

ValueQuadratic assemble_value(const EngineModels& models,
                              const ClaimSpec& claim,
                              const LsmSurface& surface,
                              const SystemState& from, double step,
                              int n_v1_paths, int n_v0_paths, uint64_t seed,
                              int threads) {
  ValueQuadratic q;
  q.t = from.t;
  q.v2 = v2(models.riccati, from.t, from.z_hat);
  q.v1 = estimate_v1(models, claim, from, step, n_v1_paths, seed, threads,
                     kV1Ensemble);
  q.v0 = estimate_v0(models, claim, surface, from, step, n_v0_paths, seed,
                     threads, kV0Ensemble);
  return q;
}

HedgePolicy optimal_control(const EngineModels& models,
                            const LsmSurface& surface, double scale) {
  if (!surface.fitted())
    throw SurfaceNotFitted("optimal control needs a fitted surface");
  const EngineModels* mod = &models;
  HedgePolicy pol;
  pol.control = [mod, surf = surface, scale](const SystemState& s,
                                             double w) -> Vec {
    const int d = mod->market.d;
    Mat sg = eval_coeff(mod->market.sigma, s.t, s.S, s.Y, d, d, "sigma");
    double V2 = v2(mod->riccati, s.t, s.z_hat);
    HedgeLoadings hl = hedge_loadings(mod->riccati, mod->cov, s.t, s.z_hat);
    Vec theta = s.z_hat.head(d);
    double V1 = surf.value(s);
    Vec z1 = surface_z1(*mod, surf, s);
    Vec target = z1 + V1 * theta - w * (hl.z2 + V2 * theta);
    return (scale / V2) * sg.transpose().partialPivLu().solve(target).eval();
  };
  return pol;
}

std::function<double(const SystemState&, double)> quadratic_monitor(
    const EngineModels& models, const LsmSurface& surface) {
  const EngineModels* mod = &models;
  return [mod, surf = surface](const SystemState& s, double w) {
    double V2 = v2(mod->riccati, s.t, s.z_hat);
    return w * w * V2 - 2.0 * w * surf.value(s);
  };
}

DriftStat drift_statistic(const HedgeReport& report,
                          const ValueQuadratic& quad) {
  DriftStat ds;
  ds.drift = report.realized_msq.mean - quad.at(report.w0);
  double qse = quad.se_at(report.w0);
  ds.se = std::sqrt(report.realized_msq.se * report.realized_msq.se +
                    qse * qse);
  return ds;
}

const PolicyComparison::PairDiff& PolicyComparison::pair(int a, int b) const {
  for (const auto& pd : diffs)
    if (pd.a == a && pd.b == b) return pd;
  throw EngineError("policy comparison: pair not found");
}

double PolicyComparison::diff_at(int a, int b, double w) const {
  if (a > b) return -diff_at(b, a, w);
  const PairDiff& pd = pair(a, b);
  return -2.0 * w * pd.d1.mean + pd.d0.mean;
}

double PolicyComparison::diff_se_at(int a, int b, double w) const {
  if (a > b) return diff_se_at(b, a, w);
  const PairDiff& pd = pair(a, b);
  return std::sqrt(4.0 * w * w * pd.d1.se * pd.d1.se + pd.d0.se * pd.d0.se);
}

double PolicyComparison::crossing(int a, int b) const {
  if (a > b) return crossing(b, a);
  const PairDiff& pd = pair(a, b);
  double denom = 2.0 * pd.d1.mean;
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return pd.d0.mean / denom;
}

bool PolicyComparison::dominates(int a, int b) const {
  for (int i = 0; i < w_grid.size(); ++i)
    if (diff_at(a, b, w_grid[i]) + 3.0 * diff_se_at(a, b, w_grid[i]) >= 0.0)
      return false;
  return w_grid.size() > 0;
}

PolicyComparison compare_policies(const EngineModels& models,
                                  const std::vector<ClaimSpec>& policies,
                                  const SystemState& from, double step,
                                  int fit_paths, int v1_paths, int v0_paths,
                                  uint64_t seed, int threads,
                                  const Vec& w_grid) {
  if (policies.empty()) throw EngineError("compare_policies: no policies");
  const int n_pol = static_cast<int>(policies.size());

  auto surfaces = fit_surfaces(models, policies, from, step, fit_paths, seed,
                               threads, kFitEnsemble);

  PolicyComparison out;
  out.v2 = v2(models.riccati, from.t, from.z_hat);
  out.quad.resize(policies.size());

  std::vector<std::vector<double>> s1(policies.size()), s0(policies.size());
  for (int i = 0; i < n_pol; ++i) {
    s1[static_cast<size_t>(i)] =
        v1_samples(models, policies[static_cast<size_t>(i)], from, step,
                   v1_paths, seed, threads, kV1Ensemble);
    s0[static_cast<size_t>(i)] =
        v0_samples(models, policies[static_cast<size_t>(i)],
                   surfaces[static_cast<size_t>(i)], from, step, v0_paths,
                   seed, threads, kV0Ensemble);
    ValueQuadratic& q = out.quad[static_cast<size_t>(i)];
    q.t = from.t;
    q.v2 = out.v2;
    q.v1 = mean_se(s1[static_cast<size_t>(i)]);
    q.v0 = mean_se(s0[static_cast<size_t>(i)]);
  }

  out.w_grid = w_grid;
  if (out.w_grid.size() == 0) {
    // default: a symmetric band around the first policy's minimizer
    double c = out.quad[0].minimizer();
    double span = std::max(1.0, std::abs(c));
    out.w_grid.resize(21);
    for (int i = 0; i < 21; ++i)
      out.w_grid[i] = c + span * (static_cast<double>(i) / 10.0 - 1.0);
  }
  out.value.resize(n_pol, out.w_grid.size());
  out.value_se.resize(n_pol, out.w_grid.size());
  for (int i = 0; i < n_pol; ++i)
    for (int j = 0; j < out.w_grid.size(); ++j) {
      out.value(i, j) = out.quad[static_cast<size_t>(i)].at(out.w_grid[j]);
      out.value_se(i, j) =
          out.quad[static_cast<size_t>(i)].se_at(out.w_grid[j]);
    }

  for (int a = 0; a < n_pol; ++a)
    for (int b = a + 1; b < n_pol; ++b) {
      PolicyComparison::PairDiff pd;
      pd.a = a;
      pd.b = b;
      std::vector<double> d1(s1[static_cast<size_t>(a)].size());
      for (size_t i = 0; i < d1.size(); ++i)
        d1[i] = s1[static_cast<size_t>(a)][i] - s1[static_cast<size_t>(b)][i];
      std::vector<double> d0(s0[static_cast<size_t>(a)].size());
      for (size_t i = 0; i < d0.size(); ++i)
        d0[i] = s0[static_cast<size_t>(a)][i] - s0[static_cast<size_t>(b)][i];
      pd.d1 = mean_se(d1);
      pd.d0 = mean_se(d0);
      out.diffs.push_back(pd);
    }
  return out;
}

}  // namespace mvh
