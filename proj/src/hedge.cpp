#include "mvh/hedge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvh {

namespace {

constexpr double kCondLimit = 1e12;
constexpr double kBoundSlack = 1.0 + 1e-9;

std::span<const double> as_span(const Vec& v) {
  return {v.data(), static_cast<size_t>(v.size())};
}

}  // namespace

EngineModels build_models(MarketSpec market, RiskPremiumModel rp,
                          ChainModel chain,
                          std::vector<CountingChannel> channels, Vec q0,
                          double horizon, double solver_step) {
  market.validate();
  rp.validate();
  chain.validate();
  validate_channels(channels, static_cast<int>(q0.size()), chain.num_states);
  if (rp.n() != market.n())
    throw EngineError("models: premium dimension must equal d + m");
  if (q0.size() > 0 && q0.minCoeff() < 0.0)
    throw EngineError("models: initial fund sizes must be nonnegative");

  EngineModels mod;
  mod.market = std::move(market);
  mod.rp = std::move(rp);
  mod.chain = std::move(chain);
  mod.channels = std::move(channels);
  mod.q0 = std::move(q0);
  mod.horizon = horizon;
  mod.cov = solve_covariance(mod.rp, horizon, solver_step);
  mod.riccati = solve_riccati(mod.rp, mod.cov, mod.market.d, horizon);
  return mod;
}

SystemState initial_state(const EngineModels& models) {
  SystemState s;
  s.t = 0.0;
  s.S = models.market.s0;
  s.Y = models.market.y0;
  s.z_hat = models.rp.z0;
  s.q = models.chain.x0_dist;
  s.counts.assign(models.channels.size(), 0);
  s.queues = models.q0;
  return s;
}

double flow_mean(const CashflowSpec& flows,
                 const std::vector<CountingChannel>& channels, int channel,
                 const ObsSnapshot& snap) {
  if (channel >= static_cast<int>(flows.flows.size())) return 0.0;
  const ChannelFlow& f = flows.flows[channel];
  if (channels[channel].mark) {
    if (!f.loss) return 0.0;
    return -lbar(*channels[channel].mark, f.loss, snap.t);
  }
  return f.fee ? f.fee(snap) : 0.0;
}

double flow_mean_sq(const CashflowSpec& flows,
                    const std::vector<CountingChannel>& channels, int channel,
                    const ObsSnapshot& snap) {
  if (channel >= static_cast<int>(flows.flows.size())) return 0.0;
  const ChannelFlow& f = flows.flows[channel];
  if (channels[channel].mark) {
    if (!f.loss) return 0.0;
    return lbar_sq(*channels[channel].mark, f.loss, snap.t);
  }
  if (!f.fee) return 0.0;
  double v = f.fee(snap);
  return v * v;
}

double flow_realized(const CashflowSpec& flows,
                     const std::vector<CountingChannel>& channels,
                     const Event& ev, const ObsSnapshot& snap) {
  if (ev.channel >= static_cast<int>(flows.flows.size())) return 0.0;
  const ChannelFlow& f = flows.flows[ev.channel];
  if (channels[ev.channel].mark) {
    if (!f.loss) return 0.0;
    return -f.loss(ev.t, ev.mark);
  }
  return f.fee ? f.fee(snap) : 0.0;
}

SystemState FilteredPath::state_at(int k) const {
  SystemState s;
  s.t = obs.t(k);
  s.S = obs.S.row(k).transpose();
  s.Y = obs.m > 0 ? Vec(obs.Y.row(k).transpose()) : Vec(0);
  s.z_hat = z_hat.row(k).transpose();
  s.q = q.row(k).transpose();
  s.counts = counts[k];
  s.queues = obs.Q.row(k).transpose();
  return s;
}

FilteredPath simulate_filtered(const EngineModels& models,
                               const SystemState& from, double step,
                               Measure measure, uint64_t seed,
                               uint32_t path_index, uint32_t ensemble_id) {
  const MarketSpec& market = models.market;
  const int d = market.d, m = market.m;
  const int n = models.rp.n();
  const int N = models.chain.num_states;
  const int n_ch = static_cast<int>(models.channels.size());
  const int n_funds = models.n_funds();

  if (from.S.size() != d || from.Y.size() != m || from.z_hat.size() != n ||
      from.q.size() != N || from.queues.size() != n_funds ||
      static_cast<int>(from.counts.size()) != n_ch)
    throw EngineError("simulate_filtered: state does not match the models");

  TimeGrid grid{step, steps_for(models.horizon - from.t, step)};
  const int K = grid.steps;

  FilteredPath fp;
  fp.obs.grid = grid;
  fp.obs.t_start = from.t;
  fp.obs.d = d;
  fp.obs.m = m;
  fp.obs.S.resize(K + 1, d);
  fp.obs.Y.resize(K + 1, m);
  fp.obs.Q.resize(K + 1, n_funds);
  fp.obs.n_channels = n_ch;
  fp.obs.counts0 = from.counts;
  fp.obs.queues0 = from.queues;
  fp.z_hat.resize(K + 1, n);
  fp.x_hat.resize(K + 1, N);
  fp.q.resize(K + 1, N);
  fp.lambda_hat.resize(K + 1, n_ch);
  fp.discount.resize(K + 1);
  fp.counts.resize(K + 1);

  RngStream rng_n(seed, ensemble_id, path_index, StreamRole::innovation_n);
  RngStream rng_m(seed, ensemble_id, path_index, StreamRole::innovation_m);
  RngStream rng_ev(seed, ensemble_id, path_index, StreamRole::events);
  RngStream rng_mark(seed, ensemble_id, path_index, StreamRole::marks);

  Vec S = from.S, Y = from.Y, z_hat = from.z_hat;
  std::vector<long> counts = from.counts;
  Vec queues = from.queues;
  UnnormalizedFilter filt{from.t, from.q, 0.0};
  FilterContext fctx{&models.chain, &models.channels};
  double disc = 1.0;

  Vec s_at(d), y_at(std::max(m, 0));
  auto record = [&](int k) {
    fp.obs.S.row(k) = S.transpose();
    if (m > 0) fp.obs.Y.row(k) = Y.transpose();
    fp.obs.Q.row(k) = queues.transpose();
    fp.z_hat.row(k) = z_hat.transpose();
    Vec xh = filt.x_hat();
    fp.x_hat.row(k) = xh.transpose();
    fp.q.row(k) = xh.transpose();
    fp.discount[k] = disc;
    fp.counts[k] = counts;
    ObsSnapshot snap{from.t + grid.t(k), &S, &Y, std::span<const long>(counts),
                     as_span(queues)};
    for (int c = 0; c < n_ch; ++c)
      fp.lambda_hat(k, c) = filtered_intensity(filt, fctx, c, snap);
  };
  record(0);

  const double sdt = std::sqrt(step);
  double last_event_time = from.t;

  for (int k = 0; k < K; ++k) {
    const double t0 = from.t + grid.t(k), t1 = from.t + grid.t(k + 1);

    Vec dN(d), dM(std::max(m, 0));
    for (int i = 0; i < d; ++i) dN[i] = sdt * rng_n.normal();
    for (int i = 0; i < m; ++i) dM[i] = sdt * rng_m.normal();

    Vec theta_hat = z_hat.head(d), alpha_hat = z_hat.tail(m);
    Mat sg = eval_coeff(market.sigma, t0, S, Y, d, d, "sigma");
    if (condition_number(sg) > kCondLimit)
      throw NonInvertibleCoefficient("sigma ill-conditioned at t = " +
                                     std::to_string(t0));

    // Tradable-block drift of the reconstructed observation increment:
    // + theta_hat under the physical measure, - Z_L under the hedging tilt.
    double eta = 0.0;
    Vec drift_w(d);
    if (measure == Measure::hedging) {
      HedgeLoadings hl = hedge_loadings(models.riccati, models.cov, t0, z_hat);
      drift_w = -hl.z_l * step;
      eta = theta_hat.squaredNorm() + hl.z_l.dot(theta_hat);
    } else {
      drift_w = theta_hat * step;
    }

    Vec dwt_d = dN + drift_w;
    Vec Snew = S + sg * dwt_d;
    Vec Ynew = Y;
    Vec dwt(n);
    dwt.head(d) = dwt_d;
    if (m > 0) {
      Mat sb = eval_coeff(market.sigma_bar, t0, S, Y, m, d, "sigma_bar");
      Mat rh = eval_coeff(market.rho, t0, S, Y, m, m, "rho");
      if (condition_number(rh) > kCondLimit)
        throw NonInvertibleCoefficient("rho ill-conditioned at t = " +
                                       std::to_string(t0));
      Vec dbt = dM + alpha_hat * step;
      Ynew = Y + sb * dwt_d + rh * dbt;
      dwt.tail(m) = dbt;
    }

    // Events in (t0, t1] by thinning against the filtered compensator; the
    // filter weights are advanced to each proposal time before evaluation.
    auto snap_at = [&](double tau) {
      double w = (tau - t0) / step;
      s_at = S + (Snew - S) * w;
      if (m > 0) y_at = Y + (Ynew - Y) * w;
      return ObsSnapshot{tau, &s_at, &y_at, std::span<const long>(counts),
                         as_span(queues)};
    };
    FilterSegment seg{t0, t1, &S, &Snew, &Y, &Ynew,
                      std::span<const long>(counts), as_span(queues)};

    std::vector<double> bounds(n_ch, 0.0);
    double total_bound = 0.0;
    auto refresh_bounds = [&](double fromt) {
      ObsSnapshot sa = snap_at(fromt);
      for (int c = 0; c < n_ch; ++c)
        bounds[c] = gate_open(models.channels[c], sa.queues)
                        ? max_state_intensity(models.channels[c], sa, N)
                        : 0.0;
      ObsSnapshot sb2 = snap_at(t1);
      total_bound = 0.0;
      for (int c = 0; c < n_ch; ++c) {
        if (bounds[c] > 0.0)
          bounds[c] = std::max(bounds[c],
                               max_state_intensity(models.channels[c], sb2, N));
        total_bound += bounds[c];
      }
    };

    double tau = t0;
    refresh_bounds(tau);
    while (total_bound > 0.0) {
      tau += rng_ev.exponential(total_bound);
      if (tau >= t1) break;
      double u = rng_ev.uniform() * total_bound;
      int c = 0;
      double acc = bounds[0];
      while (u >= acc && c < n_ch - 1) acc += bounds[++c];
      double accept = rng_ev.uniform();
      evolve_between_events(filt, fctx, seg, filt.t, tau);
      ObsSnapshot snap = snap_at(tau);
      double lam = filtered_intensity(filt, fctx, c, snap);
      if (lam > bounds[c] * kBoundSlack)
        throw IntensityBoundViolated("channel " + models.channels[c].name +
                                     " exceeded step bound");
      if (lam <= 0.0) continue;  // gate closed since the bound was set? no-op
      if (accept < lam / bounds[c]) {
        double et = tau;
        if (et <= last_event_time)
          et = std::nextafter(last_event_time,
                              std::numeric_limits<double>::infinity());
        last_event_time = et;
        double mark = std::numeric_limits<double>::quiet_NaN();
        if (models.channels[c].mark)
          mark = sample_mark(*models.channels[c].mark, et, rng_mark);
        apply_event(filt, fctx, c, snap);
        ++counts[c];
        apply_queue_effect(models.channels[c], queues);
        fp.obs.events.push_back({et, c, mark});
        renormalize_if_needed(filt);
        refresh_bounds(tau);
      }
    }
    evolve_between_events(filt, fctx, seg, filt.t, t1);
    renormalize_if_needed(filt);

    KalmanState ks{t0, z_hat};
    z_hat = propagate(ks, models.cov, models.rp, dwt, step).z_hat;
    S = Snew;
    Y = Ynew;
    disc *= std::exp(-eta * step);
    record(k + 1);
  }
  return fp;
}

double mean_flow_rate(const EngineModels& models, const CashflowSpec& flows,
                      const FilteredPath& fp, int k) {
  const int n_ch = static_cast<int>(models.channels.size());
  Vec queues = fp.obs.Q.row(k).transpose();
  double c = 0.0;
  if (flows.kappa.size() > 0) c += flows.kappa.dot(queues);
  if (n_ch == 0 || flows.flows.empty()) return c;
  Vec S = fp.obs.S.row(k).transpose();
  Vec Y = fp.obs.m > 0 ? Vec(fp.obs.Y.row(k).transpose()) : Vec(0);
  ObsSnapshot snap{fp.obs.t(k), &S, &Y, std::span<const long>(fp.counts[k]),
                   as_span(queues)};
  for (int ch = 0; ch < n_ch; ++ch) {
    double lam = fp.lambda_hat(k, ch);
    if (lam > 0.0) c += flow_mean(flows, models.channels, ch, snap) * lam;
  }
  return c;
}

std::vector<double> v1_samples(const EngineModels& models,
                               const ClaimSpec& claim, const SystemState& from,
                               double step, int n_paths, uint64_t seed,
                               int threads, uint32_t ensemble_id) {
  std::vector<double> out(static_cast<size_t>(n_paths));
  const bool has_flows =
      claim.flows.kappa.size() > 0 || !claim.flows.flows.empty();
  for_blocks(n_paths, 64, threads, [&](int b, int e, int) {
    for (int p = b; p < e; ++p) {
      FilteredPath fp =
          simulate_filtered(models, from, step, Measure::hedging, seed,
                            static_cast<uint32_t>(p), ensemble_id);
      const int K = fp.obs.grid.steps;
      double acc = fp.discount[K] * claim.payoff(fp.obs);
      if (has_flows) {
        for (int k = 0; k < K; ++k) {
          double c = mean_flow_rate(models, claim.flows, fp, k);
          if (c != 0.0) {
            Vec zh = fp.z_hat.row(k).transpose();
            acc -= step * fp.discount[k] *
                   c * v2(models.riccati, fp.obs.t(k), zh);
          }
        }
      }
      out[static_cast<size_t>(p)] = acc;
    }
  });
  return out;
}

MeanSe estimate_v1(const EngineModels& models, const ClaimSpec& claim,
                   const SystemState& from, double step, int n_paths,
                   uint64_t seed, int threads, uint32_t ensemble_id) {
  auto xs = v1_samples(models, claim, from, step, n_paths, seed, threads,
                       ensemble_id);
  return mean_se(xs);
}

Vec estimate_z1_fd(const EngineModels& models, const ClaimSpec& claim,
                   const SystemState& from, double step, int n_paths,
                   uint64_t seed, int threads, uint32_t ensemble_id,
                   double rel_bump) {
  const int d = models.market.d, m = models.market.m;
  const int n = models.rp.n();
  const int nc = d + m + n;

  auto coord = [&](SystemState& s, int i) -> double& {
    if (i < d) return s.S[i];
    if (i < d + m) return s.Y[i - d];
    return s.z_hat[i - d - m];
  };

  Vec grad(nc);
  for (int i = 0; i < nc; ++i) {
    SystemState hi = from, lo = from;
    double base = coord(hi, i);
    double h = rel_bump * std::max(1.0, std::abs(base));
    coord(hi, i) = base + h;
    coord(lo, i) = base - h;
    auto up = v1_samples(models, claim, hi, step, n_paths, seed, threads,
                         ensemble_id);
    auto dn = v1_samples(models, claim, lo, step, n_paths, seed, threads,
                         ensemble_id);
    grad[i] = (mean_se(up).mean - mean_se(dn).mean) / (2.0 * h);
  }

  Mat sg = eval_coeff(models.market.sigma, from.t, from.S, from.Y, d, d,
                      "sigma");
  Vec z1 = sg.transpose() * grad.head(d);
  if (m > 0) {
    Mat sb = eval_coeff(models.market.sigma_bar, from.t, from.S, from.Y, m, d,
                        "sigma_bar");
    z1 += sb.transpose() * grad.segment(d, m);
  }
  Mat sig_t = models.cov.at(from.t);
  z1 += (sig_t.transpose() * grad.tail(n)).head(d);
  return z1;
}

SystemState apply_event_to_state(const EngineModels& models,
                                 const SystemState& s, int ch) {
  SystemState out = s;
  UnnormalizedFilter f{s.t, s.q, 0.0};
  FilterContext ctx{&models.chain, &models.channels};
  ObsSnapshot snap{s.t, &s.S, &s.Y, std::span<const long>(s.counts),
                   as_span(s.queues)};
  apply_event(f, ctx, ch, snap);
  out.q = f.q / f.q.sum();
  ++out.counts[ch];
  apply_queue_effect(models.channels[ch], out.queues);
  return out;
}

MeanSe estimate_event_shift(const EngineModels& models, const ClaimSpec& claim,
                            const SystemState& from, int ch, double step,
                            int n_paths, uint64_t seed, int threads,
                            uint32_t ensemble_id) {
  SystemState shifted = apply_event_to_state(models, from, ch);
  auto base = v1_samples(models, claim, from, step, n_paths, seed, threads,
                         ensemble_id);
  auto moved = v1_samples(models, claim, shifted, step, n_paths, seed, threads,
                          ensemble_id);
  std::vector<double> diff(base.size());
  for (size_t i = 0; i < base.size(); ++i) diff[i] = moved[i] - base[i];
  return mean_se(diff);
}

HedgeReport backtest(
    const EngineModels& models, const ClaimSpec& claim,
    const HedgePolicy& policy, double w0, double step, int n_paths,
    uint64_t seed, int threads, uint32_t ensemble_id,
    const std::function<double(const SystemState&, double)>& monitor) {
  const MarketSpec& market = models.market;
  const int d = market.d, m = market.m;
  const int n_ch = static_cast<int>(models.channels.size());
  const int K = steps_for(models.horizon, step);

  constexpr int kBlock = 64;
  const int n_blocks = (n_paths + kBlock - 1) / kBlock;
  std::vector<Vec> wsum(static_cast<size_t>(n_blocks));
  std::vector<Vec> msum(static_cast<size_t>(n_blocks));
  std::vector<double> errs(static_cast<size_t>(n_paths));
  std::vector<double> sqs(static_cast<size_t>(n_paths));
  std::vector<double> hs(static_cast<size_t>(n_paths));

  for_blocks(n_paths, kBlock, threads, [&](int b, int e, int bi) {
    Vec wacc = Vec::Zero(K + 1);
    Vec macc = monitor ? Vec::Zero(K + 1) : Vec(0);
    Vec s_at(d), y_at(std::max(m, 0));
    for (int pth = b; pth < e; ++pth) {
      TruthPath truth = simulate_truth(
          market, models.rp, models.chain, models.channels, models.q0,
          models.horizon, step, seed, static_cast<uint32_t>(pth), ensemble_id);
      ObservedPath obs = observable_projection(truth);
      KalmanRun kal =
          run_kalman(obs, market, models.rp, models.cov, models.rp.z0);
      ChainFilterRun cf = run_chain_filter(obs, models.chain, models.channels,
                                           models.chain.x0_dist);
      auto cg = obs.counts_grid();

      double W = w0;
      size_t cursor = 0;
      std::vector<long> counts_run = obs.counts0;
      Vec queues_run = obs.queues0;
      SystemState st;
      st.Y = Vec(0);
      for (int k = 0; k <= K; ++k) {
        st.t = obs.t(k);
        st.S = obs.S.row(k).transpose();
        if (m > 0) st.Y = obs.Y.row(k).transpose();
        st.z_hat = kal.z_hat.row(k).transpose();
        st.q = cf.q.row(k).transpose();
        st.counts = cg[static_cast<size_t>(k)];
        st.queues = obs.Q.row(k).transpose();

        wacc[k] += W;
        if (monitor) macc[k] += monitor(st, W);
        if (k == K) break;

        Vec pi = policy.control(st, W);
        if (pi.size() != d)
          throw EngineError("hedge policy returned the wrong dimension");

        double cash = 0.0;
        if (claim.flows.kappa.size() > 0)
          cash += claim.flows.kappa.dot(st.queues) * step;
        const double t0 = obs.t(k), t1 = obs.t(k + 1);
        while (cursor < obs.events.size() &&
               (obs.events[cursor].t <= t1 || k == K - 1)) {
          const Event& ev = obs.events[cursor];
          double w = std::clamp((ev.t - t0) / step, 0.0, 1.0);
          s_at = st.S + (obs.S.row(k + 1).transpose() - st.S) * w;
          if (m > 0)
            y_at = st.Y + (obs.Y.row(k + 1).transpose() - st.Y) * w;
          ObsSnapshot snap{ev.t, &s_at, &y_at,
                           std::span<const long>(counts_run),
                           as_span(queues_run)};
          cash += flow_realized(claim.flows, models.channels, ev, snap);
          ++counts_run[static_cast<size_t>(ev.channel)];
          apply_queue_effect(models.channels[ev.channel], queues_run);
          ++cursor;
        }

        Vec dS = (obs.S.row(k + 1) - obs.S.row(k)).transpose();
        W += pi.dot(dS) + cash;
      }

      double H = claim.payoff(obs);
      errs[static_cast<size_t>(pth)] = H - W;
      sqs[static_cast<size_t>(pth)] = (H - W) * (H - W);
      hs[static_cast<size_t>(pth)] = H;
    }
    wsum[static_cast<size_t>(bi)] = wacc;
    if (monitor) msum[static_cast<size_t>(bi)] = macc;
  });
  (void)n_ch;

  HedgeReport rep;
  rep.n_paths = n_paths;
  rep.w0 = w0;
  rep.terminal_error = mean_se(errs);
  rep.error_std =
      rep.terminal_error.se * std::sqrt(static_cast<double>(n_paths));
  rep.realized_msq = mean_se(sqs);
  MeanSe hstat = mean_se(hs);
  rep.claim_std = hstat.se * std::sqrt(static_cast<double>(n_paths));
  rep.time.resize(K + 1);
  for (int k = 0; k <= K; ++k) rep.time[k] = k * step;
  rep.wealth_mean = Vec::Zero(K + 1);
  for (const Vec& w : wsum)
    if (w.size() > 0) rep.wealth_mean += w;
  rep.wealth_mean /= static_cast<double>(n_paths);
  if (monitor) {
    rep.monitor_mean = Vec::Zero(K + 1);
    for (const Vec& v : msum)
      if (v.size() > 0) rep.monitor_mean += v;
    rep.monitor_mean /= static_cast<double>(n_paths);
  }
  rep.errors = std::move(errs);
  return rep;
}

}  // namespace mvh
