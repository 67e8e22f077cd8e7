#include "mvh/chain_filter.hpp"

#include <cmath>

namespace mvh {

namespace {

// Drift matrix M(t) = R(t) - sum over gate-open channels of (Lambda_k(t) - I).
Mat drift_matrix(const FilterContext& ctx, double tau, const FilterSegment& seg,
                 Vec& s_buf, Vec& y_buf) {
  const int N = ctx.chain->num_states;
  double w = seg.t1 > seg.t0 ? (tau - seg.t0) / (seg.t1 - seg.t0) : 0.0;
  if (seg.s_begin) s_buf = *seg.s_begin + (*seg.s_end - *seg.s_begin) * w;
  if (seg.y_begin) y_buf = *seg.y_begin + (*seg.y_end - *seg.y_begin) * w;
  ObsSnapshot snap{tau, seg.s_begin ? &s_buf : nullptr,
                   seg.y_begin ? &y_buf : nullptr, seg.counts, seg.queues};
  Mat mdrift = ctx.chain->generator(tau);
  for (const auto& ch : *ctx.channels) {
    if (!gate_open(ch, seg.queues)) continue;
    for (int i = 0; i < N; ++i) mdrift(i, i) -= ch.intensity(snap, i) - 1.0;
  }
  return mdrift;
}

}  // namespace

void evolve_between_events(UnnormalizedFilter& f, const FilterContext& ctx,
                           const FilterSegment& seg, double from, double to) {
  double dt = to - from;
  if (dt <= 0.0) {
    f.t = to;
    return;
  }
  Vec s_buf, y_buf;
  Mat m1 = drift_matrix(ctx, from, seg, s_buf, y_buf);
  Mat m2 = drift_matrix(ctx, from + 0.5 * dt, seg, s_buf, y_buf);
  Mat m4 = drift_matrix(ctx, to, seg, s_buf, y_buf);
  Vec k1 = m1 * f.q;
  Vec k2 = m2 * (f.q + 0.5 * dt * k1);
  Vec k3 = m2 * (f.q + 0.5 * dt * k2);
  Vec k4 = m4 * (f.q + dt * k3);
  f.q += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  f.t = to;
  // Exact zeros are legitimate (states the prior has not reached yet); only a
  // genuinely negative weight means the step was too coarse. Rounding-level
  // undershoot is clipped the way the covariance repair clips eigenvalues.
  double lo = f.q.minCoeff();
  if (lo < 0.0) {
    double mass = f.q.sum();
    if (!(mass > 0.0) || lo < -1e-12 * mass)
      throw PositivityLost("filter weights left the nonnegative orthant at t = " +
                           std::to_string(to) + "; reduce the step");
    f.q = f.q.cwiseMax(0.0);
  }
}

void apply_event(UnnormalizedFilter& f, const FilterContext& ctx, int channel,
                 const ObsSnapshot& snap) {
  const auto& ch = (*ctx.channels)[channel];
  if (!gate_open(ch, snap.queues))
    throw GateClosed("event on channel " + ch.name + " while its gate is closed");
  const int N = ctx.chain->num_states;
  for (int i = 0; i < N; ++i) {
    double lam = ch.intensity(snap, i);
    if (lam <= 0.0)
      throw PositivityLost("channel " + ch.name +
                           ": nonpositive intensity in event update");
    f.q[i] *= lam;
  }
}

double filtered_intensity(const UnnormalizedFilter& f, const FilterContext& ctx,
                          int channel, const ObsSnapshot& snap) {
  const auto& ch = (*ctx.channels)[channel];
  if (!gate_open(ch, snap.queues)) return 0.0;
  const int N = ctx.chain->num_states;
  double mass = f.q.sum(), acc = 0.0;
  for (int i = 0; i < N; ++i) acc += ch.intensity(snap, i) * f.q[i];
  return acc / mass;
}

bool renormalize_if_needed(UnnormalizedFilter& f, double lo, double hi) {
  double mass = f.q.sum();
  if (!(mass > 0.0))
    throw PositivityLost("filter mass vanished at t = " + std::to_string(f.t));
  if (mass >= lo && mass <= hi) return false;
  f.q /= mass;
  f.log_scale += std::log(mass);
  return true;
}

ChainFilterRun run_chain_filter(const ObservedPath& path, const ChainModel& chain,
                                const std::vector<CountingChannel>& channels,
                                const Vec& q0) {
  const int N = chain.num_states;
  const int K = path.grid.steps;
  const int n_ch = static_cast<int>(channels.size());
  if (q0.size() != N) throw EngineError("chain filter: q0 has wrong dimension");
  if (q0.minCoeff() < 0.0 || !(q0.sum() > 0.0))
    throw PositivityLost("chain filter: q0 must be nonnegative with mass");

  ChainFilterRun run;
  run.grid = path.grid;
  run.t_start = path.t_start;
  run.x_hat.resize(K + 1, N);
  run.q.resize(K + 1, N);
  run.lambda_hat.resize(K + 1, n_ch);

  FilterContext ctx{&chain, &channels};
  UnnormalizedFilter f{path.t_start, q0, 0.0};

  std::vector<long> counts = path.counts0;
  counts.resize(n_ch, 0);
  Vec queues = path.queues0;
  Vec s_lo(path.d), s_hi(path.d), y_lo(path.m), y_hi(path.m);

  auto record = [&](int k) {
    Vec xh = f.x_hat();
    run.x_hat.row(k) = xh.transpose();
    run.q.row(k) = xh.transpose();  // unit-mass export
    Vec s_now = path.S.row(k).transpose();
    Vec y_now = path.m > 0 ? Vec(path.Y.row(k).transpose()) : Vec(0);
    ObsSnapshot snap{path.t(k), &s_now, path.m > 0 ? &y_now : nullptr,
                     std::span<const long>(counts),
                     std::span<const double>(queues.data(),
                                             static_cast<size_t>(queues.size()))};
    for (int c = 0; c < n_ch; ++c)
      run.lambda_hat(k, c) = filtered_intensity(f, ctx, c, snap);
  };

  record(0);
  size_t ei = 0;
  for (int k = 0; k < K; ++k) {
    double t0 = path.t(k), t1 = path.t(k + 1);
    s_lo = path.S.row(k).transpose();
    s_hi = path.S.row(k + 1).transpose();
    if (path.m > 0) {
      y_lo = path.Y.row(k).transpose();
      y_hi = path.Y.row(k + 1).transpose();
    }
    double cursor = t0;
    auto make_seg = [&] {
      return FilterSegment{t0, t1, &s_lo, &s_hi,
                           path.m > 0 ? &y_lo : nullptr,
                           path.m > 0 ? &y_hi : nullptr,
                           std::span<const long>(counts),
                           std::span<const double>(
                               queues.data(), static_cast<size_t>(queues.size()))};
    };
    while (ei < path.events.size() && path.events[ei].t <= t1) {
      const Event& ev = path.events[ei];
      evolve_between_events(f, ctx, make_seg(), cursor, ev.t);
      double w = (ev.t - t0) / (t1 - t0);
      Vec s_at = s_lo + (s_hi - s_lo) * w;
      Vec y_at = path.m > 0 ? Vec(y_lo + (y_hi - y_lo) * w) : Vec(0);
      ObsSnapshot snap{ev.t, &s_at, path.m > 0 ? &y_at : nullptr,
                       std::span<const long>(counts),
                       std::span<const double>(queues.data(),
                                               static_cast<size_t>(queues.size()))};
      apply_event(f, ctx, ev.channel, snap);
      ++counts[ev.channel];
      apply_queue_effect(channels[ev.channel], queues);
      renormalize_if_needed(f);
      cursor = ev.t;
      ++ei;
    }
    evolve_between_events(f, ctx, make_seg(), cursor, t1);
    renormalize_if_needed(f);
    record(k + 1);
  }
  run.log_scale_total = f.log_scale;
  return run;
}

}  // namespace mvh
