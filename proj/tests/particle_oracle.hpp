#pragma once

// Importance-weighted particle reference for the hidden-chain posterior.
//
// Each particle simulates the chain exactly with persistent exponential
// clocks and never resamples. Its weight collects the no-event survival
// factor exp(-sum_k int lambda_k(x_s) g_k ds) between observed events and a
// factor lambda_k(x(t-)) g_k at each observed event, which is the Kallianpur-
// Striebel weighting of the prior chain law. Averaging state indicators with
// these weights estimates the same posterior the analytic filter computes.
//
// Restrictions (asserted nowhere, honored by the tests that use this):
//   * time-homogeneous generator,
//   * intensities may read chain state, counts and queues, but not t, S, Y,
//     so they are constant between events for a fixed particle state.

#include <cstdint>
#include <random>
#include <vector>

#include "mvh/market_model.hpp"

namespace mvh_test {

struct ParticleEstimate {
  std::vector<int> grid_points;  // checkpoint indices into the path grid
  mvh::Mat x_hat;                // one row per checkpoint
  double ess = 0.0;              // effective sample size at the horizon
};

inline ParticleEstimate particle_posterior(
    const mvh::ObservedPath& obs, const mvh::ChainModel& chain,
    const std::vector<mvh::CountingChannel>& channels, const mvh::Vec& q0,
    int n_particles, uint64_t seed, int checkpoint_stride) {
  using mvh::Vec;
  const int N = chain.num_states;
  const int n_ch = static_cast<int>(channels.size());
  const mvh::Mat gen = chain.generator(0.0);

  ParticleEstimate out;
  for (int k = 0; k <= obs.grid.steps; k += checkpoint_stride)
    out.grid_points.push_back(k);
  const int n_cp = static_cast<int>(out.grid_points.size());
  out.x_hat.setZero(n_cp, N);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<int> state(n_particles);
  std::vector<double> weight(n_particles, 1.0);
  std::vector<double> next_jump(n_particles);

  Vec prior = q0 / q0.sum();
  auto draw_exit = [&](int x) {
    double rate = -gen(x, x);
    if (rate <= 0.0) return std::numeric_limits<double>::infinity();
    return -std::log1p(-unif(rng)) / rate;
  };
  for (int i = 0; i < n_particles; ++i) {
    double u = unif(rng), acc = 0.0;
    state[i] = N - 1;
    for (int s = 0; s < N; ++s) {
      acc += prior(s);
      if (u < acc) {
        state[i] = s;
        break;
      }
    }
    next_jump[i] = draw_exit(state[i]);
  }

  // observable side reconstructed once; snapshots reuse these buffers
  std::vector<long> counts = obs.counts0;
  counts.resize(n_ch, 0);
  Vec queues = obs.queues0;
  Vec s_buf = obs.S.row(0).transpose();
  Vec y_buf = obs.Y.row(0).transpose();
  auto snapshot = [&](double t) {
    return mvh::ObsSnapshot{t, &s_buf, &y_buf,
                            std::span<const long>(counts),
                            std::span<const double>(
                                queues.data(), static_cast<size_t>(queues.size()))};
  };
  // total gated intensity seen from chain state x
  auto total_rate = [&](double t, int x) {
    mvh::ObsSnapshot snap = snapshot(t);
    double tot = 0.0;
    for (int c = 0; c < n_ch; ++c)
      if (mvh::gate_open(channels[c], snap.queues))
        tot += channels[c].intensity(snap, x);
    return tot;
  };

  auto jump_to = [&](int i) {
    // sample the destination out of state[i] proportional to gen(to, from)
    int from = state[i];
    double rate = -gen(from, from);
    double v = unif(rng) * rate, acc = 0.0;
    int to = from;
    for (int s = 0; s < N; ++s) {
      if (s == from) continue;
      to = s;
      acc += gen(s, from);
      if (v < acc) break;
    }
    state[i] = to;
  };

  // advance every particle to time `to`, accumulating survival weight
  double now = 0.0;
  auto advance_all = [&](double to) {
    if (!(to > now)) return;
    for (int i = 0; i < n_particles; ++i) {
      double cur = now;
      while (next_jump[i] < to) {
        weight[i] *= std::exp(-total_rate(cur, state[i]) *
                              (next_jump[i] - cur));
        cur = next_jump[i];
        jump_to(i);
        next_jump[i] = cur + draw_exit(state[i]);
      }
      weight[i] *= std::exp(-total_rate(cur, state[i]) * (to - cur));
    }
    now = to;
  };

  auto record = [&](int cp_row) {
    double tot = 0.0;
    for (int i = 0; i < n_particles; ++i) tot += weight[i];
    Vec freq = Vec::Zero(N);
    for (int i = 0; i < n_particles; ++i) freq(state[i]) += weight[i];
    out.x_hat.row(cp_row) = (freq / tot).transpose();
  };

  size_t ei = 0;
  int cp = 0;
  for (int k = 0; k <= obs.grid.steps; ++k) {
    double tk = obs.t(k);
    while (ei < obs.events.size() && obs.events[ei].t <= tk + 1e-15) {
      const mvh::Event& ev = obs.events[ei];
      advance_all(ev.t);
      mvh::ObsSnapshot snap = snapshot(ev.t);
      double wmax = 0.0;
      for (int i = 0; i < n_particles; ++i) {
        double lam = mvh::gate_open(channels[ev.channel], snap.queues)
                         ? channels[ev.channel].intensity(snap, state[i])
                         : 0.0;
        weight[i] *= lam;
        wmax = std::max(wmax, weight[i]);
      }
      if (wmax > 0.0)
        for (int i = 0; i < n_particles; ++i) weight[i] /= wmax;
      ++counts[ev.channel];
      mvh::apply_queue_effect(channels[ev.channel], queues);
      ++ei;
    }
    advance_all(tk);
    if (cp < n_cp && out.grid_points[cp] == k) record(cp++);
  }

  double sw = 0.0, sw2 = 0.0;
  for (int i = 0; i < n_particles; ++i) {
    sw += weight[i];
    sw2 += weight[i] * weight[i];
  }
  out.ess = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  return out;
}

}  // namespace mvh_test
