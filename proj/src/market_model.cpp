#include "mvh/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvh/insurance.hpp"

namespace mvh {

namespace {

constexpr double kCondLimit = 1e12;
constexpr double kBoundSlack = 1.0 + 1e-9;

// Thinning bounds are refreshed from evaluations at both step endpoints.
// Registry time profiles are monotone, so the endpoint max is a true bound;
// a violation mid-step is reported, not silently absorbed.
double chain_exit_rate(const Mat& gen, int state) { return -gen(state, state); }

}  // namespace

void MarketSpec::validate() const {
  if (d < 1) throw EngineError("market: d must be >= 1");
  if (m < 0) throw EngineError("market: m must be >= 0");
  if (s0.size() != d) throw EngineError("market: s0 has wrong dimension");
  if (y0.size() != m) throw EngineError("market: y0 has wrong dimension");
  if (!sigma) throw EngineError("market: sigma not set");
  if (m > 0 && (!sigma_bar || !rho))
    throw EngineError("market: sigma_bar and rho required when m > 0");
  eval_coeff(sigma, 0.0, s0, y0, d, d, "sigma");
  if (m > 0) {
    eval_coeff(sigma_bar, 0.0, s0, y0, m, d, "sigma_bar");
    eval_coeff(rho, 0.0, s0, y0, m, m, "rho");
  }
}

void RiskPremiumModel::validate() const {
  int nn = n();
  if (nn < 1) throw EngineError("risk_premium: empty state");
  if (p < 0) throw EngineError("risk_premium: p must be >= 0");
  if (!mu || !bigF || !delta) throw EngineError("risk_premium: coefficients not set");
  if (mu(0.0).size() != nn) throw EngineError("risk_premium: mu has wrong dimension");
  Mat f = bigF(0.0);
  if (f.rows() != nn || f.cols() != nn)
    throw EngineError("risk_premium: F has wrong shape");
  Mat de = delta(0.0);
  if (de.rows() != nn || de.cols() != p)
    throw EngineError("risk_premium: delta has wrong shape");
  if (sigma0.rows() != nn || sigma0.cols() != nn)
    throw EngineError("risk_premium: sigma0 has wrong shape");
  if ((sigma0 - sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw EngineError("risk_premium: sigma0 must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(sigma0);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw EngineError("risk_premium: sigma0 must be positive semidefinite");
}

void ChainModel::validate() const {
  if (num_states < 1) throw EngineError("chain: num_states must be >= 1");
  if (!generator) throw EngineError("chain: generator not set");
  Mat g = generator(0.0);
  if (g.rows() != num_states || g.cols() != num_states)
    throw EngineError("chain: generator has wrong shape");
  for (int j = 0; j < num_states; ++j) {
    double col = 0.0;
    for (int i = 0; i < num_states; ++i) {
      col += g(i, j);
      if (i != j && g(i, j) < -1e-12)
        throw EngineError("chain: off-diagonal generator entries must be >= 0");
    }
    if (std::abs(col) > 1e-9)
      throw EngineError("chain: generator columns must sum to 0");
  }
  if (x0_dist.size() != num_states)
    throw EngineError("chain: x0_dist has wrong dimension");
  if (x0_dist.minCoeff() < 0.0 || std::abs(x0_dist.sum() - 1.0) > 1e-9)
    throw EngineError("chain: x0_dist must be a probability vector");
}

void MarkLaw::validate() const {
  if (!(lo > 0.0)) throw EngineError("mark: support must satisfy lo > 0");
  if (!(hi > lo)) throw EngineError("mark: support must satisfy hi > lo");
  if (!density) throw EngineError("mark: density not set");
  // 64-point Gauss-Legendre check that nu_0 integrates to one over the support
  std::vector<double> xq, wq;
  gauss_legendre(64, lo, hi, xq, wq);
  double mass = 0.0;
  for (size_t i = 0; i < xq.size(); ++i) {
    double f = density(0.0, xq[i]);
    if (f < 0.0) throw EngineError("mark: density must be nonnegative");
    mass += f * wq[i];
  }
  if (std::abs(mass - 1.0) > 1e-4)
    throw EngineError("mark: density does not integrate to 1 over support");
}

void validate_channels(const std::vector<CountingChannel>& channels,
                       int n_funds, int n_states) {
  for (const auto& ch : channels) {
    if (!ch.intensity)
      throw EngineError("channel " + ch.name + ": intensity not set");
    auto need_fund = [&](int f, const char* what) {
      if (f < 0 || f >= n_funds)
        throw EngineError("channel " + ch.name + ": bad " + what + " fund");
    };
    switch (ch.effect) {
      case QueueEffect::none:
        break;
      case QueueEffect::inflow:
        need_fund(ch.fund, "inflow");
        break;
      case QueueEffect::outflow:
        need_fund(ch.fund, "outflow");
        if (ch.gate_fund != ch.fund)
          throw EngineError("channel " + ch.name +
                            ": outflow must be gated by its own fund");
        break;
      case QueueEffect::transfer:
        need_fund(ch.fund, "transfer source");
        need_fund(ch.fund_to, "transfer destination");
        if (ch.gate_fund != ch.fund)
          throw EngineError("channel " + ch.name +
                            ": transfer must be gated by the source fund");
        break;
    }
    if (ch.gate_fund >= n_funds)
      throw EngineError("channel " + ch.name + ": bad gate fund");
    if (ch.mark) ch.mark->validate();
    (void)n_states;
  }
}

Mat eval_coeff(const StateCoeffFn& fn, double t, const Vec& S, const Vec& Y,
               int rows, int cols, const char* what) {
  Mat a = fn(t, S, Y);
  if (a.rows() != rows || a.cols() != cols)
    throw EngineError(std::string(what) + ": wrong shape at t = " +
                      std::to_string(t));
  if (!a.allFinite())
    throw EngineError(std::string(what) + ": non-finite value at t = " +
                      std::to_string(t));
  return a;
}

double condition_number(const Mat& a) {
  if (a.rows() == 1 && a.cols() == 1)
    return a(0, 0) == 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  Eigen::JacobiSVD<Mat> svd(a);
  double smin = svd.singularValues().minCoeff();
  double smax = svd.singularValues().maxCoeff();
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

bool gate_open(const CountingChannel& ch, std::span<const double> queues) {
  if (ch.gate_fund < 0) return true;
  return queues[ch.gate_fund] > 0.0;
}

void apply_queue_effect(const CountingChannel& ch, Vec& queues) {
  switch (ch.effect) {
    case QueueEffect::none:
      return;
    case QueueEffect::inflow:
      queues[ch.fund] += 1.0;
      return;
    case QueueEffect::outflow:
      queues[ch.fund] -= 1.0;
      if (queues[ch.fund] < 0.0)
        throw NegativeQueue("queue went negative on channel " + ch.name);
      return;
    case QueueEffect::transfer:
      queues[ch.fund] -= 1.0;
      queues[ch.fund_to] += 1.0;
      if (queues[ch.fund] < 0.0)
        throw NegativeQueue("queue went negative on channel " + ch.name);
      return;
  }
}

double max_state_intensity(const CountingChannel& ch, const ObsSnapshot& snap,
                           int n_states) {
  double mx = 0.0;
  for (int i = 0; i < n_states; ++i)
    mx = std::max(mx, ch.intensity(snap, i));
  return mx;
}

std::vector<long> ObservedPath::terminal_counts() const {
  std::vector<long> c = counts0;
  c.resize(n_channels, 0);
  for (const auto& ev : events) ++c[ev.channel];
  return c;
}

std::vector<std::vector<long>> ObservedPath::counts_grid() const {
  std::vector<std::vector<long>> out(grid.steps + 1);
  std::vector<long> c = counts0;
  c.resize(n_channels, 0);
  size_t ei = 0;
  for (int k = 0; k <= grid.steps; ++k) {
    double tk = t(k);
    while (ei < events.size() && events[ei].t <= tk + 1e-15) {
      ++c[events[ei].channel];
      ++ei;
    }
    out[k] = c;
  }
  return out;
}

TruthPath simulate_truth(const MarketSpec& market, const RiskPremiumModel& rp,
                         const ChainModel& chain,
                         const std::vector<CountingChannel>& channels,
                         const Vec& q0, double horizon, double step,
                         uint64_t seed, uint32_t path_index,
                         uint32_t ensemble_id) {
  const int d = market.d, m = market.m, n = market.n(), p = rp.p;
  const int N = chain.num_states;
  const int n_ch = static_cast<int>(channels.size());
  const int n_funds = static_cast<int>(q0.size());
  if (rp.n() != n) throw EngineError("risk premium dimension must equal d + m");
  if (n_funds > 0 && q0.minCoeff() < 0.0)
    throw EngineError("initial queues must be >= 0");

  TruthPath path;
  path.grid.dt = step;
  path.grid.steps = steps_for(horizon, step);
  const int K = path.grid.steps;
  path.d = d;
  path.m = m;
  path.n = n;
  path.p = p;
  path.n_channels = n_ch;
  path.num_chain_states = N;
  path.S.resize(K + 1, d);
  path.Y.resize(K + 1, std::max(m, 0));
  path.z.resize(K + 1, n);
  path.dW.resize(K, d);
  path.dB.resize(K, std::max(m, 0));
  path.dV.resize(K, std::max(p, 0));
  path.chain_state.resize(K + 1);
  path.Q.resize(K + 1, n_funds);

  RngStream rng_w(seed, ensemble_id, path_index, StreamRole::brownian_w);
  RngStream rng_b(seed, ensemble_id, path_index, StreamRole::brownian_b);
  RngStream rng_v(seed, ensemble_id, path_index, StreamRole::brownian_v);
  RngStream rng_ev(seed, ensemble_id, path_index, StreamRole::events);
  RngStream rng_mark(seed, ensemble_id, path_index, StreamRole::marks);
  RngStream rng_init(seed, ensemble_id, path_index, StreamRole::init);

  // z(0) ~ N(z0, sigma0) via symmetric square root; exact when sigma0 = 0.
  Vec z = rp.z0;
  if (rp.sigma0.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(rp.sigma0);
    Vec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Vec g(n);
    for (int i = 0; i < n; ++i) g[i] = rng_init.normal();
    z += es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose() * g;
  }

  // X(0) ~ x0_dist
  int x = 0;
  {
    double u = rng_init.uniform(), acc = 0.0;
    for (int i = 0; i < N; ++i) {
      acc += chain.x0_dist[i];
      if (u < acc || i == N - 1) {
        x = i;
        break;
      }
    }
  }

  Vec S = market.s0, Y = market.y0;
  Vec queues = q0;
  std::vector<long> counts(n_ch, 0);

  path.S.row(0) = S.transpose();
  if (m > 0) path.Y.row(0) = Y.transpose();
  path.z.row(0) = z.transpose();
  path.chain_state[0] = x;
  path.Q.row(0) = queues.transpose();

  const double sdt = std::sqrt(step);
  double last_jump_time = -1.0;
  Vec s_at(d), y_at(std::max(m, 0));

  for (int k = 0; k < K; ++k) {
    const double t0 = path.grid.t(k), t1 = path.grid.t(k + 1);

    Vec dW(d), dB(std::max(m, 0)), dV(std::max(p, 0));
    for (int i = 0; i < d; ++i) dW[i] = sdt * rng_w.normal();
    for (int i = 0; i < m; ++i) dB[i] = sdt * rng_b.normal();
    for (int i = 0; i < p; ++i) dV[i] = sdt * rng_v.normal();
    path.dW.row(k) = dW.transpose();
    if (m > 0) path.dB.row(k) = dB.transpose();
    if (p > 0) path.dV.row(k) = dV.transpose();

    // Euler step of the diffusion block with the hidden premium as drift.
    Vec theta = z.head(d), alpha = z.tail(m);
    Mat sg = eval_coeff(market.sigma, t0, S, Y, d, d, "sigma");
    if (condition_number(sg) > kCondLimit)
      throw NonInvertibleCoefficient("sigma ill-conditioned at t = " +
                                     std::to_string(t0));
    Vec Snew = S + sg * (dW + theta * step);
    Vec Ynew = Y;
    if (m > 0) {
      Mat sb = eval_coeff(market.sigma_bar, t0, S, Y, m, d, "sigma_bar");
      Mat rh = eval_coeff(market.rho, t0, S, Y, m, m, "rho");
      if (condition_number(rh) > kCondLimit)
        throw NonInvertibleCoefficient("rho ill-conditioned at t = " +
                                       std::to_string(t0));
      Ynew = Y + sb * (dW + theta * step) + rh * (dB + alpha * step);
    }
    Vec znew = z + (rp.mu(t0) - rp.bigF(t0) * z) * step + rp.delta(t0) * dV;

    // Events and chain transitions in (t0, t1], placed at exact times by
    // thinning against per-step bounds; the diffusion state seen by the
    // intensities is linearly interpolated across the step.
    Mat gen0 = chain.generator(t0), gen1 = chain.generator(t1);
    auto snap_at = [&](double tau) {
      double w = (tau - t0) / step;
      s_at = S + (Snew - S) * w;
      if (m > 0) y_at = Y + (Ynew - Y) * w;
      return ObsSnapshot{tau, &s_at, &y_at,
                         std::span<const long>(counts),
                         std::span<const double>(queues.data(),
                                                 static_cast<size_t>(n_funds))};
    };

    std::vector<double> bounds(n_ch + 1, 0.0);
    double total_bound = 0.0;
    auto refresh_bounds = [&](double from) {
      bounds[0] = std::max(chain_exit_rate(gen0, x), chain_exit_rate(gen1, x));
      // the snapshot buffer is shared, so evaluate the two endpoints in turn;
      // gates depend on queues only and queues are constant between refreshes
      ObsSnapshot sa = snap_at(from);
      for (int c = 0; c < n_ch; ++c)
        bounds[c + 1] = gate_open(channels[c], sa.queues)
                            ? max_state_intensity(channels[c], sa, N)
                            : 0.0;
      ObsSnapshot sb2 = snap_at(t1);
      total_bound = bounds[0];
      for (int c = 0; c < n_ch; ++c) {
        if (bounds[c + 1] > 0.0)
          bounds[c + 1] = std::max(bounds[c + 1],
                                   max_state_intensity(channels[c], sb2, N));
        total_bound += bounds[c + 1];
      }
    };

    double tau = t0;
    refresh_bounds(tau);
    while (total_bound > 0.0) {
      tau += rng_ev.exponential(total_bound);
      if (tau >= t1) break;
      double u = rng_ev.uniform() * total_bound;
      int cat = 0;
      double acc = bounds[0];
      while (u >= acc && cat < n_ch) acc += bounds[++cat];
      double accept = rng_ev.uniform();
      if (cat == 0) {
        // candidate chain transition
        Mat gen = chain.generator(tau);
        double rate = chain_exit_rate(gen, x);
        if (rate > bounds[0] * kBoundSlack)
          throw IntensityBoundViolated("chain exit rate exceeded step bound");
        if (bounds[0] > 0.0 && accept < rate / bounds[0]) {
          double v = rng_ev.uniform() * rate, a2 = 0.0;
          int to = x;
          for (int i = 0; i < N; ++i) {
            if (i == x) continue;
            a2 += gen(i, x);
            if (v < a2) {
              to = i;
              break;
            }
            to = i;
          }
          double jt = tau;
          if (jt <= last_jump_time)
            jt = std::nextafter(last_jump_time,
                                std::numeric_limits<double>::infinity());
          x = to;
          last_jump_time = jt;
          path.chain_jumps.push_back({jt, x});
          refresh_bounds(tau);  // exit-rate bound is state dependent
        }
      } else {
        int c = cat - 1;
        const auto& ch = channels[c];
        ObsSnapshot snap = snap_at(tau);
        if (!gate_open(ch, snap.queues)) continue;
        double lam = ch.intensity(snap, x);
        if (lam > bounds[cat] * kBoundSlack)
          throw IntensityBoundViolated("channel " + ch.name +
                                       " exceeded step bound");
        if (lam <= 0.0)
          throw EngineError("channel " + ch.name +
                            ": intensity must be strictly positive");
        if (accept < lam / bounds[cat]) {
          double et = tau;
          if (et <= last_jump_time)
            et = std::nextafter(last_jump_time,
                                std::numeric_limits<double>::infinity());
          last_jump_time = et;
          double mark = std::numeric_limits<double>::quiet_NaN();
          if (ch.mark) mark = sample_mark(*ch.mark, et, rng_mark);
          ++counts[c];
          apply_queue_effect(ch, queues);
          path.events.push_back({et, c, mark});
          refresh_bounds(tau);  // gates / queue-scaled rates may have moved
        }
      }
    }

    S = Snew;
    Y = Ynew;
    z = znew;
    path.S.row(k + 1) = S.transpose();
    if (m > 0) path.Y.row(k + 1) = Y.transpose();
    path.z.row(k + 1) = z.transpose();
    path.chain_state[k + 1] = x;
    path.Q.row(k + 1) = queues.transpose();
  }
  return path;
}

ObservedPath observable_projection(const TruthPath& path) {
  ObservedPath obs;
  obs.grid = path.grid;
  obs.t_start = 0.0;
  obs.d = path.d;
  obs.m = path.m;
  obs.S = path.S;
  obs.Y = path.Y;
  obs.events = path.events;
  obs.Q = path.Q;
  obs.n_channels = path.n_channels;
  obs.counts0.assign(path.n_channels, 0);
  obs.queues0 = path.Q.row(0).transpose();
  return obs;
}

ObservedPath observable_projection(const ObservedPath& path) { return path; }

}  // namespace mvh
