#include "mvh/insurance.hpp"

#include <algorithm>
#include <cmath>

namespace mvh {

void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  // Newton iteration on P_n with the Chebyshev-angle initial guess.
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    nodes[i] = mid - half * x;
    nodes[n - 1 - i] = mid + half * x;
    weights[i] = weights[n - 1 - i] = half * w;
  }
}

double sample_mark(const MarkLaw& law, double t, RngStream& rng) {
  constexpr int kCdfPoints = 256;
  // midpoint CDF table over the support, renormalized so F(hi) = 1
  double h = (law.hi - law.lo) / kCdfPoints;
  double cdf[kCdfPoints];
  double acc = 0.0;
  for (int i = 0; i < kCdfPoints; ++i) {
    acc += law.density(t, law.lo + (i + 0.5) * h) * h;
    cdf[i] = acc;
  }
  if (!(acc > 0.0)) throw EngineError("mark: density has zero mass");
  double u = rng.uniform() * acc;
  int idx = static_cast<int>(std::lower_bound(cdf, cdf + kCdfPoints, u) - cdf);
  if (idx >= kCdfPoints) idx = kCdfPoints - 1;
  double c_lo = idx == 0 ? 0.0 : cdf[idx - 1];
  double c_hi = cdf[idx];
  double w = c_hi > c_lo ? (u - c_lo) / (c_hi - c_lo) : 0.5;
  return law.lo + (idx + w) * h;
}

namespace {

double quad_over_support(const MarkLaw& law, double t,
                         const std::function<double(double)>& f) {
  // reference rule on [0, 1], computed once; rescaled per support
  static const auto ref = [] {
    std::pair<std::vector<double>, std::vector<double>> r;
    gauss_legendre(32, 0.0, 1.0, r.first, r.second);
    return r;
  }();
  const double span = law.hi - law.lo;
  double acc = 0.0;
  for (size_t i = 0; i < ref.first.size(); ++i) {
    double x = law.lo + span * ref.first[i];
    acc += span * ref.second[i] * f(x) * law.density(t, x);
  }
  return acc;
}

}  // namespace

double lbar(const MarkLaw& law, const LossFn& l, double t) {
  return quad_over_support(law, t, [&](double x) { return l(t, x); });
}

double lbar_sq(const MarkLaw& law, const LossFn& l, double t) {
  return quad_over_support(law, t, [&](double x) {
    double v = l(t, x);
    return v * v;
  });
}

double LossPath::at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cum[static_cast<size_t>(it - times.begin()) - 1];
}

LossPath cumulative_loss(const ObservedPath& path, int channel, const LossFn& l) {
  LossPath out;
  double acc = 0.0;
  for (const auto& ev : path.events) {
    if (ev.channel != channel) continue;
    acc += l(ev.t, ev.mark);
    out.times.push_back(ev.t);
    out.cum.push_back(acc);
  }
  return out;
}

std::vector<double> two_exit_queue(double q0, const ObservedPath& path,
                                   int a_channel, int c_channel, int d_channel) {
  std::vector<double> q(path.grid.steps + 1, q0);
  double cur = q0;
  size_t ei = 0;
  for (int k = 0; k <= path.grid.steps; ++k) {
    double tk = path.t(k);
    while (ei < path.events.size() && path.events[ei].t <= tk + 1e-15) {
      int c = path.events[ei].channel;
      if (c == a_channel) cur += 1.0;
      if (c == c_channel || c == d_channel) cur -= 1.0;
      if (cur < 0.0)
        throw NegativeQueue("two-exit queue went negative at t = " +
                            std::to_string(path.events[ei].t));
      ++ei;
    }
    q[k] = cur;
  }
  return q;
}

IntensityFn state_rate_intensity(Vec rates) {
  return [r = std::move(rates)](const ObsSnapshot&, int state) {
    return r[state];
  };
}

GradedSpace build_graded_state_space(int n_f, int n_g, const TimeMatFn& factor_gen,
                                     const Vec& factor_x0,
                                     const GradedRecipe& recipe) {
  if (n_f < 1 || n_g < 0)
    throw EngineError("graded space: need n_f >= 1, n_g >= 0");
  if (recipe.base_event_rate.size() != n_g)
    throw EngineError("graded space: base_event_rate must have size n_g");
  if (recipe.base_inflow.size() != n_f || recipe.base_outflow.size() != n_f)
    throw EngineError("graded space: fund-factor rates must have size n_f");
  if (recipe.grade_factor_inflow.size() != n_g + 1 ||
      recipe.grade_factor_outflow.size() != n_g + 1)
    throw EngineError("graded space: grade factors must have size n_g + 1");

  GradedSpace gs;
  gs.n_f = n_f;
  gs.n_g = n_g;
  const int G = n_g + 1;
  const int N = n_f * G;

  double relax = recipe.relax_rate, up = recipe.escalate_rate;
  gs.chain.num_states = N;
  gs.chain.generator = [factor_gen, n_f, G, relax, up](double t) {
    Mat gf = factor_gen(t);
    Mat gen = Mat::Zero(n_f * G, n_f * G);
    for (int i = 0; i < n_f; ++i)
      for (int j = 0; j < G; ++j) {
        int from = i * G + j;
        for (int i2 = 0; i2 < n_f; ++i2)
          if (i2 != i) gen(i2 * G + j, from) += gf(i2, i);
        if (j > 0) gen(i * G + j - 1, from) += relax;       // relaxation
        if (j < G - 1) gen(i * G + j + 1, from) += up;      // escalation
        gen(from, from) += gf(i, i) - (j > 0 ? relax : 0.0) -
                           (j < G - 1 ? up : 0.0);
      }
    return gen;
  };
  gs.chain.x0_dist = Vec::Zero(N);
  for (int i = 0; i < n_f; ++i) gs.chain.x0_dist[i * G] = factor_x0[i];

  // Grade-k event channels load on states with j == k; off-grade loading is 1.
  gs.event_rates.resize(n_g);
  for (int k = 1; k <= n_g; ++k) {
    Vec r(N);
    for (int i = 0; i < n_f; ++i)
      for (int j = 0; j < G; ++j)
        r[i * G + j] = recipe.base_event_rate[k - 1] *
                       (j == k ? recipe.on_grade_loading : 1.0);
    gs.event_rates[k - 1] = r;
  }
  gs.inflow_rate.resize(N);
  gs.outflow_rate.resize(N);
  for (int i = 0; i < n_f; ++i)
    for (int j = 0; j < G; ++j) {
      gs.inflow_rate[i * G + j] =
          recipe.base_inflow[i] * recipe.grade_factor_inflow[j];
      gs.outflow_rate[i * G + j] =
          recipe.base_outflow[i] * recipe.grade_factor_outflow[j];
    }
  return gs;
}

}  // namespace mvh
