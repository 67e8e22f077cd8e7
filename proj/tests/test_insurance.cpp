#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mvh/chain_filter.hpp"
#include "mvh/insurance.hpp"
#include "test_models.hpp"

using namespace mvh;
using namespace mvh_test;

namespace {

double ks_statistic(std::vector<double> xs,
                    const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  double d = 0.0;
  const double n = static_cast<double>(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    double f = cdf(xs[i]);
    d = std::max(d, std::abs((i + 1) / n - f));
    d = std::max(d, std::abs(f - i / n));
  }
  return d;
}

}  // namespace

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  std::vector<double> x, w;
  gauss_legendre(3, 0.0, 2.0, x, w);
  double s5 = 0.0, s0 = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    s5 += w[i] * std::pow(x[i], 5);
    s0 += w[i];
  }
  CHECK(s5 == doctest::Approx(64.0 / 6.0).epsilon(1e-13));  // degree 2n-1
  CHECK(s0 == doctest::Approx(2.0).epsilon(1e-14));

  gauss_legendre(32, -1.0, 1.0, x, w);
  for (int i = 0; i < 16; ++i) {
    CHECK(x[i] == doctest::Approx(-x[31 - i]).epsilon(1e-13));
    CHECK(w[i] == doctest::Approx(w[31 - i]).epsilon(1e-13));
  }
}

TEST_CASE("expected payouts against hand integrals, uniform marks on [1,2]") {
  MarkLaw law = uniform_mark(1.0, 2.0);

  LossFn identity = [](double, double x) { return x; };
  CHECK(lbar(law, identity, 0.0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(lbar_sq(law, identity, 0.0) ==
        doctest::Approx(7.0 / 3.0).epsilon(1e-12));

  // excess-of-1.5 layer: integral of (x - 1.5)+ is 0.125; the kink costs the
  // smooth quadrature a few parts in a thousand
  LossFn excess = [](double, double x) { return std::max(x - 1.5, 0.0); };
  CHECK(lbar(law, excess, 0.0) == doctest::Approx(0.125).epsilon(2e-2));

  // capped at 1.8: mean is 1.48, second moment 2.258666...
  LossFn capped = [](double, double x) { return std::min(x, 1.8); };
  CHECK(lbar(law, capped, 0.0) == doctest::Approx(1.48).epsilon(2e-3));
  CHECK(lbar_sq(law, capped, 0.0) ==
        doctest::Approx(2.2586666666666666).epsilon(4e-3));
}

TEST_CASE("time-dependent losses read the event time") {
  MarkLaw law = uniform_mark(1.0, 2.0);
  LossFn scaled = [](double t, double x) { return (1.0 + t) * x; };
  CHECK(lbar(law, scaled, 1.0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("mark sampling matches the law: uniform") {
  MarkLaw law = uniform_mark(1.0, 2.0);
  RngStream rng(51, 0, 0, StreamRole::marks);
  const int n = 100000;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = sample_mark(law, 0.0, rng);
    REQUIRE(xs[i] >= 1.0);
    REQUIRE(xs[i] <= 2.0);
  }
  double d = ks_statistic(std::move(xs),
                          [](double x) { return std::clamp(x - 1.0, 0.0, 1.0); });
  CHECK(d < 0.01);
}

TEST_CASE("mark sampling matches the law: truncated exponential") {
  const double lo = 0.5, hi = 3.0, rate = 2.0;
  const double z = 1.0 - std::exp(-rate * (hi - lo));
  MarkLaw law;
  law.lo = lo;
  law.hi = hi;
  law.density = [=](double, double x) {
    return rate * std::exp(-rate * (x - lo)) / z;
  };
  law.validate();

  RngStream rng(53, 0, 0, StreamRole::marks);
  const int n = 100000;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = sample_mark(law, 0.0, rng);
  double d = ks_statistic(std::move(xs), [=](double x) {
    return std::clamp((1.0 - std::exp(-rate * (x - lo))) / z, 0.0, 1.0);
  });
  CHECK(d < 0.01);
}

TEST_CASE("cumulative loss steps at event times") {
  ObservedPath obs;
  obs.grid.dt = 0.25;
  obs.grid.steps = 4;
  obs.n_channels = 2;
  obs.events = {{0.3, 0, 1.2}, {0.5, 1, 1.9}, {0.7, 0, 1.8}};

  LossFn identity = [](double, double x) { return x; };
  LossPath lp = cumulative_loss(obs, 0, identity);
  CHECK(lp.at(0.2) == 0.0);
  CHECK(lp.at(0.3) == doctest::Approx(1.2));
  CHECK(lp.at(0.5) == doctest::Approx(1.2));  // other channel ignored
  CHECK(lp.at(0.7) == doctest::Approx(3.0));
  CHECK(lp.terminal() == doctest::Approx(3.0));
}

TEST_CASE("two-exit queue replays the event log") {
  ObservedPath obs;
  obs.grid.dt = 0.25;
  obs.grid.steps = 4;
  obs.n_channels = 3;
  double nan = std::numeric_limits<double>::quiet_NaN();
  obs.events = {{0.1, 0, nan}, {0.3, 1, nan}, {0.55, 0, nan},
                {0.6, 2, nan}, {0.9, 2, nan}};

  std::vector<double> q = two_exit_queue(1.0, obs, 0, 1, 2);
  std::vector<double> want{1.0, 2.0, 1.0, 1.0, 0.0};
  REQUIRE(q.size() == want.size());
  for (size_t i = 0; i < q.size(); ++i) CHECK(q[i] == want[i]);

  ObservedPath broken = obs;
  broken.events.push_back({0.95, 2, nan});
  CHECK_THROWS_AS(two_exit_queue(1.0, broken, 0, 1, 2), NegativeQueue);
}

TEST_CASE("graded state space wires factors, grades and loadings") {
  Mat gf(3, 3);
  gf << -0.3, 0.1, 0.2, 0.2, -0.4, 0.1, 0.1, 0.3, -0.3;
  Vec x0(3);
  x0 << 0.5, 0.3, 0.2;
  GradedRecipe rec;
  rec.base_event_rate = Vec(2);
  rec.base_event_rate << 0.4, 0.7;
  rec.base_inflow = Vec(3);
  rec.base_inflow << 1.0, 2.0, 3.0;
  rec.base_outflow = Vec(3);
  rec.base_outflow << 2.0, 1.0, 0.5;
  rec.grade_factor_inflow = Vec(3);
  rec.grade_factor_inflow << 1.0, 0.8, 0.5;
  rec.grade_factor_outflow = Vec(3);
  rec.grade_factor_outflow << 1.0, 1.5, 2.5;

  GradedSpace gs = build_graded_state_space(3, 2, const_mat(gf), x0, rec);
  CHECK(gs.chain.num_states == 9);
  CHECK(gs.index(1, 2) == 5);
  CHECK_NOTHROW(gs.chain.validate());

  Mat gen = gs.chain.generator(0.0);
  CHECK(gen(gs.index(0, 1), gs.index(0, 0)) == doctest::Approx(0.2));
  CHECK(gen(gs.index(0, 0), gs.index(0, 1)) == doctest::Approx(1.0));
  CHECK(gen(gs.index(1, 0), gs.index(0, 0)) == doctest::Approx(0.2));
  CHECK(gen(gs.index(1, 1), gs.index(0, 0)) == 0.0);  // no diagonal moves
  CHECK(gen(gs.index(0, 0), gs.index(0, 0)) == doctest::Approx(-0.5));

  CHECK(gs.event_rates[0][gs.index(2, 1)] == doctest::Approx(1.6));
  CHECK(gs.event_rates[0][gs.index(2, 0)] == doctest::Approx(0.4));
  CHECK(gs.event_rates[1][gs.index(0, 2)] == doctest::Approx(2.8));
  CHECK(gs.inflow_rate[gs.index(2, 1)] == doctest::Approx(2.4));
  CHECK(gs.outflow_rate[gs.index(0, 2)] == doctest::Approx(5.0));

  // initial mass sits at grade zero
  for (int i = 0; i < 3; ++i) {
    CHECK(gs.chain.x0_dist[gs.index(i, 0)] == doctest::Approx(x0[i]));
    for (int j = 1; j <= 2; ++j) CHECK(gs.chain.x0_dist[gs.index(i, j)] == 0.0);
  }

  IntensityFn fn = state_rate_intensity(gs.inflow_rate);
  Vec s = Vec::Constant(1, 1.0), y(0);
  ObsSnapshot snap{0.0, &s, &y, {}, {}};
  CHECK(fn(snap, gs.index(2, 1)) == doctest::Approx(2.4));

  // the filter accepts the zero-padded prior (mass only at grade zero)
  ObservedPath obs;
  obs.grid.dt = 0.01;
  obs.grid.steps = 50;
  obs.d = 1;
  obs.S = Mat::Constant(51, 1, 100.0);
  obs.Y.resize(51, 0);
  obs.Q.resize(51, 0);
  std::vector<CountingChannel> chs;
  ChainFilterRun run = run_chain_filter(obs, gs.chain, chs, gs.chain.x0_dist);
  CHECK(run.x_hat.row(50).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(run.x_hat.row(50).minCoeff() >= 0.0);
  // escalation has started moving mass off grade zero
  CHECK(run.x_hat(50, gs.index(0, 1)) > 0.0);
}

TEST_CASE("flat grade factors make fund flows uninformative about grades") {
  Mat gf = Mat::Zero(1, 1);
  Vec x0 = Vec::Constant(1, 1.0);
  GradedRecipe rec;
  rec.base_event_rate = Vec::Constant(1, 0.5);
  rec.base_inflow = Vec::Constant(1, 2.0);
  rec.base_outflow = Vec::Constant(1, 1.0);
  rec.grade_factor_inflow = Vec::Constant(2, 1.0);
  rec.grade_factor_outflow = Vec::Constant(2, 1.0);

  GradedSpace gs = build_graded_state_space(1, 1, const_mat(gf), x0, rec);
  CHECK(gs.inflow_rate.maxCoeff() == gs.inflow_rate.minCoeff());
  CHECK(gs.outflow_rate.maxCoeff() == gs.outflow_rate.minCoeff());
}
