#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "mvh/errors.hpp"

namespace mvh {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using TimeScalarFn = std::function<double(double)>;
using TimeVecFn = std::function<Vec(double)>;
using TimeMatFn = std::function<Mat(double)>;

inline double lerp(double a, double b, double w) { return a + (b - a) * w; }

// Uniform grid t_k = k*dt, k = 0..steps. All simulators and solvers share
// this layout; event times live strictly between grid points.
struct TimeGrid {
  double dt = 0.0;
  int steps = 0;
  double t(int k) const { return k * dt; }
  double horizon() const { return steps * dt; }
};

inline int steps_for(double horizon, double step) {
  if (!(horizon > 0.0) || !(step > 0.0))
    throw EngineError("horizon and step must be positive");
  int n = static_cast<int>(std::lround(horizon / step));
  if (n < 1) n = 1;
  if (std::abs(n * step - horizon) > 1e-9 * std::max(1.0, horizon))
    throw EngineError("step does not divide horizon");
  return n;
}

// Fixed-order pairwise reduction; the result does not depend on how work
// was scheduled across threads.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe r;
  if (xs.empty()) return r;
  double n = static_cast<double>(xs.size());
  r.mean = pairwise_sum(xs) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  if (xs.size() > 1) r.se = std::sqrt(ss / (n * (n - 1.0)));
  return r;
}

// Runs fn(begin, end, block_index) over [0, n_items) split into fixed-size
// blocks. Block boundaries depend only on block_size, so any per-block
// accumulators the caller combines in block order are bit-reproducible
// regardless of thread count.
template <class Fn>
void for_blocks(int n_items, int block_size, int threads, Fn&& fn) {
  if (n_items <= 0) return;
  if (block_size < 1) block_size = 1;
  int n_blocks = (n_items + block_size - 1) / block_size;
  if (threads < 1) threads = 1;
  if (threads == 1 || n_blocks == 1) {
    for (int b = 0; b < n_blocks; ++b)
      fn(b * block_size, std::min(n_items, (b + 1) * block_size), b);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      int b = next.fetch_add(1);
      if (b >= n_blocks) return;
      fn(b * block_size, std::min(n_items, (b + 1) * block_size), b);
    }
  };
  std::vector<std::thread> pool;
  int nw = std::min(threads, n_blocks);
  pool.reserve(nw);
  for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace mvh
