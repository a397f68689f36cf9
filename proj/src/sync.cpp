#include "soh/sync.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "soh/errors.hpp"

namespace soh::sync {

namespace {

void check_series(std::span<const double> s, const char* which) {
  if (s.empty()) throw InvalidInputError(std::string(which) + " series is empty");
  for (double v : s) {
    if (!std::isfinite(v)) {
      throw InvalidInputError(std::string(which) + " series has a non-finite sample");
    }
  }
}

}  // namespace

WarpingPath dtw_path(std::span<const double> reference, std::span<const double> target) {
  check_series(reference, "reference");
  check_series(target, "target");

  const int m = static_cast<int>(reference.size());
  const int n = static_cast<int>(target.size());
  const double inf = std::numeric_limits<double>::infinity();

  // Cost-to-go: remaining(i,j) = local(i,j) + min over successors. Filling
  // backwards lets the path be reconstructed from (0,0), which pins ties the
  // same way the rest of the pipeline expects (diagonal, then reference
  // advance, then target advance).
  Eigen::MatrixXd remaining(m, n);
  for (int i = m - 1; i >= 0; --i) {
    for (int j = n - 1; j >= 0; --j) {
      double local = std::abs(reference[static_cast<std::size_t>(i)] -
                              target[static_cast<std::size_t>(j)]);
      double best = inf;
      if (i + 1 < m && j + 1 < n) best = std::min(best, remaining(i + 1, j + 1));
      if (i + 1 < m) best = std::min(best, remaining(i + 1, j));
      if (j + 1 < n) best = std::min(best, remaining(i, j + 1));
      remaining(i, j) = local + (best == inf ? 0.0 : best);
    }
  }

  WarpingPath path;
  path.cost = remaining(0, 0);
  path.steps.reserve(static_cast<std::size_t>(m + n));
  int i = 0, j = 0;
  path.steps.emplace_back(0, 0);
  while (i != m - 1 || j != n - 1) {
    double diag = (i + 1 < m && j + 1 < n) ? remaining(i + 1, j + 1) : inf;
    double vert = (i + 1 < m) ? remaining(i + 1, j) : inf;
    double horz = (j + 1 < n) ? remaining(i, j + 1) : inf;
    double best = std::min({diag, vert, horz});
    if (diag <= best) {
      ++i;
      ++j;
    } else if (vert <= best) {
      ++i;
    } else {
      ++j;
    }
    path.steps.emplace_back(i, j);
  }
  return path;
}

SynchronizedSeries synchronize_cycle(std::span<const double> reference,
                                     std::span<const double> target,
                                     int cycle_index) {
  WarpingPath path = dtw_path(reference, target);

  SynchronizedSeries out;
  out.source_cycle_index = cycle_index;
  out.values.assign(reference.size(), 0.0);

  // Collapse every target index mapped to reference index i into its mean.
  // The path visits i in non-decreasing order, so one pass suffices.
  std::size_t s = 0;
  for (int i = 0; i < static_cast<int>(reference.size()); ++i) {
    double sum = 0.0;
    int count = 0;
    while (s < path.steps.size() && path.steps[s].first == i) {
      sum += path.steps[s].second;
      ++count;
      ++s;
    }
    out.values[static_cast<std::size_t>(i)] = sum / count;
  }
  return out;
}

std::vector<SynchronizedSeries> synchronize_battery(std::span<const double> reference,
                                                    const dataset::BatteryRecord& battery,
                                                    std::optional<int> max_cycles,
                                                    int threads) {
  check_series(reference, "reference");
  if (battery.cycles.empty()) throw InvalidInputError("battery has no cycles");

  std::size_t count = battery.cycles.size();
  if (max_cycles) {
    if (*max_cycles < 1) throw InvalidInputError("max_cycles must be >= 1");
    count = std::min(count, static_cast<std::size_t>(*max_cycles));
  }

  std::vector<SynchronizedSeries> out(count);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto& cycle = battery.cycles[k];
      out[k] = synchronize_cycle(reference, cycle.voltage, cycle.cycle_index);
    }
  };

  int usable = std::clamp(threads, 1, static_cast<int>(count));
  if (usable <= 1) {
    work(0, count);
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(usable));
  std::size_t chunk = (count + static_cast<std::size_t>(usable) - 1) /
                      static_cast<std::size_t>(usable);
  for (int t = 0; t < usable; ++t) {
    std::size_t begin = static_cast<std::size_t>(t) * chunk;
    std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace soh::sync
