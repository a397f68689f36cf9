#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "soh/dataset.hpp"

namespace soh::sync {

// Monotone alignment between a reference series (index i) and a target
// series (index j). Steps advance by (1,0), (0,1) or (1,1), start at (0,0)
// and end at (m-1, n-1).
struct WarpingPath {
  std::vector<std::pair<int, int>> steps;
  double cost = 0.0;  // sum of |ref[i] - tgt[j]| over every step
};

// A cycle re-expressed on the reference time base: entry i is the mean
// target index aligned to reference index i. Length always equals the
// reference length.
struct SynchronizedSeries {
  std::vector<double> values;
  int source_cycle_index = 0;
};

WarpingPath dtw_path(std::span<const double> reference, std::span<const double> target);

SynchronizedSeries synchronize_cycle(std::span<const double> reference,
                                     std::span<const double> target,
                                     int cycle_index = 0);

// First max_cycles cycles (all when absent), in cycle order. threads > 1
// warps cycles concurrently; results are position-stable either way.
std::vector<SynchronizedSeries> synchronize_battery(std::span<const double> reference,
                                                    const dataset::BatteryRecord& battery,
                                                    std::optional<int> max_cycles = {},
                                                    int threads = 1);

}  // namespace soh::sync
