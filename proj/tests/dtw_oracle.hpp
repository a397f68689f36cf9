#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace soh::testutil {

// Exhaustive minimum warping cost: recursion over every monotone path with
// steps (1,0), (0,1), (1,1). Exponential on purpose; only usable for the
// short series the tests feed it. Kept free of any DP table so it cannot
// share a bug with the implementation it checks.
inline double brute_force_dtw_cost(std::span<const double> ref,
                                   std::span<const double> tgt, std::size_t i = 0,
                                   std::size_t j = 0) {
  double local = std::abs(ref[i] - tgt[j]);
  bool more_i = i + 1 < ref.size();
  bool more_j = j + 1 < tgt.size();
  if (!more_i && !more_j) return local;

  double best = std::numeric_limits<double>::infinity();
  if (more_i && more_j) best = std::min(best, brute_force_dtw_cost(ref, tgt, i + 1, j + 1));
  if (more_i) best = std::min(best, brute_force_dtw_cost(ref, tgt, i + 1, j));
  if (more_j) best = std::min(best, brute_force_dtw_cost(ref, tgt, i, j + 1));
  return local + best;
}

}  // namespace soh::testutil
