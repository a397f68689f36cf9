#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "soh/sync.hpp"

namespace soh::cva {

struct LagSpec {
  int p = 32;  // past lag
  int f = 32;  // future lag
};

// Stacked lagged copies of the synchronized cycles. Column h of `past`
// holds [x(i-1), ..., x(i-p)] and the same column of `future` holds
// [x(i), ..., x(i+f-1)] for the same anchor i. Anchors run from m-f down
// to p within each cycle; cycles are concatenated in order.
struct HankelPair {
  Eigen::MatrixXd past;    // p x H
  Eigen::MatrixXd future;  // f x H
  std::vector<int> columns_per_cycle;

  int total_columns() const { return static_cast<int>(past.cols()); }
};

// Per-row z-score statistics. std entries are floored at 1e-8 so constant
// rows normalize to zero instead of blowing up.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

struct CvaModel {
  LagSpec lag;
  Normalizer normalizer_past;
  Normalizer normalizer_future;
  Eigen::MatrixXd whitener;             // Sigma_pp^{-1/2}, p x p
  std::vector<double> singular_values;  // descending, in [0, 1 + eps]
  int retained_count = 0;               // C
  Eigen::MatrixXd j_c;                  // C x p, V_c^T * whitener
  Eigen::MatrixXd j_r;                  // p x p, (I - V_c V_c^T) * whitener
};

struct CvProjection {
  Eigen::MatrixXd cv;  // C x H
  Eigen::MatrixXd rv;  // p x H
  std::vector<int> columns_per_cycle;
};

HankelPair build_hankel(const std::vector<sync::SynchronizedSeries>& series_set,
                        const LagSpec& lag);

Normalizer fit_normalizer(const Eigen::MatrixXd& matrix);
Eigen::MatrixXd apply_normalizer(const Normalizer& norm, const Eigen::MatrixXd& matrix);

// Fits normalizers on the given Hankel pair, whitens, and extracts the
// canonical structure. `retained` overrides the elbow-based selection.
CvaModel fit_cva(const HankelPair& hankel, std::optional<int> retained = {});

// Elbow of the cumulative singular-value curve: regression line through the
// first 15 points intersected with one through the last 5. Falls back to the
// smallest count covering 90% of the cumulative sum when fewer than 20
// values exist or the lines do not usefully intersect.
int select_retained(const std::vector<double>& singular_values);

// `past` must already be normalized with the model's past normalizer.
CvProjection project(const CvaModel& model, const Eigen::MatrixXd& past,
                     const std::vector<int>& columns_per_cycle);

}  // namespace soh::cva
