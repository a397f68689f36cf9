#pragma once

#include <span>
#include <vector>

#include "soh/cva.hpp"

namespace soh::monitor {

// Per-time-sample T2/Q values for one cycle. T2 measures variation inside
// the retained space, Q the variation left in the residual space.
struct CycleStatistics {
  int cycle_index = 0;
  std::vector<double> t2;
  std::vector<double> q;
};

struct ControlLimitProfile {
  double beta = 0.95;
  std::vector<double> cl_t2;  // one entry per cycle
  std::vector<double> cl_q;
};

struct SimilarityVerdict {
  bool s1_pass = false;  // T2 limits within the error zone often enough
  bool s2_pass = false;  // same for Q limits
  bool similar = false;  // s1_pass && s2_pass
  double s1_fraction = 0.0;
  double s2_fraction = 0.0;
  int cycles_compared = 0;
};

std::vector<CycleStatistics> cycle_statistics(const cva::CvProjection& projection);

// beta-quantile of a Gaussian KDE over the samples (Silverman bandwidth).
// Degenerate spread falls back to the empirical quantile.
double kde_control_limit(std::span<const double> samples, double beta);

ControlLimitProfile control_limit_profile(const std::vector<CycleStatistics>& stats,
                                          double beta);

// S1: |cl_t2_target - cl_t2_source| <= error_zone * cl_t2_source for at
// least pass_fraction of the cycles; S2 likewise on cl_q. A zero source
// limit counts as inside only when the target limit is also zero.
SimilarityVerdict similarity_gate(const ControlLimitProfile& source,
                                  const ControlLimitProfile& target,
                                  double error_zone = 0.15,
                                  double pass_fraction = 0.90);

}  // namespace soh::monitor
