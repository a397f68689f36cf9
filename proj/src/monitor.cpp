#include "soh/monitor.hpp"

#include <algorithm>
#include <cmath>

#include "soh/errors.hpp"

namespace soh::monitor {

std::vector<CycleStatistics> cycle_statistics(const cva::CvProjection& projection) {
  long declared = 0;
  for (int c : projection.columns_per_cycle) declared += c;
  if (declared != projection.cv.cols() || projection.cv.cols() != projection.rv.cols()) {
    throw ShapeError("projection column grouping does not match its matrices");
  }

  std::vector<CycleStatistics> out;
  out.reserve(projection.columns_per_cycle.size());
  long col = 0;
  int cycle = 0;
  for (int count : projection.columns_per_cycle) {
    CycleStatistics cs;
    cs.cycle_index = ++cycle;
    cs.t2.resize(static_cast<std::size_t>(count));
    cs.q.resize(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k, ++col) {
      cs.t2[static_cast<std::size_t>(k)] = projection.cv.col(col).squaredNorm();
      cs.q[static_cast<std::size_t>(k)] = projection.rv.col(col).squaredNorm();
    }
    out.push_back(std::move(cs));
  }
  return out;
}

namespace {

double empirical_quantile(std::vector<double> sorted, double beta) {
  std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(beta * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

}  // namespace

double kde_control_limit(std::span<const double> samples, double beta) {
  const std::size_t n = samples.size();
  if (n < 2) throw InsufficientDataError("KDE control limit needs >= 2 samples");
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInputError("beta must lie in (0,1)");

  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= double(n);
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= double(n - 1);
  double sd = std::sqrt(var);

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  if (sd < 1e-12) return empirical_quantile(std::move(sorted), beta);

  const double h = 1.06 * sd * std::pow(double(n), -0.2);
  auto cdf = [&](double x) {
    double acc = 0.0;
    const double inv = 1.0 / (h * 1.4142135623730951);
    for (double s : sorted) acc += 0.5 * (1.0 + std::erf((x - s) * inv));
    return acc / double(n);
  };

  double lo = sorted.front() - 4.0 * h;
  double hi = sorted.back() + 4.0 * h;
  for (int iter = 0; iter < 200; ++iter) {
    double width = hi - lo;
    if (width <= 1e-6 * std::max(std::abs(lo), std::abs(hi))) break;
    double mid = 0.5 * (lo + hi);
    if (cdf(mid) >= beta) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

ControlLimitProfile control_limit_profile(const std::vector<CycleStatistics>& stats,
                                          double beta) {
  ControlLimitProfile profile;
  profile.beta = beta;
  profile.cl_t2.reserve(stats.size());
  profile.cl_q.reserve(stats.size());
  for (const auto& cs : stats) {
    profile.cl_t2.push_back(kde_control_limit(cs.t2, beta));
    profile.cl_q.push_back(kde_control_limit(cs.q, beta));
  }
  return profile;
}

SimilarityVerdict similarity_gate(const ControlLimitProfile& source,
                                  const ControlLimitProfile& target,
                                  double error_zone, double pass_fraction) {
  if (source.cl_t2.size() != target.cl_t2.size() ||
      source.cl_q.size() != target.cl_q.size() ||
      source.cl_t2.size() != source.cl_q.size()) {
    throw ShapeError("control limit profiles cover different cycle counts");
  }
  if (source.cl_t2.empty()) throw InvalidInputError("empty control limit profiles");
  if (error_zone < 0.0) throw InvalidInputError("error_zone must be >= 0");
  if (!(pass_fraction >= 0.0 && pass_fraction <= 1.0)) {
    throw InvalidInputError("pass_fraction must lie in [0,1]");
  }

  const std::size_t n = source.cl_t2.size();
  std::size_t in_t2 = 0, in_q = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(target.cl_t2[k] - source.cl_t2[k]) <= error_zone * source.cl_t2[k]) ++in_t2;
    if (std::abs(target.cl_q[k] - source.cl_q[k]) <= error_zone * source.cl_q[k]) ++in_q;
  }

  SimilarityVerdict v;
  v.cycles_compared = static_cast<int>(n);
  v.s1_fraction = double(in_t2) / double(n);
  v.s2_fraction = double(in_q) / double(n);
  v.s1_pass = v.s1_fraction >= pass_fraction;
  v.s2_pass = v.s2_fraction >= pass_fraction;
  v.similar = v.s1_pass && v.s2_pass;
  return v;
}

}  // namespace soh::monitor
