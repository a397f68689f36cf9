#include "soh/cva.hpp"

#include <algorithm>
#include <cmath>

#include "soh/errors.hpp"

namespace soh::cva {

namespace {

constexpr double kStdFloor = 1e-8;

void check_lag(const LagSpec& lag) {
  if (lag.p < 1 || lag.f < 1) throw InvalidInputError("lags p and f must be >= 1");
}

// Symmetric inverse square root with a relative eigenvalue floor; the
// synchronized index series are smooth, so the covariances are routinely
// near-singular.
Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed");
  }
  Eigen::VectorXd vals = eig.eigenvalues();
  double floor = 1e-10 * std::max(vals.maxCoeff(), 0.0);
  if (floor <= 0.0) floor = 1e-300;
  Eigen::VectorXd inv = vals.unaryExpr(
      [floor](double v) { return 1.0 / std::sqrt(std::max(v, floor)); });
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

HankelPair build_hankel(const std::vector<sync::SynchronizedSeries>& series_set,
                        const LagSpec& lag) {
  check_lag(lag);
  if (series_set.empty()) throw InvalidInputError("no series to stack");

  const int p = lag.p;
  const int f = lag.f;

  long total = 0;
  for (const auto& s : series_set) {
    int m = static_cast<int>(s.values.size());
    if (m < p + f) {
      throw CycleTooShortError("series length " + std::to_string(m) +
                                   " < p+f = " + std::to_string(p + f),
                               s.source_cycle_index);
    }
    total += m - f - p + 1;
  }

  HankelPair out;
  out.past.resize(p, total);
  out.future.resize(f, total);
  out.columns_per_cycle.reserve(series_set.size());

  long col = 0;
  for (const auto& s : series_set) {
    const auto& x = s.values;
    int m = static_cast<int>(x.size());
    out.columns_per_cycle.push_back(m - f - p + 1);
    // Anchor order m-f, m-f-1, ..., p; each anchor contributes the past
    // window ending just before it and the future window starting on it.
    for (int anchor = m - f; anchor >= p; --anchor, ++col) {
      for (int k = 0; k < p; ++k) {
        out.past(k, col) = x[static_cast<std::size_t>(anchor - 1 - k)];
      }
      for (int k = 0; k < f; ++k) {
        out.future(k, col) = x[static_cast<std::size_t>(anchor + k)];
      }
    }
  }
  return out;
}

Normalizer fit_normalizer(const Eigen::MatrixXd& matrix) {
  const long cols = matrix.cols();
  if (cols < 2) throw InsufficientDataError("need >= 2 columns to fit a normalizer");

  Normalizer norm;
  norm.mean = matrix.rowwise().mean();
  Eigen::MatrixXd centered = matrix.colwise() - norm.mean;
  norm.stddev = (centered.array().square().rowwise().sum() / double(cols - 1))
                    .sqrt()
                    .max(kStdFloor)
                    .matrix();
  return norm;
}

Eigen::MatrixXd apply_normalizer(const Normalizer& norm, const Eigen::MatrixXd& matrix) {
  if (matrix.rows() != norm.mean.size()) {
    throw ShapeError("normalizer fitted for " + std::to_string(norm.mean.size()) +
                     " rows, got " + std::to_string(matrix.rows()));
  }
  return (matrix.colwise() - norm.mean).array().colwise() / norm.stddev.array();
}

CvaModel fit_cva(const HankelPair& hankel, std::optional<int> retained) {
  const int p = static_cast<int>(hankel.past.rows());
  const int f = static_cast<int>(hankel.future.rows());
  const long H = hankel.past.cols();
  check_lag(LagSpec{p, f});
  if (hankel.future.cols() != H) throw ShapeError("past/future column counts differ");
  if (H < p + f) {
    throw InsufficientDataError("H = " + std::to_string(H) +
                                " columns < p+f = " + std::to_string(p + f));
  }

  CvaModel model;
  model.lag = LagSpec{p, f};
  model.normalizer_past = fit_normalizer(hankel.past);
  model.normalizer_future = fit_normalizer(hankel.future);

  Eigen::MatrixXd past = apply_normalizer(model.normalizer_past, hankel.past);
  Eigen::MatrixXd future = apply_normalizer(model.normalizer_future, hankel.future);

  const double scale = 1.0 / double(H - 1);
  Eigen::MatrixXd sigma_pp = scale * (past * past.transpose());
  Eigen::MatrixXd sigma_ff = scale * (future * future.transpose());
  Eigen::MatrixXd sigma_fp = scale * (future * past.transpose());
  if (!sigma_pp.allFinite() || !sigma_ff.allFinite() || !sigma_fp.allFinite()) {
    throw NumericalError("covariance matrices contain non-finite entries");
  }

  model.whitener = inverse_sqrt(sigma_pp);
  Eigen::MatrixXd ff_inv_sqrt = inverse_sqrt(sigma_ff);

  // Whitened cross-covariance; its singular values are the canonical
  // correlations and its right singular vectors live in past space.
  Eigen::MatrixXd whitened = ff_inv_sqrt * sigma_fp * model.whitener;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(whitened, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd alpha = svd.singularValues();
  Eigen::MatrixXd v = svd.matrixV();  // p x s, s = min(p, f)

  // Make each right singular vector's largest-magnitude entry positive so
  // refitting the same data reproduces the same model byte for byte.
  for (long c = 0; c < v.cols(); ++c) {
    long arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0.0) v.col(c) = -v.col(c);
  }

  model.singular_values.assign(alpha.data(), alpha.data() + alpha.size());

  int s = static_cast<int>(alpha.size());
  int c = retained ? *retained : select_retained(model.singular_values);
  if (c < 1 || c > p) {
    throw InvalidInputError("retained count " + std::to_string(c) +
                            " outside [1, p=" + std::to_string(p) + "]");
  }
  c = std::min(c, s);
  model.retained_count = c;

  Eigen::MatrixXd v_c = v.leftCols(c);
  model.j_c = v_c.transpose() * model.whitener;
  model.j_r = (Eigen::MatrixXd::Identity(p, p) - v_c * v_c.transpose()) * model.whitener;
  return model;
}

int select_retained(const std::vector<double>& singular_values) {
  const int s = static_cast<int>(singular_values.size());
  if (s == 0) throw InvalidInputError("no singular values");

  std::vector<double> cum(singular_values.size());
  double run = 0.0;
  for (int i = 0; i < s; ++i) {
    run += singular_values[static_cast<std::size_t>(i)];
    cum[static_cast<std::size_t>(i)] = run;
  }

  auto fallback = [&]() {
    double total = cum.back();
    if (total <= 0.0) return 1;
    for (int i = 0; i < s; ++i) {
      if (cum[static_cast<std::size_t>(i)] >= 0.90 * total) return i + 1;
    }
    return s;
  };
  if (s < 20) return fallback();

  // Least-squares line through points (x, cum(x)), x 1-based.
  auto fit_line = [&](int first, int last) {
    double n = last - first + 1;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int x = first; x <= last; ++x) {
      double y = cum[static_cast<std::size_t>(x - 1)];
      sx += x;
      sy += y;
      sxx += double(x) * x;
      sxy += x * y;
    }
    double denom = n * sxx - sx * sx;
    double slope = (n * sxy - sx * sy) / denom;
    double intercept = (sy - slope * sx) / n;
    return std::pair<double, double>{slope, intercept};
  };

  auto [slope_a, icept_a] = fit_line(1, 15);
  auto [slope_b, icept_b] = fit_line(s - 4, s);
  double dslope = slope_a - slope_b;
  if (std::abs(dslope) < 1e-12 * std::max(std::abs(slope_a), std::abs(slope_b)) ||
      dslope == 0.0) {
    return fallback();
  }
  double x_star = (icept_b - icept_a) / dslope;
  if (!(x_star >= 1.0 && x_star <= double(s))) return fallback();
  return std::clamp<int>(static_cast<int>(std::lround(x_star)), 1, s);
}

CvProjection project(const CvaModel& model, const Eigen::MatrixXd& past,
                     const std::vector<int>& columns_per_cycle) {
  if (past.rows() != model.j_c.cols()) {
    throw ShapeError("past matrix has " + std::to_string(past.rows()) +
                     " rows, model expects " + std::to_string(model.j_c.cols()));
  }
  long declared = 0;
  for (int c : columns_per_cycle) declared += c;
  if (declared != past.cols()) {
    throw ShapeError("columns_per_cycle sums to " + std::to_string(declared) +
                     ", matrix has " + std::to_string(past.cols()) + " columns");
  }

  CvProjection out;
  out.cv = model.j_c * past;
  out.rv = model.j_r * past;
  out.columns_per_cycle = columns_per_cycle;
  if (!out.cv.allFinite() || !out.rv.allFinite()) {
    throw NumericalError("projection produced non-finite values");
  }
  return out;
}

}  // namespace soh::cva
