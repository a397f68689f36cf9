#include <doctest.h>

#include <numeric>
#include <random>

#include "soh/cva.hpp"
#include "soh/errors.hpp"
#include "soh/io_util.hpp"

using namespace soh;
using cva::HankelPair;
using cva::LagSpec;
using sync::SynchronizedSeries;

namespace {

SynchronizedSeries series_of(std::vector<double> values, int index = 1) {
  SynchronizedSeries s;
  s.values = std::move(values);
  s.source_cycle_index = index;
  return s;
}

// Independent draws per column; canonical correlations are exactly zero in
// population.
HankelPair white_noise_hankel(int p, int f, long h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HankelPair pair;
  pair.past.resize(p, h);
  pair.future.resize(f, h);
  for (long c = 0; c < h; ++c) {
    for (int r = 0; r < p; ++r) pair.past(r, c) = util::gaussian(rng, 0.0, 1.0);
    for (int r = 0; r < f; ++r) pair.future(r, c) = util::gaussian(rng, 0.0, 1.0);
  }
  pair.columns_per_cycle = {static_cast<int>(h)};
  return pair;
}

std::vector<double> ar1_series(double a, long n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> x(static_cast<std::size_t>(n));
  double prev = 0.0;
  for (long i = 0; i < n; ++i) {
    prev = a * prev + util::gaussian(rng, 0.0, 1.0);
    x[static_cast<std::size_t>(i)] = prev;
  }
  return x;
}

}  // namespace

TEST_CASE("build_hankel expands [0..5] with p=f=2 as derived by hand") {
  auto pair = cva::build_hankel({series_of({0, 1, 2, 3, 4, 5})}, LagSpec{2, 2});
  // Anchors 4,3,2; past stacks [x(i-1), x(i-2)], future stacks [x(i), x(i+1)].
  REQUIRE(pair.past.cols() == 3);
  REQUIRE(pair.columns_per_cycle == std::vector<int>{3});
  Eigen::MatrixXd past(2, 3), future(2, 3);
  past << 3, 2, 1,
          2, 1, 0;
  future << 4, 3, 2,
            5, 4, 3;
  CHECK(pair.past == past);
  CHECK(pair.future == future);
}

TEST_CASE("hankel column count is K*(m-f-p+1)") {
  std::vector<SynchronizedSeries> set;
  for (int k = 0; k < 5; ++k) set.push_back(series_of({0, 1, 2, 3, 4, 5, 6, 7}, k + 1));
  auto pair = cva::build_hankel(set, LagSpec{3, 2});
  CHECK(pair.total_columns() == 5 * (8 - 2 - 3 + 1));
  CHECK(pair.columns_per_cycle == std::vector<int>(5, 4));
}

TEST_CASE("hankel boundary and error cases") {
  // m == p+f contributes exactly one column.
  auto pair = cva::build_hankel({series_of({1, 2, 3, 4})}, LagSpec{2, 2});
  CHECK(pair.total_columns() == 1);

  try {
    cva::build_hankel({series_of({1, 2, 3}, 17)}, LagSpec{2, 2});
    FAIL("expected CycleTooShortError");
  } catch (const CycleTooShortError& e) {
    CHECK(e.cycle_index() == 17);
  }
}

TEST_CASE("normalizer matches hand z-scores and floors constant rows") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 1,
       0, 2;
  auto norm = cva::fit_normalizer(m);
  auto out = cva::apply_normalizer(norm, m);
  CHECK(out(0, 0) == 0.0);  // constant row maps to zero, no blow-up
  CHECK(out(0, 1) == 0.0);
  CHECK(out(1, 0) == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(out(1, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  // Stored statistics are reused verbatim on new data.
  Eigen::MatrixXd other(2, 3);
  other << 5, 5, 5,
           1, 1, 1;
  auto reused = cva::apply_normalizer(norm, other);
  CHECK(reused(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(reused(0, 0) > 1e7);  // (5 - 1) / 1e-8 floor

  CHECK_THROWS_AS(cva::fit_normalizer(Eigen::MatrixXd::Zero(2, 1)),
                  InsufficientDataError);
  CHECK_THROWS_AS(cva::apply_normalizer(norm, Eigen::MatrixXd::Zero(3, 2)), ShapeError);
}

TEST_CASE("white-noise past and future give near-zero canonical correlations") {
  auto model = cva::fit_cva(white_noise_hankel(3, 3, 50000, 2024), 1);
  for (double a : model.singular_values) {
    CHECK(a >= 0.0);
    CHECK(a < 0.1);
  }
}

TEST_CASE("AR(1) recovery: first canonical correlation approximates the coefficient") {
  for (std::uint64_t seed : {11u, 22u, 33u, 44u, 55u}) {
    auto x = ar1_series(0.8, 20001, seed);
    auto pair = cva::build_hankel({series_of(std::move(x))}, LagSpec{1, 1});
    REQUIRE(pair.total_columns() == 20000);
    auto model = cva::fit_cva(pair, 1);
    REQUIRE(model.singular_values.size() == 1);
    CHECK(model.singular_values[0] >= 0.77);
    CHECK(model.singular_values[0] <= 0.83);
  }
}

TEST_CASE("fit_cva rejects underdetermined input") {
  CHECK_THROWS_AS(cva::fit_cva(white_noise_hankel(4, 4, 6, 1)), InsufficientDataError);
}

namespace {

// Independent re-derivation of the elbow rule: ordinary least squares over
// the stated point windows of the cumulative curve, intersected.
int elbow_oracle(const std::vector<double>& alpha) {
  int s = static_cast<int>(alpha.size());
  std::vector<double> cum(alpha.size());
  std::partial_sum(alpha.begin(), alpha.end(), cum.begin());
  auto line = [&](int first, int last) {
    double n = last - first + 1, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int x = first; x <= last; ++x) {
      sx += x;
      sy += cum[static_cast<std::size_t>(x - 1)];
      sxx += double(x) * x;
      sxy += x * cum[static_cast<std::size_t>(x - 1)];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return std::pair<double, double>{slope, (sy - slope * sx) / n};
  };
  auto [ma, ba] = line(1, 15);
  auto [mb, bb] = line(s - 4, s);
  double x = (bb - ba) / (ma - mb);
  return static_cast<int>(std::lround(x));
}

}  // namespace

TEST_CASE("select_retained matches an independent regression-intersection oracle") {
  // Two-regime spectrum with the knee inside the early fit window. The
  // mixed-regime least-squares line puts the intersection at ~10.7, and the
  // implementation must agree with the independently computed lines.
  std::vector<double> alpha{0.9, 0.8};
  alpha.insert(alpha.end(), 30, 0.01);
  CHECK(cva::select_retained(alpha) == elbow_oracle(alpha));

  // Paper-shaped spectrum: steep run of strong correlations, then a floor.
  // The early window sits fully on the steep segment, so the intersection
  // lands on the transition.
  std::vector<double> shaped(32, 0.001);
  for (int i = 0; i < 20; ++i) shaped[static_cast<std::size_t>(i)] = 1.0;
  CHECK(cva::select_retained(shaped) == 20);
  CHECK(cva::select_retained(shaped) == elbow_oracle(shaped));
}

TEST_CASE("select_retained falls back when the curve has no elbow") {
  SUBCASE("equal values make the fit lines parallel") {
    std::vector<double> alpha(30, 0.5);
    CHECK(cva::select_retained(alpha) == 27);  // ceil(0.9 * 30)
  }
  SUBCASE("short spectra use the cumulative-share rule") {
    std::vector<double> alpha{0.5, 0.44, 0.06};
    CHECK(cva::select_retained(alpha) == 2);  // share 0.94 >= 0.90 at C=2
  }
  SUBCASE("empty input") {
    CHECK_THROWS_AS(cva::select_retained({}), InvalidInputError);
  }
}

TEST_CASE("explicit retained override is respected") {
  auto model = cva::fit_cva(white_noise_hankel(4, 4, 2000, 5), 2);
  CHECK(model.retained_count == 2);
  CHECK(model.j_c.rows() == 2);
  CHECK(model.j_r.rows() == 4);
}

TEST_CASE("projection identities on a fitted model") {
  // A correlated pair so the retained space is meaningful.
  auto x = ar1_series(0.9, 4001, 77);
  auto pair = cva::build_hankel({series_of(std::move(x))}, LagSpec{4, 4});
  auto model = cva::fit_cva(pair, 2);

  Eigen::MatrixXd normalized = cva::apply_normalizer(model.normalizer_past, pair.past);
  auto projection = cva::project(model, normalized, pair.columns_per_cycle);

  SUBCASE("zero input projects to zero") {
    auto zeros = cva::project(model, Eigen::MatrixXd::Zero(4, 3), {3});
    CHECK(zeros.cv.isZero(0.0));
    CHECK(zeros.rv.isZero(0.0));
  }

  SUBCASE("orthogonal split: |J_c x|^2 + |J_r x|^2 == |W x|^2") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
      Eigen::VectorXd v(4);
      for (int i = 0; i < 4; ++i) v(i) = util::gaussian(rng, 0.0, 1.0);
      double lhs = (model.j_c * v).squaredNorm() + (model.j_r * v).squaredNorm();
      double rhs = (model.whitener * v).squaredNorm();
      CHECK(std::abs(lhs - rhs) < 1e-8);
    }
  }

  SUBCASE("whitening identity: J_c Sigma_pp J_c^T == I") {
    long h = normalized.cols();
    Eigen::MatrixXd sigma_pp = normalized * normalized.transpose() / double(h - 1);
    Eigen::MatrixXd gram = model.j_c * sigma_pp * model.j_c.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("cv rows have near-identity sample covariance on training data") {
    long h = projection.cv.cols();
    Eigen::MatrixXd cov = projection.cv * projection.cv.transpose() / double(h - 1);
    CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05);
  }

  SUBCASE("projection rejects wrong shapes") {
    CHECK_THROWS_AS(cva::project(model, Eigen::MatrixXd::Zero(3, 3), {3}), ShapeError);
    CHECK_THROWS_AS(cva::project(model, Eigen::MatrixXd::Zero(4, 3), {4}), ShapeError);
  }
}

TEST_CASE("singular values are sorted, bounded, and the fit is deterministic") {
  auto x = ar1_series(0.6, 3001, 123);
  auto pair = cva::build_hankel({series_of(std::move(x))}, LagSpec{5, 5});
  auto a = cva::fit_cva(pair);
  auto b = cva::fit_cva(pair);

  for (std::size_t i = 0; i < a.singular_values.size(); ++i) {
    CHECK(a.singular_values[i] >= 0.0);
    CHECK(a.singular_values[i] <= 1.0 + 1e-6);
    if (i > 0) CHECK(a.singular_values[i] <= a.singular_values[i - 1]);
  }

  CHECK(a.retained_count == b.retained_count);
  CHECK(a.j_c == b.j_c);
  CHECK(a.j_r == b.j_r);
  CHECK(a.whitener == b.whitener);
  CHECK(a.singular_values == b.singular_values);
}
