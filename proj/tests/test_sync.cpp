#include <doctest.h>

#include <random>

#include "dtw_oracle.hpp"
#include "helpers.hpp"
#include "soh/dataset.hpp"
#include "soh/errors.hpp"
#include "soh/sync.hpp"

using namespace soh;
using sync::dtw_path;
using sync::synchronize_cycle;

namespace {

void check_path_invariants(const sync::WarpingPath& path, int m, int n) {
  REQUIRE(!path.steps.empty());
  CHECK(path.steps.front() == std::pair<int, int>(0, 0));
  CHECK(path.steps.back() == std::pair<int, int>(m - 1, n - 1));
  CHECK(path.steps.size() >= static_cast<std::size_t>(std::max(m, n)));
  CHECK(path.steps.size() <= static_cast<std::size_t>(m + n));
  for (std::size_t s = 1; s < path.steps.size(); ++s) {
    int di = path.steps[s].first - path.steps[s - 1].first;
    int dj = path.steps[s].second - path.steps[s - 1].second;
    bool legal = (di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1);
    CHECK(legal);
  }
  CHECK(path.cost >= 0.0);
}

}  // namespace

TEST_CASE("identical series warp along the diagonal at zero cost") {
  std::vector<double> s{3.3, 3.1, 2.8, 2.4, 2.0};
  auto path = dtw_path(s, s);
  CHECK(path.cost == 0.0);
  REQUIRE(path.steps.size() == s.size());
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    CHECK(path.steps[static_cast<std::size_t>(i)] == std::pair<int, int>(i, i));
  }
}

TEST_CASE("hand-evaluated alignment of [0,1,2] against [0,2]") {
  std::vector<double> ref{0, 1, 2};
  std::vector<double> tgt{0, 2};
  auto path = dtw_path(ref, tgt);
  CHECK(path.cost == 1.0);
  REQUIRE(path.steps.size() == 3);
  CHECK(path.steps[0] == std::pair<int, int>(0, 0));
  CHECK(path.steps[1] == std::pair<int, int>(1, 1));
  CHECK(path.steps[2] == std::pair<int, int>(2, 1));

  auto series = synchronize_cycle(ref, tgt);
  CHECK(series.values == std::vector<double>{0.0, 1.0, 1.0});
}

TEST_CASE("dtw cost matches the exhaustive oracle on 200 random pairs") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = testutil::random_series(rng, 12, 9);
    auto b = testutil::random_series(rng, 12, 9);
    auto path = dtw_path(a, b);
    double oracle = testutil::brute_force_dtw_cost(a, b);
    REQUIRE(path.cost == oracle);

    // The returned path must itself realize the optimal cost.
    double walked = 0.0;
    for (auto [i, j] : path.steps) {
      walked += std::abs(a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)]);
    }
    REQUIRE(walked == oracle);
  }
}

TEST_CASE("warping path invariants hold on 1000 random pairs") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = testutil::random_series(rng, 30, 9);
    auto b = testutil::random_series(rng, 30, 9);
    auto path = dtw_path(a, b);
    check_path_invariants(path, static_cast<int>(a.size()), static_cast<int>(b.size()));
  }
}

TEST_CASE("dtw cost is symmetric and zero on self") {
  std::mt19937_64 rng(555);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = testutil::random_series(rng, 15, 9);
    auto b = testutil::random_series(rng, 15, 9);
    CHECK(dtw_path(a, b).cost == dtw_path(b, a).cost);
    CHECK(dtw_path(a, a).cost == 0.0);
  }
}

TEST_CASE("dtw rejects empty and non-finite input") {
  std::vector<double> good{1.0, 2.0};
  std::vector<double> empty;
  CHECK_THROWS_AS(dtw_path(good, empty), InvalidInputError);
  CHECK_THROWS_AS(dtw_path(empty, good), InvalidInputError);
  std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(dtw_path(good, bad), InvalidInputError);
}

TEST_CASE("synchronizing a series against itself yields the exact ramp") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = testutil::random_series(rng, 40, 5);  // duplicates are common on purpose
    auto series = synchronize_cycle(s, s);
    REQUIRE(series.values.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(series.values[i] == static_cast<double>(i));
    }
  }
}

TEST_CASE("synchronized values are monotone and bounded by the target length") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 300; ++trial) {
    auto ref = testutil::random_series(rng, 25, 9);
    auto tgt = testutil::random_series(rng, 25, 9);
    auto series = synchronize_cycle(ref, tgt);
    REQUIRE(series.values.size() == ref.size());
    double prev = -1.0;
    for (double v : series.values) {
      CHECK(v >= 0.0);
      CHECK(v <= static_cast<double>(tgt.size() - 1));
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("synchronize_battery preserves order and honors max_cycles") {
  dataset::SynthProfile profile;
  profile.num_cycles = 20;
  profile.base_cycle_length = 32;
  profile.noise_std = 0.0;
  profile.fade_rate_pre = 0.004;
  profile.fade_rate_post = 0.01;
  profile.knee_cycle = 8;
  auto battery = dataset::synth_battery(profile);
  const auto& ref = battery.cycles.front().voltage;

  auto all = sync::synchronize_battery(ref, battery);
  REQUIRE(all.size() == 20);
  for (std::size_t k = 0; k < all.size(); ++k) {
    CHECK(all[k].source_cycle_index == static_cast<int>(k) + 1);
    CHECK(all[k].values.size() == ref.size());
  }

  auto five = sync::synchronize_battery(ref, battery, 5);
  REQUIRE(five.size() == 5);
  for (std::size_t k = 0; k < five.size(); ++k) {
    CHECK(five[k].values == all[k].values);
  }

  // Multithreaded run must produce the identical result.
  auto threaded = sync::synchronize_battery(ref, battery, {}, 4);
  REQUIRE(threaded.size() == all.size());
  for (std::size_t k = 0; k < all.size(); ++k) {
    CHECK(threaded[k].values == all[k].values);
  }

  // Later cycles are shorter, so their final mapped index falls below m-1.
  const auto& last = all.back();
  CHECK(last.values.back() ==
        static_cast<double>(battery.cycles.back().voltage.size() - 1));
  CHECK(last.values.back() < static_cast<double>(ref.size() - 1));
}

TEST_CASE("battery of identical cycles synchronizes to identity ramps") {
  dataset::SynthProfile profile;
  profile.num_cycles = 4;
  profile.base_cycle_length = 20;
  profile.noise_std = 0.0;
  profile.fade_rate_pre = 0.0;
  profile.fade_rate_post = 0.0;
  auto battery = dataset::synth_battery(profile);
  auto series = sync::synchronize_battery(battery.cycles.front().voltage, battery);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      CHECK(s.values[i] == static_cast<double>(i));
    }
  }
}
