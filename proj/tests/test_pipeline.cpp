#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "soh/eval.hpp"
#include "soh/io_util.hpp"
#include "soh/pipeline.hpp"

using namespace soh;

namespace {

dataset::SynthProfile small_profile(std::uint64_t seed) {
  dataset::SynthProfile p;
  p.initial_capacity = 1.1;
  p.knee_cycle = 30;
  p.fade_rate_pre = 0.001;
  p.fade_rate_post = 0.005;
  p.noise_std = 0.0002;
  p.base_cycle_length = 64;
  p.num_cycles = 60;
  p.seed = seed;
  return p;
}

nn::GruConfig small_net(std::uint64_t seed) {
  nn::GruConfig cfg;
  cfg.hidden_dims = {8};
  cfg.dense_dim = 4;
  cfg.seed = seed;
  return cfg;
}

nn::TrainConfig small_train(std::uint64_t seed, int epochs = 30) {
  nn::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.seed = seed;
  return cfg;
}

// One battery + source model shared across the cases below; training it per
// test would dominate the suite's runtime.
struct Shared {
  dataset::BatteryRecord battery;
  pipeline::SourceModel source;
};

const Shared& shared() {
  static Shared s = [] {
    Shared out;
    out.battery = dataset::synth_battery(small_profile(1));
    out.source = pipeline::train_source(out.battery, cva::LagSpec{4, 4}, 0.95,
                                        small_net(11), small_train(12));
    return out;
  }();
  return s;
}

}  // namespace

TEST_CASE("train_source wires the stages together") {
  const auto& s = shared();
  CHECK(s.source.reference_cycle == s.battery.cycles.front().voltage);
  CHECK(s.source.cva_model.lag.p == 4);
  CHECK(s.source.network.config.input_dim == s.source.cva_model.retained_count);
  CHECK(s.source.limits.cl_t2.size() == s.battery.cycles.size());
  CHECK(s.source.limits.beta == 0.95);
  CHECK(s.source.dataset.battery_id == s.battery.id);
  CHECK(s.source.dataset.cycle_count == 60);
}

TEST_CASE("a 120-cycle battery trains to 0.01 Ah at p=f=8 with one hidden layer") {
  dataset::SynthProfile profile;
  profile.initial_capacity = 1.1;
  profile.knee_cycle = 60;
  profile.fade_rate_pre = 0.0008;
  profile.fade_rate_post = 0.004;
  profile.noise_std = 0.0002;
  profile.base_cycle_length = 128;
  profile.num_cycles = 120;
  profile.seed = 2;
  auto battery = dataset::synth_battery(profile);

  nn::GruConfig net;
  net.hidden_dims = {16};
  net.dense_dim = 16;
  net.seed = 71;
  nn::TrainConfig tc;
  tc.epochs = 90;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  tc.seed = 72;
  auto source = pipeline::train_source(battery, cva::LagSpec{8, 8}, 0.95, net, tc);

  std::vector<double> est, meas;
  for (const auto& c : battery.cycles) {
    est.push_back(pipeline::estimate_source_only(source, c).total_ah);
    meas.push_back(c.capacity_ah);
  }
  CHECK(eval::rmse(meas, est) <= 0.01);
}

TEST_CASE("train_source rejects a too-short reference") {
  auto profile = small_profile(3);
  profile.base_cycle_length = 16;
  auto battery = dataset::synth_battery(profile);
  CHECK_THROWS_AS(pipeline::train_source(battery, cva::LagSpec{12, 12}, 0.95,
                                         small_net(1), small_train(2)),
                  CycleTooShortError);
}

TEST_CASE("self transferability is always similar") {
  const auto& s = shared();
  auto verdict = pipeline::evaluate_transferability(s.source, s.battery, 40);
  CHECK(verdict.similar);
  CHECK(verdict.s1_fraction == 1.0);
  CHECK(verdict.s2_fraction == 1.0);
  CHECK(verdict.cycles_compared == 40);
}

TEST_CASE("transferability window validation") {
  const auto& s = shared();
  CHECK_THROWS_AS(pipeline::evaluate_transferability(s.source, s.battery, 61),
                  InsufficientDataError);
  CHECK_THROWS_AS(pipeline::evaluate_transferability(s.source, s.battery, 0),
                  InvalidInputError);
}

TEST_CASE("gate-failing pairs need force") {
  const auto& s = shared();
  auto bad_profile = small_profile(4);
  bad_profile.noise_std *= 3.0;
  bad_profile.knee_cycle = 10;
  auto bad = dataset::synth_battery(bad_profile);

  try {
    pipeline::train_target(s.source, bad, 40, small_net(21), small_train(22, 2));
    FAIL("expected NotTransferableError");
  } catch (const pipeline::NotTransferableError& e) {
    CHECK_FALSE(e.verdict().similar);
    CHECK(e.verdict().cycles_compared == 40);
  }

  auto forced = pipeline::train_target(s.source, bad, 40, small_net(21),
                                       small_train(22, 2), /*force=*/true);
  CHECK_FALSE(forced.verdict.similar);  // verdict recorded even when bypassed
  CHECK(forced.window == 40);
  CHECK(forced.target_id == bad.id);
}

TEST_CASE("combined model never loses to source-only on its training window") {
  const auto& s = shared();
  auto tgt_profile = small_profile(5);
  tgt_profile.initial_capacity = 1.07;
  auto target_batt = dataset::synth_battery(tgt_profile);

  auto target = pipeline::train_target(s.source, target_batt, 40, small_net(31),
                                       small_train(32, 40));
  CHECK(target.verdict.similar);
  CHECK(target.residual_network.config.input_dim == 4);  // lag p

  std::vector<double> meas, source_only, combined;
  for (int k = 0; k < 40; ++k) {
    const auto& c = target_batt.cycles[static_cast<std::size_t>(k)];
    meas.push_back(c.capacity_ah);
    source_only.push_back(pipeline::estimate_source_only(s.source, c).total_ah);
    combined.push_back(pipeline::estimate_online(target, c).total_ah);
  }
  CHECK(eval::rmse(meas, combined) <= eval::rmse(meas, source_only) + 1e-6);
}

TEST_CASE("estimates decompose and reproduce the training-time forward pass") {
  const auto& s = shared();
  auto tgt_profile = small_profile(6);
  tgt_profile.initial_capacity = 1.08;
  auto target_batt = dataset::synth_battery(tgt_profile);
  auto target = pipeline::train_target(s.source, target_batt, 40, small_net(41),
                                       small_train(42, 3));

  // Recompute the training-time projection for cycle 7 by the batch path.
  auto series = sync::synchronize_battery(s.source.reference_cycle, target_batt, 40);
  auto bundle = pipeline::project_series(s.source, series, 0.95);
  double train_time_pred =
      nn::predict(s.source.network, bundle.cv[6]) +
      nn::predict(target.residual_network, bundle.rv[6]);

  auto est = pipeline::estimate_online(target, target_batt.cycles[6]);
  CHECK(est.total_ah == train_time_pred);
  CHECK(est.total_ah == est.source_component_ah + est.residual_component_ah);
  CHECK(est.soh == est.total_ah / target_batt.nominal_capacity_ah);
  CHECK(est.cycle_index == target_batt.cycles[6].cycle_index);
}

TEST_CASE("a zero residual network reduces to the source model exactly") {
  const auto& s = shared();
  pipeline::TargetModel wrapped;
  wrapped.source = s.source;
  nn::GruConfig cfg = small_net(51);
  cfg.input_dim = s.source.cva_model.lag.p;
  wrapped.residual_network = nn::make_network(cfg);
  for (auto& [name, value] : wrapped.residual_network.params) value.setZero();
  wrapped.target_id = s.battery.id;
  wrapped.target_nominal_capacity_ah = s.source.nominal_capacity_ah;

  for (int k : {0, 10, 30, 59}) {
    const auto& c = s.battery.cycles[static_cast<std::size_t>(k)];
    auto a = pipeline::estimate_online(wrapped, c);
    auto b = pipeline::estimate_source_only(s.source, c);
    CHECK(a.residual_component_ah == 0.0);
    CHECK(a.total_ah == b.total_ah);
    CHECK(a.soh == b.soh);
  }
}

TEST_CASE("model persistence round-trips bit-exactly") {
  const auto& s = shared();
  testutil::TempDir tmp("model");

  SUBCASE("source model") {
    pipeline::save_model(s.source, tmp.path("m.sohm"));
    auto loaded = pipeline::load_model(tmp.path("m.sohm"));
    REQUIRE(std::holds_alternative<pipeline::SourceModel>(loaded));
    const auto& back = std::get<pipeline::SourceModel>(loaded);

    for (int k : {0, 17, 59}) {
      const auto& c = s.battery.cycles[static_cast<std::size_t>(k)];
      CHECK(pipeline::estimate_source_only(back, c).total_ah ==
            pipeline::estimate_source_only(s.source, c).total_ah);
    }
    // Serialization itself is deterministic.
    CHECK(pipeline::serialize_model(back) == pipeline::serialize_model(s.source));
  }

  SUBCASE("target model with verdict") {
    auto tgt_profile = small_profile(7);
    tgt_profile.initial_capacity = 1.06;
    auto target_batt = dataset::synth_battery(tgt_profile);
    auto target = pipeline::train_target(s.source, target_batt, 40, small_net(61),
                                         small_train(62, 3));
    pipeline::save_model(target, tmp.path("t.sohm"));
    auto loaded = pipeline::load_model(tmp.path("t.sohm"));
    REQUIRE(std::holds_alternative<pipeline::TargetModel>(loaded));
    const auto& back = std::get<pipeline::TargetModel>(loaded);

    CHECK(back.target_id == target.target_id);
    CHECK(back.verdict.similar == target.verdict.similar);
    CHECK(back.verdict.s1_fraction == target.verdict.s1_fraction);
    for (int k : {2, 41}) {
      const auto& c = target_batt.cycles[static_cast<std::size_t>(k)];
      CHECK(pipeline::estimate_online(back, c).total_ah ==
            pipeline::estimate_online(target, c).total_ah);
    }
  }
}

TEST_CASE("persistence rejects tampered files") {
  const auto& s = shared();
  testutil::TempDir tmp("tamper");
  pipeline::save_model(s.source, tmp.path("m.sohm"));
  std::string content = util::read_file(tmp.path("m.sohm"));

  SUBCASE("truncation") {
    util::atomic_write_file(tmp.path("trunc.sohm"),
                            content.substr(0, content.size() / 2));
    CHECK_THROWS_AS(pipeline::load_model(tmp.path("trunc.sohm")), CorruptModelError);
  }
  SUBCASE("flipped payload byte") {
    content[content.find('\n') + 100] ^= 1;
    util::atomic_write_file(tmp.path("flip.sohm"), content);
    CHECK_THROWS_AS(pipeline::load_model(tmp.path("flip.sohm")), CorruptModelError);
  }
  SUBCASE("version bump names both versions") {
    auto pos = content.find("format_version=1");
    content.replace(pos, 16, "format_version=9");
    util::atomic_write_file(tmp.path("v9.sohm"), content);
    try {
      pipeline::load_model(tmp.path("v9.sohm"));
      FAIL("expected VersionError");
    } catch (const VersionError& e) {
      std::string msg = e.what();
      CHECK(msg.find("9") != std::string::npos);
      CHECK(msg.find("1") != std::string::npos);
    }
  }
  SUBCASE("not a model file") {
    util::atomic_write_file(tmp.path("junk.sohm"), "hello world\n{}\n");
    CHECK_THROWS_AS(pipeline::load_model(tmp.path("junk.sohm")), CorruptModelError);
  }
}

TEST_CASE("training twice with identical seeds serializes identically") {
  const auto& s = shared();
  auto again = pipeline::train_source(s.battery, cva::LagSpec{4, 4}, 0.95,
                                      small_net(11), small_train(12));
  CHECK(pipeline::serialize_model(again) == pipeline::serialize_model(s.source));
}
