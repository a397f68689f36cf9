// Command-line surface for the SOH transfer-learning pipeline. Every
// subcommand is a pure function of its inputs and seeds; a JSON manifest is
// written next to each primary output so any run can be replayed.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "soh/dataset.hpp"
#include "soh/errors.hpp"
#include "soh/eval.hpp"
#include "soh/io_util.hpp"
#include "soh/pipeline.hpp"

using namespace soh;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int thread_cap() {
  const char* env = std::getenv("SOH_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

struct ManifestWriter {
  json doc;
  Clock::time_point started = Clock::now();

  ManifestWriter(const std::string& command, int argc, char** argv) {
    doc["command"] = command;
    json args = json::array();
    for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
    doc["argv"] = std::move(args);
    doc["inputs"] = json::array();
    doc["outputs"] = json::array();
    doc["seeds"] = json::object();
  }

  void input(const std::filesystem::path& path) {
    std::string bytes = util::read_file(path);
    doc["inputs"].push_back({{"path", path.string()},
                             {"bytes", bytes.size()},
                             {"fnv1a64", util::fnv1a64_hex(bytes)}});
  }
  void input_stem(const std::filesystem::path& stem) {
    auto cycles = stem;
    cycles += ".cycles.csv";
    auto capacity = stem;
    capacity += ".capacity.csv";
    input(cycles);
    input(capacity);
  }
  void output(const std::filesystem::path& path) {
    doc["outputs"].push_back(path.string());
  }
  void seed(const std::string& name, std::uint64_t value) {
    doc["seeds"][name] = value;
  }

  void write(const std::filesystem::path& primary_output) {
    doc["wall_time_s"] =
        std::chrono::duration<double>(Clock::now() - started).count();
    auto path = primary_output;
    path += ".manifest.json";
    util::atomic_write_file(path, doc.dump(2) + "\n");
  }
};

std::vector<int> parse_dims(const std::string& csv) {
  std::vector<int> dims;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) dims.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (dims.empty()) throw InvalidInputError("--hidden expects e.g. 300,500");
  return dims;
}

pipeline::SourceModel require_source(pipeline::LoadedModel&& loaded) {
  if (std::holds_alternative<pipeline::SourceModel>(loaded)) {
    return std::get<pipeline::SourceModel>(std::move(loaded));
  }
  return std::get<pipeline::TargetModel>(std::move(loaded)).source;
}

void print_verdict(const monitor::SimilarityVerdict& v) {
  std::printf("similar=%s s1=%.3f s2=%.3f cycles=%d\n", v.similar ? "true" : "false",
              v.s1_fraction, v.s2_fraction, v.cycles_compared);
}

struct EstimateRows {
  std::vector<double> cycle, source_ah, residual_ah, total_ah, soh, measured_ah;
};

template <typename Estimator>
EstimateRows run_estimates(const dataset::BatteryRecord& battery, int from_cycle,
                           Estimator&& estimate) {
  EstimateRows rows;
  for (const auto& c : battery.cycles) {
    if (c.cycle_index < from_cycle) continue;
    pipeline::CapacityEstimate est = estimate(c);
    rows.cycle.push_back(c.cycle_index);
    rows.source_ah.push_back(est.source_component_ah);
    rows.residual_ah.push_back(est.residual_component_ah);
    rows.total_ah.push_back(est.total_ah);
    rows.soh.push_back(est.soh);
    rows.measured_ah.push_back(c.capacity_ah);
  }
  if (rows.cycle.empty()) {
    throw InvalidInputError("--from-cycle leaves no cycles to estimate");
  }
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery SOH estimation by cycle synchronization, canonical variate "
               "similarity gating, and source+residual GRU transfer"};
  app.require_subcommand(1);
  int threads = thread_cap();

  // ---- ingest -------------------------------------------------------------
  std::string in_cycles, in_capacity, in_id, out_stem;
  double nominal = 1.1;
  auto* ingest = app.add_subcommand("ingest", "Normalize raw CSV exports into a "
                                              "battery stem (<out>.cycles.csv + "
                                              "<out>.capacity.csv)");
  ingest->add_option("--cycles", in_cycles,
                     "cycles CSV (battery_id,cycle_index,sample_index,voltage_v)")
      ->required();
  ingest->add_option("--capacity", in_capacity,
                     "capacity CSV (battery_id,cycle_index,capacity_ah)")
      ->required();
  ingest->add_option("--id", in_id, "battery id to extract")->required();
  ingest->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  ingest->add_option("--out", out_stem, "output battery stem")->required();

  // ---- synth ----------------------------------------------------------------
  std::string profile_path;
  std::optional<std::uint64_t> seed_override;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic degradation "
                                            "battery from a JSON profile");
  synth->add_option("--profile", profile_path, "profile JSON path")->required();
  synth->add_option("--seed", seed_override, "override the profile's RNG seed");
  synth->add_option("--out", out_stem, "output battery stem")->required();

  // ---- train-source ---------------------------------------------------------
  std::string battery_stem, battery_id, model_out;
  int lag_p = 32, lag_f = 32, epochs = 90, batch = 16, dense = 100;
  double beta = 0.95, lr = 1e-3;
  std::string hidden = "300,500";
  std::uint64_t seed = 0;
  auto* train_source =
      app.add_subcommand("train-source", "Fit the full source pipeline: DTW sync, "
                                         "CVA, per-cycle control limits, GRU");
  train_source->add_option("--battery", battery_stem, "battery stem")->required();
  train_source->add_option("--id", battery_id, "battery id (optional if single)");
  train_source->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  train_source->add_option("--p", lag_p, "past lag in samples")->capture_default_str();
  train_source->add_option("--f", lag_f, "future lag in samples")->capture_default_str();
  train_source->add_option("--beta", beta, "control-limit significance level in (0,1)")
      ->capture_default_str();
  train_source->add_option("--hidden", hidden, "GRU layer widths, comma separated")
      ->capture_default_str();
  train_source->add_option("--dense", dense, "dense layer width")->capture_default_str();
  train_source->add_option("--epochs", epochs, "training epochs")->capture_default_str();
  train_source->add_option("--batch", batch, "mini-batch size")->capture_default_str();
  train_source->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
  train_source->add_option("--seed", seed, "RNG seed (init = seed, shuffle = seed+1)")
      ->capture_default_str();
  train_source->add_option("--out", model_out, "model file to write")->required();

  // ---- check-similarity -------------------------------------------------------
  std::string model_path, target_stem, target_id;
  int window = 100;
  double error_zone = 0.15, pass_fraction = 0.90;
  auto* check = app.add_subcommand("check-similarity",
                                   "Gate a target battery against a source model "
                                   "(prints similar=... s1=... s2=... cycles=...)");
  check->add_option("--source-model", model_path, "source model file")->required();
  check->add_option("--target", target_stem, "target battery stem")->required();
  check->add_option("--id", target_id, "target battery id (optional if single)");
  check->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  check->add_option("--cycles", window, "comparison window in cycles")
      ->capture_default_str();
  check->add_option("--error-zone", error_zone,
                    "relative error zone around source limits")
      ->capture_default_str();
  check->add_option("--pass-fraction", pass_fraction,
                    "fraction of cycles that must fall inside the zone")
      ->capture_default_str();

  // ---- train-target -------------------------------------------------------
  bool force = false;
  double dropout = 0.2;
  std::string t_hidden = "300,500";
  int t_dense = 100, t_epochs = 30, t_batch = 16;
  double t_lr = 1e-3;
  auto* train_target = app.add_subcommand(
      "train-target", "Train the residual model on the target's first cycles and "
                      "bundle the transferred estimator");
  train_target->add_option("--source-model", model_path, "source model file")
      ->required();
  train_target->add_option("--target", target_stem, "target battery stem")->required();
  train_target->add_option("--id", target_id, "target battery id (optional if single)");
  train_target->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  train_target->add_option("--cycles", window, "training window in cycles")
      ->capture_default_str();
  train_target->add_option("--hidden", t_hidden, "GRU layer widths, comma separated")
      ->capture_default_str();
  train_target->add_option("--dense", t_dense, "dense layer width")
      ->capture_default_str();
  train_target->add_option("--epochs", t_epochs, "training epochs")
      ->capture_default_str();
  train_target->add_option("--batch", t_batch, "mini-batch size")->capture_default_str();
  train_target->add_option("--lr", t_lr, "Adam learning rate")->capture_default_str();
  train_target->add_option("--dropout", dropout, "dropout rate per GRU layer in [0,1)")
      ->capture_default_str();
  train_target->add_option("--seed", seed, "RNG seed (init = seed, shuffle = seed+1)")
      ->capture_default_str();
  train_target->add_flag("--force", force,
                         "train even when the similarity gate refuses");
  train_target->add_option("--out", model_out, "model file to write")->required();

  // ---- estimate -------------------------------------------------------------
  int from_cycle = 1;
  std::string est_out;
  auto* estimate = app.add_subcommand("estimate", "Per-cycle capacity estimates "
                                                  "for a battery under a model");
  estimate->add_option("--model", model_path, "model file (source or target)")
      ->required();
  estimate->add_option("--battery", battery_stem, "battery stem")->required();
  estimate->add_option("--id", battery_id, "battery id (optional if single)");
  estimate->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  estimate->add_option("--from-cycle", from_cycle, "first cycle index to estimate")
      ->capture_default_str();
  estimate->add_option("--out", est_out, "output CSV path")->required();

  // ---- evaluate -------------------------------------------------------------
  std::string report_path, format = "csv";
  auto* evaluate = app.add_subcommand("evaluate", "MAE/RMSE report (source-only vs "
                                                  "combined) on a battery");
  evaluate->add_option("--model", model_path, "model file (source or target)")
      ->required();
  evaluate->add_option("--battery", battery_stem, "battery stem")->required();
  evaluate->add_option("--id", battery_id, "battery id (optional if single)");
  evaluate->add_option("--nominal", nominal, "nominal capacity in ampere-hours")
      ->capture_default_str();
  evaluate->add_option("--from-cycle", from_cycle, "first cycle index to score")
      ->capture_default_str();
  evaluate->add_option("--report", report_path, "report file to write")->required();
  evaluate->add_option("--format", format, "report format: csv or md")
      ->capture_default_str()
      ->check(CLI::IsMember({"csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error:validation: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*ingest) {
      ManifestWriter manifest("ingest", argc, argv);
      manifest.input(in_cycles);
      manifest.input(in_capacity);
      auto record = dataset::load_battery(in_cycles, in_capacity, in_id, nominal);
      dataset::save_battery_stem(record, out_stem);
      manifest.output(out_stem + ".cycles.csv");
      manifest.output(out_stem + ".capacity.csv");
      manifest.write(out_stem + ".cycles.csv");
      std::printf("ingested %s: %zu cycles\n", record.id.c_str(), record.cycles.size());
    } else if (*synth) {
      ManifestWriter manifest("synth", argc, argv);
      manifest.input(profile_path);
      auto profile = dataset::load_profile(profile_path);
      if (seed_override) profile.seed = *seed_override;
      manifest.seed("profile_seed", profile.seed);
      auto record = dataset::synth_battery(profile);
      dataset::save_battery_stem(record, out_stem);
      manifest.output(out_stem + ".cycles.csv");
      manifest.output(out_stem + ".capacity.csv");
      manifest.write(out_stem + ".cycles.csv");
      std::printf("synthesized %s: %zu cycles\n", record.id.c_str(),
                  record.cycles.size());
    } else if (*train_source) {
      ManifestWriter manifest("train-source", argc, argv);
      manifest.input_stem(battery_stem);
      manifest.seed("net_seed", seed);
      manifest.seed("train_seed", seed + 1);
      auto battery = dataset::load_battery_stem(battery_stem, battery_id, nominal);

      nn::GruConfig net_cfg;
      net_cfg.hidden_dims = parse_dims(hidden);
      net_cfg.dense_dim = dense;
      net_cfg.seed = seed;
      nn::TrainConfig train_cfg;
      train_cfg.epochs = epochs;
      train_cfg.batch_size = batch;
      train_cfg.learning_rate = lr;
      train_cfg.seed = seed + 1;

      auto model = pipeline::train_source(battery, cva::LagSpec{lag_p, lag_f}, beta,
                                          net_cfg, train_cfg, threads);
      pipeline::save_model(model, model_out);
      manifest.output(model_out);
      manifest.write(model_out);
      std::printf("trained source on %s: retained %d of %d, %zu cycles\n",
                  battery.id.c_str(), model.cva_model.retained_count, lag_p,
                  battery.cycles.size());
    } else if (*check) {
      auto source = require_source(pipeline::load_model(model_path));
      auto target = dataset::load_battery_stem(target_stem, target_id, nominal);
      auto series =
          sync::synchronize_battery(source.reference_cycle, target, window, threads);
      auto bundle = pipeline::project_series(source, series, source.limits.beta);
      if (static_cast<int>(source.limits.cl_t2.size()) < window) {
        throw InsufficientDataError("source model covers fewer cycles than --cycles");
      }
      monitor::ControlLimitProfile source_window;
      source_window.beta = source.limits.beta;
      source_window.cl_t2.assign(source.limits.cl_t2.begin(),
                                 source.limits.cl_t2.begin() + window);
      source_window.cl_q.assign(source.limits.cl_q.begin(),
                                source.limits.cl_q.begin() + window);
      auto verdict = monitor::similarity_gate(source_window, bundle.limits, error_zone,
                                              pass_fraction);
      print_verdict(verdict);
    } else if (*train_target) {
      ManifestWriter manifest("train-target", argc, argv);
      manifest.input(model_path);
      manifest.input_stem(target_stem);
      manifest.seed("net_seed", seed);
      manifest.seed("train_seed", seed + 1);
      auto source = require_source(pipeline::load_model(model_path));
      auto target = dataset::load_battery_stem(target_stem, target_id, nominal);

      nn::GruConfig net_cfg;
      net_cfg.hidden_dims = parse_dims(t_hidden);
      net_cfg.dense_dim = t_dense;
      net_cfg.dropout_rates.assign(net_cfg.hidden_dims.size(), dropout);
      net_cfg.seed = seed;
      nn::TrainConfig train_cfg;
      train_cfg.epochs = t_epochs;
      train_cfg.batch_size = t_batch;
      train_cfg.learning_rate = t_lr;
      train_cfg.seed = seed + 1;

      auto model = pipeline::train_target(source, target, window, net_cfg, train_cfg,
                                          force, threads);
      pipeline::save_model(model, model_out);
      manifest.output(model_out);
      manifest.write(model_out);
      print_verdict(model.verdict);
    } else if (*estimate) {
      ManifestWriter manifest("estimate", argc, argv);
      manifest.input(model_path);
      manifest.input_stem(battery_stem);
      auto loaded = pipeline::load_model(model_path);
      auto battery = dataset::load_battery_stem(battery_stem, battery_id, nominal);

      EstimateRows rows;
      if (std::holds_alternative<pipeline::TargetModel>(loaded)) {
        const auto& model = std::get<pipeline::TargetModel>(loaded);
        rows = run_estimates(battery, from_cycle, [&](const dataset::DischargeCycle& c) {
          return pipeline::estimate_online(model, c);
        });
      } else {
        const auto& model = std::get<pipeline::SourceModel>(loaded);
        rows = run_estimates(battery, from_cycle, [&](const dataset::DischargeCycle& c) {
          return pipeline::estimate_source_only(model, c);
        });
      }
      eval::emit_series("cycle_index", rows.cycle,
                        {{"source_ah", rows.source_ah},
                         {"residual_ah", rows.residual_ah},
                         {"total_ah", rows.total_ah},
                         {"soh", rows.soh},
                         {"measured_ah", rows.measured_ah}},
                        est_out);
      manifest.output(est_out);
      manifest.write(est_out);
      std::printf("estimated %zu cycles\n", rows.cycle.size());
    } else if (*evaluate) {
      ManifestWriter manifest("evaluate", argc, argv);
      manifest.input(model_path);
      manifest.input_stem(battery_stem);
      auto loaded = pipeline::load_model(model_path);
      auto battery = dataset::load_battery_stem(battery_stem, battery_id, nominal);

      eval::EvalReport report;
      if (std::holds_alternative<pipeline::TargetModel>(loaded)) {
        const auto& model = std::get<pipeline::TargetModel>(loaded);
        auto source_rows =
            run_estimates(battery, from_cycle, [&](const dataset::DischargeCycle& c) {
              return pipeline::estimate_source_only(model.source, c);
            });
        auto combined_rows =
            run_estimates(battery, from_cycle, [&](const dataset::DischargeCycle& c) {
              return pipeline::estimate_online(model, c);
            });

        eval::ReportRow base;
        base.source_id = model.source.dataset.battery_id;
        base.target_id = battery.id;
        base.similar = model.verdict.similar;
        base.method = "DCVA-GRU";
        base.mae = eval::mae(source_rows.measured_ah, source_rows.total_ah);
        base.rmse = eval::rmse(source_rows.measured_ah, source_rows.total_ah);
        report.rows.push_back(base);

        eval::ReportRow combined = base;
        combined.method = "DCVA-GRU-TL";
        combined.mae = eval::mae(combined_rows.measured_ah, combined_rows.total_ah);
        combined.rmse = eval::rmse(combined_rows.measured_ah, combined_rows.total_ah);
        combined.improvement_mae_pct = eval::improvement_pct(base.mae, combined.mae);
        combined.improvement_rmse_pct = eval::improvement_pct(base.rmse, combined.rmse);
        report.rows.push_back(combined);
      } else {
        const auto& model = std::get<pipeline::SourceModel>(loaded);
        auto rows =
            run_estimates(battery, from_cycle, [&](const dataset::DischargeCycle& c) {
              return pipeline::estimate_source_only(model, c);
            });
        eval::ReportRow row;
        row.source_id = model.dataset.battery_id;
        row.target_id = battery.id;
        row.similar = battery.id == model.dataset.battery_id;
        row.method = "DCVA-GRU";
        row.mae = eval::mae(rows.measured_ah, rows.total_ah);
        row.rmse = eval::rmse(rows.measured_ah, rows.total_ah);
        report.rows.push_back(row);
      }
      eval::emit_report(report,
                        format == "csv" ? eval::ReportFormat::csv
                                        : eval::ReportFormat::markdown,
                        report_path);
      manifest.output(report_path);
      manifest.write(report_path);
      for (const auto& row : report.rows) {
        std::printf("%s mae=%.6f rmse=%.6f\n", row.method.c_str(), row.mae, row.rmse);
      }
    }
  } catch (const pipeline::NotTransferableError& e) {
    std::cerr << "error:" << e.kind() << ": " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error:" << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
