#include "soh/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "soh/io_util.hpp"

namespace soh::pipeline {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

Eigen::MatrixXd sequences_from_block(const Eigen::MatrixXd& projected, long block_start,
                                     int block_cols) {
  // Hankel blocks run anchor-descending; network input is time-ascending.
  Eigen::MatrixXd seq(block_cols, projected.rows());
  for (int t = 0; t < block_cols; ++t) {
    seq.row(t) = projected.col(block_start + block_cols - 1 - t).transpose();
  }
  return seq;
}

std::vector<double> window_capacities(const dataset::BatteryRecord& battery,
                                      std::size_t count) {
  std::vector<double> caps(count);
  for (std::size_t k = 0; k < count; ++k) caps[k] = battery.cycles[k].capacity_ah;
  return caps;
}

}  // namespace

NotTransferableError::NotTransferableError(const monitor::SimilarityVerdict& v)
    : Error("NotTransferable",
            "similarity gate failed: s1=" + util::format_double(v.s1_fraction) +
                " s2=" + util::format_double(v.s2_fraction) + " over " +
                std::to_string(v.cycles_compared) + " cycles"),
      verdict_(v) {}

DatasetFingerprint fingerprint(const dataset::BatteryRecord& record) {
  std::string blob = record.id + "|" + util::format_double(record.nominal_capacity_ah);
  for (const auto& c : record.cycles) {
    blob += "|";
    blob += std::to_string(c.cycle_index);
    blob += ":";
    blob += util::format_double(c.capacity_ah);
    for (double v : c.voltage) {
      blob += ",";
      blob += util::format_double(v);
    }
  }
  DatasetFingerprint fp;
  fp.battery_id = record.id;
  fp.cycle_count = static_cast<int>(record.cycles.size());
  fp.nominal_capacity_ah = record.nominal_capacity_ah;
  fp.content_hash = util::fnv1a64_hex(blob);
  return fp;
}

SequenceBundle project_series(const SourceModel& model,
                              const std::vector<sync::SynchronizedSeries>& series,
                              double beta) {
  cva::HankelPair hankel = cva::build_hankel(series, model.cva_model.lag);
  Eigen::MatrixXd past = cva::apply_normalizer(model.cva_model.normalizer_past,
                                               hankel.past);
  cva::CvProjection projection =
      cva::project(model.cva_model, past, hankel.columns_per_cycle);

  SequenceBundle bundle;
  long col = 0;
  for (int count : projection.columns_per_cycle) {
    bundle.cv.push_back(sequences_from_block(projection.cv, col, count));
    bundle.rv.push_back(sequences_from_block(projection.rv, col, count));
    col += count;
  }
  bundle.limits = monitor::control_limit_profile(monitor::cycle_statistics(projection),
                                                 beta);
  return bundle;
}

SourceModel train_source(const dataset::BatteryRecord& battery, const cva::LagSpec& lag,
                         double beta, const nn::GruConfig& net_cfg,
                         const nn::TrainConfig& train_cfg, int threads) {
  battery.validate();
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInputError("beta must lie in (0,1)");

  const auto& reference = battery.cycles.front().voltage;
  const int m = static_cast<int>(reference.size());
  if (m < lag.p + lag.f) {
    throw CycleTooShortError("reference cycle has " + std::to_string(m) +
                                 " samples, need p+f = " + std::to_string(lag.p + lag.f),
                             battery.cycles.front().cycle_index);
  }

  auto series = sync::synchronize_battery(reference, battery, {}, threads);
  cva::HankelPair hankel = cva::build_hankel(series, lag);
  cva::CvaModel cva_model = cva::fit_cva(hankel);

  SourceModel model;
  model.reference_cycle = reference;
  model.reference_cycle_index = battery.cycles.front().cycle_index;
  model.cva_model = std::move(cva_model);
  model.dataset = fingerprint(battery);
  model.nominal_capacity_ah = battery.nominal_capacity_ah;
  model.train_meta = train_cfg;

  SequenceBundle bundle = project_series(model, series, beta);
  model.limits = bundle.limits;

  nn::GruConfig cfg = net_cfg;
  cfg.input_dim = model.cva_model.retained_count;
  model.network = nn::make_network(cfg);

  std::vector<std::pair<Eigen::MatrixXd, double>> pairs;
  pairs.reserve(bundle.cv.size());
  auto caps = window_capacities(battery, battery.cycles.size());
  for (std::size_t k = 0; k < bundle.cv.size(); ++k) {
    pairs.emplace_back(std::move(bundle.cv[k]), caps[k]);
  }
  nn::train(model.network, pairs, train_cfg);
  return model;
}

monitor::SimilarityVerdict evaluate_transferability(const SourceModel& source,
                                                    const dataset::BatteryRecord& target,
                                                    int window, int threads) {
  if (window < 1) throw InvalidInputError("window must be >= 1");
  if (static_cast<int>(target.cycles.size()) < window) {
    throw InsufficientDataError("target has " + std::to_string(target.cycles.size()) +
                                " cycles, window needs " + std::to_string(window));
  }
  if (static_cast<int>(source.limits.cl_t2.size()) < window) {
    throw InsufficientDataError("source model covers " +
                                std::to_string(source.limits.cl_t2.size()) +
                                " cycles, window needs " + std::to_string(window));
  }

  auto series = sync::synchronize_battery(source.reference_cycle, target, window, threads);
  SequenceBundle bundle = project_series(source, series, source.limits.beta);

  monitor::ControlLimitProfile source_window;
  source_window.beta = source.limits.beta;
  source_window.cl_t2.assign(source.limits.cl_t2.begin(),
                             source.limits.cl_t2.begin() + window);
  source_window.cl_q.assign(source.limits.cl_q.begin(),
                            source.limits.cl_q.begin() + window);
  return monitor::similarity_gate(source_window, bundle.limits);
}

TargetModel train_target(const SourceModel& source, const dataset::BatteryRecord& target,
                         int window, const nn::GruConfig& net_cfg,
                         const nn::TrainConfig& train_cfg, bool force, int threads) {
  monitor::SimilarityVerdict verdict =
      evaluate_transferability(source, target, window, threads);
  if (!verdict.similar && !force) throw NotTransferableError(verdict);

  auto series = sync::synchronize_battery(source.reference_cycle, target, window, threads);
  SequenceBundle bundle = project_series(source, series, source.limits.beta);

  auto caps = window_capacities(target, static_cast<std::size_t>(window));
  std::vector<double> residuals = nn::residual_targets(source.network, bundle.cv, caps);

  nn::GruConfig cfg = net_cfg;
  cfg.input_dim = source.cva_model.lag.p;

  TargetModel model;
  model.source = source;
  model.residual_network = nn::make_network(cfg);
  model.target_id = target.id;
  model.verdict = verdict;
  model.target_nominal_capacity_ah = target.nominal_capacity_ah;
  model.window = window;

  std::vector<std::pair<Eigen::MatrixXd, double>> pairs;
  pairs.reserve(bundle.rv.size());
  for (std::size_t k = 0; k < bundle.rv.size(); ++k) {
    pairs.emplace_back(std::move(bundle.rv[k]), residuals[k]);
  }
  nn::train(model.residual_network, pairs, train_cfg);
  return model;
}

namespace {

struct CycleProjection {
  Eigen::MatrixXd cv_seq;
  Eigen::MatrixXd rv_seq;
};

CycleProjection project_cycle(const SourceModel& model,
                              const dataset::DischargeCycle& cycle) {
  if (cycle.voltage.empty()) throw InvalidInputError("cycle has no voltage samples");
  sync::SynchronizedSeries series =
      sync::synchronize_cycle(model.reference_cycle, cycle.voltage, cycle.cycle_index);
  cva::HankelPair hankel = cva::build_hankel({series}, model.cva_model.lag);
  Eigen::MatrixXd past =
      cva::apply_normalizer(model.cva_model.normalizer_past, hankel.past);
  cva::CvProjection projection =
      cva::project(model.cva_model, past, hankel.columns_per_cycle);
  CycleProjection out;
  out.cv_seq = sequences_from_block(projection.cv, 0, projection.columns_per_cycle[0]);
  out.rv_seq = sequences_from_block(projection.rv, 0, projection.columns_per_cycle[0]);
  return out;
}

}  // namespace

CapacityEstimate estimate_online(const TargetModel& model,
                                 const dataset::DischargeCycle& cycle) {
  CycleProjection proj = project_cycle(model.source, cycle);
  CapacityEstimate est;
  est.cycle_index = cycle.cycle_index;
  est.source_component_ah = nn::predict(model.source.network, proj.cv_seq);
  est.residual_component_ah = nn::predict(model.residual_network, proj.rv_seq);
  est.total_ah = est.source_component_ah + est.residual_component_ah;
  est.soh = est.total_ah / model.target_nominal_capacity_ah;
  return est;
}

CapacityEstimate estimate_source_only(const SourceModel& model,
                                      const dataset::DischargeCycle& cycle) {
  CycleProjection proj = project_cycle(model, cycle);
  CapacityEstimate est;
  est.cycle_index = cycle.cycle_index;
  est.source_component_ah = nn::predict(model.network, proj.cv_seq);
  est.residual_component_ah = 0.0;
  est.total_ah = est.source_component_ah;
  est.soh = est.total_ah / model.nominal_capacity_ah;
  return est;
}

// ---------------------------------------------------------------------------
// Persistence: one header line carrying version + checksum, then a JSON body
// whose numbers use shortest round-trip formatting.

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (long r = 0; r < m.rows(); ++r) {
    for (long c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  long rows = j.at("rows").get<long>();
  long cols = j.at("cols").get<long>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<long>(data.size()) != rows * cols) {
    throw CorruptModelError("matrix payload size mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  long idx = 0;
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) m(r, c) = data.at(idx++).get<double>();
  }
  return m;
}

json vector_to_json(const std::vector<double>& v) { return json(v); }

json eigvec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd eigvec_from_json(const json& j) {
  auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(),
                                           static_cast<long>(data.size()));
}

json network_to_json(const nn::GruNetwork& net) {
  json tensors = json::object();
  for (const auto& [name, value] : net.params) tensors[name] = matrix_to_json(value);
  return json{{"config",
               {{"input_dim", net.config.input_dim},
                {"hidden_dims", net.config.hidden_dims},
                {"dense_dim", net.config.dense_dim},
                {"dropout_rates", net.config.dropout_rates},
                {"seed", net.config.seed}}},
              {"tensors", std::move(tensors)}};
}

nn::GruNetwork network_from_json(const json& j) {
  nn::GruNetwork net;
  const auto& cfg = j.at("config");
  net.config.input_dim = cfg.at("input_dim").get<int>();
  net.config.hidden_dims = cfg.at("hidden_dims").get<std::vector<int>>();
  net.config.dense_dim = cfg.at("dense_dim").get<int>();
  net.config.dropout_rates = cfg.at("dropout_rates").get<std::vector<double>>();
  net.config.seed = cfg.at("seed").get<std::uint64_t>();
  net.config.validate();
  net.dropout_rng.seed(net.config.seed ^ 0x9e3779b97f4a7c15ull);
  for (const auto& [name, value] : j.at("tensors").items()) {
    net.params[name] = matrix_from_json(value);
  }
  return net;
}

json train_cfg_to_json(const nn::TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_epsilon", cfg.adam_epsilon},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed}};
}

nn::TrainConfig train_cfg_from_json(const json& j) {
  nn::TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.adam_beta1 = j.at("adam_beta1").get<double>();
  cfg.adam_beta2 = j.at("adam_beta2").get<double>();
  cfg.adam_epsilon = j.at("adam_epsilon").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json source_to_json(const SourceModel& model) {
  json j;
  j["sync"] = {{"reference_cycle", vector_to_json(model.reference_cycle)},
               {"reference_cycle_index", model.reference_cycle_index}};
  j["cva"] = {{"p", model.cva_model.lag.p},
              {"f", model.cva_model.lag.f},
              {"retained_count", model.cva_model.retained_count},
              {"singular_values", vector_to_json(model.cva_model.singular_values)},
              {"normalizer_past",
               {{"mean", eigvec_to_json(model.cva_model.normalizer_past.mean)},
                {"std", eigvec_to_json(model.cva_model.normalizer_past.stddev)}}},
              {"normalizer_future",
               {{"mean", eigvec_to_json(model.cva_model.normalizer_future.mean)},
                {"std", eigvec_to_json(model.cva_model.normalizer_future.stddev)}}},
              {"whitener", matrix_to_json(model.cva_model.whitener)},
              {"j_c", matrix_to_json(model.cva_model.j_c)},
              {"j_r", matrix_to_json(model.cva_model.j_r)}};
  j["limits"] = {{"beta", model.limits.beta},
                 {"kernel", "gaussian"},
                 {"bandwidth_rule", "silverman-1.06"},
                 {"cl_t2", vector_to_json(model.limits.cl_t2)},
                 {"cl_q", vector_to_json(model.limits.cl_q)}};
  j["network"] = network_to_json(model.network);
  j["train_meta"] = train_cfg_to_json(model.train_meta);
  j["dataset"] = {{"battery_id", model.dataset.battery_id},
                  {"cycle_count", model.dataset.cycle_count},
                  {"nominal_capacity_ah", model.dataset.nominal_capacity_ah},
                  {"content_hash", model.dataset.content_hash}};
  j["nominal_capacity_ah"] = model.nominal_capacity_ah;
  return j;
}

SourceModel source_from_json(const json& j) {
  SourceModel model;
  const auto& sync_j = j.at("sync");
  model.reference_cycle = sync_j.at("reference_cycle").get<std::vector<double>>();
  model.reference_cycle_index = sync_j.at("reference_cycle_index").get<int>();

  const auto& cva_j = j.at("cva");
  model.cva_model.lag.p = cva_j.at("p").get<int>();
  model.cva_model.lag.f = cva_j.at("f").get<int>();
  model.cva_model.retained_count = cva_j.at("retained_count").get<int>();
  model.cva_model.singular_values =
      cva_j.at("singular_values").get<std::vector<double>>();
  model.cva_model.normalizer_past.mean =
      eigvec_from_json(cva_j.at("normalizer_past").at("mean"));
  model.cva_model.normalizer_past.stddev =
      eigvec_from_json(cva_j.at("normalizer_past").at("std"));
  model.cva_model.normalizer_future.mean =
      eigvec_from_json(cva_j.at("normalizer_future").at("mean"));
  model.cva_model.normalizer_future.stddev =
      eigvec_from_json(cva_j.at("normalizer_future").at("std"));
  model.cva_model.whitener = matrix_from_json(cva_j.at("whitener"));
  model.cva_model.j_c = matrix_from_json(cva_j.at("j_c"));
  model.cva_model.j_r = matrix_from_json(cva_j.at("j_r"));

  const auto& limits_j = j.at("limits");
  model.limits.beta = limits_j.at("beta").get<double>();
  model.limits.cl_t2 = limits_j.at("cl_t2").get<std::vector<double>>();
  model.limits.cl_q = limits_j.at("cl_q").get<std::vector<double>>();

  model.network = network_from_json(j.at("network"));
  model.train_meta = train_cfg_from_json(j.at("train_meta"));

  const auto& ds = j.at("dataset");
  model.dataset.battery_id = ds.at("battery_id").get<std::string>();
  model.dataset.cycle_count = ds.at("cycle_count").get<int>();
  model.dataset.nominal_capacity_ah = ds.at("nominal_capacity_ah").get<double>();
  model.dataset.content_hash = ds.at("content_hash").get<std::string>();
  model.nominal_capacity_ah = j.at("nominal_capacity_ah").get<double>();
  return model;
}

json verdict_to_json(const monitor::SimilarityVerdict& v) {
  return json{{"s1_pass", v.s1_pass},       {"s2_pass", v.s2_pass},
              {"similar", v.similar},       {"s1_fraction", v.s1_fraction},
              {"s2_fraction", v.s2_fraction}, {"cycles_compared", v.cycles_compared}};
}

monitor::SimilarityVerdict verdict_from_json(const json& j) {
  monitor::SimilarityVerdict v;
  v.s1_pass = j.at("s1_pass").get<bool>();
  v.s2_pass = j.at("s2_pass").get<bool>();
  v.similar = j.at("similar").get<bool>();
  v.s1_fraction = j.at("s1_fraction").get<double>();
  v.s2_fraction = j.at("s2_fraction").get<double>();
  v.cycles_compared = j.at("cycles_compared").get<int>();
  return v;
}

std::string wrap_with_header(const json& body) {
  std::string payload = body.dump();
  payload += '\n';
  std::string header = "sohmodel format_version=" + std::to_string(kFormatVersion) +
                       " checksum=fnv1a:" + util::fnv1a64_hex(payload) + "\n";
  return header + payload;
}

json unwrap_checked(const std::string& content) {
  auto newline = content.find('\n');
  if (newline == std::string::npos) throw CorruptModelError("missing model header");
  std::string header = content.substr(0, newline);
  std::string payload = content.substr(newline + 1);

  int version = 0;
  char checksum[32] = {0};
  if (std::sscanf(header.c_str(), "sohmodel format_version=%d checksum=fnv1a:%31s",
                  &version, checksum) != 2) {
    throw CorruptModelError("unrecognized model header '" + header + "'");
  }
  if (version != kFormatVersion) {
    throw VersionError("model file has format_version " + std::to_string(version) +
                       ", this build reads format_version " +
                       std::to_string(kFormatVersion));
  }
  if (util::fnv1a64_hex(payload) != checksum) {
    throw CorruptModelError("checksum mismatch, file is truncated or edited");
  }
  try {
    return json::parse(payload);
  } catch (const json::exception& e) {
    throw CorruptModelError(std::string("model body is not valid JSON: ") + e.what());
  }
}

}  // namespace

std::string serialize_model(const SourceModel& model) {
  json j = source_to_json(model);
  j["format_version"] = kFormatVersion;
  j["kind"] = "source";
  j["created_with_seed"] = model.network.config.seed;
  return wrap_with_header(j);
}

std::string serialize_model(const TargetModel& model) {
  json j = source_to_json(model.source);
  j["format_version"] = kFormatVersion;
  j["kind"] = "target";
  j["created_with_seed"] = model.residual_network.config.seed;
  j["residual_network"] = network_to_json(model.residual_network);
  j["verdict"] = verdict_to_json(model.verdict);
  j["target_id"] = model.target_id;
  j["target_nominal_capacity_ah"] = model.target_nominal_capacity_ah;
  j["window"] = model.window;
  return wrap_with_header(j);
}

void save_model(const SourceModel& model, const std::filesystem::path& path) {
  util::atomic_write_file(path, serialize_model(model));
}

void save_model(const TargetModel& model, const std::filesystem::path& path) {
  util::atomic_write_file(path, serialize_model(model));
}

LoadedModel load_model(const std::filesystem::path& path) {
  json j = unwrap_checked(util::read_file(path));
  try {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "source") {
      return source_from_json(j);
    }
    if (kind == "target") {
      TargetModel model;
      model.source = source_from_json(j);
      model.residual_network = network_from_json(j.at("residual_network"));
      model.verdict = verdict_from_json(j.at("verdict"));
      model.target_id = j.at("target_id").get<std::string>();
      model.target_nominal_capacity_ah = j.at("target_nominal_capacity_ah").get<double>();
      model.window = j.at("window").get<int>();
      return model;
    }
    throw CorruptModelError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw CorruptModelError(std::string("model body missing fields: ") + e.what());
  }
}

}  // namespace soh::pipeline
