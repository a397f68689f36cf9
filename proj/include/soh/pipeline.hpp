#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "soh/cva.hpp"
#include "soh/dataset.hpp"
#include "soh/errors.hpp"
#include "soh/monitor.hpp"
#include "soh/nn.hpp"
#include "soh/sync.hpp"

namespace soh::pipeline {

struct DatasetFingerprint {
  std::string battery_id;
  int cycle_count = 0;
  double nominal_capacity_ah = 0.0;
  std::string content_hash;  // fnv1a64 over the serialized record
};

// Everything learned from the source battery's complete life: the reference
// cycle, the canonical structure, per-cycle control limits, and the capacity
// regressor on canonical variates.
struct SourceModel {
  std::vector<double> reference_cycle;  // voltage trace of cycle 1
  int reference_cycle_index = 1;
  cva::CvaModel cva_model;
  monitor::ControlLimitProfile limits;  // all source cycles
  nn::GruNetwork network;               // input width = retained_count
  nn::TrainConfig train_meta;
  DatasetFingerprint dataset;
  double nominal_capacity_ah = 1.1;
};

struct TargetModel {
  SourceModel source;
  nn::GruNetwork residual_network;  // input width = lag p
  std::string target_id;
  monitor::SimilarityVerdict verdict;
  double target_nominal_capacity_ah = 1.1;
  int window = 100;  // target cycles the residual model saw
};

struct CapacityEstimate {
  int cycle_index = 0;
  double source_component_ah = 0.0;
  double residual_component_ah = 0.0;
  double total_ah = 0.0;  // source + residual
  double soh = 0.0;       // total / nominal capacity
};

class NotTransferableError : public Error {
public:
  explicit NotTransferableError(const monitor::SimilarityVerdict& v);
  const monitor::SimilarityVerdict& verdict() const noexcept { return verdict_; }

private:
  monitor::SimilarityVerdict verdict_;
};

// net_cfg's input_dim is ignored: the source network takes retained_count
// inputs and the residual network takes p inputs, both known only after the
// canonical fit.
SourceModel train_source(const dataset::BatteryRecord& battery, const cva::LagSpec& lag,
                         double beta, const nn::GruConfig& net_cfg,
                         const nn::TrainConfig& train_cfg, int threads = 1);

monitor::SimilarityVerdict evaluate_transferability(const SourceModel& source,
                                                    const dataset::BatteryRecord& target,
                                                    int window = 100, int threads = 1);

TargetModel train_target(const SourceModel& source, const dataset::BatteryRecord& target,
                         int window, const nn::GruConfig& net_cfg,
                         const nn::TrainConfig& train_cfg, bool force = false,
                         int threads = 1);

CapacityEstimate estimate_online(const TargetModel& model,
                                 const dataset::DischargeCycle& cycle);
// Source network alone; residual component is zero.
CapacityEstimate estimate_source_only(const SourceModel& model,
                                      const dataset::DischargeCycle& cycle);

// Per-cycle network inputs from synchronized series: time-ordered canonical
// (width C) and residual (width p) sequences.
struct SequenceBundle {
  std::vector<Eigen::MatrixXd> cv;  // each (m-f-p+1) x C
  std::vector<Eigen::MatrixXd> rv;  // each (m-f-p+1) x p
  monitor::ControlLimitProfile limits;
};
SequenceBundle project_series(const SourceModel& model,
                              const std::vector<sync::SynchronizedSeries>& series,
                              double beta);

void save_model(const SourceModel& model, const std::filesystem::path& path);
void save_model(const TargetModel& model, const std::filesystem::path& path);

using LoadedModel = std::variant<SourceModel, TargetModel>;
LoadedModel load_model(const std::filesystem::path& path);

std::string serialize_model(const SourceModel& model);
std::string serialize_model(const TargetModel& model);

DatasetFingerprint fingerprint(const dataset::BatteryRecord& record);

}  // namespace soh::pipeline
