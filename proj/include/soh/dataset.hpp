#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace soh::dataset {

// One constant-current discharge: the voltage trace and the capacity it
// delivered. Sampling cadence is whatever the file provides; DTW downstream
// only uses sample indices.
struct DischargeCycle {
  int cycle_index = 1;               // >= 1, strictly increasing within a record
  std::vector<double> voltage;       // volts, uniformly sampled, length >= 2
  double capacity_ah = 0.0;          // ampere-hours, > 0
};

struct BatteryRecord {
  std::string id;
  double nominal_capacity_ah = 1.1;  // ampere-hours
  std::string charge_protocol;       // free-form label, may be empty
  std::vector<DischargeCycle> cycles;

  // Throws SchemaError / InvalidInputError on any violated invariant.
  void validate() const;
};

// Synthetic degradation profile: capacity stays near initial_capacity until
// knee_cycle, then fades faster. Fade rates are fractions of the initial
// capacity lost per cycle, so two profiles with equal rates share the same
// relative trajectory regardless of initial capacity.
struct SynthProfile {
  double initial_capacity = 1.1;   // ampere-hours
  int knee_cycle = 60;
  double fade_rate_pre = 0.0008;   // fraction of initial capacity per cycle
  double fade_rate_post = 0.004;
  double noise_std = 0.0;          // volts on samples; 0.1x that in Ah on capacity
  int base_cycle_length = 128;     // samples in a full-capacity cycle, >= 16
  int num_cycles = 120;
  std::uint64_t seed = 0;

  void validate() const;
};

// Closed-form mean capacity of cycle k (1-based), before noise.
double synth_mean_capacity(const SynthProfile& profile, int cycle);

BatteryRecord synth_battery(const SynthProfile& profile);

// CSV pair ingestion. Cycle file header: battery_id,cycle_index,sample_index,voltage_v
// Capacity file header: battery_id,cycle_index,capacity_ah
// `id` empty selects the only battery present (SchemaError if ambiguous).
BatteryRecord load_battery(const std::filesystem::path& cycles_path,
                           const std::filesystem::path& capacity_path,
                           const std::string& id,
                           double nominal_capacity_ah = 1.1);

void save_battery(const BatteryRecord& record,
                  const std::filesystem::path& cycles_path,
                  const std::filesystem::path& capacity_path);

// Stem convenience: `<stem>.cycles.csv` + `<stem>.capacity.csv`.
BatteryRecord load_battery_stem(const std::filesystem::path& stem,
                                const std::string& id = "",
                                double nominal_capacity_ah = 1.1);
void save_battery_stem(const BatteryRecord& record, const std::filesystem::path& stem);

// JSON profile file; unknown keys rejected so typos surface early.
SynthProfile load_profile(const std::filesystem::path& path);

}  // namespace soh::dataset
