#include "soh/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "soh/errors.hpp"
#include "soh/io_util.hpp"

namespace soh::dataset {

namespace {

constexpr double kVoltageLo = 0.0;
constexpr double kVoltageHi = 10.0;  // sanity bound; real data lives in 2.0-3.6 V

void check_cycle(const DischargeCycle& c, double nominal) {
  if (c.cycle_index < 1) {
    throw SchemaError("cycle_index must be >= 1, got " + std::to_string(c.cycle_index));
  }
  if (c.voltage.size() < 2) {
    throw SchemaError("cycle " + std::to_string(c.cycle_index) + " has fewer than 2 samples");
  }
  for (double v : c.voltage) {
    if (!std::isfinite(v) || v < kVoltageLo || v > kVoltageHi) {
      throw SchemaError("cycle " + std::to_string(c.cycle_index) +
                        " has voltage sample outside [0,10] V");
    }
  }
  if (!(c.capacity_ah > 0.0) || c.capacity_ah > 2.0 * nominal) {
    throw SchemaError("cycle " + std::to_string(c.cycle_index) +
                      " capacity " + util::format_double(c.capacity_ah) +
                      " outside (0, 2x nominal]");
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

struct CsvReader {
  std::istringstream stream;
  long row = 0;  // 1-based, header is row 1

  explicit CsvReader(std::string content) : stream(std::move(content)) {}

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(stream, line)) {
      ++row;
      if (line.empty() || line == "\r") continue;
      fields = split_csv_line(line);
      return true;
    }
    return false;
  }
};

}  // namespace

void BatteryRecord::validate() const {
  if (cycles.empty()) throw SchemaError("battery '" + id + "' has no cycles");
  if (!(nominal_capacity_ah > 0.0)) {
    throw InvalidInputError("nominal capacity must be positive");
  }
  int prev = 0;
  for (const auto& c : cycles) {
    if (c.cycle_index <= prev) {
      throw SchemaError("cycle_index not strictly increasing at cycle " +
                        std::to_string(c.cycle_index));
    }
    prev = c.cycle_index;
    check_cycle(c, nominal_capacity_ah);
  }
}

void SynthProfile::validate() const {
  if (!(initial_capacity > 0.0)) throw InvalidInputError("initial_capacity must be > 0");
  if (knee_cycle < 1) throw InvalidInputError("knee_cycle must be >= 1");
  if (noise_std < 0.0) throw InvalidInputError("noise_std must be >= 0");
  if (base_cycle_length < 16) throw InvalidInputError("base_cycle_length must be >= 16");
  if (num_cycles < 1) throw InvalidInputError("num_cycles must be >= 1");
  if (fade_rate_pre < 0.0 || fade_rate_post < 0.0) {
    throw InvalidInputError("fade rates must be >= 0");
  }
}

double synth_mean_capacity(const SynthProfile& p, int cycle) {
  int pre = std::min(cycle, p.knee_cycle) - 1;
  int post = std::max(0, cycle - p.knee_cycle);
  double faded = 1.0 - p.fade_rate_pre * pre - p.fade_rate_post * post;
  return p.initial_capacity * std::max(faded, 0.05);
}

BatteryRecord synth_battery(const SynthProfile& profile) {
  profile.validate();
  std::mt19937_64 rng(profile.seed);

  BatteryRecord record;
  record.id = "synth-" + std::to_string(profile.seed);
  record.nominal_capacity_ah = profile.initial_capacity;
  record.charge_protocol = "synthetic";
  record.cycles.reserve(static_cast<std::size_t>(profile.num_cycles));

  for (int k = 1; k <= profile.num_cycles; ++k) {
    double mean_cap = synth_mean_capacity(profile, k);
    double cap = mean_cap + util::gaussian(rng, 0.0, 0.1 * profile.noise_std);
    cap = std::clamp(cap, 0.01 * profile.initial_capacity, 2.0 * profile.initial_capacity);

    // Discharge duration shrinks with the delivered capacity.
    int len = static_cast<int>(std::lround(profile.base_cycle_length * mean_cap /
                                           profile.initial_capacity));
    len = std::max(len, 2);

    DischargeCycle cycle;
    cycle.cycle_index = k;
    cycle.capacity_ah = cap;
    cycle.voltage.resize(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
      double t = (len == 1) ? 0.0 : static_cast<double>(i) / (len - 1);
      // Plateau followed by a steep drop toward cutoff, the usual shape of a
      // constant-current discharge trace. Strictly decreasing from 3.3 to 2.0.
      double v = 3.3 - 1.3 * (0.35 * t + 0.65 * std::pow(t, 8.0)) +
                 util::gaussian(rng, 0.0, profile.noise_std);
      cycle.voltage[static_cast<std::size_t>(i)] = std::clamp(v, kVoltageLo, kVoltageHi);
    }
    record.cycles.push_back(std::move(cycle));
  }
  return record;
}

BatteryRecord load_battery(const std::filesystem::path& cycles_path,
                           const std::filesystem::path& capacity_path,
                           const std::string& id,
                           double nominal_capacity_ah) {
  CsvReader cycles_csv(util::read_file(cycles_path));
  CsvReader capacity_csv(util::read_file(capacity_path));

  std::vector<std::string> fields;
  if (!cycles_csv.next(fields) ||
      fields != std::vector<std::string>{"battery_id", "cycle_index", "sample_index", "voltage_v"}) {
    throw SchemaError("cycles file '" + cycles_path.string() +
                      "' must start with header battery_id,cycle_index,sample_index,voltage_v");
  }

  std::string want = id;
  // cycle_index -> (sample_index -> voltage)
  std::map<long, std::map<long, double>> samples;
  std::vector<std::string> seen_ids;
  while (cycles_csv.next(fields)) {
    if (fields.size() != 4) {
      throw SchemaError("cycles file row " + std::to_string(cycles_csv.row) +
                        " has " + std::to_string(fields.size()) + " fields, expected 4");
    }
    if (std::find(seen_ids.begin(), seen_ids.end(), fields[0]) == seen_ids.end()) {
      seen_ids.push_back(fields[0]);
    }
    if (!want.empty() && fields[0] != want) continue;
    long cyc = util::parse_long(fields[1], cycles_csv.row);
    long idx = util::parse_long(fields[2], cycles_csv.row);
    double volt = util::parse_double(fields[3], cycles_csv.row);
    samples[cyc][idx] = volt;
  }

  if (want.empty()) {
    // With no id requested every row was collected; that is only coherent
    // when the file holds a single battery.
    if (seen_ids.size() != 1) {
      throw SchemaError("cycles file holds " + std::to_string(seen_ids.size()) +
                        " battery ids; pass --id to select one");
    }
    want = seen_ids.front();
  }
  if (samples.empty()) {
    throw NotFoundError("battery id '" + want + "' not present in '" +
                        cycles_path.string() + "'");
  }

  if (!capacity_csv.next(fields) ||
      fields != std::vector<std::string>{"battery_id", "cycle_index", "capacity_ah"}) {
    throw SchemaError("capacity file '" + capacity_path.string() +
                      "' must start with header battery_id,cycle_index,capacity_ah");
  }
  std::map<long, double> capacities;
  while (capacity_csv.next(fields)) {
    if (fields.size() != 3) {
      throw SchemaError("capacity file row " + std::to_string(capacity_csv.row) +
                        " has " + std::to_string(fields.size()) + " fields, expected 3");
    }
    if (fields[0] != want) continue;
    long cyc = util::parse_long(fields[1], capacity_csv.row);
    capacities[cyc] = util::parse_double(fields[2], capacity_csv.row);
  }

  BatteryRecord record;
  record.id = want;
  record.nominal_capacity_ah = nominal_capacity_ah;
  for (auto& [cyc, by_index] : samples) {
    auto cap = capacities.find(cyc);
    if (cap == capacities.end()) {
      throw SchemaError("cycle " + std::to_string(cyc) + " of battery '" + want +
                        "' has no capacity row");
    }
    DischargeCycle cycle;
    cycle.cycle_index = static_cast<int>(cyc);
    cycle.capacity_ah = cap->second;
    cycle.voltage.reserve(by_index.size());
    for (auto& [idx, volt] : by_index) cycle.voltage.push_back(volt);
    record.cycles.push_back(std::move(cycle));
  }
  record.validate();
  return record;
}

void save_battery(const BatteryRecord& record,
                  const std::filesystem::path& cycles_path,
                  const std::filesystem::path& capacity_path) {
  record.validate();
  std::string cycles_out = "battery_id,cycle_index,sample_index,voltage_v\n";
  std::string capacity_out = "battery_id,cycle_index,capacity_ah\n";
  for (const auto& c : record.cycles) {
    std::string prefix = record.id + "," + std::to_string(c.cycle_index) + ",";
    for (std::size_t i = 0; i < c.voltage.size(); ++i) {
      cycles_out += prefix;
      cycles_out += std::to_string(i);
      cycles_out += ',';
      cycles_out += util::format_double(c.voltage[i]);
      cycles_out += '\n';
    }
    capacity_out += prefix + util::format_double(c.capacity_ah) + "\n";
  }
  util::atomic_write_file(cycles_path, cycles_out);
  util::atomic_write_file(capacity_path, capacity_out);
}

namespace {
std::filesystem::path stem_cycles(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".cycles.csv";
  return p;
}
std::filesystem::path stem_capacity(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".capacity.csv";
  return p;
}
}  // namespace

BatteryRecord load_battery_stem(const std::filesystem::path& stem, const std::string& id,
                                double nominal_capacity_ah) {
  return load_battery(stem_cycles(stem), stem_capacity(stem), id, nominal_capacity_ah);
}

void save_battery_stem(const BatteryRecord& record, const std::filesystem::path& stem) {
  save_battery(record, stem_cycles(stem), stem_capacity(stem));
}

SynthProfile load_profile(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("profile '" + path.string() + "': " + e.what());
  }
  if (!doc.is_object()) throw SchemaError("profile must be a JSON object");

  SynthProfile p;
  for (auto& [key, value] : doc.items()) {
    try {
      if (key == "initial_capacity") p.initial_capacity = value.get<double>();
      else if (key == "knee_cycle") p.knee_cycle = value.get<int>();
      else if (key == "fade_rate_pre") p.fade_rate_pre = value.get<double>();
      else if (key == "fade_rate_post") p.fade_rate_post = value.get<double>();
      else if (key == "noise_std") p.noise_std = value.get<double>();
      else if (key == "base_cycle_length") p.base_cycle_length = value.get<int>();
      else if (key == "num_cycles") p.num_cycles = value.get<int>();
      else if (key == "seed") p.seed = value.get<std::uint64_t>();
      else throw SchemaError("unknown profile key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("profile key '" + key + "': " + e.what());
    }
  }
  p.validate();
  return p;
}

}  // namespace soh::dataset
