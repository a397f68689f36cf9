#include "soh/eval.hpp"

#include <cmath>

#include "soh/errors.hpp"
#include "soh/io_util.hpp"

namespace soh::eval {

namespace {

void check_pair(std::span<const double> measured, std::span<const double> estimated) {
  if (measured.empty()) throw InvalidInputError("empty metric input");
  if (measured.size() != estimated.size()) {
    throw ShapeError("measured has " + std::to_string(measured.size()) +
                     " entries, estimated has " + std::to_string(estimated.size()));
  }
}

// RFC-4180: quote when a field holds a comma, quote or newline.
std::string csv_field(const std::string& raw) {
  if (raw.find_first_of(",\"\n") == std::string::npos) return raw;
  std::string quoted = "\"";
  for (char c : raw) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

double mae(std::span<const double> measured, std::span<const double> estimated) {
  check_pair(measured, estimated);
  double acc = 0.0;
  for (std::size_t k = 0; k < measured.size(); ++k) {
    acc += std::abs(measured[k] - estimated[k]);
  }
  return acc / double(measured.size());
}

double rmse(std::span<const double> measured, std::span<const double> estimated) {
  check_pair(measured, estimated);
  double acc = 0.0;
  for (std::size_t k = 0; k < measured.size(); ++k) {
    double d = measured[k] - estimated[k];
    acc += d * d;
  }
  return std::sqrt(acc / double(measured.size()));
}

double improvement_pct(double base, double improved) {
  if (!(base > 0.0)) throw InvalidInputError("improvement baseline must be > 0");
  return 100.0 * (base - improved) / base;
}

int improvement_pct_rounded(double base, double improved) {
  return static_cast<int>(std::floor(improvement_pct(base, improved) + 0.5));
}

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  std::string out;
  if (format == ReportFormat::csv) {
    out = "source_id,target_id,similar,method,mae,rmse,improvement_mae_pct,"
          "improvement_rmse_pct\n";
    for (const auto& row : report.rows) {
      out += csv_field(row.source_id) + ',' + csv_field(row.target_id) + ',';
      out += row.similar ? "true," : "false,";
      out += csv_field(row.method) + ',';
      out += util::format_double(row.mae) + ',' + util::format_double(row.rmse) + ',';
      if (row.improvement_mae_pct) out += util::format_double(*row.improvement_mae_pct);
      out += ',';
      if (row.improvement_rmse_pct) out += util::format_double(*row.improvement_rmse_pct);
      out += '\n';
    }
  } else {
    out = "| source | target | similar | method | MAE | RMSE | MAE impr. | RMSE impr. |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& row : report.rows) {
      out += "| " + row.source_id + " | " + row.target_id + " | ";
      out += row.similar ? "yes" : "no";
      std::snprintf(buf, sizeof(buf), " | %s | %.4f | %.4f | ", row.method.c_str(),
                    row.mae, row.rmse);
      out += buf;
      if (row.improvement_mae_pct) {
        out += std::to_string(static_cast<int>(std::floor(*row.improvement_mae_pct + 0.5)));
        out += '%';
      }
      out += " | ";
      if (row.improvement_rmse_pct) {
        out += std::to_string(static_cast<int>(std::floor(*row.improvement_rmse_pct + 0.5)));
        out += '%';
      }
      out += " |\n";
    }
  }
  util::atomic_write_file(path, out);
}

void emit_series(const std::string& x_name, std::span<const double> x,
                 const std::vector<std::pair<std::string, std::vector<double>>>& series,
                 const std::filesystem::path& path) {
  for (const auto& [name, values] : series) {
    if (values.size() != x.size()) {
      throw ShapeError("series '" + name + "' has " + std::to_string(values.size()) +
                       " values, x has " + std::to_string(x.size()));
    }
  }
  std::string out = csv_field(x_name);
  for (const auto& [name, values] : series) {
    out += ',';
    out += csv_field(name);
  }
  out += '\n';
  for (std::size_t i = 0; i < x.size(); ++i) {
    out += util::format_double(x[i]);
    for (const auto& [name, values] : series) {
      out += ',';
      out += util::format_double(values[i]);
    }
    out += '\n';
  }
  util::atomic_write_file(path, out);
}

}  // namespace soh::eval
