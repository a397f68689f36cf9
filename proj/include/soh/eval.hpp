#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace soh::eval {

double mae(std::span<const double> measured, std::span<const double> estimated);
double rmse(std::span<const double> measured, std::span<const double> estimated);

// 100 * (base - new) / base; base must be positive.
double improvement_pct(double base, double improved);
// Half-up integer rounding for display, as accuracy tables report it.
int improvement_pct_rounded(double base, double improved);

struct ReportRow {
  std::string source_id;
  std::string target_id;
  bool similar = false;
  std::string method;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> improvement_mae_pct;   // vs the baseline row, if any
  std::optional<double> improvement_rmse_pct;
};

struct EvalReport {
  std::vector<ReportRow> rows;
};

enum class ReportFormat { csv, markdown };

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path);

// One x column plus one column per named series; lengths must agree.
void emit_series(const std::string& x_name, std::span<const double> x,
                 const std::vector<std::pair<std::string, std::vector<double>>>& series,
                 const std::filesystem::path& path);

}  // namespace soh::eval
