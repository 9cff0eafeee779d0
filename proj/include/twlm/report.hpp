// Results grids, marginal-performance tables and their CSV/markdown
// rendering.
#pragma once

#include <string>
#include <vector>

#include "twlm/metrics.hpp"

namespace twlm {

// Rectangular dataset x model grid holding one headline metric value per
// dataset row.
struct ResultsGrid {
  std::vector<std::string> datasets;
  std::vector<std::string> metrics;  // metric code per dataset row
  std::vector<std::string> models;
  std::vector<std::vector<double>> cells;  // [dataset][model]

  double cell(const std::string& dataset, const std::string& model) const;

  // CSV with header "dataset,metric,<model>,...".
  static ResultsGrid from_csv(const std::string& path);
};

// Per-dataset marginal performance of `target` against each reference
// column, plus the full-precision column totals.
struct MarginalPerformanceTable {
  std::string target;
  std::vector<std::string> datasets;
  std::vector<std::string> references;
  std::vector<std::vector<double>> cells;  // [dataset][reference]
  std::vector<double> totals;              // per reference column
};

/// cells[d][r] = marginal_performance(grid[d][r], grid[d][target]); totals
/// sum the unrounded cells.  Throws DataError when a named model or dataset
/// is missing from the grid.
MarginalPerformanceTable build_mp_table(
    const ResultsGrid& grid, const std::string& target,
    const std::vector<std::string>& references);

enum class ReportFormat { csv, markdown };

ReportFormat report_format_from_string(const std::string& s);

// Values are rounded to two decimals at render time only; the markdown
// variant marks each row's best value with a trailing '*'.
std::string render_report(const ResultsGrid& grid, ReportFormat format);
std::string render_report(const MarginalPerformanceTable& table,
                          ReportFormat format);

}  // namespace twlm
