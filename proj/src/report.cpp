#include "twlm/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "twlm/error.hpp"

namespace twlm {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

double ResultsGrid::cell(const std::string& dataset,
                         const std::string& model) const {
  const auto di = std::find(datasets.begin(), datasets.end(), dataset);
  if (di == datasets.end()) {
    throw DataError("grid is missing dataset " + dataset);
  }
  const auto mi = std::find(models.begin(), models.end(), model);
  if (mi == models.end()) {
    throw DataError("grid is missing model " + model);
  }
  return cells[static_cast<std::size_t>(di - datasets.begin())]
              [static_cast<std::size_t>(mi - models.begin())];
}

ResultsGrid ResultsGrid::from_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open grid: " + path);
  std::string line;
  std::size_t lineno = 0;
  ResultsGrid grid;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() < 3 || fields[0] != "dataset" ||
          fields[1] != "metric") {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": grid header must be dataset,metric,<model>,...");
      }
      grid.models.assign(fields.begin() + 2, fields.end());
      have_header = true;
      continue;
    }
    if (fields.size() != grid.models.size() + 2) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected " + std::to_string(grid.models.size() + 2) +
                      " fields");
    }
    grid.datasets.push_back(fields[0]);
    grid.metrics.push_back(fields[1]);
    std::vector<double> row;
    for (std::size_t i = 2; i < fields.size(); ++i) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(fields[i], &pos));
        if (pos != fields[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": bad number: " + fields[i]);
      }
    }
    grid.cells.push_back(std::move(row));
  }
  if (!have_header || grid.datasets.empty()) {
    throw DataError(path + ": empty grid");
  }
  return grid;
}

MarginalPerformanceTable build_mp_table(
    const ResultsGrid& grid, const std::string& target,
    const std::vector<std::string>& references) {
  MarginalPerformanceTable table;
  table.target = target;
  table.datasets = grid.datasets;
  table.references = references;
  table.totals.assign(references.size(), 0.0);
  for (const std::string& ds : grid.datasets) {
    const double target_value = grid.cell(ds, target);
    std::vector<double> row;
    for (std::size_t r = 0; r < references.size(); ++r) {
      const double mp =
          marginal_performance(grid.cell(ds, references[r]), target_value);
      row.push_back(mp);
      table.totals[r] += mp;
    }
    table.cells.push_back(std::move(row));
  }
  return table;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "md" || s == "markdown") return ReportFormat::markdown;
  throw UsageError("unknown report format: " + s);
}

std::string render_report(const ResultsGrid& grid, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::csv) {
    out += "dataset,metric";
    for (const auto& m : grid.models) out += "," + m;
    out += "\n";
    for (std::size_t d = 0; d < grid.datasets.size(); ++d) {
      out += grid.datasets[d] + "," + grid.metrics[d];
      for (const double v : grid.cells[d]) out += "," + fmt2(v);
      out += "\n";
    }
    return out;
  }
  out += "| dataset | metric |";
  for (const auto& m : grid.models) out += " " + m + " |";
  out += "\n|---|---|";
  for (std::size_t i = 0; i < grid.models.size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t d = 0; d < grid.datasets.size(); ++d) {
    const double best =
        *std::max_element(grid.cells[d].begin(), grid.cells[d].end());
    out += "| " + grid.datasets[d] + " | " + grid.metrics[d] + " |";
    for (const double v : grid.cells[d]) {
      out += " " + fmt2(v) + (v == best ? "*" : "") + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_report(const MarginalPerformanceTable& table,
                          ReportFormat format) {
  std::string out;
  if (format == ReportFormat::csv) {
    out += "dataset";
    for (const auto& r : table.references) out += "," + r;
    out += "\n";
    for (std::size_t d = 0; d < table.datasets.size(); ++d) {
      out += table.datasets[d];
      for (const double v : table.cells[d]) out += "," + fmt2(v);
      out += "\n";
    }
    out += "TOTAL";
    for (const double v : table.totals) out += "," + fmt2(v);
    out += "\n";
    return out;
  }
  out += "| dataset |";
  for (const auto& r : table.references) out += " " + r + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < table.references.size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t d = 0; d < table.datasets.size(); ++d) {
    const double best =
        *std::max_element(table.cells[d].begin(), table.cells[d].end());
    out += "| " + table.datasets[d] + " |";
    for (const double v : table.cells[d]) {
      out += " " + fmt2(v) + (v == best ? "*" : "") + " |";
    }
    out += "\n";
  }
  out += "| TOTAL |";
  for (const double v : table.totals) out += " " + fmt2(v) + " |";
  out += "\n";
  return out;
}

}  // namespace twlm
