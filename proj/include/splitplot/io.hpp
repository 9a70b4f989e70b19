#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/population.hpp"

namespace splitplot {

// Minimal CSV table: name-addressed columns, no quoting (numeric and id
// data only), LF or CRLF endings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  int require_column(const std::string& name) const {
    const int idx = column(name);
    if (idx < 0) throw SchemaError("missing CSV column: " + name);
    return idx;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& field, const char* what) {
  try {
    size_t pos = 0;
    const double value = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return value;
  } catch (const std::exception&) {
    throw SchemaError(std::string("cannot parse ") + what + " value '" +
                      field + "'");
  }
}

inline long parse_long(const std::string& field, const char* what) {
  try {
    size_t pos = 0;
    const long value = std::stol(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return value;
  } catch (const std::exception&) {
    throw SchemaError(std::string("cannot parse ") + what + " value '" +
                      field + "'");
  }
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(detail::trim(field));
    if (line.back() == ',') fields.push_back("");
    if (first) {
      table.header = fields;
      first = false;
    } else {
      if (fields.size() != table.header.size())
        throw SchemaError("CSV row has " + std::to_string(fields.size()) +
                          " fields, header has " +
                          std::to_string(table.header.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) throw SchemaError("empty CSV input");
  return table;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file: " + path);
  return read_csv(in);
}

enum class IngestMode {
  design_only,  // plot ids + m_b1 (+ covariates): randomize / rerandomize
  analyze,      // + a_level, b_level, outcome
  oracle        // + four potential outcome columns
};

struct IngestSchema {
  IngestMode mode = IngestMode::design_only;
  std::vector<std::string> x_columns;
  std::vector<std::string> v_columns;
  std::string plot_column = "whole_plot_id";
  std::string b1_size_column = "m_b1";
  std::string outcome_column = "outcome";
  std::string a_column = "a_level";
  std::string b_column = "b_level";
  std::vector<std::string> potential_columns = {"y00", "y01", "y10", "y11"};
  int w1 = 0;                    // required unless mode == analyze
  bool drop_degenerate = false;  // drop single-subplot whole plots
};

struct IngestResult {
  DesignSpec design;
  PopulationData population;
  std::optional<Assignment> assignment;  // analyze mode
  std::vector<std::string> plot_ids;     // in file order, post-drop
  std::vector<std::string> dropped_plot_ids;
  std::vector<std::string> warnings;
};

// Groups rows by whole plot preserving file order and assembles the design,
// covariates, outcomes, and (in analyze mode) the realized assignment.
// Single-subplot whole plots are rejected unless drop_degenerate is set, in
// which case they are dropped with a warning and W decremented.
inline IngestResult ingest_csv(const CsvTable& table,
                               const IngestSchema& schema) {
  const int plot_col = table.require_column(schema.plot_column);
  IngestResult out;

  // Plot grouping in first-appearance order.
  std::vector<std::string> plot_order;
  std::map<std::string, std::vector<int>> plot_rows;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& id = table.rows[r][plot_col];
    auto it = plot_rows.find(id);
    if (it == plot_rows.end()) {
      plot_order.push_back(id);
      plot_rows[id] = {static_cast<int>(r)};
    } else {
      it->second.push_back(static_cast<int>(r));
    }
  }

  std::vector<std::string> kept;
  for (const std::string& id : plot_order) {
    if (plot_rows[id].size() == 1) {
      if (!schema.drop_degenerate)
        throw DegenerateWholePlot(
            "whole plot '" + id +
            "' has a single subplot; within-plot covariances are undefined. "
            "Drop such plots (the usual practice) via --drop-degenerate.");
      out.dropped_plot_ids.push_back(id);
      out.warnings.push_back("dropped single-subplot whole plot '" + id +
                             "'");
      continue;
    }
    kept.push_back(id);
  }
  out.plot_ids = kept;
  if (kept.size() < 2)
    throw CountMismatch("fewer than two whole plots after ingestion");

  // Row index remap (flattened in plot order).
  std::vector<int> flat_rows;
  for (const std::string& id : kept)
    for (int r : plot_rows[id]) flat_rows.push_back(r);
  const int n = static_cast<int>(flat_rows.size());

  // Design sizes.
  int a1_plots = 0;
  const int a_col = schema.mode == IngestMode::analyze
                        ? table.require_column(schema.a_column)
                        : -1;
  const int b_col = schema.mode == IngestMode::analyze
                        ? table.require_column(schema.b_column)
                        : -1;
  const int m_b1_col = schema.mode == IngestMode::analyze
                           ? -1
                           : table.require_column(schema.b1_size_column);
  Assignment asg;
  for (const std::string& id : kept) {
    const std::vector<int>& rows = plot_rows[id];
    PlotSize plot;
    plot.size = static_cast<int>(rows.size());
    if (schema.mode == IngestMode::analyze) {
      long a_first = detail::parse_long(table.rows[rows[0]][a_col], "a_level");
      int b1 = 0;
      for (int r : rows) {
        if (detail::parse_long(table.rows[r][a_col], "a_level") != a_first)
          throw CountMismatch("whole plot '" + id +
                              "' mixes factor-A levels");
        const long b = detail::parse_long(table.rows[r][b_col], "b_level");
        if (b != 0 && b != 1)
          throw SchemaError("b_level must be 0 or 1");
        b1 += static_cast<int>(b);
        asg.b_levels.push_back(static_cast<std::uint8_t>(b));
      }
      if (a_first != 0 && a_first != 1)
        throw SchemaError("a_level must be 0 or 1");
      asg.a_levels.push_back(static_cast<std::uint8_t>(a_first));
      a1_plots += static_cast<int>(a_first);
      plot.b1_size = b1;
    } else {
      const long m_b1 =
          detail::parse_long(table.rows[rows[0]][m_b1_col], "m_b1");
      for (int r : rows)
        if (detail::parse_long(table.rows[r][m_b1_col], "m_b1") != m_b1)
          throw CountMismatch("whole plot '" + id +
                              "' has inconsistent m_b1 values");
      plot.b1_size = static_cast<int>(m_b1);
    }
    out.design.plots.push_back(plot);
  }
  out.design.w1 = schema.mode == IngestMode::analyze ? a1_plots : schema.w1;
  if (schema.mode == IngestMode::analyze) out.assignment = std::move(asg);

  // Covariates and outcomes.
  auto read_matrix = [&](const std::vector<std::string>& names) {
    Eigen::MatrixXd m(n, static_cast<int>(names.size()));
    for (size_t c = 0; c < names.size(); ++c) {
      const int col = table.require_column(names[c]);
      for (int i = 0; i < n; ++i)
        m(i, static_cast<int>(c)) = detail::parse_double(
            table.rows[flat_rows[i]][col], names[c].c_str());
    }
    return m;
  };
  out.population.design_covariates = read_matrix(schema.x_columns);
  if (!schema.v_columns.empty()) {
    out.population.analysis_covariates = read_matrix(schema.v_columns);
    // x = C v when the design covariates are a named subset of the
    // analysis covariates.
    bool subset = true;
    std::vector<int> positions;
    for (const auto& xc : schema.x_columns) {
      const auto it = std::find(schema.v_columns.begin(),
                                schema.v_columns.end(), xc);
      if (it == schema.v_columns.end()) {
        subset = false;
        break;
      }
      positions.push_back(
          static_cast<int>(it - schema.v_columns.begin()));
    }
    if (subset && !schema.x_columns.empty()) {
      out.population.linking = Eigen::MatrixXd::Zero(
          static_cast<int>(schema.x_columns.size()),
          static_cast<int>(schema.v_columns.size()));
      for (size_t i = 0; i < positions.size(); ++i)
        out.population.linking(static_cast<int>(i), positions[i]) = 1.0;
    }
  } else {
    out.population.analysis_covariates = out.population.design_covariates;
    if (!schema.x_columns.empty())
      out.population.linking = Eigen::MatrixXd::Identity(
          static_cast<int>(schema.x_columns.size()),
          static_cast<int>(schema.x_columns.size()));
  }

  if (schema.mode == IngestMode::analyze) {
    const int y_col = table.require_column(schema.outcome_column);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i)
      y[i] =
          detail::parse_double(table.rows[flat_rows[i]][y_col], "outcome");
    out.population.observed = y;
  } else if (schema.mode == IngestMode::oracle) {
    Eigen::MatrixXd pot(n, 4);
    for (int z = 0; z < 4; ++z) {
      const int col = table.require_column(schema.potential_columns[z]);
      for (int i = 0; i < n; ++i)
        pot(i, z) = detail::parse_double(table.rows[flat_rows[i]][col],
                                         "potential outcome");
    }
    out.population.potential = pot;
  }
  return out;
}

inline void write_assignment_csv(const ValidatedDesign& design,
                                 const Assignment& asg,
                                 const std::vector<std::string>& plot_ids,
                                 std::ostream& out) {
  out << "whole_plot_id,subplot_id,a_level,b_level\n";
  for (int w = 0; w < design.whole_plots(); ++w) {
    const std::string id = w < static_cast<int>(plot_ids.size())
                               ? plot_ids[w]
                               : std::to_string(w);
    const int off = design.unit_offset(w);
    for (int s = 0; s < design.plot(w).size; ++s)
      out << id << ',' << s << ',' << int(asg.a_levels[w]) << ','
          << int(asg.b_levels[off + s]) << '\n';
  }
}

}  // namespace splitplot
