#pragma once

// Comparison table across runs: one row per run, with a Pareto flag on
// (final new-task accuracy: higher is better, cumulative forgetting: lower
// is better).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "finch/errors.hpp"
#include "finch/format.hpp"

namespace finch {

struct SummaryRow {
  std::string label;
  std::string schedule;
  double final_new_loss = std::numeric_limits<double>::quiet_NaN();
  double final_new_accuracy = std::numeric_limits<double>::quiet_NaN();
  double cumulative_forgetting = std::numeric_limits<double>::quiet_NaN();
  double min_slack = std::numeric_limits<double>::quiet_NaN();
  double clamp_active_fraction = 0.0;
  bool pareto = false;
  std::string status = "ok";  // anything else marks a failed row

  bool ok() const { return status == "ok"; }
};

struct ComparisonSummary {
  std::vector<SummaryRow> rows;
};

/// a dominates b: no worse on both axes and strictly better on one.
inline bool dominates(const SummaryRow& a, const SummaryRow& b) {
  const bool no_worse = a.final_new_accuracy >= b.final_new_accuracy && a.cumulative_forgetting <= b.cumulative_forgetting;
  const bool better = a.final_new_accuracy > b.final_new_accuracy || a.cumulative_forgetting < b.cumulative_forgetting;
  return no_worse && better;
}

/// Failed rows are never on the front and never dominate.
inline void mark_pareto(ComparisonSummary& s) {
  for (auto& r : s.rows) {
    r.pareto = r.ok() && std::none_of(s.rows.begin(), s.rows.end(),
                                      [&](const SummaryRow& o) { return o.ok() && dominates(o, r); });
  }
}

/// Descending new-task accuracy; failed rows last; ties keep input order.
inline void sort_by_new_task(ComparisonSummary& s) {
  std::stable_sort(s.rows.begin(), s.rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    if (a.ok() != b.ok()) return a.ok();
    if (!a.ok()) return false;
    return a.final_new_accuracy > b.final_new_accuracy;
  });
}

inline constexpr std::string_view kSummaryCsvHeader =
    "label,schedule,final_new_loss,final_new_accuracy,cumulative_forgetting,min_slack,clamp_active_fraction,pareto,"
    "status";

namespace detail {
inline std::string csv_cell(const std::string& s) {
  std::string out;
  for (const char ch : s) out += (ch == ',' || ch == '\n' || ch == '\r') ? ';' : ch;
  return out;
}
}  // namespace detail

inline void write_summary_csv(std::ostream& out, const ComparisonSummary& s) {
  out << kSummaryCsvHeader << '\n';
  for (const auto& r : s.rows) {
    out << detail::csv_cell(r.label) << ',' << detail::csv_cell(r.schedule) << ',' << format_double(r.final_new_loss)
        << ',' << format_double(r.final_new_accuracy) << ',' << format_double(r.cumulative_forgetting) << ','
        << format_double(r.min_slack) << ',' << format_double(r.clamp_active_fraction) << ',' << (r.pareto ? 1 : 0)
        << ',' << detail::csv_cell(r.status) << '\n';
  }
}

inline ComparisonSummary read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSummaryCsvHeader) throw ParseError("summary CSV header mismatch", 1, 1);
  ComparisonSummary s;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw ParseError("summary CSV row needs 9 cells", line_no, 1);
    auto real = [&](std::size_t i) {
      const auto v = parse_double(cells[i]);
      if (!v) throw ParseError("malformed number '" + cells[i] + "'", line_no, i + 1);
      return *v;
    };
    SummaryRow r;
    r.label = cells[0];
    r.schedule = cells[1];
    r.final_new_loss = real(2);
    r.final_new_accuracy = real(3);
    r.cumulative_forgetting = real(4);
    r.min_slack = real(5);
    r.clamp_active_fraction = real(6);
    r.pareto = cells[7] == "1";
    r.status = cells[8];
    s.rows.push_back(std::move(r));
  }
  return s;
}

}  // namespace finch
