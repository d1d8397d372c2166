#pragma once
// CSV writers for evaluation and ablation output. Cells are minimally quoted
// (only when they contain a comma, quote or newline) and numbers use %.10g so
// identical runs serialize identically.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gca/metrics.hpp"

namespace gca {

inline std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write ", path);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << csv_cell(header[i]);
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) fail("csv row width ", row.size(), " vs ", header.size());
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_cell(row[i]);
    out << "\n";
  }
}

// Layout: one `sample` row per (sample id, class id), then per-class means
// over the split, then the foreground-mean row. An empty hd95 cell means the
// distance was undefined (one mask empty) and was excluded from means.
inline void write_metrics_csv(const std::string& path, const std::vector<Index>& sample_ids,
                              const std::vector<MetricsRecord>& per_sample,
                              const MetricsRecord* summary) {
  if (sample_ids.size() != per_sample.size())
    fail("metrics csv: ", sample_ids.size(), " ids vs ", per_sample.size(), " records");
  std::vector<std::vector<std::string>> rows;
  auto metric_cells = [](const ClassMetrics& c) {
    std::vector<std::string> cells{csv_num(c.dsc), c.hd95_defined ? csv_num(c.hd95) : "",
                                   csv_num(c.iou), csv_num(c.acc), csv_num(c.spe),
                                   csv_num(c.sen)};
    return cells;
  };
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    for (std::size_t k = 0; k < per_sample[i].per_class.size(); ++k) {
      std::vector<std::string> row{"sample", std::to_string(sample_ids[i]), std::to_string(k)};
      for (auto& c : metric_cells(per_sample[i].per_class[k])) row.push_back(c);
      rows.push_back(row);
    }
  }
  if (summary) {
    for (std::size_t k = 0; k < summary->per_class.size(); ++k) {
      std::vector<std::string> row{"class_mean", "", std::to_string(k)};
      for (auto& c : metric_cells(summary->per_class[k])) row.push_back(c);
      rows.push_back(row);
    }
    rows.push_back({"mean", "", "", csv_num(summary->mdsc),
                    summary->hd95_count > 0 ? csv_num(summary->mhd95) : "",
                    csv_num(summary->miou), csv_num(summary->macc), csv_num(summary->mspe),
                    csv_num(summary->msen)});
  }
  write_csv(path, {"kind", "sample", "class", "dsc", "hd95", "iou", "acc", "spe", "sen"}, rows);
}

}  // namespace gca
