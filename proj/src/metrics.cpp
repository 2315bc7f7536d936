#include "tmcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "tmcl/errors.hpp"

namespace tmcl {

double AssignmentTable::purity(std::size_t row) const {
  const auto& r = fractions.at(row);
  return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
}

double AssignmentTable::mean_purity() const {
  if (fractions.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < fractions.size(); ++i) sum += purity(i);
  return sum / static_cast<double>(fractions.size());
}

int AssignmentTable::dominant_head(std::size_t row) const {
  const auto& r = fractions.at(row);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

AssignmentTable assignment_table(const ReplayBuffer& buffer, const DatasetAssignments& assignments,
                                 int heads) {
  if (heads < 1) throw ConfigurationError("assignment table needs at least one head");
  if (assignments.chunk_heads().size() != buffer.trajectory_count()) {
    throw ConfigurationError("assignments do not cover the buffer");
  }
  AssignmentTable table;
  table.heads = heads;
  std::map<double, std::vector<int>> counts;
  for (std::size_t t = 0; t < buffer.trajectory_count(); ++t) {
    const double label = buffer.trajectory(t).label;
    if (std::isnan(label)) {
      ++table.unlabeled_trajectories;
      continue;
    }
    auto& row = counts[label];
    row.resize(static_cast<std::size_t>(heads), 0);
    for (int h : assignments.chunk_heads()[t]) {
      if (h < 0 || h >= heads) throw ConfigurationError("assignment names a missing head");
      ++row[static_cast<std::size_t>(h)];
    }
  }
  for (const auto& [label, row] : counts) {
    int total = 0;
    for (int c : row) total += c;
    if (total == 0) continue;
    table.labels.push_back(label);
    table.segment_counts.push_back(total);
    std::vector<double> f(row.size());
    for (std::size_t h = 0; h < row.size(); ++h) f[h] = static_cast<double>(row[h]) / total;
    table.fractions.push_back(std::move(f));
  }
  return table;
}

AssignmentTable compute_assignment_table(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                                         int m) {
  return assignment_table(buffer, compute_assignments(model, buffer, m), model.num_heads());
}

SampleStats sample_stats(const std::vector<double>& values) {
  SampleStats s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

double pooled_stddev(const SampleStats& a, const SampleStats& b) {
  return std::sqrt(0.5 * (a.stddev * a.stddev + b.stddev * b.stddev));
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw ConfigurationError("CSV header must not be empty");
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw ConfigurationError("CSV row has " + std::to_string(row.size()) + " fields, header has " +
                             std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  const auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(fields[i]);
    }
    out += "\r\n";
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << str();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ConfigurationError("unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tmcl
