#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/dynamics.hpp"
#include "tmcl/mcl.hpp"

namespace tmcl {

/// Fraction of each environment parameter's segments routed to each head.
struct AssignmentTable {
  std::vector<double> labels;                   // sorted ascending
  std::vector<std::vector<double>> fractions;   // labels x heads, rows sum to 1
  std::vector<int> segment_counts;              // per label
  int heads = 0;
  int unlabeled_trajectories = 0;

  /// Maximum fraction of row `row`.
  double purity(std::size_t row) const;
  double mean_purity() const;
  /// Head with the largest fraction in `row` (lowest index on ties).
  int dominant_head(std::size_t row) const;
};

/// Aggregates the chunk assignments by the trajectories' diagnostic labels.
/// Trajectories without a label (NaN) are skipped and counted.
AssignmentTable assignment_table(const ReplayBuffer& buffer, const DatasetAssignments& assignments,
                                 int heads);
AssignmentTable compute_assignment_table(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                                         int m);

struct SampleStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // n - 1 denominator; 0 for a single value
};
SampleStats sample_stats(const std::vector<double>& values);
/// sqrt((s_a^2 + s_b^2) / 2)
double pooled_stddev(const SampleStats& a, const SampleStats& b);

/// Headered CSV with RFC-4180 quoting.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string str() const;
  /// Throws std::runtime_error if the file cannot be written.
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string csv_escape(const std::string& field);
/// Inverse of CsvTable::str(); used to check emitted files.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace tmcl
