#pragma once

#include "polyreg/estimators/estimators.hpp"
#include "polyreg/poly/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace polyreg::bench {

enum class MethodKind { Lse, Ransac, Irwls, Network };

struct Method {
  std::string name;
  MethodKind kind = MethodKind::Lse;
  /// Network checkpoint path (weights; the manifest sits next to it).
  std::string checkpoint;
  RansacConfig ransac;
  IrwlsConfig irwls;
};

/// "lse", "ransac", "irwls", or "<label>=<checkpoint path>" for a network.
Method parse_method(const std::string& text);

struct BenchSuite {
  ModelSpec spec = ModelSpec::scalar();
  DomainGrid grid = DomainGrid::line(64);
  std::vector<Method> methods;
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  double noise_sigma = 0.01;
  int trials = 200;
  std::uint64_t seed = 0;
  /// Worker threads for independent cells.
  int jobs = 1;

  /// Defaults for a spec: its training grid and table noise.
  static BenchSuite for_spec(const ModelSpec& spec);
  void validate() const;
};

struct CellResult {
  std::string method;
  double ratio = 0.0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation of the per-trial errors
  int trials = 0;
  int failures = 0;  // trials where the method threw; excluded from mean/std
  bool operator==(const CellResult&) const = default;
};

struct BenchResults {
  std::vector<std::string> methods;
  std::vector<double> ratios;
  /// Method-major: cells[m * ratios.size() + r].
  std::vector<CellResult> cells;

  const CellResult& cell(std::size_t method, std::size_t ratio) const;
  /// Plain mean of a method's cell means over all ratios.
  double average(std::size_t method) const;
  /// Index of the method with the smallest mean in a ratio column (first on ties).
  std::size_t best_in_column(std::size_t ratio) const;
  std::size_t best_average() const;
  int total_failures() const;
};

/// Every method sees identical trial data per ratio. Deterministic given the
/// suite, independent of `jobs`. Throws ConfigError for an unusable checkpoint.
BenchResults run_suite(const BenchSuite& suite);

/// Text table with an Average column; the best entry of each column is
/// marked with '*'.
std::string render_table(const BenchResults& results);

/// CSV "method,ratio,mean,std,trials" in method-major order.
void write_csv(const BenchResults& results, std::ostream& out);
BenchResults read_csv(std::istream& in);

/// Writes `csv_path` and `csv_path` with a ".txt" suffix holding the table.
void emit_report(const BenchResults& results, const std::string& csv_path);

}  // namespace polyreg::bench
