#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrd/estimation.hpp"
#include "mrd/led_dgp.hpp"

namespace mrd {

// One estimator variant in the grid: design x learner x subset flag.
struct EstimatorCell {
  bool fuzzy = false;
  bool subset = false;
  LearnerSpec learner;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  int repetitions = 250;
  std::int64_t n_lots = 10000;
  OperatorPolicy policy = OperatorPolicy::Cautious;
  LotConfig lot;
  Kernel kernel = Kernel::Triangular;
  BandwidthSpec bandwidth = BandwidthSpec::mse_optimal();
  std::vector<std::string> axes = {"x_d"};  // x_d, x_y, binding, euclidean
  std::vector<EstimatorCell> cells;
  std::string omega_distance = "x_y <= 0";  // exclusion set per axis
  std::string omega_yield = "x_d <= 0";
};

struct MetricsRow {
  std::string setting;
  std::string method;
  double mean_bias = 0.0;
  double se_est_mean = 0.0;
  double se_empirical = 0.0;
  double coverage = 0.0;
  double rmse_left = 0.0, logloss_left = 0.0;
  double rmse_right = 0.0, logloss_right = 0.0;
  double coverage_grand = 0.0;  // against the grand-mean oracle
  int failures = 0;
  int reps = 0;
};

struct RawEstimateRow {
  int rep = 0;
  std::string setting;
  std::string method;
  bool failed = false;
  std::string error;
  double oracle = 0.0;
  RdEstimate estimate;
};

struct ExperimentReport {
  std::vector<MetricsRow> metrics;
  std::vector<RawEstimateRow> raw;
};

// display name used in the result tables
std::string method_display_name(LearnerKind k);
std::string cell_setting(const std::string& axis, const EstimatorCell& cell);

std::uint64_t rep_seed(std::uint64_t master_seed, int rep);

// the default estimator grid: every learner in both designs, full and subset
std::vector<EstimatorCell> default_grid();

ExperimentReport run_experiment(const ExperimentConfig& cfg);

// aggregation of one (setting, method) cell; exposed for direct testing
MetricsRow compute_metrics(const std::string& setting, const std::string& method,
                           const std::vector<RawEstimateRow>& cell_rows);

enum class TableFormat { Csv, Json, Markdown };

std::string emit_table(const std::vector<MetricsRow>& rows, TableFormat format);
std::vector<MetricsRow> parse_metrics_csv(const std::string& csv_text);

std::string emit_raw_csv(const std::vector<RawEstimateRow>& rows);

}  // namespace mrd
