#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrd/config.hpp"
#include "mrd/mc.hpp"

using namespace mrd;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig cfg;
  cfg.master_seed = 5;
  cfg.repetitions = 3;
  cfg.n_lots = 500;
  cfg.policy = OperatorPolicy::Cautious;
  cfg.lot.n_items = 196;
  cfg.lot.m = 14;
  cfg.axes = {"x_d"};
  EstimatorCell sharp_cell;
  sharp_cell.fuzzy = false;
  sharp_cell.learner = LearnerSpec::of(LearnerKind::NoAdjust);
  EstimatorCell fuzzy_cell;
  fuzzy_cell.fuzzy = true;
  fuzzy_cell.learner = LearnerSpec::of(LearnerKind::NoAdjust);
  EstimatorCell subset_cell = fuzzy_cell;
  subset_cell.subset = true;
  cfg.cells = {sharp_cell, fuzzy_cell, subset_cell};
  return cfg;
}

}  // namespace

TEST_CASE("a single repetition reproduces a direct estimation call") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.repetitions = 1;
  const ExperimentReport report = run_experiment(cfg);

  // recompute by hand with the derived per-rep seed
  const std::uint64_t seed = rep_seed(cfg.master_seed, 0);
  const SimPanel panel = simulate_panel(seed, cfg.n_lots, cfg.lot, cfg.policy);
  EstimationInput in;
  in.x = panel.x_d;
  in.y = panel.y;
  in.d.assign(panel.d.begin(), panel.d.end());
  in.t.assign(panel.t.begin(), panel.t.end());
  in.z = panel.z;
  in.unit_id = panel.lot_id;
  EstimatorOptions opt;
  opt.seed = seed;
  const RdEstimate direct = sharp_estimate(in, opt);

  REQUIRE_FALSE(report.raw.empty());
  const RawEstimateRow& row = report.raw[0];
  CHECK(row.setting == "x_d sharp");
  CHECK_FALSE(row.failed);
  CHECK(row.estimate.coef == direct.coef);
  CHECK(row.estimate.se == direct.se);
}

TEST_CASE("extending the repetition count keeps the prefix bit-identical") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.repetitions = 2;
  const ExperimentReport short_run = run_experiment(cfg);
  cfg.repetitions = 4;
  const ExperimentReport long_run = run_experiment(cfg);
  for (const RawEstimateRow& row : short_run.raw) {
    bool found = false;
    for (const RawEstimateRow& other : long_run.raw) {
      if (other.rep == row.rep && other.setting == row.setting &&
          other.method == row.method) {
        CHECK(other.estimate.coef == row.estimate.coef);
        CHECK(other.oracle == row.oracle);
        found = true;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("compute_metrics matches a hand calculation") {
  std::vector<RawEstimateRow> rows(3);
  const double coefs[3] = {0.10, 0.12, 0.08};
  const double ses[3] = {0.02, 0.03, 0.04};
  for (int i = 0; i < 3; ++i) {
    rows[i].rep = i;
    rows[i].oracle = 0.09;
    rows[i].estimate.coef = coefs[i];
    rows[i].estimate.se = ses[i];
    rows[i].estimate.ci_low = coefs[i] - 1.96 * ses[i];
    rows[i].estimate.ci_high = coefs[i] + 1.96 * ses[i];
  }
  const MetricsRow m = compute_metrics("s", "m", rows);
  // bias: mean(coef) - oracle = 0.10 - 0.09
  CHECK(m.mean_bias == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.se_est_mean == doctest::Approx(0.03).epsilon(1e-12));
  // empirical sd of {0.10, 0.12, 0.08} = 0.02
  CHECK(m.se_empirical == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(m.coverage == doctest::Approx(1.0));
  CHECK(m.failures == 0);
  CHECK(m.reps == 3);

  // nine of ten intervals covering gives 0.9
  std::vector<RawEstimateRow> ten(10);
  for (int i = 0; i < 10; ++i) {
    ten[i].oracle = 0.0;
    ten[i].estimate.coef = 0.0;
    ten[i].estimate.ci_low = i == 0 ? 0.5 : -1.0;
    ten[i].estimate.ci_high = 1.0;
  }
  CHECK(compute_metrics("s", "m", ten).coverage == doctest::Approx(0.9));

  // estimates identical to the oracle: zero bias, zero spread
  std::vector<RawEstimateRow> exact(4);
  for (auto& r : exact) {
    r.oracle = 0.05;
    r.estimate.coef = 0.05;
    r.estimate.ci_low = 0.0;
    r.estimate.ci_high = 0.1;
  }
  const MetricsRow me = compute_metrics("s", "m", exact);
  CHECK(me.mean_bias == doctest::Approx(0.0));
  CHECK(me.se_empirical == doctest::Approx(0.0));
}

TEST_CASE("failures are isolated per cell") {
  std::vector<RawEstimateRow> rows(4);
  for (int i = 0; i < 4; ++i) {
    rows[i].rep = i;
    rows[i].oracle = 0.0;
    rows[i].estimate.coef = 0.1;
    rows[i].estimate.ci_low = -1;
    rows[i].estimate.ci_high = 1;
  }
  rows[2].failed = true;
  rows[2].error = "weak identification";
  const MetricsRow m = compute_metrics("s", "m", rows);
  CHECK(m.failures == 1);
  CHECK(m.reps == 4);
  CHECK(m.mean_bias == doctest::Approx(0.1));

  // an all-failed cell yields NaN metrics but does not throw
  for (auto& r : rows) r.failed = true;
  const MetricsRow all = compute_metrics("s", "m", rows);
  CHECK(all.failures == 4);
  CHECK(std::isnan(all.mean_bias));
}

TEST_CASE("emit_table renders csv, json and markdown") {
  MetricsRow sharp_row;
  sharp_row.setting = "x_d sharp";
  sharp_row.method = "RDD Without Covs";
  sharp_row.mean_bias = -0.004;
  sharp_row.se_est_mean = 0.0063;
  sharp_row.se_empirical = 0.0061;
  sharp_row.coverage = 0.924;
  sharp_row.rmse_left = std::numeric_limits<double>::quiet_NaN();
  sharp_row.logloss_left = std::numeric_limits<double>::quiet_NaN();
  sharp_row.rmse_right = std::numeric_limits<double>::quiet_NaN();
  sharp_row.logloss_right = std::numeric_limits<double>::quiet_NaN();
  sharp_row.coverage_grand = 0.93;
  MetricsRow fuzzy_row = sharp_row;
  fuzzy_row.setting = "x_d fuzzy";
  fuzzy_row.method = "RDFlex Lasso";
  fuzzy_row.rmse_left = 0.0242;
  fuzzy_row.logloss_left = 0.0787;
  fuzzy_row.rmse_right = 0.0897;
  fuzzy_row.logloss_right = 0.5645;

  const std::vector<MetricsRow> rows = {sharp_row, fuzzy_row};
  const std::string csv = emit_table(rows, TableFormat::Csv);
  // sharp rows leave the first-stage cells blank
  CHECK(csv.find("x_d sharp,RDD Without Covs,-0.004,0.0063,0.0061,0.924,,,,") !=
        std::string::npos);
  CHECK(csv.find("0.5645") != std::string::npos);

  const std::vector<MetricsRow> back = parse_metrics_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].setting == sharp_row.setting);
  CHECK(back[0].mean_bias == sharp_row.mean_bias);
  CHECK(std::isnan(back[0].rmse_left));
  CHECK(back[1].logloss_right == fuzzy_row.logloss_right);

  const std::string md = emit_table(rows, TableFormat::Markdown);
  CHECK(md.find("| x_d sharp | RDD Without Covs |") != std::string::npos);
  const std::string js = emit_table(rows, TableFormat::Json);
  CHECK(js.find("\"rmse_left\": null") != std::string::npos);
  CHECK(js.find("\"coverage\": 0.924") != std::string::npos);
}

TEST_CASE("mc experiment on the cautious process produces sane cells") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.repetitions = 4;
  cfg.n_lots = 800;
  const ExperimentReport report = run_experiment(cfg);
  REQUIRE(report.metrics.size() == 3);
  for (const MetricsRow& row : report.metrics) {
    CHECK(row.reps == 4);
    if (row.failures < row.reps) {
      CHECK(std::isfinite(row.mean_bias));
      CHECK(row.coverage >= 0.0);
      CHECK(row.coverage <= 1.0);
    }
  }
  // raw rows: one per rep/cell
  CHECK(report.raw.size() == 3 * 4);
}

TEST_CASE("experiment config round trips through json") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.axes = {"x_d", "x_y"};
  const nlohmann::json echo = experiment_to_json(cfg);
  const ExperimentConfig back = experiment_from_json(echo);
  CHECK(back.master_seed == cfg.master_seed);
  CHECK(back.repetitions == cfg.repetitions);
  CHECK(back.n_lots == cfg.n_lots);
  CHECK(back.policy == cfg.policy);
  CHECK(back.axes == cfg.axes);
  CHECK(back.lot.n_items == cfg.lot.n_items);
  CHECK(back.lot.c_y == cfg.lot.c_y);
  CHECK(back.cells.size() == cfg.cells.size());
}

TEST_CASE("toml and json configs parse to the same tree") {
  const std::string toml = R"(
# experiment setup
[mc]
seed = 7
repetitions = 5
policy = "cautious"
axes = ["x_d", "x_y"]

[led]
n_items = 196
m = 14
target = [0.33, 0.33]
c_y = 0.12
)";
  const nlohmann::json from_toml = parse_toml(toml);
  CHECK(from_toml["mc"]["seed"] == 7);
  CHECK(from_toml["mc"]["policy"] == "cautious");
  CHECK(from_toml["mc"]["axes"].size() == 2);
  CHECK(from_toml["led"]["target"][0] == 0.33);
  CHECK(from_toml["led"]["c_y"] == 0.12);

  const ExperimentConfig cfg = experiment_from_json(from_toml);
  CHECK(cfg.master_seed == 7);
  CHECK(cfg.repetitions == 5);
  CHECK(cfg.lot.n_items == 196);
  CHECK(cfg.lot.c_y == 0.12);
}
