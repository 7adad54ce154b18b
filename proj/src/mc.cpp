#include "mrd/mc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrd/dataset.hpp"
#include "mrd/parallel.hpp"
#include "mrd/rng.hpp"

namespace mrd {

namespace {
using json = nlohmann::json;

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

bool is_2d_axis(const std::string& axis) {
  return axis == "binding" || axis == "euclidean";
}

std::vector<double> axis_scores(const SimPanel& panel, const std::string& axis) {
  if (axis == "x_d") return panel.x_d;
  if (axis == "x_y") return panel.x_y;
  if (axis == "binding") {
    const auto sd = [](const std::vector<double>& v) {
      double m = 0.0;
      for (const double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s = 0.0;
      for (const double x : v) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    return binding_score(panel.x_d, panel.x_y, BoolOp::And, sd(panel.x_d),
                         sd(panel.x_y));
  }
  if (axis == "euclidean") {
    return euclidean_score(panel.x_d, panel.x_y, Eigen::Vector2d(0.0, 0.0));
  }
  throw ConfigError("unknown axis '" + axis + "'");
}

}  // namespace

std::string method_display_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::NoAdjust: return "RDD Without Covs";
    case LearnerKind::LinearCovs: return "RDD Conventional Covs";
    case LearnerKind::LassoLocal: return "RDFlex Lasso";
    case LearnerKind::LassoGlobal: return "RDFlex Global Lasso";
    case LearnerKind::Boosting: return "RDFlex Boosting";
    case LearnerKind::Stacking: return "RDFlex Stacking";
  }
  return "?";
}

std::string cell_setting(const std::string& axis, const EstimatorCell& cell) {
  std::string s = axis;
  s += cell.fuzzy ? " fuzzy" : " sharp";
  if (cell.subset) s += " subset";
  return s;
}

std::uint64_t rep_seed(std::uint64_t master_seed, int rep) {
  return Rng::mix(master_seed, static_cast<std::uint64_t>(rep));
}

std::vector<EstimatorCell> default_grid() {
  std::vector<EstimatorCell> grid;
  for (const bool fuzzy : {false, true}) {
    for (const bool subset : {false, true}) {
      for (const LearnerKind k :
           {LearnerKind::NoAdjust, LearnerKind::LinearCovs, LearnerKind::LassoLocal,
            LearnerKind::LassoGlobal, LearnerKind::Boosting, LearnerKind::Stacking}) {
        EstimatorCell c;
        c.fuzzy = fuzzy;
        c.subset = subset;
        c.learner = LearnerSpec::of(k);
        grid.push_back(c);
      }
    }
  }
  return grid;
}

namespace {

struct RepResult {
  std::vector<RawEstimateRow> rows;
};

SimPanel masked_panel(const SimPanel& panel, const std::vector<std::uint8_t>& keep) {
  SimPanel out;
  out.z.resize(static_cast<Eigen::Index>(std::count(keep.begin(), keep.end(), 1)),
               panel.z.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!keep[i]) continue;
    out.lot_id.push_back(panel.lot_id[i]);
    out.x_d.push_back(panel.x_d[i]);
    out.x_y.push_back(panel.x_y[i]);
    out.x_e.push_back(panel.x_e[i]);
    out.x_r.push_back(panel.x_r[i]);
    out.t.push_back(panel.t[i]);
    out.d.push_back(panel.d[i]);
    out.y.push_back(panel.y[i]);
    out.y0.push_back(panel.y0[i]);
    out.y1.push_back(panel.y1[i]);
    out.category.push_back(panel.category[i]);
    out.z.row(r++) = panel.z.row(static_cast<Eigen::Index>(i));
  }
  out.z_names = panel.z_names;
  return out;
}

RepResult run_rep(const ExperimentConfig& cfg, int rep) {
  RepResult out;
  const std::uint64_t seed = rep_seed(cfg.master_seed, rep);
  const SimPanel panel = simulate_panel(seed, cfg.n_lots, cfg.lot, cfg.policy);

  for (const std::string& axis : cfg.axes) {
    const std::vector<double> xs = axis_scores(panel, axis);

    // rep-specific oracles per estimand
    double oracle_fuzzy = nan_value(), oracle_sharp = nan_value();
    try {
      if (is_2d_axis(axis)) {
        std::vector<double> contrast(panel.size());
        for (std::size_t i = 0; i < panel.size(); ++i)
          contrast[i] = panel.y1[i] - panel.y0[i];
        const Bandwidths bw =
            select_bandwidth(xs, contrast, cfg.kernel, cfg.bandwidth);
        oracle_fuzzy = local_linear_level(xs, contrast, cfg.kernel, bw.h);
        oracle_sharp = oracle_fuzzy;
      } else {
        const ScoreAxis ax = axis == "x_d" ? ScoreAxis::Distance : ScoreAxis::Yield;
        oracle_fuzzy = oracle_effect_auto(panel, ax, OracleEstimand::Complier,
                                          cfg.policy, cfg.kernel);
        oracle_sharp = oracle_effect_auto(panel, ax, OracleEstimand::Itt, cfg.policy,
                                          cfg.kernel);
      }
    } catch (const std::exception&) {
      // oracle failures leave NaN; the affected cells count as failures
    }

    // exclusion mask for the subset variants, validated against the
    // categories of the axis pair (G_axis, D) that the estimand refers to
    std::vector<std::uint8_t> keep(panel.size(), 1);
    bool keep_valid = false;
    if (!is_2d_axis(axis)) {
      const std::string& omega_text =
          axis == "x_d" ? cfg.omega_distance : cfg.omega_yield;
      try {
        const OmegaPredicate omega = parse_omega(omega_text);
        const ScoreAxis ax = axis == "x_d" ? ScoreAxis::Distance : ScoreAxis::Yield;
        const std::vector<UnitCategory> pair_cats =
            axis_pair_categories(panel, ax, cfg.policy);
        keep = subset_mask(
            omega,
            [&](const std::string& name, std::size_t row) {
              return panel.axis(name)[row];
            },
            panel.size(), &pair_cats);
        keep_valid = true;
      } catch (const std::exception&) {
        keep_valid = false;
      }
    }

    // the intent-to-treat estimand changes when nevertakers are removed, so
    // subset sharp cells get an oracle computed on the retained sample; the
    // complier estimand is unchanged because excluded units are never
    // compliers of the axis pair
    double oracle_sharp_subset = oracle_sharp;
    if (keep_valid && !is_2d_axis(axis)) {
      try {
        const ScoreAxis ax = axis == "x_d" ? ScoreAxis::Distance : ScoreAxis::Yield;
        const SimPanel sub = masked_panel(panel, keep);
        oracle_sharp_subset =
            oracle_effect_auto(sub, ax, OracleEstimand::Itt, cfg.policy, cfg.kernel);
      } catch (const std::exception&) {
        oracle_sharp_subset = nan_value();
      }
    }

    EstimationInput in;
    in.x = xs;
    in.y = panel.y;
    in.d.assign(panel.d.begin(), panel.d.end());
    in.t.assign(panel.t.begin(), panel.t.end());
    in.z = panel.z;
    in.unit_id = panel.lot_id;

    for (const EstimatorCell& cell : cfg.cells) {
      if (cell.subset && is_2d_axis(axis)) continue;
      RawEstimateRow row;
      row.rep = rep;
      row.setting = cell_setting(axis, cell);
      row.method = method_display_name(cell.learner.kind);
      row.oracle = cell.fuzzy ? oracle_fuzzy
                              : (cell.subset ? oracle_sharp_subset : oracle_sharp);

      EstimatorOptions opt;
      opt.kernel = cfg.kernel;
      opt.bandwidth = cfg.bandwidth;
      opt.learner = cell.learner;
      opt.seed = seed;
      try {
        if (!std::isfinite(row.oracle))
          throw EstimationError("oracle computation failed for this repetition");
        if (cell.subset) {
          if (!keep_valid)
            throw EstimationError("subset mask unavailable for this axis");
          row.estimate = subset_estimate(in, keep, cell.fuzzy, opt);
        } else {
          row.estimate =
              cell.fuzzy ? fuzzy_estimate(in, opt) : sharp_estimate(in, opt);
        }
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace

MetricsRow compute_metrics(const std::string& setting, const std::string& method,
                           const std::vector<RawEstimateRow>& cell_rows) {
  MetricsRow row;
  row.setting = setting;
  row.method = method;

  std::vector<const RawEstimateRow*> ok;
  for (const RawEstimateRow& r : cell_rows) {
    if (r.failed) {
      ++row.failures;
    } else {
      ok.push_back(&r);
    }
  }
  row.reps = static_cast<int>(cell_rows.size());
  if (ok.empty()) {
    row.mean_bias = row.se_est_mean = row.se_empirical = row.coverage =
        row.coverage_grand = nan_value();
    row.rmse_left = row.rmse_right = row.logloss_left = row.logloss_right = nan_value();
    return row;
  }

  const auto mean_of = [&](auto getter) {
    double s = 0.0;
    std::size_t n = 0;
    for (const RawEstimateRow* r : ok) {
      const double v = getter(*r);
      if (std::isfinite(v)) {
        s += v;
        ++n;
      }
    }
    return n > 0 ? s / static_cast<double>(n) : nan_value();
  };

  row.mean_bias = mean_of([](const RawEstimateRow& r) { return r.estimate.coef - r.oracle; });
  row.se_est_mean = mean_of([](const RawEstimateRow& r) { return r.estimate.se; });

  const double coef_mean = mean_of([](const RawEstimateRow& r) { return r.estimate.coef; });
  double ss = 0.0;
  for (const RawEstimateRow* r : ok) ss += (r->estimate.coef - coef_mean) * (r->estimate.coef - coef_mean);
  row.se_empirical = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;

  std::size_t covered = 0;
  for (const RawEstimateRow* r : ok)
    if (r->estimate.ci_low <= r->oracle && r->oracle <= r->estimate.ci_high) ++covered;
  row.coverage = static_cast<double>(covered) / static_cast<double>(ok.size());

  const double grand_oracle = mean_of([](const RawEstimateRow& r) { return r.oracle; });
  std::size_t covered_grand = 0;
  for (const RawEstimateRow* r : ok)
    if (r->estimate.ci_low <= grand_oracle && grand_oracle <= r->estimate.ci_high)
      ++covered_grand;
  row.coverage_grand = static_cast<double>(covered_grand) / static_cast<double>(ok.size());

  row.rmse_left = mean_of([](const RawEstimateRow& r) { return r.estimate.first_stage.rmse_left; });
  row.rmse_right = mean_of([](const RawEstimateRow& r) { return r.estimate.first_stage.rmse_right; });
  row.logloss_left = mean_of([](const RawEstimateRow& r) { return r.estimate.first_stage.logloss_left; });
  row.logloss_right = mean_of([](const RawEstimateRow& r) { return r.estimate.first_stage.logloss_right; });
  return row;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (cfg.cells.empty()) throw ConfigError("estimator grid is empty");
  for (const std::string& axis : cfg.axes) {
    if (axis != "x_d" && axis != "x_y" && !is_2d_axis(axis))
      throw ConfigError("unknown axis '" + axis + "' in experiment config");
  }

  std::vector<RepResult> reps(static_cast<std::size_t>(cfg.repetitions));
  parallel_for(static_cast<std::size_t>(cfg.repetitions),
               [&](std::size_t r) { reps[r] = run_rep(cfg, static_cast<int>(r)); });

  ExperimentReport report;
  for (const RepResult& rr : reps)
    for (const RawEstimateRow& row : rr.rows) report.raw.push_back(row);

  // aggregate per (setting, method), in grid order
  for (const std::string& axis : cfg.axes) {
    for (const EstimatorCell& cell : cfg.cells) {
      if (cell.subset && is_2d_axis(axis)) continue;
      const std::string setting = cell_setting(axis, cell);
      const std::string method = method_display_name(cell.learner.kind);
      std::vector<RawEstimateRow> cell_rows;
      for (const RawEstimateRow& row : report.raw)
        if (row.setting == setting && row.method == method) cell_rows.push_back(row);
      report.metrics.push_back(compute_metrics(setting, method, cell_rows));
    }
  }
  return report;
}

namespace {

std::string cell_str(double v) { return std::isfinite(v) ? format_number(v) : ""; }

}  // namespace

std::string emit_table(const std::vector<MetricsRow>& rows, TableFormat format) {
  switch (format) {
    case TableFormat::Csv: {
      std::ostringstream out;
      out << "setting,method,mean_bias,se_est_mean,se_empirical,coverage,"
             "rmse_left,logloss_left,rmse_right,logloss_right,coverage_grand,"
             "failures\n";
      for (const MetricsRow& r : rows) {
        out << r.setting << ',' << r.method << ',' << cell_str(r.mean_bias) << ','
            << cell_str(r.se_est_mean) << ',' << cell_str(r.se_empirical) << ','
            << cell_str(r.coverage) << ',' << cell_str(r.rmse_left) << ','
            << cell_str(r.logloss_left) << ',' << cell_str(r.rmse_right) << ','
            << cell_str(r.logloss_right) << ',' << cell_str(r.coverage_grand) << ','
            << r.failures << '\n';
      }
      return out.str();
    }
    case TableFormat::Json: {
      json arr = json::array();
      for (const MetricsRow& r : rows) {
        json o;
        o["setting"] = r.setting;
        o["method"] = r.method;
        const auto put = [&](const char* key, double v) {
          if (std::isfinite(v))
            o[key] = v;
          else
            o[key] = nullptr;
        };
        put("mean_bias", r.mean_bias);
        put("se_est_mean", r.se_est_mean);
        put("se_empirical", r.se_empirical);
        put("coverage", r.coverage);
        put("rmse_left", r.rmse_left);
        put("logloss_left", r.logloss_left);
        put("rmse_right", r.rmse_right);
        put("logloss_right", r.logloss_right);
        put("coverage_grand", r.coverage_grand);
        o["failures"] = r.failures;
        arr.push_back(std::move(o));
      }
      return arr.dump(2) + "\n";
    }
    case TableFormat::Markdown: {
      std::ostringstream out;
      out << "| setting | method | mean bias | s.e. | emp. sd | coverage | "
             "RMSE left | log loss left | RMSE right | log loss right |\n";
      out << "|---|---|---|---|---|---|---|---|---|---|\n";
      for (const MetricsRow& r : rows) {
        out << "| " << r.setting << " | " << r.method << " | " << cell_str(r.mean_bias)
            << " | " << cell_str(r.se_est_mean) << " | " << cell_str(r.se_empirical)
            << " | " << cell_str(r.coverage) << " | " << cell_str(r.rmse_left) << " | "
            << cell_str(r.logloss_left) << " | " << cell_str(r.rmse_right) << " | "
            << cell_str(r.logloss_right) << " |\n";
      }
      return out.str();
    }
  }
  throw ConfigError("unknown table format");
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& csv_text) {
  std::vector<MetricsRow> rows;
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (const char ch : line) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    fields.push_back(cur);
    if (fields.size() != 12) throw DataError("metrics csv: bad field count");
    MetricsRow r;
    r.setting = fields[0];
    r.method = fields[1];
    const auto num = [](const std::string& s) {
      return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    r.mean_bias = num(fields[2]);
    r.se_est_mean = num(fields[3]);
    r.se_empirical = num(fields[4]);
    r.coverage = num(fields[5]);
    r.rmse_left = num(fields[6]);
    r.logloss_left = num(fields[7]);
    r.rmse_right = num(fields[8]);
    r.logloss_right = num(fields[9]);
    r.coverage_grand = num(fields[10]);
    r.failures = static_cast<int>(std::stol(fields[11]));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string emit_raw_csv(const std::vector<RawEstimateRow>& rows) {
  std::ostringstream out;
  out << "rep,setting,method,failed,coef,se,ci_low,ci_high,h,b,n_left,n_right,"
         "denom_jump,oracle,rmse_left,logloss_left,rmse_right,logloss_right,error\n";
  for (const RawEstimateRow& r : rows) {
    out << r.rep << ',' << r.setting << ',' << r.method << ',' << (r.failed ? 1 : 0)
        << ',';
    if (r.failed) {
      out << ",,,,,,,,," << cell_str(r.oracle) << ",,,,," << r.error << '\n';
      continue;
    }
    const RdEstimate& e = r.estimate;
    out << format_number(e.coef) << ',' << format_number(e.se) << ','
        << format_number(e.ci_low) << ',' << format_number(e.ci_high) << ','
        << format_number(e.h) << ',' << format_number(e.b) << ',' << e.n_left << ','
        << e.n_right << ',' << format_number(e.denom_jump) << ','
        << cell_str(r.oracle) << ',' << cell_str(e.first_stage.rmse_left) << ','
        << cell_str(e.first_stage.logloss_left) << ','
        << cell_str(e.first_stage.rmse_right) << ','
        << cell_str(e.first_stage.logloss_right) << ",\n";
  }
  return out.str();
}

}  // namespace mrd
