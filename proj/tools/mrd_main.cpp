#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mrd/config.hpp"
#include "mrd/dataset.hpp"
#include "mrd/errors.hpp"
#include "mrd/estimation.hpp"
#include "mrd/led_dgp.hpp"
#include "mrd/mc.hpp"
#include "mrd/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mrd;

namespace {

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
}

void write_echo(const std::string& out_dir, const json& effective) {
  write_text((fs::path(out_dir) / "config_echo.json").string(), effective.dump(2) + "\n");
}

json section(const json& root, const std::string& name) {
  return root.contains(name) ? root.at(name) : json::object();
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

BandwidthSpec bandwidth_from_json(const json& j) {
  if (!j.is_object() || !j.contains("bandwidth")) return BandwidthSpec::mse_optimal();
  const json& bw = j.at("bandwidth");
  if (bw.is_number()) return BandwidthSpec::fixed(bw.get<double>());
  if (bw.is_string() && bw.get<std::string>() == "mse") return BandwidthSpec::mse_optimal();
  throw ConfigError("bandwidth must be a number or \"mse\"");
}

json bandwidth_to_json(const BandwidthSpec& spec) {
  if (spec.mode == BandwidthSpec::Mode::Fixed) return json(spec.h);
  return json("mse");
}

// panel columns -> estimation input
struct PanelView {
  Dataset ds;
  EstimationInput input;
  std::vector<UnitCategory> categories;
  bool has_categories = false;
};

std::vector<double> derived_axis(const Dataset& ds, const std::string& axis) {
  const auto& xd = ds.column("x_d");
  const auto& xy = ds.column("x_y");
  const auto sd = [](const std::vector<double>& v) {
    double m = 0.0;
    for (const double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (const double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / std::max<double>(1.0, static_cast<double>(v.size() - 1)));
  };
  if (axis == "binding")
    return binding_score(xd, xy, BoolOp::And, sd(xd), sd(xy));
  return euclidean_score(xd, xy, Eigen::Vector2d(0.0, 0.0));
}

PanelView load_panel(const std::string& path, const std::string& axis, double cutoff,
                     bool need_d) {
  PanelView pv;
  pv.ds = Dataset::read_csv(path);
  const std::size_t n = pv.ds.n_rows();
  if (n == 0) throw DataError("panel '" + path + "' has no rows");

  if (axis == "binding" || axis == "euclidean") {
    pv.input.x = derived_axis(pv.ds, axis);
  } else {
    pv.input.x = pv.ds.column(axis);
  }
  if (cutoff != 0.0)
    for (double& v : pv.input.x) v -= cutoff;

  pv.input.y = pv.ds.column("y");
  if (pv.ds.has_column("d")) {
    pv.input.d = pv.ds.column("d");
    for (std::size_t i = 0; i < n; ++i) {
      if (pv.input.d[i] != 0.0 && pv.input.d[i] != 1.0)
        throw DataError("column 'd' must be 0/1 at row " + std::to_string(i + 2));
    }
  } else if (need_d) {
    throw DataError("panel '" + path + "' is missing the required column 'd'");
  }
  if (pv.ds.has_column("t")) pv.input.t = pv.ds.column("t");

  std::vector<std::string> zcols;
  for (const std::string& name : pv.ds.column_names())
    if (name.rfind("z_", 0) == 0) zcols.push_back(name);
  pv.input.z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(zcols.size()));
  for (std::size_t j = 0; j < zcols.size(); ++j) {
    const auto& col = pv.ds.column(zcols[j]);
    for (std::size_t i = 0; i < n; ++i)
      pv.input.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  if (pv.ds.has_column("lot_id")) {
    const auto& ids = pv.ds.column("lot_id");
    pv.input.unit_id.assign(ids.begin(), ids.end());
  } else {
    pv.input.unit_id.resize(n);
    for (std::size_t i = 0; i < n; ++i) pv.input.unit_id[i] = static_cast<std::int64_t>(i);
  }
  if (pv.ds.has_categories()) {
    pv.categories = pv.ds.categories();
    pv.has_categories = true;
  }
  return pv;
}

std::vector<std::uint8_t> keep_mask_for(const PanelView& pv, const std::string& omega_text) {
  const OmegaPredicate omega = parse_omega(omega_text);
  return subset_mask(
      omega,
      [&](const std::string& name, std::size_t row) { return pv.ds.value_at(name, row); },
      pv.ds.n_rows(), pv.has_categories ? &pv.categories : nullptr);
}

json estimate_to_json(const RdEstimate& e) {
  json o;
  o["coef"] = e.coef;
  o["se"] = e.se;
  o["ci_low"] = e.ci_low;
  o["ci_high"] = e.ci_high;
  o["h"] = e.h;
  o["b"] = e.b;
  o["n_left"] = e.n_left;
  o["n_right"] = e.n_right;
  o["design"] = e.fuzzy ? "fuzzy" : "sharp";
  o["subset"] = e.subset;
  o["numer_jump"] = e.numer_jump;
  o["denom_jump"] = e.denom_jump;
  const auto put = [](json& obj, const char* key, double v) {
    if (std::isfinite(v))
      obj[key] = v;
    else
      obj[key] = nullptr;
  };
  json fs_obj;
  put(fs_obj, "rmse_left", e.first_stage.rmse_left);
  put(fs_obj, "rmse_right", e.first_stage.rmse_right);
  put(fs_obj, "logloss_left", e.first_stage.logloss_left);
  put(fs_obj, "logloss_right", e.first_stage.logloss_right);
  o["first_stage"] = fs_obj;
  o["warnings"] = e.warnings;
  return o;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const json& effective) {
  const json sim = section(effective, "simulate");
  const std::uint64_t seed = field_or<std::uint64_t>(sim, "seed", 1);
  const std::int64_t n_lots = field_or<std::int64_t>(sim, "n_lots", 10000);
  const OperatorPolicy policy =
      policy_from_name(field_or<std::string>(sim, "policy", "cautious"));
  const std::string out = field_or<std::string>(sim, "out", "panel.csv");
  const LotConfig lot = lot_config_from_json(effective);

  const SimPanel panel = simulate_panel(seed, n_lots, lot, policy);
  panel.to_dataset().write_csv(out);
  std::cout << "wrote " << panel.size() << " lots to " << out << "\n";
  return 0;
}

int cmd_classify(const json& effective) {
  const json cls = section(effective, "classify");
  const std::string panel_path = field_or<std::string>(cls, "panel", "");
  if (panel_path.empty()) throw ConfigError("classify: missing panel path");
  const std::string out = field_or<std::string>(cls, "out", "classified.csv");
  const std::string policy_str = field_or<std::string>(cls, "policy", "");

  Dataset ds = Dataset::read_csv(panel_path);
  std::vector<UnitCategory> cats;

  if (!policy_str.empty()) {
    const OperatorPolicy policy = policy_from_name(policy_str);
    const auto& xd = ds.column("x_d");
    const auto& xy = ds.column("x_y");
    const auto& xe = ds.column("x_e");
    const auto& xr = ds.column("x_r");
    cats.resize(ds.n_rows());
    for (std::size_t i = 0; i < ds.n_rows(); ++i)
      cats[i] = classify_policy_unit(policy, xd[i], xy[i], xe[i], xr[i]);
  } else {
    const std::string t_text = field_or<std::string>(cls, "t_rule", "");
    const std::string d_text = field_or<std::string>(cls, "d_rule", "");
    if (t_text.empty() || d_text.empty())
      throw ConfigError("classify: need either a policy or both t_rule and d_rule");
    const std::vector<std::string> score_cols = field_or<std::vector<std::string>>(
        cls, "scores", {"x_d", "x_y", "x_e"});
    const int dim = static_cast<int>(score_cols.size());
    const CutoffRule t = parse_rule(t_text, dim);
    const CutoffRule d = parse_rule(d_text, dim);
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(ds.n_rows()), dim);
    for (int j = 0; j < dim; ++j) {
      const auto& col = ds.column(score_cols[static_cast<std::size_t>(j)]);
      for (std::size_t i = 0; i < ds.n_rows(); ++i)
        scores(static_cast<Eigen::Index>(i), j) = col[i];
    }
    cats = classify_dataset(t, d, scores).categories;
  }

  CategoryCounts counts;
  for (const UnitCategory c : cats) ++counts[c];
  ds.set_categories(std::move(cats));
  ds.write_csv(out);
  std::cout << "C=" << counts.complier << " NT=" << counts.nevertaker
            << " AT=" << counts.alwaystaker << " DF=" << counts.defier
            << " IND=" << counts.indecisive << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_estimate(const json& effective) {
  const json est = section(effective, "estimate");
  const std::string panel_path = field_or<std::string>(est, "panel", "");
  if (panel_path.empty()) throw ConfigError("estimate: missing panel path");
  const std::string axis = field_or<std::string>(est, "axis", "x_d");
  const std::string design = field_or<std::string>(est, "design", "sharp");
  if (design != "sharp" && design != "fuzzy")
    throw ConfigError("estimate: design must be sharp|fuzzy");
  const bool fuzzy = design == "fuzzy";
  const double cutoff = field_or<double>(est, "cutoff", 0.0);
  const std::string omega_text = field_or<std::string>(est, "subset", "");
  const std::vector<std::string> learners =
      field_or<std::vector<std::string>>(est, "learners", {"none"});
  const std::string out = field_or<std::string>(est, "out", "estimate.json");
  const std::string out_csv = field_or<std::string>(est, "out_csv", "estimate.csv");

  EstimatorOptions opt;
  opt.kernel = kernel_from_name(field_or<std::string>(est, "kernel", "triangular"));
  opt.bandwidth = bandwidth_from_json(est);
  opt.seed = field_or<std::uint64_t>(est, "seed", 1);

  PanelView pv = load_panel(panel_path, axis, cutoff, fuzzy);
  std::vector<std::uint8_t> keep;
  if (!omega_text.empty()) keep = keep_mask_for(pv, omega_text);

  json rows = json::array();
  std::ostringstream csv;
  csv << "method,coef,se,ci_low,ci_high,rmse_left,logloss_left,rmse_right,"
         "logloss_right,pct_se_change\n";
  double baseline_se = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, RdEstimate>> results;
  for (const std::string& learner : learners) {
    opt.learner = LearnerSpec::of(learner_from_name(learner));
    RdEstimate e;
    if (!keep.empty()) {
      e = subset_estimate(pv.input, keep, fuzzy, opt);
    } else {
      e = fuzzy ? fuzzy_estimate(pv.input, opt) : sharp_estimate(pv.input, opt);
    }
    if (opt.learner.kind == LearnerKind::NoAdjust) baseline_se = e.se;
    results.emplace_back(method_display_name(opt.learner.kind), e);
  }
  for (const auto& [method, e] : results) {
    json o = estimate_to_json(e);
    o["method"] = method;
    if (std::isfinite(baseline_se) && baseline_se > 0.0)
      o["pct_se_change"] = (e.se - baseline_se) / baseline_se * 100.0;
    rows.push_back(o);
    const auto cell = [](double v) { return std::isfinite(v) ? format_number(v) : std::string(); };
    csv << method << ',' << format_number(e.coef) << ',' << format_number(e.se) << ','
        << format_number(e.ci_low) << ',' << format_number(e.ci_high) << ','
        << cell(e.first_stage.rmse_left) << ',' << cell(e.first_stage.logloss_left)
        << ',' << cell(e.first_stage.rmse_right) << ','
        << cell(e.first_stage.logloss_right) << ',';
    if (std::isfinite(baseline_se) && baseline_se > 0.0)
      csv << format_number((e.se - baseline_se) / baseline_se * 100.0);
    csv << '\n';
  }

  const json out_json = rows.size() == 1 ? rows[0] : rows;
  write_text(out, out_json.dump(2) + "\n");
  write_text(out_csv, csv.str());
  std::cout << out_json.dump(2) << "\n";
  return 0;
}

int cmd_mc(const json& effective) {
  ExperimentConfig cfg = experiment_from_json(effective);
  const json mc_sec = section(effective, "mc");
  const std::string out_dir = field_or<std::string>(mc_sec, "out_dir", ".");

  const ExperimentReport report = run_experiment(cfg);
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "metrics.csv").string(),
             emit_table(report.metrics, TableFormat::Csv));
  write_text((fs::path(out_dir) / "estimates_raw.csv").string(),
             emit_raw_csv(report.raw));
  std::cout << emit_table(report.metrics, TableFormat::Markdown);
  std::cout << "wrote " << (fs::path(out_dir) / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_validate(const json& effective) {
  const json val = section(effective, "validate");
  const std::string panel_path = field_or<std::string>(val, "panel", "");
  if (panel_path.empty()) throw ConfigError("validate: missing panel path");
  const std::string axis = field_or<std::string>(val, "axis", "x_d");
  const std::string design = field_or<std::string>(val, "design", "sharp");
  const bool fuzzy = design == "fuzzy";
  const std::vector<double> shifts =
      field_or<std::vector<double>>(val, "shifts", {-0.1, 0.0, 0.1});
  const std::string out = field_or<std::string>(val, "out", "validate.csv");

  EstimatorOptions opt;
  opt.kernel = kernel_from_name(field_or<std::string>(val, "kernel", "triangular"));
  opt.bandwidth = bandwidth_from_json(val);
  opt.learner = LearnerSpec::of(learner_from_name(field_or<std::string>(val, "learner", "none")));
  opt.seed = field_or<std::uint64_t>(val, "seed", 1);

  PanelView pv = load_panel(panel_path, axis, field_or<double>(val, "cutoff", 0.0), fuzzy);
  const std::vector<PseudoCutoffRow> rows = pseudo_cutoff_test(pv.input, shifts, fuzzy, opt);

  std::ostringstream csv;
  csv << "cutoff,coef,ci_low,ci_high\n";
  std::cout << "cutoff      coef        2.5% CI     97.5% CI\n";
  for (const PseudoCutoffRow& r : rows) {
    csv << format_number(r.shift) << ',' << format_number(r.estimate.coef) << ','
        << format_number(r.estimate.ci_low) << ',' << format_number(r.estimate.ci_high)
        << '\n';
    std::printf("%-11g %-11.6f %-11.6f %-11.6f\n", r.shift, r.estimate.coef,
                r.estimate.ci_low, r.estimate.ci_high);
  }
  write_text(out, csv.str());
  return 0;
}

int cmd_rdplot(const json& effective) {
  const json rp = section(effective, "rdplot");
  const std::string panel_path = field_or<std::string>(rp, "panel", "");
  if (panel_path.empty()) throw ConfigError("rdplot: missing panel path");
  const std::string axis = field_or<std::string>(rp, "axis", "x_d");
  const int bins = field_or<int>(rp, "bins", 20);
  const std::string out = field_or<std::string>(rp, "out", "rdplot.csv");
  const Kernel kernel = kernel_from_name(field_or<std::string>(rp, "kernel", "triangular"));

  PanelView pv = load_panel(panel_path, axis, field_or<double>(rp, "cutoff", 0.0), false);
  double h;
  if (rp.contains("h") && rp.at("h").is_number()) {
    h = rp.at("h").get<double>();
  } else {
    h = select_bandwidth(pv.input.x, pv.input.y, kernel, BandwidthSpec::mse_optimal()).h;
  }
  const RdPlotData plot = rd_plot_data(pv.input.x, pv.input.y, bins, kernel, h);

  std::ostringstream csv;
  csv << "kind,x0,y0,x1,y1,count,mean\n";
  for (const RdPlotBin& b : plot.bins) {
    csv << "bin," << format_number(b.center) << ",,,," << b.count << ',';
    if (b.count > 0) csv << format_number(b.mean);
    csv << '\n';
  }
  csv << "fit_left," << format_number(plot.left_x0) << ',' << format_number(plot.left_y0)
      << ',' << format_number(plot.left_x1) << ',' << format_number(plot.left_y1)
      << ",,\n";
  csv << "fit_right," << format_number(plot.right_x0) << ','
      << format_number(plot.right_y0) << ',' << format_number(plot.right_x1) << ','
      << format_number(plot.right_y1) << ",,\n";
  write_text(out, csv.str());
  std::cout << "wrote " << out << " (h = " << format_number(h) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-score regression discontinuity toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("-c,--config", config_path, "config file (TOML or JSON)");
  app.add_option("--out-dir", out_dir, "output directory for artifacts");
  app.add_option("--threads", threads, "worker threads (0 = hardware)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed override");

  // subcommand flags; only explicitly set ones override the config file
  auto* sim = app.add_subcommand("simulate", "simulate a panel from the rework process");
  std::string sim_out, sim_policy;
  std::int64_t sim_n = 0;
  sim->add_option("-o,--out", sim_out, "panel CSV path");
  sim->add_option("--n-lots", sim_n, "number of lots");
  sim->add_option("--policy", sim_policy, "acknowledging|cautious|reasonable");

  auto* cls = app.add_subcommand("classify", "attach behavior categories to a panel");
  std::string cls_panel, cls_t, cls_d, cls_policy, cls_out, cls_scores;
  cls->add_option("--panel", cls_panel, "panel CSV");
  cls->add_option("--t-rule", cls_t, "assignment rule, e.g. \"I1 & I2\"");
  cls->add_option("--d-rule", cls_d, "decision rule");
  cls->add_option("--policy", cls_policy, "operator policy instead of explicit rules");
  cls->add_option("--scores", cls_scores, "comma-separated score columns for the atoms");
  cls->add_option("-o,--out", cls_out, "output CSV");

  auto* estc = app.add_subcommand("estimate", "cutoff effect estimation on a panel");
  std::string est_panel, est_axis, est_design, est_subset, est_learners, est_kernel,
      est_out;
  double est_cutoff = 0.0, est_h = 0.0;
  estc->add_option("--panel", est_panel, "panel CSV");
  estc->add_option("--axis", est_axis, "score column or binding|euclidean");
  estc->add_option("--design", est_design, "sharp|fuzzy");
  estc->add_option("--subset", est_subset, "exclusion predicate, e.g. \"x_y <= 0\"");
  estc->add_option("--learners", est_learners,
                   "comma list: none,linear,lasso,global-lasso,boosting,stacking");
  estc->add_option("--kernel", est_kernel, "triangular|uniform|epanechnikov");
  auto* est_h_opt = estc->add_option("--bandwidth", est_h, "fixed bandwidth");
  estc->add_option("--cutoff", est_cutoff, "cutoff to subtract from the axis");
  estc->add_option("-o,--out", est_out, "estimate JSON path");

  auto* mcc = app.add_subcommand("mc", "Monte Carlo estimator benchmark");
  int mc_reps = 0;
  std::int64_t mc_n = 0;
  mcc->add_option("-r,--repetitions", mc_reps, "repetitions");
  mcc->add_option("--n-lots", mc_n, "lots per repetition");

  auto* valc = app.add_subcommand("validate", "pseudo-cutoff placebo estimates");
  std::string val_panel, val_axis, val_design, val_shifts, val_out;
  valc->add_option("--panel", val_panel, "panel CSV");
  valc->add_option("--axis", val_axis, "score column");
  valc->add_option("--design", val_design, "sharp|fuzzy");
  valc->add_option("--shifts", val_shifts, "comma list of cutoff shifts");
  valc->add_option("-o,--out", val_out, "output CSV");

  auto* rpc = app.add_subcommand("rdplot", "binned means and fitted lines for plotting");
  std::string rp_panel, rp_axis, rp_out;
  int rp_bins = 0;
  double rp_h = 0.0;
  rpc->add_option("--panel", rp_panel, "panel CSV");
  rpc->add_option("--axis", rp_axis, "score column");
  rpc->add_option("--bins", rp_bins, "bins per side");
  auto* rp_h_opt = rpc->add_option("--window", rp_h, "window half-width");
  rpc->add_option("-o,--out", rp_out, "output CSV");

  // global flags may appear after the subcommand name
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  seed_set = seed_opt->count() > 0;

  try {
    if (threads > 0) set_threads(threads);

    json effective;
    if (!config_path.empty()) effective = load_config_file(config_path);
    if (!effective.is_object()) effective = json::object();

    const auto set_if = [](json& sec, const std::string& key, const auto& value,
                           bool given) {
      if (given) sec[key] = value;
    };
    const auto split_list = [](const std::string& s) {
      std::vector<std::string> out;
      std::string cur;
      for (const char c : s) {
        if (c == ',') {
          if (!cur.empty()) out.push_back(cur);
          cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
          cur.push_back(c);
        }
      }
      if (!cur.empty()) out.push_back(cur);
      return out;
    };

    int rc = 0;
    if (sim->parsed()) {
      json& sec = effective["simulate"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "out", sim_out, sim->count("-o") || sim->count("--out"));
      set_if(sec, "n_lots", sim_n, sim->count("--n-lots") > 0);
      set_if(sec, "policy", sim_policy, sim->count("--policy") > 0);
      if (seed_set) sec["seed"] = seed;
      if (!sec.contains("out"))
        sec["out"] = (fs::path(out_dir) / "panel.csv").string();
      effective["command"] = "simulate";
      // materialize the process parameters so the echo pins every default
      effective["led"] = lot_config_to_json(lot_config_from_json(effective));
      write_echo(out_dir, effective);
      rc = cmd_simulate(effective);
    } else if (cls->parsed()) {
      json& sec = effective["classify"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "panel", cls_panel, cls->count("--panel") > 0);
      set_if(sec, "t_rule", cls_t, cls->count("--t-rule") > 0);
      set_if(sec, "d_rule", cls_d, cls->count("--d-rule") > 0);
      set_if(sec, "policy", cls_policy, cls->count("--policy") > 0);
      if (cls->count("--scores") > 0) sec["scores"] = split_list(cls_scores);
      set_if(sec, "out", cls_out, cls->count("-o") || cls->count("--out"));
      if (!sec.contains("out"))
        sec["out"] = (fs::path(out_dir) / "classified.csv").string();
      effective["command"] = "classify";
      write_echo(out_dir, effective);
      rc = cmd_classify(effective);
    } else if (estc->parsed()) {
      json& sec = effective["estimate"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "panel", est_panel, estc->count("--panel") > 0);
      set_if(sec, "axis", est_axis, estc->count("--axis") > 0);
      set_if(sec, "design", est_design, estc->count("--design") > 0);
      set_if(sec, "subset", est_subset, estc->count("--subset") > 0);
      if (estc->count("--learners") > 0) sec["learners"] = split_list(est_learners);
      set_if(sec, "kernel", est_kernel, estc->count("--kernel") > 0);
      if (est_h_opt->count() > 0) sec["bandwidth"] = est_h;
      set_if(sec, "cutoff", est_cutoff, estc->count("--cutoff") > 0);
      set_if(sec, "out", est_out, estc->count("-o") || estc->count("--out"));
      if (seed_set) sec["seed"] = seed;
      if (!sec.contains("out"))
        sec["out"] = (fs::path(out_dir) / "estimate.json").string();
      if (!sec.contains("out_csv"))
        sec["out_csv"] = (fs::path(out_dir) / "estimate.csv").string();
      effective["command"] = "estimate";
      write_echo(out_dir, effective);
      rc = cmd_estimate(effective);
    } else if (mcc->parsed()) {
      json& sec = effective["mc"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "repetitions", mc_reps, mcc->count("-r") || mcc->count("--repetitions"));
      set_if(sec, "n_lots", mc_n, mcc->count("--n-lots") > 0);
      if (seed_set) sec["seed"] = seed;
      if (!sec.contains("out_dir")) sec["out_dir"] = out_dir;
      effective["command"] = "mc";
      // echo the fully resolved experiment so a rerun is byte-identical
      ExperimentConfig cfg = experiment_from_json(effective);
      json echo = experiment_to_json(cfg);
      echo["mc"]["out_dir"] = sec["out_dir"];
      echo["command"] = "mc";
      write_echo(field_or<std::string>(sec, "out_dir", out_dir), echo);
      rc = cmd_mc(echo);
    } else if (valc->parsed()) {
      json& sec = effective["validate"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "panel", val_panel, valc->count("--panel") > 0);
      set_if(sec, "axis", val_axis, valc->count("--axis") > 0);
      set_if(sec, "design", val_design, valc->count("--design") > 0);
      if (valc->count("--shifts") > 0) {
        std::vector<double> shifts;
        for (const std::string& s : split_list(val_shifts)) shifts.push_back(std::stod(s));
        sec["shifts"] = shifts;
      }
      set_if(sec, "out", val_out, valc->count("-o") || valc->count("--out"));
      if (seed_set) sec["seed"] = seed;
      if (!sec.contains("out"))
        sec["out"] = (fs::path(out_dir) / "validate.csv").string();
      effective["command"] = "validate";
      write_echo(out_dir, effective);
      rc = cmd_validate(effective);
    } else if (rpc->parsed()) {
      json& sec = effective["rdplot"];
      if (!sec.is_object()) sec = json::object();
      set_if(sec, "panel", rp_panel, rpc->count("--panel") > 0);
      set_if(sec, "axis", rp_axis, rpc->count("--axis") > 0);
      set_if(sec, "bins", rp_bins, rpc->count("--bins") > 0);
      if (rp_h_opt->count() > 0) sec["h"] = rp_h;
      set_if(sec, "out", rp_out, rpc->count("-o") || rpc->count("--out"));
      if (!sec.contains("out"))
        sec["out"] = (fs::path(out_dir) / "rdplot.csv").string();
      effective["command"] = "rdplot";
      write_echo(out_dir, effective);
      rc = cmd_rdplot(effective);
    }
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
