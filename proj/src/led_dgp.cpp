#include "mrd/led_dgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrd/errors.hpp"
#include "mrd/parallel.hpp"

namespace mrd {

const char* policy_name(OperatorPolicy p) {
  switch (p) {
    case OperatorPolicy::Acknowledging: return "acknowledging";
    case OperatorPolicy::Cautious: return "cautious";
    case OperatorPolicy::Reasonable: return "reasonable";
  }
  return "?";
}

OperatorPolicy policy_from_name(const std::string& name) {
  if (name == "acknowledging") return OperatorPolicy::Acknowledging;
  if (name == "cautious") return OperatorPolicy::Cautious;
  if (name == "reasonable") return OperatorPolicy::Reasonable;
  throw ConfigError("unknown operator policy '" + name + "'");
}

void LotConfig::validate() const {
  if (n_items < 1) throw ConfigError("led.n_items must be >= 1");
  if (m < 1 || m > n_items)
    throw ConfigError("led.m must be in [1, n_items]");
  if (lot_mean_spread < 0 || within_lot_spread < 0 || rework_noise_sd < 0 ||
      spread_heterogeneity < 0)
    throw ConfigError("led: spreads and noise must be >= 0");
  if (dispersion_inflation < 1.0)
    throw ConfigError("led.dispersion_inflation must be >= 1");
  if (spec_halfwidths[0] <= 0 || spec_halfwidths[1] <= 0)
    throw ConfigError("led.spec_halfwidths must be positive");
  if (conversion_slope.norm() <= 0)
    throw ConfigError("led.conversion_slope must be non-zero");
}

const char* axis_column(ScoreAxis a) {
  return a == ScoreAxis::Distance ? "x_d" : "x_y";
}

const std::vector<double>& SimPanel::axis(const std::string& name) const {
  const std::string n = normalize_column_name(name);
  if (n == "xd") return x_d;
  if (n == "xy") return x_y;
  if (n == "xe") return x_e;
  if (n == "xr") return x_r;
  throw DataError("unknown axis '" + name + "'");
}

Lot generate_lot(Rng& rng, const LotConfig& cfg) {
  const Eigen::Vector2d u = cfg.unit_slope();
  const Eigen::Vector2d mean = cfg.target - cfg.mean_shift * u +
                               Eigen::Vector2d(rng.normal(0.0, cfg.lot_mean_spread),
                                               rng.normal(0.0, cfg.lot_mean_spread));
  // lot-to-lot quality differences: mean-preserving log-normal factor on the
  // within-lot dispersion, so the improvement a rework can deliver varies
  // across lots with the same distance to go
  double spread = cfg.within_lot_spread;
  if (cfg.spread_heterogeneity > 0.0) {
    const double s = cfg.spread_heterogeneity;
    spread *= std::exp(rng.normal(0.0, s) - 0.5 * s * s);
  }
  Lot lot;
  lot.points.resize(cfg.n_items, 2);
  for (int i = 0; i < cfg.n_items; ++i) {
    lot.points(i, 0) = mean[0] + rng.normal(0.0, spread);
    lot.points(i, 1) = mean[1] + rng.normal(0.0, spread);
  }
  return lot;
}

double distance_score(const Lot& lot, const LotConfig& cfg) {
  const Eigen::Vector2d mean = lot.points.colwise().mean();
  // remaining distance along the conversion curve to the achievable point
  // closest to the target: the projection of (target - mean) onto the slope
  return (cfg.target - mean).dot(cfg.unit_slope());
}

namespace {

bool in_spec(double px, double py, const LotConfig& cfg) {
  return std::abs(px - cfg.target[0]) <= cfg.spec_halfwidths[0] &&
         std::abs(py - cfg.target[1]) <= cfg.spec_halfwidths[1];
}

}  // namespace

double yield_criteria_stride(const Lot& lot, const LotConfig& cfg, int stride) {
  if (stride < 1) throw ConfigError("measurement stride must be >= 1");
  int inside = 0, total = 0;
  for (int i = 0; i < lot.points.rows(); i += stride) {
    ++total;
    if (in_spec(lot.points(i, 0), lot.points(i, 1), cfg)) ++inside;
  }
  return total > 0 ? static_cast<double>(inside) / total : 0.0;
}

double yield_criteria(const Lot& lot, const LotConfig& cfg) {
  return yield_criteria_stride(lot, cfg, 1);
}

double optimal_shift(const Lot& lot, const LotConfig& cfg) {
  const Eigen::Vector2d u = cfg.unit_slope();
  // item i lands in spec after shifting by t*u iff t lies in an interval;
  // the exact maximizer of the in-spec count comes from an endpoint sweep
  struct Event {
    double t;
    int delta;
  };
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(lot.points.rows()));
  for (int i = 0; i < lot.points.rows(); ++i) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool feasible = true;
    for (int a = 0; a < 2 && feasible; ++a) {
      const double c = lot.points(i, a) - cfg.target[a];
      const double hw = cfg.spec_halfwidths[a];
      if (std::abs(u[a]) < 1e-15) {
        if (std::abs(c) > hw) feasible = false;
        continue;
      }
      double t0 = (-hw - c) / u[a];
      double t1 = (hw - c) / u[a];
      if (t0 > t1) std::swap(t0, t1);
      lo = std::max(lo, t0);
      hi = std::min(hi, t1);
    }
    if (!feasible || lo > hi) continue;
    events.push_back({lo, +1});
    events.push_back({hi, -1});
  }
  if (events.empty()) {
    // nothing can ever be in spec; move the mean as close as possible
    return distance_score(lot, cfg);
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.delta > b.delta;  // opens before closes: intervals are closed
  });
  int count = 0, best = 0;
  double best_lo = events.front().t, best_hi = events.front().t;
  for (std::size_t i = 0; i < events.size(); ++i) {
    count += events[i].delta;
    if (count > best) {
      best = count;
      best_lo = events[i].t;
      best_hi = i + 1 < events.size() ? events[i + 1].t : events[i].t;
    }
  }
  return 0.5 * (best_lo + best_hi);
}

Lot optimal_rework(const Lot& lot, const LotConfig& cfg) {
  const double t = optimal_shift(lot, cfg);
  Lot out;
  out.points = lot.points;
  const Eigen::Vector2d shift = t * cfg.unit_slope();
  out.points.col(0).array() += shift[0];
  out.points.col(1).array() += shift[1];
  return out;
}

Lot noisy_rework(const Lot& lot, Rng& rng, const LotConfig& cfg) {
  const double t = optimal_shift(lot, cfg);
  const Eigen::Vector2d shift =
      t * cfg.unit_slope() + Eigen::Vector2d(rng.normal(0.0, cfg.rework_noise_sd),
                                             rng.normal(0.0, cfg.rework_noise_sd));
  // additive item noise that inflates the within-lot spread by the configured
  // factor: sd^2 + add^2 = (sd * inflation)^2
  const double add_sd = cfg.within_lot_spread *
                        std::sqrt(std::max(0.0, cfg.dispersion_inflation *
                                                        cfg.dispersion_inflation -
                                                    1.0));
  Lot out;
  out.points = lot.points;
  for (int i = 0; i < out.points.rows(); ++i) {
    out.points(i, 0) += shift[0] + (add_sd > 0 ? rng.normal(0.0, add_sd) : 0.0);
    out.points(i, 1) += shift[1] + (add_sd > 0 ? rng.normal(0.0, add_sd) : 0.0);
  }
  return out;
}

ImprovementScores improvement_scores(const Lot& lot, const Lot& reworked_opt,
                                     const LotConfig& cfg) {
  ImprovementScores s;
  s.x_y = yield_criteria_stride(reworked_opt, cfg, cfg.m) -
          yield_criteria_stride(lot, cfg, cfg.m);
  s.x_e = yield_criteria(reworked_opt, cfg) - yield_criteria(lot, cfg);
  s.x_r = s.x_e - s.x_y;
  return s;
}

bool operator_decision(OperatorPolicy policy, bool i_d, double x_y, double x_e,
                       const LotConfig& cfg) {
  const bool i_y = x_y > cfg.c_y;
  const bool i_e = x_e > cfg.c_y;
  switch (policy) {
    case OperatorPolicy::Acknowledging: return i_d && i_y;
    case OperatorPolicy::Cautious: return i_d && i_y && i_e;
    case OperatorPolicy::Reasonable: return i_d && i_e;
  }
  return false;
}

namespace {
constexpr int kCovariates = 6;
}  // namespace

UnitCategory classify_policy_unit(OperatorPolicy policy, double xd_c, double xy_c,
                                  double xe_c, double xr) {
  switch (policy) {
    case OperatorPolicy::Acknowledging: {
      static const CutoffRule t2 = parse_rule("I1 & I2", 2);
      Eigen::Vector2d x(xd_c, xy_c);
      return classify_cutoff(t2, t2, x).category;
    }
    case OperatorPolicy::Cautious: {
      static const CutoffRule t3 = parse_rule("I1 & I2", 3);
      static const CutoffRule d3 = parse_rule("I1 & I2 & I3", 3);
      Eigen::Vector3d x(xd_c, xy_c, xe_c);
      return classify_cutoff(t3, d3, x).category;
    }
    case OperatorPolicy::Reasonable: {
      // the operator compares the full-information estimate against the same
      // moving cutoff as the assignment rule, which is not expressible as a
      // synchronous cutoff rule; probe it as a general decision rule
      static const CutoffRule t2 = parse_rule("I1 & I2", 2);
      Eigen::Vector2d x(xd_c, xy_c);
      const double xe_of_unit = xe_c;
      const DecisionFn d_fn = [xr](const Eigen::VectorXd& w) {
        return w[0] > 0.0 && w[1] + xr > 0.0;
      };
      GridSpec grid;
      const double far_d = std::abs(xd_c) + 1.0;
      const double far_y = std::max(std::abs(xy_c), std::abs(xe_of_unit)) + 1.0;
      grid.offsets = {
          {-far_d, -1e-6, 1e-6, far_d},
          {-far_y, -1e-6, 1e-6, 0.5 * (xy_c + xe_of_unit), far_y}};
      return classify_general(t2, d_fn, x, grid).category;
    }
  }
  return UnitCategory::Indecisive;
}

static SimPanel simulate_impl(std::uint64_t seed, std::int64_t n_lots,
                              const LotConfig& cfg, OperatorPolicy policy,
                              bool parallel) {
  cfg.validate();
  if (n_lots < 1) throw ConfigError("n_lots must be >= 1");
  const std::size_t n = static_cast<std::size_t>(n_lots);

  SimPanel panel;
  panel.lot_id.resize(n);
  panel.x_d.resize(n);
  panel.x_y.resize(n);
  panel.x_e.resize(n);
  panel.x_r.resize(n);
  panel.t.resize(n);
  panel.d.resize(n);
  panel.y.resize(n);
  panel.y0.resize(n);
  panel.y1.resize(n);
  panel.category.resize(n);
  panel.z.resize(static_cast<Eigen::Index>(n), kCovariates);
  panel.z_names = {"within_sd", "pre_yield_m", "box_dist", "off_curve",
                   "along_noisy", "workload"};

  const Eigen::Vector2d u = cfg.unit_slope();
  const Eigen::Vector2d u_perp(-u[1], u[0]);

  const auto simulate_one = [&](std::size_t i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    const Lot lot = generate_lot(rng, cfg);
    const double xd_raw = distance_score(lot, cfg);
    const Lot lot_opt = optimal_rework(lot, cfg);
    const ImprovementScores sc = improvement_scores(lot, lot_opt, cfg);

    const bool i_d = xd_raw > cfg.c_d;
    const bool i_y = sc.x_y > cfg.c_y;
    const bool t_bit = i_d && i_y;
    const bool d_bit = operator_decision(policy, i_d, sc.x_y, sc.x_e, cfg);

    const Lot lot_noisy = noisy_rework(lot, rng, cfg);
    const double y0 = yield_criteria(lot, cfg);
    const double y1 = yield_criteria(lot_noisy, cfg);

    // covariates: lot-quality statistics measured before the rework decision
    const Eigen::Vector2d mean = lot.points.colwise().mean();
    double var_sum = 0.0, box_dist = 0.0;
    for (int r = 0; r < lot.points.rows(); ++r) {
      const Eigen::Vector2d p = lot.points.row(r);
      var_sum += (p - mean).squaredNorm();
      const double dx =
          std::max(0.0, std::abs(p[0] - cfg.target[0]) - cfg.spec_halfwidths[0]);
      const double dy =
          std::max(0.0, std::abs(p[1] - cfg.target[1]) - cfg.spec_halfwidths[1]);
      box_dist += std::hypot(dx, dy);
    }
    const double within_sd = std::sqrt(var_sum / (2.0 * lot.points.rows()));
    box_dist /= static_cast<double>(lot.points.rows());
    const Eigen::Vector2d offset = mean - cfg.target;
    const double along = offset.dot(u);
    const double off_curve = offset.dot(u_perp);
    const double along_noisy = along + rng.normal(0.0, cfg.lot_mean_spread);
    const double workload = rng.normal(0.0, 1.0);

    const std::size_t row = i;
    panel.lot_id[row] = static_cast<std::int64_t>(i);
    panel.x_d[row] = xd_raw - cfg.c_d;
    panel.x_y[row] = sc.x_y - cfg.c_y;
    panel.x_e[row] = sc.x_e - cfg.c_y;
    panel.x_r[row] = sc.x_r;
    panel.t[row] = t_bit ? 1 : 0;
    panel.d[row] = d_bit ? 1 : 0;
    panel.y0[row] = y0;
    panel.y1[row] = y1;
    panel.y[row] = d_bit ? y1 : y0;
    panel.category[row] = classify_policy_unit(policy, panel.x_d[row], panel.x_y[row],
                                       panel.x_e[row], panel.x_r[row]);
    panel.z(static_cast<Eigen::Index>(row), 0) = within_sd;
    panel.z(static_cast<Eigen::Index>(row), 1) = yield_criteria_stride(lot, cfg, cfg.m);
    panel.z(static_cast<Eigen::Index>(row), 2) = box_dist;
    panel.z(static_cast<Eigen::Index>(row), 3) = off_curve;
    panel.z(static_cast<Eigen::Index>(row), 4) = along_noisy;
    panel.z(static_cast<Eigen::Index>(row), 5) = workload;
  };

  if (parallel) {
    parallel_for(n, simulate_one);
  } else {
    serial_for(n, simulate_one);
  }
  return panel;
}

SimPanel simulate_panel(std::uint64_t seed, std::int64_t n_lots, const LotConfig& cfg,
                        OperatorPolicy policy) {
  return simulate_impl(seed, n_lots, cfg, policy, true);
}

SimPanel simulate_panel_serial(std::uint64_t seed, std::int64_t n_lots,
                               const LotConfig& cfg, OperatorPolicy policy) {
  return simulate_impl(seed, n_lots, cfg, policy, false);
}

Dataset SimPanel::to_dataset() const {
  Dataset ds;
  std::vector<double> ids(lot_id.begin(), lot_id.end());
  ds.add_column("lot_id", std::move(ids));
  ds.add_column("x_d", x_d);
  ds.add_column("x_y", x_y);
  ds.add_column("x_e", x_e);
  ds.add_column("x_r", x_r);
  ds.add_column("t", std::vector<double>(t.begin(), t.end()));
  ds.add_column("d", std::vector<double>(d.begin(), d.end()));
  ds.add_column("y", y);
  ds.add_column("y0", y0);
  ds.add_column("y1", y1);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) col[static_cast<std::size_t>(r)] = z(r, j);
    ds.add_column("z_" + std::to_string(j + 1), std::move(col));
  }
  ds.set_categories(category);
  return ds;
}

SimPanel SimPanel::from_dataset(const Dataset& ds) {
  SimPanel p;
  const std::size_t n = ds.n_rows();
  const auto& ids = ds.column("lot_id");
  p.lot_id.assign(ids.begin(), ids.end());
  p.x_d = ds.column("x_d");
  p.x_y = ds.column("x_y");
  p.x_e = ds.column("x_e");
  p.x_r = ds.column("x_r");
  const auto to_bits = [&](const std::vector<double>& col, const char* name) {
    std::vector<std::uint8_t> bits(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (col[i] != 0.0 && col[i] != 1.0)
        throw DataError(std::string("column '") + name + "' must be 0/1");
      bits[i] = col[i] != 0.0;
    }
    return bits;
  };
  p.t = to_bits(ds.column("t"), "t");
  p.d = to_bits(ds.column("d"), "d");
  p.y = ds.column("y");
  p.y0 = ds.column("y0");
  p.y1 = ds.column("y1");
  if (ds.has_categories()) p.category = ds.categories();

  std::vector<std::string> zn;
  for (const std::string& name : ds.column_names()) {
    if (name.rfind("z_", 0) == 0) zn.push_back(name);
  }
  p.z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(zn.size()));
  for (std::size_t j = 0; j < zn.size(); ++j) {
    const auto& col = ds.column(zn[j]);
    for (std::size_t i = 0; i < n; ++i)
      p.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  p.z_names = zn;
  return p;
}

// --- oracles -------------------------------------------------------------------

std::vector<std::uint8_t> axis_complier_mask(const SimPanel& panel, ScoreAxis axis,
                                             OperatorPolicy policy) {
  const std::size_t n = panel.size();
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xd = panel.x_d[i], xy = panel.x_y[i], xe = panel.x_e[i];
    bool comp = false;
    if (axis == ScoreAxis::Distance) {
      switch (policy) {
        case OperatorPolicy::Acknowledging: comp = xy > 0.0; break;
        case OperatorPolicy::Cautious: comp = xy > 0.0 && xe > 0.0; break;
        case OperatorPolicy::Reasonable: comp = xe > 0.0; break;
      }
    } else {
      switch (policy) {
        case OperatorPolicy::Acknowledging: comp = xd > 0.0; break;
        case OperatorPolicy::Cautious: comp = xd > 0.0 && xe > 0.0; break;
        case OperatorPolicy::Reasonable:
          comp = xd > 0.0 && panel.x_r[i] == 0.0;
          break;
      }
    }
    mask[i] = comp ? 1 : 0;
  }
  return mask;
}

std::vector<UnitCategory> axis_pair_categories(const SimPanel& panel, ScoreAxis axis,
                                               OperatorPolicy policy) {
  static const CutoffRule g_d3 = parse_rule("I1", 3);
  static const CutoffRule g_y3 = parse_rule("I2", 3);
  static const CutoffRule d_ack3 = parse_rule("I1 & I2", 3);
  static const CutoffRule d_caut3 = parse_rule("I1 & I2 & I3", 3);
  static const CutoffRule d_reas3 = parse_rule("I1 & I3", 3);
  static const CutoffRule g_y2 = parse_rule("I2", 2);

  const std::size_t n = panel.size();
  std::vector<UnitCategory> out(n);
  const bool dist = axis == ScoreAxis::Distance;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d x(panel.x_d[i], panel.x_y[i], panel.x_e[i]);
    switch (policy) {
      case OperatorPolicy::Acknowledging:
        out[i] = classify_cutoff(dist ? g_d3 : g_y3, d_ack3, x).category;
        break;
      case OperatorPolicy::Cautious:
        out[i] = classify_cutoff(dist ? g_d3 : g_y3, d_caut3, x).category;
        break;
      case OperatorPolicy::Reasonable: {
        if (dist) {
          // cutoff moves only along the distance axis, so the operator's
          // private threshold stays put and the pair is synchronous
          out[i] = classify_cutoff(g_d3, d_reas3, x).category;
        } else {
          // the moving yield cutoff shifts the private threshold too
          const double xr = panel.x_r[i];
          const double xd = panel.x_d[i];
          const DecisionFn d_fn = [xr, xd](const Eigen::VectorXd& w) {
            return xd > 0.0 && w[1] + xr > 0.0;
          };
          GridSpec grid;
          const double far =
              std::max(std::abs(panel.x_y[i]), std::abs(panel.x_e[i])) + 1.0;
          grid.offsets = {
              {-far, -1e-6, 1e-6, 0.5 * (panel.x_y[i] + panel.x_e[i]), far}};
          const Eigen::Vector2d x2(panel.x_d[i], panel.x_y[i]);
          out[i] = classify_general(g_y2, d_fn, x2, grid).category;
        }
        break;
      }
    }
  }
  return out;
}

namespace {

// policy decision under the two forced assignment-indicator arms
void forced_arm_decisions(const SimPanel& panel, ScoreAxis axis,
                          OperatorPolicy policy, std::size_t i, bool& d_plus,
                          bool& d_minus) {
  const bool i_d = panel.x_d[i] > 0.0;
  const bool i_y = panel.x_y[i] > 0.0;
  const bool i_e = panel.x_e[i] > 0.0;
  const auto decide = [&](bool id_bit, bool iy_bit) {
    switch (policy) {
      case OperatorPolicy::Acknowledging: return id_bit && iy_bit;
      case OperatorPolicy::Cautious: return id_bit && iy_bit && i_e;
      case OperatorPolicy::Reasonable: return id_bit && i_e;
    }
    return false;
  };
  if (axis == ScoreAxis::Distance) {
    d_plus = decide(true, i_y);
    d_minus = decide(false, i_y);
  } else {
    d_plus = decide(i_d, true);
    d_minus = decide(i_d, false);
  }
}

}  // namespace

double oracle_effect(const SimPanel& panel, ScoreAxis axis, OracleEstimand estimand,
                     OperatorPolicy policy, Kernel kernel, double h) {
  const std::vector<double>& xs = axis == ScoreAxis::Distance ? panel.x_d : panel.x_y;
  std::vector<double> x_fit, v_fit;
  if (estimand == OracleEstimand::Complier) {
    const std::vector<std::uint8_t> comp = axis_complier_mask(panel, axis, policy);
    for (std::size_t i = 0; i < panel.size(); ++i) {
      if (!comp[i]) continue;
      x_fit.push_back(xs[i]);
      v_fit.push_back(panel.y1[i] - panel.y0[i]);
    }
  } else {
    for (std::size_t i = 0; i < panel.size(); ++i) {
      bool dp = false, dm = false;
      forced_arm_decisions(panel, axis, policy, i, dp, dm);
      x_fit.push_back(xs[i]);
      v_fit.push_back((static_cast<double>(dp) - static_cast<double>(dm)) *
                      (panel.y1[i] - panel.y0[i]));
    }
  }
  return local_linear_level(x_fit, v_fit, kernel, h);
}

double oracle_effect_auto(const SimPanel& panel, ScoreAxis axis,
                          OracleEstimand estimand, OperatorPolicy policy,
                          Kernel kernel) {
  const std::vector<double>& xs = axis == ScoreAxis::Distance ? panel.x_d : panel.x_y;
  std::vector<double> contrast(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i)
    contrast[i] = panel.y1[i] - panel.y0[i];
  const Bandwidths bw =
      select_bandwidth(xs, contrast, kernel, BandwidthSpec::mse_optimal());
  return oracle_effect(panel, axis, estimand, policy, kernel, bw.h);
}

double oracle_defier_correction(const SimPanel& panel, ScoreAxis axis, Kernel kernel,
                                double h) {
  if (panel.category.size() != panel.size())
    throw DataError("defier correction requires the category column");
  const std::vector<double>& xs = axis == ScoreAxis::Distance ? panel.x_d : panel.x_y;
  double w_df = 0.0, w_c = 0.0;
  std::vector<double> x_df, v_df;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const double w = kernel_weight(kernel, xs[i] / h);
    if (w <= 0.0) continue;
    if (panel.category[i] == UnitCategory::Defier) {
      w_df += w;
      x_df.push_back(xs[i]);
      v_df.push_back(panel.y0[i] - panel.y1[i]);
    } else if (panel.category[i] == UnitCategory::Complier) {
      w_c += w;
    }
  }
  if (w_df <= 0.0) return 0.0;
  if (w_c <= 0.0)
    throw EstimationError("defier correction undefined: no compliers near the cutoff");
  const double contrast = local_linear_level(x_df, v_df, kernel, h);
  return (w_df / w_c) * contrast;
}

}  // namespace mrd
