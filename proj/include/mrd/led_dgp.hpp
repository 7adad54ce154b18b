#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrd/classify.hpp"
#include "mrd/dataset.hpp"
#include "mrd/estimation.hpp"
#include "mrd/rng.hpp"

namespace mrd {

// How the human decision-maker uses the improvement scores when the distance
// rule indicates rework.
enum class OperatorPolicy { Acknowledging, Cautious, Reasonable };

const char* policy_name(OperatorPolicy p);
OperatorPolicy policy_from_name(const std::string& name);

// Production parameters of the simulated color-conversion step. Units are
// chromaticity-coordinate units unless stated otherwise.
struct LotConfig {
  int n_items = 784;
  int m = 28;  // every m-th item gets an intermediate measurement
  Eigen::Vector2d target{0.33, 0.33};
  Eigen::Vector2d spec_halfwidths{0.010, 0.010};
  double mean_shift = 0.008;        // systematic undershoot along the conversion curve
  double lot_mean_spread = 0.004;   // sd of the lot-mean scatter around the undershoot
  double within_lot_spread = 0.006; // sd of items around the lot mean
  double spread_heterogeneity = 0.6;  // log-sd of the lot-level spread factor
  Eigen::Vector2d conversion_slope{1.0, 0.8};  // normalized on use
  double rework_noise_sd = 0.0015;  // sd of the realized shift around the planned one
  double dispersion_inflation = 1.25;  // multiplicative spread increase from rework
  double c_d = 0.008;  // distance-score cutoff
  double c_y = 0.15;   // yield-improvement cutoff

  Eigen::Vector2d unit_slope() const { return conversion_slope.normalized(); }
  void validate() const;
};

struct Lot {
  Eigen::MatrixX2d points;  // n_items x 2 color coordinates
};

// Per-lot simulation record. Scores are stored centered at their cutoffs,
// so every estimator and rule below runs against cutoff zero.
struct SimPanel {
  std::vector<std::int64_t> lot_id;
  std::vector<double> x_d, x_y, x_e, x_r;
  std::vector<std::uint8_t> t, d;
  std::vector<double> y, y0, y1;
  std::vector<UnitCategory> category;
  Eigen::MatrixXd z;
  std::vector<std::string> z_names;

  std::size_t size() const { return lot_id.size(); }
  const std::vector<double>& axis(const std::string& name) const;
  Dataset to_dataset() const;
  static SimPanel from_dataset(const Dataset& ds);
};

// --- process steps (Algorithm-level pieces) ----------------------------------

Lot generate_lot(Rng& rng, const LotConfig& cfg);

// Signed remaining distance along the conversion curve from the lot mean to
// the closest achievable point to the target; larger = stronger rework
// indication. Uncentered (cutoff c_d applies).
double distance_score(const Lot& lot, const LotConfig& cfg);

// Share of items inside the specification box around the target.
double yield_criteria(const Lot& lot, const LotConfig& cfg);
double yield_criteria_stride(const Lot& lot, const LotConfig& cfg, int stride);

// Deterministic shift along the conversion curve that maximizes the full-lot
// yield (exact interval sweep).
double optimal_shift(const Lot& lot, const LotConfig& cfg);
Lot optimal_rework(const Lot& lot, const LotConfig& cfg);

// Planned shift plus realization noise plus item-level dispersion inflation.
Lot noisy_rework(const Lot& lot, Rng& rng, const LotConfig& cfg);

struct ImprovementScores {
  double x_y = 0.0;  // stride-m estimate (uncentered)
  double x_e = 0.0;  // full-lot estimate (uncentered)
  double x_r = 0.0;  // x_e - x_y
};

ImprovementScores improvement_scores(const Lot& lot, const Lot& reworked_opt,
                                     const LotConfig& cfg);

// Final rework decision given the distance indicator and the improvement
// scores (uncentered; cutoffs from cfg).
bool operator_decision(OperatorPolicy policy, bool i_d, double x_y, double x_e,
                       const LotConfig& cfg);

// --- panel simulation ---------------------------------------------------------

// One lot per row; per-lot RNG streams derive from (seed, lot index), so the
// result is identical for any worker count. simulate_panel_serial is the
// reference implementation the parallel path is tested against.
SimPanel simulate_panel(std::uint64_t seed, std::int64_t n_lots, const LotConfig& cfg,
                        OperatorPolicy policy);
SimPanel simulate_panel_serial(std::uint64_t seed, std::int64_t n_lots,
                               const LotConfig& cfg, OperatorPolicy policy);

// Behavior category of one unit under the policy's decision rule, from the
// centered scores. Acknowledging and cautious operators are synchronous
// cutoff rules; the reasonable operator is probed as a general decision rule.
UnitCategory classify_policy_unit(OperatorPolicy policy, double xd_c, double xy_c,
                                  double xe_c, double x_r);

// --- oracles -------------------------------------------------------------------

enum class ScoreAxis { Distance, Yield };

const char* axis_column(ScoreAxis a);  // "x_d" / "x_y"

// Compliers of (I_axis, D) in closed form for the shipped policies.
std::vector<std::uint8_t> axis_complier_mask(const SimPanel& panel, ScoreAxis axis,
                                             OperatorPolicy policy);

// Categories of the (G, D) pair where G is the single-score rule of the
// axis; this is the pair a per-axis estimand quantifies over, and the pair
// an exclusion set must be validated against.
std::vector<UnitCategory> axis_pair_categories(const SimPanel& panel, ScoreAxis axis,
                                               OperatorPolicy policy);

enum class OracleEstimand { Complier, Itt };

// Local linear level at the cutoff of the per-lot contrast: y1 - y0 among
// axis compliers for the complier estimand; (d+ - d-) * (y1 - y0) for the
// intent-to-treat estimand, where d+/- are the policy decisions under the
// two forced assignment arms.
double oracle_effect(const SimPanel& panel, ScoreAxis axis, OracleEstimand estimand,
                     OperatorPolicy policy, Kernel kernel, double h);

// Same with a plug-in bandwidth.
double oracle_effect_auto(const SimPanel& panel, ScoreAxis axis,
                          OracleEstimand estimand, OperatorPolicy policy,
                          Kernel kernel);

// Theorem-1 correction term: defier share over complier share near the
// cutoff times the defier potential-outcome contrast. Zero when no defiers.
double oracle_defier_correction(const SimPanel& panel, ScoreAxis axis, Kernel kernel,
                                double h);

}  // namespace mrd
