#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrd/errors.hpp"
#include "mrd/learners.hpp"
#include "mrd/rule.hpp"

namespace mrd {

enum class Kernel { Triangular, Uniform, Epanechnikov };

const char* kernel_name(Kernel k);
Kernel kernel_from_name(const std::string& name);
double kernel_weight(Kernel k, double u);  // support |u| <= 1

struct BandwidthSpec {
  enum class Mode { Fixed, MseOptimal };
  Mode mode = Mode::MseOptimal;
  double h = 0.0;

  static BandwidthSpec fixed(double h) {
    BandwidthSpec s;
    s.mode = Mode::Fixed;
    s.h = h;
    return s;
  }
  static BandwidthSpec mse_optimal() { return BandwidthSpec{}; }
};

struct Bandwidths {
  double h = 0.0;  // estimation bandwidth
  double b = 0.0;  // pilot bandwidth for the bias estimate
};

// Local linear jump at zero of v on centered scores x. Units with x <= 0
// form the left (control) side. weights_* are full-length vectors so that
// jump == sum(weights_right * v) - sum(weights_left * v).
struct LocalLinearJump {
  double jump = 0.0;
  double intercept_left = 0.0, intercept_right = 0.0;
  double slope_left = 0.0, slope_right = 0.0;
  double var_left = 0.0, var_right = 0.0;  // HC variance of the intercepts
  int n_left = 0, n_right = 0;             // points with positive kernel weight
  std::vector<double> weights_left, weights_right;

  double se() const;
};

LocalLinearJump local_linear_jump(const std::vector<double>& x,
                                  const std::vector<double>& v, Kernel kernel, double h);

// Side-averaged local linear level at zero (both one-sided intercepts
// averaged); used for oracle quantities.
double local_linear_level(const std::vector<double>& x, const std::vector<double>& v,
                          Kernel kernel, double h);

Bandwidths select_bandwidth(const std::vector<double>& x, const std::vector<double>& v,
                            Kernel kernel, const BandwidthSpec& spec);

struct RdEstimate {
  double coef = 0.0;
  double se = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  double h = 0.0, b = 0.0;
  int n_left = 0, n_right = 0;
  FitReport first_stage;
  bool fuzzy = false;
  bool subset = false;
  double numer_jump = 0.0;  // bias-corrected outcome jump
  double denom_jump = 1.0;  // treatment-probability jump (fuzzy)
  std::vector<std::string> warnings;
};

struct WeakIdentificationError : EstimationError {
  double numer_jump;
  double denom_jump;
  WeakIdentificationError(double numer, double denom);
};

// Inputs are column vectors over the same rows; x must already be centered
// at the cutoff of the chosen axis.
struct EstimationInput {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> d;             // required for fuzzy
  std::vector<double> t;             // assignment, used for diagnostics only
  Eigen::MatrixXd z;                 // n x p covariates (p may be 0)
  std::vector<std::int64_t> unit_id; // stable ids for fold assignment
};

struct EstimatorOptions {
  Kernel kernel = Kernel::Triangular;
  BandwidthSpec bandwidth = BandwidthSpec::mse_optimal();
  LearnerSpec learner = LearnerSpec::of(LearnerKind::NoAdjust);
  std::uint64_t seed = 0;
};

RdEstimate sharp_estimate(const EstimationInput& in, const EstimatorOptions& opt);
RdEstimate fuzzy_estimate(const EstimationInput& in, const EstimatorOptions& opt);

// Re-estimates on the rows with keep[i] != 0 and flags the result as a
// subset estimate. The mask must come from a valid exclusion set (nevertaker
// / alwaystaker only); that is enforced where the mask is built.
RdEstimate subset_estimate(const EstimationInput& in,
                           const std::vector<std::uint8_t>& keep, bool fuzzy,
                           const EstimatorOptions& opt);

// --- one-dimensional reductions of a two-score rule --------------------------

// AND rule -> min of normalized scores, OR rule -> max. Positive = treated.
std::vector<double> binding_score(const std::vector<double>& a,
                                  const std::vector<double>& b, BoolOp op,
                                  double scale_a, double scale_b);

// Signed shortest distance to a point on the cutoff frontier of the
// two-dimensional AND rule (both scores centered); positive on the treated
// quadrant.
std::vector<double> euclidean_score(const std::vector<double>& a,
                                    const std::vector<double>& b,
                                    const Eigen::Vector2d& frontier_point);

// --- validation and plotting -------------------------------------------------

struct PseudoCutoffRow {
  double shift = 0.0;
  RdEstimate estimate;
};

// Placebo estimates at shifted cutoffs. Negative shifts are estimated inside
// the control sample, positive shifts inside the treated sample, shift zero
// on the full sample.
std::vector<PseudoCutoffRow> pseudo_cutoff_test(const EstimationInput& in,
                                                const std::vector<double>& shifts,
                                                bool fuzzy,
                                                const EstimatorOptions& opt);

struct RdPlotBin {
  double center = 0.0;
  int count = 0;
  double mean = 0.0;  // NaN when count == 0
};

struct RdPlotData {
  std::vector<RdPlotBin> bins;
  // fitted local linear segments, evaluated at the window edges
  double left_x0 = 0, left_y0 = 0, left_x1 = 0, left_y1 = 0;
  double right_x0 = 0, right_y0 = 0, right_x1 = 0, right_y1 = 0;
  double h = 0.0;
};

RdPlotData rd_plot_data(const std::vector<double>& x, const std::vector<double>& v,
                        int bins_per_side, Kernel kernel, double h);

}  // namespace mrd
