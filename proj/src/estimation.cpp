#include "mrd/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

namespace mrd {

namespace {

constexpr double kZ975 = 1.959963984540054;
constexpr double kWeakDenominator = 0.01;

// one-sided kernel moments nu_j = int_0^1 u^j K(u) du and
// psi_j = int_0^1 u^j K(u)^2 du (closed forms; the kernels are polynomials)
double nu(Kernel k, int j) {
  const double a = 1.0 / (j + 1);
  switch (k) {
    case Kernel::Uniform: return a;
    case Kernel::Triangular: return a - 1.0 / (j + 2);
    case Kernel::Epanechnikov: return a - 1.0 / (j + 3);
  }
  return a;
}

double psi(Kernel k, int j) {
  const double a = 1.0 / (j + 1);
  switch (k) {
    case Kernel::Uniform: return a;
    case Kernel::Triangular: return a - 2.0 / (j + 2) + 1.0 / (j + 3);
    case Kernel::Epanechnikov: return a - 2.0 / (j + 3) + 1.0 / (j + 5);
  }
  return a;
}

// local-linear boundary bias constant: the intercept estimate picks up
// h^2 * bias_const * (m''/2) when the truth has curvature m''
double bias_const(Kernel k) {
  const double n0 = nu(k, 0), n1 = nu(k, 1), n2 = nu(k, 2), n3 = nu(k, 3);
  return (n2 * n2 - n1 * n3) / (n0 * n2 - n1 * n1);
}

// local-linear boundary variance constant: var = V_K sigma^2 / (f n h)
double var_const(Kernel k) {
  const double n0 = nu(k, 0), n1 = nu(k, 1), n2 = nu(k, 2);
  const double p0 = psi(k, 0), p1 = psi(k, 1), p2 = psi(k, 2);
  const double det = n0 * n2 - n1 * n1;
  return (n2 * n2 * p0 - 2.0 * n1 * n2 * p1 + n1 * n1 * p2) / (det * det);
}

struct SideFit {
  std::vector<std::size_t> idx;  // rows with positive kernel weight
  Eigen::MatrixXd coef_weights;  // (order+1) x n_side; beta_j = row_j . v
  Eigen::MatrixXd design;        // n_side x (order+1)
  Eigen::VectorXd values;
  Eigen::VectorXd beta;
  Eigen::VectorXd resid;
  int n_distinct = 0;
};

// weighted polynomial fit on one side; side selected by the caller via idx
SideFit side_poly_fit(const std::vector<double>& x, const std::vector<double>& v,
                      const std::vector<std::size_t>& rows, Kernel kernel, double h,
                      int order, const char* side_name) {
  SideFit fit;
  for (const std::size_t i : rows) {
    const double w = kernel_weight(kernel, x[i] / h);
    if (w > 0.0) fit.idx.push_back(i);
  }
  std::vector<double> distinct;
  for (const std::size_t i : fit.idx) distinct.push_back(x[i]);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  fit.n_distinct = static_cast<int>(distinct.size());
  if (fit.n_distinct < order + 1) {
    throw EstimationError(std::string("insufficient support on the ") + side_name +
                          " side of the cutoff");
  }

  const Eigen::Index m = static_cast<Eigen::Index>(fit.idx.size());
  Eigen::MatrixXd xw(m, order + 1);  // sqrt-weighted design
  fit.design.resize(m, order + 1);
  fit.values.resize(m);
  Eigen::VectorXd w(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t i = fit.idx[static_cast<std::size_t>(r)];
    w[r] = kernel_weight(kernel, x[i] / h);
    double pow_x = 1.0;
    for (int j = 0; j <= order; ++j) {
      fit.design(r, j) = pow_x;
      pow_x *= x[i];
    }
    fit.values[r] = v[i];
  }
  const Eigen::MatrixXd xtw = fit.design.transpose() * w.asDiagonal();
  const Eigen::MatrixXd mmat = xtw * fit.design;
  const auto ldlt = mmat.ldlt();
  if (ldlt.info() != Eigen::Success) {
    throw EstimationError(std::string("singular local design on the ") + side_name +
                          " side");
  }
  fit.coef_weights = ldlt.solve(xtw);
  fit.beta = fit.coef_weights * fit.values;
  fit.resid = fit.values - fit.design * fit.beta;
  return fit;
}

std::vector<std::size_t> side_rows(const std::vector<double>& x, bool right) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (right ? x[i] > 0.0 : x[i] <= 0.0) rows.push_back(i);
  }
  return rows;
}

double hc1_factor(Eigen::Index n, int k) {
  return n > k ? static_cast<double>(n) / static_cast<double>(n - k) : 1.0;
}

// bias-corrected jump: local-linear at h minus the local-quadratic curvature
// estimate at pilot b; the whole thing stays a linear functional of v, so the
// robust variance is a plain sandwich over the combined weights.
struct BcJump {
  double coef = 0.0;
  double raw_jump = 0.0;
  double var = 0.0;
  int n_left = 0, n_right = 0;
  Eigen::VectorXd omega;  // full length; coef == omega . v
  Eigen::VectorXd resid;  // full length; HC1-scaled residuals from the pilot fits
};

BcJump bc_jump(const std::vector<double>& x, const std::vector<double>& v,
               Kernel kernel, double h, double b) {
  const std::vector<std::size_t> left = side_rows(x, false);
  const std::vector<std::size_t> right = side_rows(x, true);
  const SideFit lin_l = side_poly_fit(x, v, left, kernel, h, 1, "left");
  const SideFit lin_r = side_poly_fit(x, v, right, kernel, h, 1, "right");
  const SideFit quad_l = side_poly_fit(x, v, left, kernel, b, 2, "left");
  const SideFit quad_r = side_poly_fit(x, v, right, kernel, b, 2, "right");

  // exact finite-sample bias of the local-linear intercept against curvature:
  // the intercept's response to the x^2 component of the outcome. Scaling the
  // pilot-estimated x^2 coefficient by this makes the correction exact on
  // quadratics rather than only to the asymptotic kernel constant.
  const auto curvature_response = [&](const SideFit& lin) {
    double resp = 0.0;
    for (std::size_t r = 0; r < lin.idx.size(); ++r) {
      const double xi = x[lin.idx[r]];
      resp += lin.coef_weights(0, static_cast<Eigen::Index>(r)) * xi * xi;
    }
    return resp;
  };
  const double kappa_l = curvature_response(lin_l);
  const double kappa_r = curvature_response(lin_r);

  const std::size_t n = x.size();
  BcJump out;
  out.omega = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  out.resid = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < lin_r.idx.size(); ++r)
    out.omega[static_cast<Eigen::Index>(lin_r.idx[r])] +=
        lin_r.coef_weights(0, static_cast<Eigen::Index>(r));
  for (std::size_t r = 0; r < lin_l.idx.size(); ++r)
    out.omega[static_cast<Eigen::Index>(lin_l.idx[r])] -=
        lin_l.coef_weights(0, static_cast<Eigen::Index>(r));
  for (std::size_t r = 0; r < quad_r.idx.size(); ++r)
    out.omega[static_cast<Eigen::Index>(quad_r.idx[r])] -=
        kappa_r * quad_r.coef_weights(2, static_cast<Eigen::Index>(r));
  for (std::size_t r = 0; r < quad_l.idx.size(); ++r)
    out.omega[static_cast<Eigen::Index>(quad_l.idx[r])] +=
        kappa_l * quad_l.coef_weights(2, static_cast<Eigen::Index>(r));

  const double fl = std::sqrt(hc1_factor(static_cast<Eigen::Index>(quad_l.idx.size()), 3));
  const double fr = std::sqrt(hc1_factor(static_cast<Eigen::Index>(quad_r.idx.size()), 3));
  for (std::size_t r = 0; r < quad_l.idx.size(); ++r)
    out.resid[static_cast<Eigen::Index>(quad_l.idx[r])] =
        fl * quad_l.resid[static_cast<Eigen::Index>(r)];
  for (std::size_t r = 0; r < quad_r.idx.size(); ++r)
    out.resid[static_cast<Eigen::Index>(quad_r.idx[r])] =
        fr * quad_r.resid[static_cast<Eigen::Index>(r)];

  out.raw_jump = lin_r.beta[0] - lin_l.beta[0];
  out.coef = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.coef += out.omega[static_cast<Eigen::Index>(i)] * v[i];
  out.var = (out.omega.array().square() * out.resid.array().square()).sum();
  out.n_left = static_cast<int>(lin_l.idx.size());
  out.n_right = static_cast<int>(lin_r.idx.size());
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// side-wise quadratic pilot: curvature, its sampling variance and the
// residual variance inside the closer half of the side
struct PilotSide {
  double m2 = 0.0;      // second derivative estimate
  double var_m2 = 0.0;  // sampling variance of m2
  double sigma2 = 0.0;  // residual variance near the cutoff
};

PilotSide pilot_side(const std::vector<double>& x, const std::vector<double>& v,
                     const std::vector<std::size_t>& rows) {
  PilotSide out;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd design(m, 3);
  Eigen::VectorXd vals(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double xi = x[rows[static_cast<std::size_t>(r)]];
    design(r, 0) = 1.0;
    design(r, 1) = xi;
    design(r, 2) = xi * xi;
    vals[r] = v[rows[static_cast<std::size_t>(r)]];
  }
  const Eigen::MatrixXd gram = design.transpose() * design;
  const auto ldlt = gram.ldlt();
  if (ldlt.info() != Eigen::Success)
    throw EstimationError("degenerate score distribution in bandwidth pilot");
  const Eigen::VectorXd beta = ldlt.solve(design.transpose() * vals);
  const Eigen::VectorXd resid = vals - design * beta;
  out.m2 = 2.0 * beta[2];

  // HC variance of beta2
  const Eigen::MatrixXd ginv = ldlt.solve(Eigen::MatrixXd::Identity(3, 3));
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(3, 3);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Vector3d d = design.row(r);
    meat += resid[r] * resid[r] * d * d.transpose();
  }
  const Eigen::MatrixXd cov = ginv * meat * ginv;
  out.var_m2 = 4.0 * cov(2, 2) * hc1_factor(m, 3);

  // residual variance in the uniform pilot window (closer half of the side)
  std::vector<double> abs_x;
  for (const std::size_t i : rows) abs_x.push_back(std::abs(x[i]));
  std::sort(abs_x.begin(), abs_x.end());
  const double med = quantile_sorted(abs_x, 0.5);
  double ss = 0.0;
  Eigen::Index cnt = 0;
  for (Eigen::Index r = 0; r < m; ++r) {
    if (std::abs(x[rows[static_cast<std::size_t>(r)]]) <= med) {
      ss += resid[r] * resid[r];
      ++cnt;
    }
  }
  if (cnt < 5) {
    ss = resid.squaredNorm();
    cnt = m;
  }
  out.sigma2 = ss / static_cast<double>(std::max<Eigen::Index>(cnt - 3, 1));
  return out;
}

// smallest h such that both sides have at least `need` distinct points with
// positive kernel weight inside (0, h)
double min_bandwidth(const std::vector<double>& x, int need) {
  double hmin = 0.0;
  for (const bool right : {false, true}) {
    std::vector<double> abs_x;
    for (const std::size_t i : side_rows(x, right)) abs_x.push_back(std::abs(x[i]));
    std::sort(abs_x.begin(), abs_x.end());
    abs_x.erase(std::unique(abs_x.begin(), abs_x.end()), abs_x.end());
    if (static_cast<int>(abs_x.size()) < need)
      throw EstimationError("degenerate score distribution: too few distinct points");
    hmin = std::max(hmin, abs_x[static_cast<std::size_t>(need - 1)] * (1.0 + 1e-6));
  }
  return hmin;
}

}  // namespace

const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::Triangular: return "triangular";
    case Kernel::Uniform: return "uniform";
    case Kernel::Epanechnikov: return "epanechnikov";
  }
  return "?";
}

Kernel kernel_from_name(const std::string& name) {
  if (name == "triangular") return Kernel::Triangular;
  if (name == "uniform") return Kernel::Uniform;
  if (name == "epanechnikov") return Kernel::Epanechnikov;
  throw ConfigError("unknown kernel '" + name + "'");
}

double kernel_weight(Kernel k, double u) {
  const double a = std::abs(u);
  if (a > 1.0) return 0.0;
  switch (k) {
    case Kernel::Triangular: return 1.0 - a;
    case Kernel::Uniform: return 1.0;
    case Kernel::Epanechnikov: return 1.0 - a * a;
  }
  return 0.0;
}

double LocalLinearJump::se() const { return std::sqrt(var_left + var_right); }

LocalLinearJump local_linear_jump(const std::vector<double>& x,
                                  const std::vector<double>& v, Kernel kernel,
                                  double h) {
  if (x.size() != v.size()) throw DataError("local_linear_jump: length mismatch");
  if (!(h > 0.0)) throw EstimationError("bandwidth must be positive");
  const SideFit l = side_poly_fit(x, v, side_rows(x, false), kernel, h, 1, "left");
  const SideFit r = side_poly_fit(x, v, side_rows(x, true), kernel, h, 1, "right");

  LocalLinearJump out;
  out.intercept_left = l.beta[0];
  out.intercept_right = r.beta[0];
  out.slope_left = l.beta[1];
  out.slope_right = r.beta[1];
  out.jump = out.intercept_right - out.intercept_left;
  out.n_left = static_cast<int>(l.idx.size());
  out.n_right = static_cast<int>(r.idx.size());
  out.weights_left.assign(x.size(), 0.0);
  out.weights_right.assign(x.size(), 0.0);
  const double fl = hc1_factor(static_cast<Eigen::Index>(l.idx.size()), 2);
  const double fr = hc1_factor(static_cast<Eigen::Index>(r.idx.size()), 2);
  double var_l = 0.0, var_r = 0.0;
  for (std::size_t i = 0; i < l.idx.size(); ++i) {
    const double w = l.coef_weights(0, static_cast<Eigen::Index>(i));
    out.weights_left[l.idx[i]] = w;
    var_l += w * w * l.resid[static_cast<Eigen::Index>(i)] * l.resid[static_cast<Eigen::Index>(i)];
  }
  for (std::size_t i = 0; i < r.idx.size(); ++i) {
    const double w = r.coef_weights(0, static_cast<Eigen::Index>(i));
    out.weights_right[r.idx[i]] = w;
    var_r += w * w * r.resid[static_cast<Eigen::Index>(i)] * r.resid[static_cast<Eigen::Index>(i)];
  }
  out.var_left = var_l * fl;
  out.var_right = var_r * fr;
  return out;
}

double local_linear_level(const std::vector<double>& x, const std::vector<double>& v,
                          Kernel kernel, double h) {
  const std::vector<std::size_t> left = side_rows(x, false);
  const std::vector<std::size_t> right = side_rows(x, true);
  if (left.empty() || right.empty())
    throw EstimationError("empty side in local linear level");
  const SideFit l = side_poly_fit(x, v, left, kernel, h, 1, "left");
  const SideFit r = side_poly_fit(x, v, right, kernel, h, 1, "right");
  return 0.5 * (l.beta[0] + r.beta[0]);
}

Bandwidths select_bandwidth(const std::vector<double>& x, const std::vector<double>& v,
                            Kernel kernel, const BandwidthSpec& spec) {
  if (spec.mode == BandwidthSpec::Mode::Fixed) {
    if (!(spec.h > 0.0)) throw ConfigError("fixed bandwidth must be positive");
    return {spec.h, 1.5 * spec.h};
  }
  if (x.size() != v.size()) throw DataError("select_bandwidth: length mismatch");
  const std::vector<std::size_t> left = side_rows(x, false);
  const std::vector<std::size_t> right = side_rows(x, true);
  if (left.size() < 25 || right.size() < 25)
    throw EstimationError("degenerate score distribution: need at least 25 points per side");

  const PilotSide pl = pilot_side(x, v, left);
  const PilotSide pr = pilot_side(x, v, right);

  // density at the cutoff from a Silverman-style window
  const std::size_t n = x.size();
  double mean = 0.0;
  for (const double xi : x) mean += xi;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const double xi : x) var += (xi - mean) * (xi - mean);
  var /= static_cast<double>(n);
  const double wf = 1.84 * std::sqrt(var) * std::pow(static_cast<double>(n), -0.2);
  std::size_t cnt = 0;
  for (const double xi : x)
    if (std::abs(xi) <= wf) ++cnt;
  if (cnt == 0 || wf <= 0.0)
    throw EstimationError("degenerate score distribution: no mass at the cutoff");
  const double f0 = static_cast<double>(cnt) / (2.0 * wf * static_cast<double>(n));

  const double bk = bias_const(kernel);
  const double vk = var_const(kernel);
  const double bias_term = 0.5 * bk * (pr.m2 - pl.m2);
  const double reg = 0.25 * bk * bk * 3.0 * (pl.var_m2 + pr.var_m2);
  const double vterm = vk * (pl.sigma2 + pr.sigma2) / f0;
  double h = std::pow(
      vterm / (4.0 * (bias_term * bias_term + reg) * static_cast<double>(n)), 0.2);

  double max_abs = 0.0;
  for (const double xi : x) max_abs = std::max(max_abs, std::abs(xi));
  h = std::min(h, max_abs);
  h = std::max(h, min_bandwidth(x, 2));
  h = std::max(h, min_bandwidth(x, 3) / 1.5);
  return {h, 1.5 * h};
}

WeakIdentificationError::WeakIdentificationError(double numer, double denom)
    : EstimationError("weak identification: treatment-probability jump " +
                      std::to_string(denom) + " is below " +
                      std::to_string(kWeakDenominator) + " (outcome jump " +
                      std::to_string(numer) + ")"),
      numer_jump(numer),
      denom_jump(denom) {}

namespace {

struct Adjusted {
  std::vector<double> v;          // adjusted outcome
  std::vector<double> vd;         // adjusted treatment (fuzzy only)
  Bandwidths bw;
  FitReport report;
  std::vector<std::string> warnings;
};

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// conventional linear covariate adjustment: joint local WLS with side
// intercepts and slopes, covariates partialled out at the pilot bandwidth
std::vector<double> linear_partial_out(const EstimationInput& in, Kernel kernel,
                                       double h, bool on_treatment,
                                       std::vector<std::string>& warnings) {
  const std::vector<double>& target = on_treatment ? in.d : in.y;
  const Eigen::Index p = in.z.cols();
  if (p == 0) return target;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < in.x.size(); ++i) {
    if (kernel_weight(kernel, in.x[i] / h) > 0.0)
      rows.push_back(static_cast<Eigen::Index>(i));
  }
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  if (m < p + 4) return target;  // not enough local data; skip adjustment
  Eigen::MatrixXd design(m, 4 + p);
  Eigen::VectorXd vals(m), w(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t i = static_cast<std::size_t>(rows[r]);
    const double xi = in.x[i];
    const double s = xi > 0.0 ? 1.0 : 0.0;
    design(r, 0) = 1.0;
    design(r, 1) = xi;
    design(r, 2) = s;
    design(r, 3) = s * xi;
    design.row(r).tail(p) = in.z.row(rows[r]);
    vals[r] = target[i];
    w[r] = kernel_weight(kernel, xi / h);
  }
  const Eigen::MatrixXd xtw = design.transpose() * w.asDiagonal();
  Eigen::MatrixXd gram = xtw * design;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::VectorXd beta;
  if (ldlt.info() != Eigen::Success ||
      (gram.diagonal().array() <= 0.0).any()) {
    gram.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().maxCoeff());
    beta = gram.ldlt().solve(xtw * vals);
    warnings.push_back("linear adjustment used a ridge fallback");
  } else {
    beta = ldlt.solve(xtw * vals);
    if (!beta.allFinite()) {
      gram.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().maxCoeff());
      beta = gram.ldlt().solve(xtw * vals);
      warnings.push_back("linear adjustment used a ridge fallback");
    }
  }
  const Eigen::VectorXd gamma = beta.tail(p);
  std::vector<double> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    out[i] = target[i] - in.z.row(static_cast<Eigen::Index>(i)).dot(gamma);
  return out;
}

Adjusted adjust_inputs(const EstimationInput& in, const EstimatorOptions& opt,
                       bool fuzzy) {
  Adjusted adj;
  adj.v = in.y;
  if (fuzzy) adj.vd = in.d;

  const LearnerSpec& spec = opt.learner;
  switch (spec.kind) {
    case LearnerKind::NoAdjust:
      adj.bw = select_bandwidth(in.x, adj.v, opt.kernel, opt.bandwidth);
      return adj;
    case LearnerKind::LinearCovs: {
      const Bandwidths pilot = select_bandwidth(in.x, in.y, opt.kernel, opt.bandwidth);
      adj.v = linear_partial_out(in, opt.kernel, pilot.h, false, adj.warnings);
      if (fuzzy) adj.vd = linear_partial_out(in, opt.kernel, pilot.h, true, adj.warnings);
      adj.bw = select_bandwidth(in.x, adj.v, opt.kernel, opt.bandwidth);
      return adj;
    }
    default:
      break;
  }

  // RDFlex: cross-fitted adjustment
  Eigen::MatrixXd features = in.z;
  if (spec.include_score) {
    features.conservativeResize(features.rows(), features.cols() + 1);
    features.col(features.cols() - 1) = to_eigen(in.x);
  }

  std::vector<std::uint8_t> window;
  const std::vector<std::uint8_t>* window_ptr = nullptr;
  Bandwidths fixed_bw{};
  bool bandwidth_pinned = false;
  if (spec.is_local()) {
    // local learners fit inside the pilot window; the window must cover the
    // pilot bandwidth b, and the bandwidth stays pinned to the pilot choice
    fixed_bw = select_bandwidth(in.x, in.y, opt.kernel, opt.bandwidth);
    bandwidth_pinned = true;
    window.resize(in.x.size());
    for (std::size_t i = 0; i < in.x.size(); ++i)
      window[i] = std::abs(in.x[i]) <= fixed_bw.b * (1.0 + 1e-9) ? 1 : 0;
    window_ptr = &window;
  }

  const CrossfitResult cf = crossfit_regression(features, to_eigen(in.y), spec,
                                                window_ptr, in.x, in.unit_id, opt.seed);
  adj.report.has_outcome_model = true;
  adj.report.rmse_left = cf.rmse_left;
  adj.report.rmse_right = cf.rmse_right;
  adj.report.ridge_fallback = cf.ridge_fallback;
  for (std::size_t i = 0; i < adj.v.size(); ++i)
    adj.v[i] = in.y[i] - cf.eta_hat[static_cast<Eigen::Index>(i)];

  if (fuzzy) {
    const CrossfitResult cfd = crossfit_classifier(
        features, to_eigen(in.d), spec, window_ptr, in.x, in.unit_id, opt.seed);
    adj.report.has_treatment_model = true;
    adj.report.logloss_left = cfd.logloss_left;
    adj.report.logloss_right = cfd.logloss_right;
    for (std::size_t i = 0; i < adj.vd.size(); ++i)
      adj.vd[i] = in.d[i] - cfd.eta_hat[static_cast<Eigen::Index>(i)];
  }

  adj.bw = bandwidth_pinned
               ? fixed_bw
               : select_bandwidth(in.x, adj.v, opt.kernel, opt.bandwidth);
  return adj;
}

void direction_diagnostic(const EstimationInput& in, double h,
                          std::vector<std::string>& warnings) {
  if (in.t.empty()) return;
  double sum_r = 0.0, sum_l = 0.0;
  std::size_t n_r = 0, n_l = 0;
  for (std::size_t i = 0; i < in.x.size(); ++i) {
    if (in.x[i] > 0.0 && in.x[i] < h) {
      sum_r += in.t[i];
      ++n_r;
    } else if (in.x[i] < 0.0 && in.x[i] > -h) {
      sum_l += in.t[i];
      ++n_l;
    }
  }
  if (n_r == 0 || n_l == 0) return;
  if (sum_r / static_cast<double>(n_r) <= sum_l / static_cast<double>(n_l)) {
    warnings.push_back(
        "assignment probability does not increase across the cutoff on this axis");
  }
}

RdEstimate estimate_impl(const EstimationInput& in, const EstimatorOptions& opt,
                         bool fuzzy) {
  if (in.x.size() != in.y.size()) throw DataError("estimate: x/y length mismatch");
  if (fuzzy && in.d.size() != in.x.size())
    throw DataError("fuzzy estimate requires a treatment column");
  for (std::size_t i = 0; i < in.x.size(); ++i) {
    if (!std::isfinite(in.x[i]) || !std::isfinite(in.y[i]))
      throw DataError("estimate: non-finite input at row " + std::to_string(i));
  }

  Adjusted adj = adjust_inputs(in, opt, fuzzy);
  const double h = adj.bw.h, b = adj.bw.b;

  RdEstimate est;
  est.h = h;
  est.b = b;
  est.fuzzy = fuzzy;
  est.first_stage = adj.report;
  est.warnings = std::move(adj.warnings);
  direction_diagnostic(in, h, est.warnings);

  const BcJump jy = bc_jump(in.x, adj.v, opt.kernel, h, b);
  est.n_left = jy.n_left;
  est.n_right = jy.n_right;
  est.numer_jump = jy.coef;

  if (!fuzzy) {
    est.coef = jy.coef;
    est.se = std::sqrt(jy.var);
    est.denom_jump = 1.0;
  } else {
    const BcJump jd = bc_jump(in.x, adj.vd, opt.kernel, h, b);
    est.denom_jump = jd.coef;
    if (std::abs(jd.coef) <= kWeakDenominator)
      throw WeakIdentificationError(jy.coef, jd.coef);
    if (jd.coef < 0.0 || jd.coef > 1.0 + 1e-9)
      est.warnings.push_back("treatment-probability jump outside (0, 1]");
    const double tau = jy.coef / jd.coef;
    const double cov = (jy.omega.array().square() * jy.resid.array() *
                        jd.resid.array())
                           .sum();
    const double var_tau =
        (jy.var - 2.0 * tau * cov + tau * tau * jd.var) / (jd.coef * jd.coef);
    est.coef = tau;
    est.se = std::sqrt(std::max(var_tau, 0.0));
  }
  est.ci_low = est.coef - kZ975 * est.se;
  est.ci_high = est.coef + kZ975 * est.se;
  return est;
}

}  // namespace

RdEstimate sharp_estimate(const EstimationInput& in, const EstimatorOptions& opt) {
  return estimate_impl(in, opt, false);
}

RdEstimate fuzzy_estimate(const EstimationInput& in, const EstimatorOptions& opt) {
  return estimate_impl(in, opt, true);
}

RdEstimate subset_estimate(const EstimationInput& in,
                           const std::vector<std::uint8_t>& keep, bool fuzzy,
                           const EstimatorOptions& opt) {
  if (keep.size() != in.x.size()) throw DataError("subset mask length mismatch");
  EstimationInput sub;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    sub.x.push_back(in.x[i]);
    sub.y.push_back(in.y[i]);
    if (!in.d.empty()) sub.d.push_back(in.d[i]);
    if (!in.t.empty()) sub.t.push_back(in.t[i]);
    if (!in.unit_id.empty()) sub.unit_id.push_back(in.unit_id[i]);
    rows.push_back(static_cast<Eigen::Index>(i));
  }
  sub.z.resize(static_cast<Eigen::Index>(rows.size()), in.z.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) sub.z.row(static_cast<Eigen::Index>(r)) = in.z.row(rows[r]);
  RdEstimate est = estimate_impl(sub, opt, fuzzy);
  est.subset = true;
  return est;
}

std::vector<double> binding_score(const std::vector<double>& a,
                                  const std::vector<double>& b, BoolOp op,
                                  double scale_a, double scale_b) {
  if (a.size() != b.size()) throw DataError("binding_score: length mismatch");
  if (!(scale_a > 0.0) || !(scale_b > 0.0))
    throw DataError("binding_score: normalizers must be positive");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = a[i] / scale_a, v = b[i] / scale_b;
    out[i] = op == BoolOp::And ? std::min(u, v) : std::max(u, v);
  }
  return out;
}

std::vector<double> euclidean_score(const std::vector<double>& a,
                                    const std::vector<double>& b,
                                    const Eigen::Vector2d& frontier_point) {
  if (a.size() != b.size()) throw DataError("euclidean_score: length mismatch");
  const double p0 = frontier_point[0], p1 = frontier_point[1];
  const bool on_frontier =
      (std::abs(p0) <= 1e-12 && p1 >= -1e-12) || (std::abs(p1) <= 1e-12 && p0 >= -1e-12);
  if (!on_frontier)
    throw DataError("euclidean_score: point is not on the cutoff frontier");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dist = std::hypot(a[i] - p0, b[i] - p1);
    out[i] = (a[i] > 0.0 && b[i] > 0.0) ? dist : -dist;
  }
  return out;
}

std::vector<PseudoCutoffRow> pseudo_cutoff_test(const EstimationInput& in,
                                                const std::vector<double>& shifts,
                                                bool fuzzy,
                                                const EstimatorOptions& opt) {
  std::vector<double> ordered = shifts;
  std::sort(ordered.begin(), ordered.end());
  std::vector<PseudoCutoffRow> out;
  for (const double shift : ordered) {
    EstimationInput sub;
    for (std::size_t i = 0; i < in.x.size(); ++i) {
      const bool keep = shift == 0.0 || (shift < 0.0 ? in.x[i] <= 0.0 : in.x[i] > 0.0);
      if (!keep) continue;
      sub.x.push_back(in.x[i] - shift);
      sub.y.push_back(in.y[i]);
      if (!in.d.empty()) sub.d.push_back(in.d[i]);
      if (!in.t.empty() && shift == 0.0) sub.t.push_back(in.t[i]);
      if (!in.unit_id.empty()) sub.unit_id.push_back(in.unit_id[i]);
    }
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < in.x.size(); ++i) {
      const bool keep = shift == 0.0 || (shift < 0.0 ? in.x[i] <= 0.0 : in.x[i] > 0.0);
      if (keep) rows.push_back(static_cast<Eigen::Index>(i));
    }
    sub.z.resize(static_cast<Eigen::Index>(rows.size()), in.z.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      sub.z.row(static_cast<Eigen::Index>(r)) = in.z.row(rows[r]);
    PseudoCutoffRow row;
    row.shift = shift;
    row.estimate = estimate_impl(sub, opt, fuzzy);
    out.push_back(std::move(row));
  }
  return out;
}

RdPlotData rd_plot_data(const std::vector<double>& x, const std::vector<double>& v,
                        int bins_per_side, Kernel kernel, double h) {
  if (bins_per_side < 2) throw ConfigError("rd plot needs at least 2 bins per side");
  if (!(h > 0.0)) throw ConfigError("rd plot needs a positive bandwidth");
  RdPlotData out;
  out.h = h;
  const double width = h / bins_per_side;
  out.bins.resize(static_cast<std::size_t>(2 * bins_per_side));
  std::vector<double> sums(out.bins.size(), 0.0);
  for (std::size_t bi = 0; bi < out.bins.size(); ++bi) {
    const int side_bin = static_cast<int>(bi) - bins_per_side;  // -B..B-1
    out.bins[bi].center = (side_bin + 0.5) * width;
    out.bins[bi].count = 0;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > h) continue;
    int bin = static_cast<int>(std::floor(x[i] / width)) + bins_per_side;
    bin = std::clamp(bin, 0, 2 * bins_per_side - 1);
    // x exactly at the cutoff belongs to the left side
    if (x[i] == 0.0) bin = bins_per_side - 1;
    out.bins[static_cast<std::size_t>(bin)].count += 1;
    sums[static_cast<std::size_t>(bin)] += v[i];
  }
  for (std::size_t bi = 0; bi < out.bins.size(); ++bi) {
    out.bins[bi].mean = out.bins[bi].count > 0
                            ? sums[bi] / out.bins[bi].count
                            : std::numeric_limits<double>::quiet_NaN();
  }
  const LocalLinearJump fit = local_linear_jump(x, v, kernel, h);
  out.left_x0 = -h;
  out.left_y0 = fit.intercept_left - h * fit.slope_left;
  out.left_x1 = 0.0;
  out.left_y1 = fit.intercept_left;
  out.right_x0 = 0.0;
  out.right_y0 = fit.intercept_right;
  out.right_x1 = h;
  out.right_y1 = fit.intercept_right + h * fit.slope_right;
  return out;
}

}  // namespace mrd
