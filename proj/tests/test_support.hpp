#pragma once

#include <string>
#include <vector>

#include "mrd/estimation.hpp"
#include "mrd/rng.hpp"
#include "mrd/rule.hpp"

namespace mrd::testing {

// random boolean expression over atoms 1..dim, depth-limited
inline BoolExpr random_expr(Rng& rng, int dim, int depth) {
  const double roll = rng.uniform();
  if (depth <= 0 || roll < 0.4) {
    if (roll < 0.03) return BoolExpr::make_const(rng.uniform() < 0.5);
    return BoolExpr::make_atom(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(dim))));
  }
  if (roll < 0.55) return BoolExpr::make_not(random_expr(rng, dim, depth - 1));
  std::vector<BoolExpr> kids;
  const int n_kids = 2 + static_cast<int>(rng.below(2));
  for (int i = 0; i < n_kids; ++i) kids.push_back(random_expr(rng, dim, depth - 1));
  if (roll < 0.8) return BoolExpr::make_and(std::move(kids));
  return BoolExpr::make_or(std::move(kids));
}

inline CutoffRule random_rule(Rng& rng, int dim, int depth = 3) {
  return make_rule(random_expr(rng, dim, depth), dim);
}

// a random rule with non-empty support (rejection sampled)
inline CutoffRule random_nondegenerate_rule(Rng& rng, int dim, int depth = 3) {
  for (int tries = 0; tries < 200; ++tries) {
    CutoffRule r = random_rule(rng, dim, depth);
    if (!support_directions(r).empty()) return r;
  }
  return parse_rule("I1", dim);
}

inline Eigen::VectorXd random_score(Rng& rng, int dim, double scale = 2.0) {
  Eigen::VectorXd x(dim);
  for (int k = 0; k < dim; ++k) x[k] = rng.uniform(-scale, scale);
  return x;
}

// simple synthetic sharp panel: y = m(x) + tau 1[x>0] + noise, d = 1[x>0]
struct SyntheticPanel {
  std::vector<double> x, y, d, t;
  std::vector<std::int64_t> id;
  Eigen::MatrixXd z;
};

inline SyntheticPanel smooth_sharp_panel(std::uint64_t seed, std::size_t n, double tau,
                                         double noise_sd,
                                         double curvature = 0.4) {
  SyntheticPanel p;
  Rng rng(seed);
  p.x.resize(n);
  p.y.resize(n);
  p.d.resize(n);
  p.t.resize(n);
  p.id.resize(n);
  p.z.resize(static_cast<Eigen::Index>(n), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    const double m = 0.3 * x + curvature * x * x - 0.2 * x * x * x;
    const double treated = x > 0.0 ? 1.0 : 0.0;
    p.x[i] = x;
    p.d[i] = treated;
    p.t[i] = treated;
    p.y[i] = m + tau * treated + rng.normal(0.0, noise_sd);
    p.id[i] = static_cast<std::int64_t>(i);
  }
  return p;
}

inline EstimationInput to_input(const SyntheticPanel& p) {
  EstimationInput in;
  in.x = p.x;
  in.y = p.y;
  in.d = p.d;
  in.t = p.t;
  in.z = p.z;
  in.unit_id = p.id;
  return in;
}

}  // namespace mrd::testing
