#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrd/errors.hpp"
#include "mrd/led_dgp.hpp"

using namespace mrd;

namespace {

using UC = UnitCategory;

LotConfig small_cfg() {
  LotConfig cfg;
  cfg.n_items = 196;
  cfg.m = 14;
  return cfg;
}

Lot lot_at(const Eigen::Vector2d& mean, int n, double spread, Rng& rng) {
  Lot lot;
  lot.points.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    lot.points(i, 0) = mean[0] + (spread > 0 ? rng.normal(0.0, spread) : 0.0);
    lot.points(i, 1) = mean[1] + (spread > 0 ? rng.normal(0.0, spread) : 0.0);
  }
  return lot;
}

}  // namespace

TEST_CASE("generate_lot: degenerate spreads collapse to a point") {
  LotConfig cfg = small_cfg();
  cfg.lot_mean_spread = 0.0;
  cfg.within_lot_spread = 0.0;
  cfg.spread_heterogeneity = 0.0;
  Rng rng(1);
  const Lot lot = generate_lot(rng, cfg);
  const Eigen::Vector2d expect = cfg.target - cfg.mean_shift * cfg.unit_slope();
  for (int i = 0; i < lot.points.rows(); ++i) {
    CHECK(lot.points(i, 0) == expect[0]);
    CHECK(lot.points(i, 1) == expect[1]);
  }
}

TEST_CASE("generate_lot: fixed seed reproduces bit-identically") {
  const LotConfig cfg = small_cfg();
  Rng a(99), b(99);
  const Lot la = generate_lot(a, cfg);
  const Lot lb = generate_lot(b, cfg);
  CHECK(la.points == lb.points);
}

TEST_CASE("generate_lot: item mean concentrates at the configured mean") {
  LotConfig cfg;
  cfg.n_items = 100000;
  cfg.lot_mean_spread = 0.0;
  cfg.spread_heterogeneity = 0.0;
  Rng rng(7);
  const Lot lot = generate_lot(rng, cfg);
  const Eigen::Vector2d mean = lot.points.colwise().mean();
  const Eigen::Vector2d expect = cfg.target - cfg.mean_shift * cfg.unit_slope();
  const double bound = 3.0 * cfg.within_lot_spread / std::sqrt(cfg.n_items);
  CHECK(std::abs(mean[0] - expect[0]) < bound);
  CHECK(std::abs(mean[1] - expect[1]) < bound);
}

TEST_CASE("distance_score geometry") {
  const LotConfig cfg = small_cfg();
  const Eigen::Vector2d u = cfg.unit_slope();
  const Eigen::Vector2d u_perp(-u[1], u[0]);
  Rng rng(3);

  // mean on the line through the target orthogonal to u: already as close as
  // the conversion curve allows
  const Lot at_cp = lot_at(cfg.target + 0.02 * u_perp, 50, 0.0, rng);
  CHECK(distance_score(at_cp, cfg) == doctest::Approx(0.0).epsilon(1e-12));

  // displacement delta along the slope shows up as the raw score
  for (const double delta : {0.001, 0.005, 0.02}) {
    const Lot shifted = lot_at(cfg.target - delta * u + 0.01 * u_perp, 50, 0.0, rng);
    CHECK(distance_score(shifted, cfg) == doctest::Approx(delta).epsilon(1e-9));
  }

  // strictly monotone in the displacement
  double prev = -1.0;
  for (const double delta : {0.0, 0.002, 0.004, 0.008, 0.016}) {
    const Lot shifted = lot_at(cfg.target - delta * u, 50, 0.0, rng);
    const double score = distance_score(shifted, cfg);
    CHECK(score > prev);
    prev = score;
  }
}

TEST_CASE("yield_criteria counts the in-spec share") {
  const LotConfig cfg = small_cfg();
  Rng rng(5);
  const Lot inside = lot_at(cfg.target, 40, 0.0, rng);
  CHECK(yield_criteria(inside, cfg) == 1.0);

  const Lot outside = lot_at(cfg.target + Eigen::Vector2d(0.5, 0.5), 40, 0.0, rng);
  CHECK(yield_criteria(outside, cfg) == 0.0);

  // constructed half-in / half-out lot
  Lot half;
  half.points.resize(10, 2);
  for (int i = 0; i < 10; ++i) {
    half.points(i, 0) = cfg.target[0] + (i < 5 ? 0.0 : 1.0);
    half.points(i, 1) = cfg.target[1];
  }
  CHECK(yield_criteria(half, cfg) == 0.5);
}

TEST_CASE("optimal rework is exact: no grid shift beats it") {
  LotConfig cfg = small_cfg();
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    Lot lot = generate_lot(rng, cfg);
    const Lot reworked = optimal_rework(lot, cfg);
    const double best = yield_criteria(reworked, cfg);
    CHECK(best >= yield_criteria(lot, cfg));  // never decreases
    // line-search oracle over a dense shift grid
    const Eigen::Vector2d u = cfg.unit_slope();
    for (int g = -200; g <= 200; ++g) {
      const double t = g * 2.5e-4;
      Lot shifted = lot;
      shifted.points.col(0).array() += t * u[0];
      shifted.points.col(1).array() += t * u[1];
      CHECK(yield_criteria(shifted, cfg) <= best);
    }
  }
}

TEST_CASE("noisy rework reduces to the optimal one in the noise-free limit") {
  LotConfig cfg = small_cfg();
  cfg.rework_noise_sd = 0.0;
  cfg.dispersion_inflation = 1.0;
  Rng rng(13);
  Lot lot = generate_lot(rng, cfg);
  Rng noise_rng(17);
  const Lot noisy = noisy_rework(lot, noise_rng, cfg);
  const Lot optimal = optimal_rework(lot, cfg);
  CHECK(noisy.points == optimal.points);

  // and reproduces bit-identically under a fixed stream
  cfg.rework_noise_sd = 0.002;
  cfg.dispersion_inflation = 1.3;
  Rng r1(21), r2(21);
  CHECK(noisy_rework(lot, r1, cfg).points == noisy_rework(lot, r2, cfg).points);
}

TEST_CASE("improvement scores: full measurement means no residual score") {
  LotConfig cfg = small_cfg();
  cfg.m = 1;
  Rng rng(23);
  const Lot lot = generate_lot(rng, cfg);
  const Lot opt = optimal_rework(lot, cfg);
  const ImprovementScores s = improvement_scores(lot, opt, cfg);
  CHECK(s.x_y == s.x_e);
  CHECK(s.x_r == 0.0);

  const ImprovementScores same = improvement_scores(lot, lot, cfg);
  CHECK(same.x_y == 0.0);
  CHECK(same.x_e == 0.0);
}

TEST_CASE("stride subsample is an unbiased estimate of the full improvement") {
  LotConfig cfg = small_cfg();
  Rng rng(29);
  double sum_xr = 0.0;
  const int reps = 2000;
  for (int i = 0; i < reps; ++i) {
    const Lot lot = generate_lot(rng, cfg);
    const ImprovementScores s = improvement_scores(lot, optimal_rework(lot, cfg), cfg);
    sum_xr += s.x_r;
  }
  // x_r averages to zero within Monte Carlo error
  CHECK(std::abs(sum_xr / reps) < 0.01);
}

TEST_CASE("operator decisions per policy") {
  LotConfig cfg;
  cfg.c_y = 0.1;
  // acknowledging follows the assignment
  CHECK(operator_decision(OperatorPolicy::Acknowledging, true, 0.2, -0.5, cfg));
  CHECK_FALSE(operator_decision(OperatorPolicy::Acknowledging, true, 0.05, 0.5, cfg));
  CHECK_FALSE(operator_decision(OperatorPolicy::Acknowledging, false, 0.2, 0.2, cfg));
  // cautious adds the private veto
  CHECK_FALSE(operator_decision(OperatorPolicy::Cautious, true, 0.2, 0.05, cfg));
  CHECK(operator_decision(OperatorPolicy::Cautious, true, 0.2, 0.2, cfg));
  // reasonable overrides with the full-information estimate
  CHECK(operator_decision(OperatorPolicy::Reasonable, true, 0.05, 0.2, cfg));
  CHECK_FALSE(operator_decision(OperatorPolicy::Reasonable, true, 0.2, 0.05, cfg));
}

TEST_CASE("simulate_panel invariants hold rowwise") {
  const LotConfig cfg = small_cfg();
  for (const OperatorPolicy pol :
       {OperatorPolicy::Acknowledging, OperatorPolicy::Cautious,
        OperatorPolicy::Reasonable}) {
    const SimPanel p = simulate_panel(31, 400, cfg, pol);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p.y[i] == (p.d[i] ? p.y1[i] : p.y0[i]));
      CHECK(p.y[i] >= 0.0);
      CHECK(p.y[i] <= 1.0);
      CHECK(p.y0[i] >= 0.0);
      CHECK(p.y0[i] <= 1.0);
      CHECK(p.y1[i] >= 0.0);
      CHECK(p.y1[i] <= 1.0);
      CHECK(p.x_e[i] == doctest::Approx(p.x_y[i] + p.x_r[i]).epsilon(1e-12));
      if (pol == OperatorPolicy::Acknowledging) CHECK(p.d[i] == p.t[i]);
      if (pol == OperatorPolicy::Cautious) CHECK(p.d[i] <= p.t[i]);
    }
  }
}

TEST_CASE("cautious fuzziness is one-sided") {
  const SimPanel p = simulate_panel(37, 3000, LotConfig{}, OperatorPolicy::Cautious);
  std::size_t d_without_t = 0, overridden = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p.t[i] && p.d[i]) ++d_without_t;
    if (p.t[i] && !p.d[i]) ++overridden;
  }
  CHECK(d_without_t == 0);
  CHECK(overridden > 0);  // the veto actually binds sometimes
}

TEST_CASE("panel categories match the closed forms") {
  const LotConfig cfg = small_cfg();
  const SimPanel ack = simulate_panel(41, 500, cfg, OperatorPolicy::Acknowledging);
  for (std::size_t i = 0; i < ack.size(); ++i)
    CHECK(ack.category[i] == UC::Complier);

  const SimPanel caut = simulate_panel(43, 500, cfg, OperatorPolicy::Cautious);
  for (std::size_t i = 0; i < caut.size(); ++i) {
    CHECK(caut.category[i] == (caut.x_e[i] > 0.0 ? UC::Complier : UC::Nevertaker));
  }

  const SimPanel reas = simulate_panel(47, 300, cfg, OperatorPolicy::Reasonable);
  for (std::size_t i = 0; i < reas.size(); ++i) {
    CHECK(reas.category[i] ==
          (reas.x_r[i] == 0.0 ? UC::Complier : UC::Indecisive));
  }
}

TEST_CASE("axis pair categories agree with the closed-form complier masks") {
  const LotConfig cfg = small_cfg();
  for (const OperatorPolicy pol :
       {OperatorPolicy::Acknowledging, OperatorPolicy::Cautious,
        OperatorPolicy::Reasonable}) {
    const SimPanel p = simulate_panel(53, 250, cfg, pol);
    for (const ScoreAxis axis : {ScoreAxis::Distance, ScoreAxis::Yield}) {
      const std::vector<UnitCategory> cats = axis_pair_categories(p, axis, pol);
      const std::vector<std::uint8_t> comp = axis_complier_mask(p, axis, pol);
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK((cats[i] == UC::Complier) == (comp[i] != 0));
      }
    }
  }
}

TEST_CASE("cautious pair categories for the distance subrule") {
  const SimPanel p = simulate_panel(59, 400, small_cfg(), OperatorPolicy::Cautious);
  const std::vector<UnitCategory> cats =
      axis_pair_categories(p, ScoreAxis::Distance, OperatorPolicy::Cautious);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool comp = p.x_e[i] > 0.0 && p.x_y[i] > 0.0;
    CHECK(cats[i] == (comp ? UC::Complier : UC::Nevertaker));
  }
}

TEST_CASE("panel simulation is deterministic and prefix-stable") {
  const LotConfig cfg = small_cfg();
  const SimPanel a = simulate_panel(61, 120, cfg, OperatorPolicy::Cautious);
  const SimPanel b = simulate_panel(61, 120, cfg, OperatorPolicy::Cautious);
  CHECK(a.y == b.y);
  CHECK(a.x_d == b.x_d);
  CHECK(a.z == b.z);

  const SimPanel prefix = simulate_panel(61, 60, cfg, OperatorPolicy::Cautious);
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    CHECK(prefix.y[i] == a.y[i]);
    CHECK(prefix.x_d[i] == a.x_d[i]);
    CHECK(prefix.x_y[i] == a.x_y[i]);
  }
}

TEST_CASE("parallel and serial panel simulation are bit-identical") {
  const LotConfig cfg = small_cfg();
  const SimPanel par = simulate_panel(67, 150, cfg, OperatorPolicy::Cautious);
  const SimPanel ser = simulate_panel_serial(67, 150, cfg, OperatorPolicy::Cautious);
  CHECK(par.x_d == ser.x_d);
  CHECK(par.x_y == ser.x_y);
  CHECK(par.x_e == ser.x_e);
  CHECK(par.y == ser.y);
  CHECK(par.y0 == ser.y0);
  CHECK(par.y1 == ser.y1);
  CHECK(par.t == ser.t);
  CHECK(par.d == ser.d);
  CHECK(par.z == ser.z);
  CHECK(par.category == ser.category);
}

TEST_CASE("panel round trips through the dataset layer") {
  const SimPanel p = simulate_panel(71, 80, small_cfg(), OperatorPolicy::Cautious);
  const Dataset ds = p.to_dataset();
  CHECK(ds.n_rows() == p.size());
  const SimPanel back = SimPanel::from_dataset(ds);
  CHECK(back.x_d == p.x_d);
  CHECK(back.y == p.y);
  CHECK(back.category == p.category);
  CHECK(back.z == p.z);
}

// --- oracles -------------------------------------------------------------------

namespace {

// synthetic panel with hand-set potential outcomes on a dense score lattice
SimPanel lattice_panel(std::size_t n, double (*effect)(double x)) {
  SimPanel p;
  p.lot_id.resize(n);
  p.x_d.resize(n);
  p.x_y.resize(n);
  p.x_e.resize(n);
  p.x_r.assign(n, 0.0);
  p.t.assign(n, 0);
  p.d.assign(n, 0);
  p.y.resize(n);
  p.y0.resize(n);
  p.y1.resize(n);
  p.category.assign(n, UC::Complier);
  p.z.resize(static_cast<Eigen::Index>(n), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    p.lot_id[i] = static_cast<std::int64_t>(i);
    p.x_d[i] = x;
    p.x_y[i] = 0.5;  // everyone passes the yield rule
    p.x_e[i] = 0.5;
    p.y0[i] = 0.4;
    p.y1[i] = 0.4 + effect(x);
    p.t[i] = x > 0.0;
    p.d[i] = x > 0.0;
    p.y[i] = p.d[i] ? p.y1[i] : p.y0[i];
  }
  return p;
}

}  // namespace

TEST_CASE("oracle effect: zero and constant treatment effects are exact") {
  const SimPanel zero = lattice_panel(400, [](double) { return 0.0; });
  CHECK(oracle_effect(zero, ScoreAxis::Distance, OracleEstimand::Complier,
                      OperatorPolicy::Cautious, Kernel::Triangular, 0.5) ==
        doctest::Approx(0.0).epsilon(1e-12));

  const SimPanel constant = lattice_panel(400, [](double) { return 0.07; });
  CHECK(oracle_effect(constant, ScoreAxis::Distance, OracleEstimand::Complier,
                      OperatorPolicy::Cautious, Kernel::Triangular, 0.5) ==
        doctest::Approx(0.07).epsilon(1e-12));
}

TEST_CASE("oracle effect reproduces a piecewise-linear effect at the cutoff") {
  const SimPanel pw = lattice_panel(1000, [](double x) {
    return x > 0.0 ? 0.05 + 0.3 * x : 0.05 - 0.1 * x;
  });
  const double oracle =
      oracle_effect(pw, ScoreAxis::Distance, OracleEstimand::Complier,
                    OperatorPolicy::Cautious, Kernel::Triangular, 0.4);
  CHECK(std::abs(oracle - 0.05) < 1e-10);
}

TEST_CASE("itt oracle scales the complier effect by the complier share") {
  // cautious policy: the operator vetoes when x_e <= 0; make half the units
  // vetoed independently of the distance score
  SimPanel p = lattice_panel(2000, [](double) { return 0.1; });
  for (std::size_t i = 0; i < p.size(); ++i) {
    p.x_e[i] = (i % 2 == 0) ? 0.5 : -0.5;
    p.category[i] = p.x_e[i] > 0.0 ? UC::Complier : UC::Nevertaker;
  }
  const double itt = oracle_effect(p, ScoreAxis::Distance, OracleEstimand::Itt,
                                   OperatorPolicy::Cautious, Kernel::Uniform, 0.5);
  CHECK(itt == doctest::Approx(0.05).epsilon(1e-9));
  const double comp = oracle_effect(p, ScoreAxis::Distance, OracleEstimand::Complier,
                                    OperatorPolicy::Cautious, Kernel::Uniform, 0.5);
  CHECK(comp == doctest::Approx(0.10).epsilon(1e-9));
}

TEST_CASE("defier correction: zero without defiers, exact with them") {
  const SimPanel shipped = simulate_panel(73, 400, small_cfg(), OperatorPolicy::Cautious);
  CHECK(oracle_defier_correction(shipped, ScoreAxis::Distance, Kernel::Triangular,
                                 0.005) == 0.0);

  // injected defiers on a balanced lattice: share 1/5 defiers, 2/5 compliers
  SimPanel p = lattice_panel(1000, [](double) { return 0.0; });
  const double delta = 0.08;
  for (std::size_t i = 0; i < p.size(); ++i) {
    switch (i % 5) {
      case 0:
        p.category[i] = UC::Defier;
        p.y0[i] = 0.5 + delta;
        p.y1[i] = 0.5;
        break;
      case 1:
      case 2: p.category[i] = UC::Complier; break;
      default: p.category[i] = UC::Nevertaker; break;
    }
  }
  const double c =
      oracle_defier_correction(p, ScoreAxis::Distance, Kernel::Uniform, 0.5);
  CHECK(c == doctest::Approx((1.0 / 2.0) * delta).epsilon(1e-9));

  // defiers with equal potential outcomes contribute nothing
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.category[i] == UC::Defier) p.y0[i] = p.y1[i] = 0.5;
  }
  CHECK(oracle_defier_correction(p, ScoreAxis::Distance, Kernel::Uniform, 0.5) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("config validation rejects bad setups") {
  LotConfig cfg;
  cfg.n_items = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LotConfig{};
  cfg.m = 10000;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LotConfig{};
  cfg.dispersion_inflation = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(simulate_panel(1, 0, LotConfig{}, OperatorPolicy::Cautious),
                  ConfigError);
}
