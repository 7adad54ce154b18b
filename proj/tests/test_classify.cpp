#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "mrd/classify.hpp"
#include "mrd/errors.hpp"
#include "test_support.hpp"

using namespace mrd;
using mrd::testing::random_nondegenerate_rule;
using mrd::testing::random_score;

namespace {

using UC = UnitCategory;

Eigen::VectorXd vec2(double a, double b) { return Eigen::Vector2d(a, b); }
Eigen::VectorXd vec4(double a, double b, double c, double d) {
  Eigen::VectorXd v(4);
  v << a, b, c, d;
  return v;
}

UC cat(const CutoffRule& t, const CutoffRule& d, const Eigen::VectorXd& x) {
  return classify_cutoff(t, d, x).category;
}

// expression over a restricted atom set, for support-nesting tests
BoolExpr expr_over(Rng& rng, const std::vector<int>& atoms, int depth) {
  const double roll = rng.uniform();
  if (depth <= 0 || roll < 0.45) {
    return BoolExpr::make_atom(atoms[rng.below(atoms.size())]);
  }
  if (roll < 0.6) return BoolExpr::make_not(expr_over(rng, atoms, depth - 1));
  std::vector<BoolExpr> kids;
  for (int i = 0; i < 2; ++i) kids.push_back(expr_over(rng, atoms, depth - 1));
  return roll < 0.8 ? BoolExpr::make_and(std::move(kids))
                    : BoolExpr::make_or(std::move(kids));
}

CutoffRule rule_over(Rng& rng, const std::vector<int>& atoms, int dim, int depth = 3) {
  for (int tries = 0; tries < 100; ++tries) {
    CutoffRule r = make_rule(expr_over(rng, atoms, depth), dim);
    if (!support_directions(r).empty()) return r;
  }
  return parse_rule("I" + std::to_string(atoms[0]), dim);
}

GridSpec bracketing_grid() { return GridSpec{}; }  // default offsets bracket x

}  // namespace

// --- paper fixtures -----------------------------------------------------------

TEST_CASE("AND-rule example: D reduces to T for units passing the extra atom") {
  const CutoffRule t = parse_rule("I1", 2);
  const CutoffRule d = parse_rule("I1 & I2", 2);
  CHECK(cat(t, d, vec2(0.3, 0.5)) == UC::Complier);
  CHECK(cat(t, d, vec2(-2.0, 0.5)) == UC::Complier);
  CHECK(cat(t, d, vec2(0.3, -0.5)) == UC::Nevertaker);
  CHECK(cat(t, d, vec2(0.3, 0.0)) == UC::Nevertaker);  // tie goes below
}

TEST_CASE("AND-rule example in higher dimension: no alwaystakers or defiers") {
  // T = I1 & I2, D = I1 & I2 & I3 & I4 over K = 4
  const CutoffRule t = parse_rule("I1 & I2", 4);
  const CutoffRule d = parse_rule("I1 & I2 & I3 & I4", 4);
  Rng rng(101);
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd x = random_score(rng, 4);
    const UC c = cat(t, d, x);
    const bool extras_pass = x[2] > 0.0 && x[3] > 0.0;
    CHECK(c == (extras_pass ? UC::Complier : UC::Nevertaker));
  }
}

TEST_CASE("OR-rule example: compliers need all extra atoms at zero") {
  const CutoffRule t = parse_rule("I1 | I2", 4);
  const CutoffRule d = parse_rule("I1 | I2 | I3 | I4", 4);
  Rng rng(102);
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd x = random_score(rng, 4);
    const UC c = cat(t, d, x);
    const bool extras_off = x[2] <= 0.0 && x[3] <= 0.0;
    CHECK(c == (extras_off ? UC::Complier : UC::Alwaystaker));
  }
}

TEST_CASE("XOR dominant rule flips compliance with the second score") {
  const CutoffRule t = parse_rule("I1", 2);
  const CutoffRule d = parse_rule("(I1 | I2) & (!I1 | !I2)", 2);
  CHECK(cat(t, d, vec2(0.1, 0.5)) == UC::Defier);
  CHECK(cat(t, d, vec2(-3.0, 0.5)) == UC::Defier);
  CHECK(cat(t, d, vec2(0.1, -0.5)) == UC::Complier);
  CHECK(cat(t, d, vec2(0.1, 0.0)) == UC::Complier);
}

TEST_CASE("four-variable rule realizes nevertakers, compliers and alwaystakers") {
  // D = (T & I3) | (!I3 & I4) with T = I1 & I2
  const CutoffRule t = parse_rule("I1 & I2", 4);
  const CutoffRule d = parse_rule("((I1 & I2) & I3) | (!I3 & I4)", 4);
  Rng rng(103);
  for (int it = 0; it < 300; ++it) {
    const Eigen::VectorXd x = random_score(rng, 4);
    const UC c = cat(t, d, x);
    UC want;
    if (x[2] > 0.0)
      want = UC::Complier;
    else if (x[3] > 0.0)
      want = UC::Alwaystaker;
    else
      want = UC::Nevertaker;
    CHECK(c == want);
  }
  CHECK(cat(t, d, vec4(0, 0, 0.5, 0)) == UC::Complier);
  CHECK(cat(t, d, vec4(0, 0, -0.5, 0.5)) == UC::Alwaystaker);
  CHECK(cat(t, d, vec4(0, 0, -0.5, -0.5)) == UC::Nevertaker);
  // the same fixture under the OR-form of T
  const CutoffRule t_or = parse_rule("I1 | I2", 4);
  const CutoffRule d_or = parse_rule("((I1 | I2) & I3) | (!I3 & I4)", 4);
  CHECK(cat(t_or, d_or, vec4(0, 0, 0.5, 0)) == UC::Complier);
  CHECK(cat(t_or, d_or, vec4(0, 0, -0.5, 0.5)) == UC::Alwaystaker);
  CHECK(cat(t_or, d_or, vec4(0, 0, -0.5, -0.5)) == UC::Nevertaker);
}

TEST_CASE("indecisive construction from the exhaustiveness proof") {
  const CutoffRule t = parse_rule("I1 & I2", 2);
  const CutoffRule d = parse_rule(
      "((I1 & I2) & I1 & I2) | (!(I1 & I2) & !I1 & I2) | (I1 & !I2)", 2);
  const ClassificationResult res = classify_cutoff(t, d, vec2(0.0, 0.0));
  CHECK(res.category == UC::Indecisive);
  // two agreeing and two disagreeing cutoff configurations
  int agree = 0, disagree = 0;
  for (const WitnessConfig& w : res.witnesses) {
    if (w.t_bit == w.d_bit)
      ++agree;
    else
      ++disagree;
  }
  CHECK(agree == 2);
  CHECK(disagree == 2);
}

TEST_CASE("simple indecisive example: D = !I1 & I2 against T = I1 & I2") {
  const CutoffRule t = parse_rule("I1 & I2", 2);
  const CutoffRule d = parse_rule("!I1 & I2", 2);
  CHECK(cat(t, d, vec2(0.0, 0.0)) == UC::Indecisive);
}

TEST_CASE("subrule counterexample: complier sets do not factor exactly") {
  // D = (I1 & I2) | I3, T = I1 & I3, G = I1
  const CutoffRule t = parse_rule("I1 & I3", 3);
  const CutoffRule g = parse_rule("I1", 3);
  const CutoffRule d = parse_rule("(I1 & I2) | I3", 3);
  Rng rng(104);
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd x = random_score(rng, 3);
    CHECK(cat(t, d, x) != UC::Complier);
    const UC cg = cat(g, d, x);
    if (x[2] <= 0.0 && x[1] > 0.0) {
      CHECK(cg == UC::Complier);
    } else {
      CHECK(cg != UC::Complier);
    }
  }
}

// --- guards -------------------------------------------------------------------

TEST_CASE("degenerate and non-synchronous inputs are rejected") {
  const CutoffRule t_const = parse_rule("I1 | !I1", 2);
  const CutoffRule d = parse_rule("I1 & I2", 2);
  CHECK_THROWS_AS(classify_cutoff(t_const, d, vec2(0, 0)), DataError);

  CutoffRule shifted = parse_rule("I1", 2);
  shifted.cutoff = vec2(1.0, 0.0);
  CHECK_THROWS_AS(classify_cutoff(shifted, d, vec2(0, 0)), DataError);
  CHECK_THROWS_AS(classify_cutoff(d, shifted, vec2(0, 0)), DataError);
}

// --- proposition property suites ------------------------------------------------

TEST_CASE("partition: exactly one category, definitional flags consistent") {
  Rng rng(105);
  for (int pair = 0; pair < 500; ++pair) {
    const int dim = 2 + static_cast<int>(rng.below(3));
    const CutoffRule t = random_nondegenerate_rule(rng, dim);
    const CutoffRule d = random_nondegenerate_rule(rng, dim);
    for (int xs = 0; xs < 20; ++xs) {
      const Eigen::VectorXd x = random_score(rng, dim);
      const ClassificationResult res = classify_cutoff(t, d, x);
      bool all_d0 = true, all_d1 = true, all_eq = true, all_ne = true;
      for (const WitnessConfig& w : res.witnesses) {
        all_d0 &= !w.d_bit;
        all_d1 &= w.d_bit;
        all_eq &= w.t_bit == w.d_bit;
        all_ne &= w.t_bit != w.d_bit;
      }
      const int flags = static_cast<int>(all_d0) + static_cast<int>(all_d1) +
                        static_cast<int>(all_eq) + static_cast<int>(all_ne);
      CHECK(flags <= 1);  // pairwise disjoint
      switch (res.category) {
        case UC::Nevertaker: CHECK(all_d0); break;
        case UC::Alwaystaker: CHECK(all_d1); break;
        case UC::Complier: CHECK(all_eq); break;
        case UC::Defier: CHECK(all_ne); break;
        case UC::Indecisive: CHECK(flags == 0); break;
      }
    }
  }
}

TEST_CASE("one-dimensional support is exhaustive: no indecisive units") {
  Rng rng(106);
  int checked = 0;
  for (int it = 0; it < 2000; ++it) {
    const int dim = 2 + static_cast<int>(rng.below(3));
    const CutoffRule t = random_nondegenerate_rule(rng, dim);
    if (support_directions(t).size() != 1) continue;
    const CutoffRule d = random_nondegenerate_rule(rng, dim);
    const Eigen::VectorXd x = random_score(rng, dim);
    CHECK(cat(t, d, x) != UC::Indecisive);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("dualities under negation of T and D") {
  Rng rng(107);
  for (int it = 0; it < 2000; ++it) {
    const int dim = 2 + static_cast<int>(rng.below(3));
    const CutoffRule t = random_nondegenerate_rule(rng, dim);
    const CutoffRule d = random_nondegenerate_rule(rng, dim);
    const Eigen::VectorXd x = random_score(rng, dim);
    const UC c = cat(t, d, x);
    const UC c_negd = cat(t, negate_rule(d), x);
    const UC c_negt = cat(negate_rule(t), d, x);

    CHECK((c == UC::Alwaystaker) == (c_negd == UC::Nevertaker));
    CHECK((c == UC::Nevertaker) == (c_negd == UC::Alwaystaker));
    CHECK((c == UC::Alwaystaker) == (c_negt == UC::Alwaystaker));
    CHECK((c == UC::Nevertaker) == (c_negt == UC::Nevertaker));
    CHECK((c == UC::Complier) == (c_negt == UC::Defier));
    CHECK((c == UC::Complier) == (c_negd == UC::Defier));
    CHECK((c == UC::Indecisive) == (c_negt == UC::Indecisive));
    CHECK((c == UC::Indecisive) == (c_negd == UC::Indecisive));
  }
}

TEST_CASE("non-change categories survive support-nested subrules") {
  Rng rng(108);
  int checked = 0;
  for (int it = 0; it < 3000; ++it) {
    const int dim = 3 + static_cast<int>(rng.below(2));
    const CutoffRule t = random_nondegenerate_rule(rng, dim);
    const std::vector<int> st = support_directions(t);
    if (st.size() < 2) continue;
    const CutoffRule g = rule_over(rng, st, dim);
    const CutoffRule d = random_nondegenerate_rule(rng, dim);
    const Eigen::VectorXd x = random_score(rng, dim);
    const UC ct = cat(t, d, x);
    if (ct != UC::Nevertaker && ct != UC::Alwaystaker) continue;
    CHECK(cat(g, d, x) == ct);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("factorization inclusions for T = G op H with disjoint supports") {
  Rng rng(109);
  int checked = 0;
  for (int it = 0; it < 1500; ++it) {
    const CutoffRule g = rule_over(rng, {1, 2}, 4);
    const CutoffRule h = rule_over(rng, {3, 4}, 4);
    const BoolOp op = rng.uniform() < 0.5 ? BoolOp::And : BoolOp::Or;
    if (!supports_direct_sum(g, h, op)) continue;
    const CutoffRule t = combine(g, h, op);
    const CutoffRule d = random_nondegenerate_rule(rng, 4);
    const Eigen::VectorXd x = random_score(rng, 4);

    const UC cgt = cat(g, t, x);
    const UC ctd = cat(t, d, x);
    const UC cgd = cat(g, d, x);

    // every unit is a complier or a non-change unit of (G, T)
    if (op == BoolOp::And) {
      CHECK((cgt == UC::Complier || cgt == UC::Nevertaker));
    } else {
      CHECK((cgt == UC::Complier || cgt == UC::Alwaystaker));
    }
    // agreement with the closed form
    CHECK(simple_rule_categories(g, h, op, x) == cgt);

    // the inheritance map bounds the (G, D) category
    const std::vector<UC> allowed = inherited_category(cgt, ctd, op);
    CHECK(std::find(allowed.begin(), allowed.end(), cgd) != allowed.end());

    // refined intersection rules
    if (ctd == UC::Complier && cgt == UC::Complier) CHECK(cgd == UC::Complier);
    if (ctd == UC::Defier && cgt == UC::Complier) CHECK(cgd == UC::Defier);
    if (op == BoolOp::And && ctd == UC::Complier && cgt == UC::Nevertaker)
      CHECK(cgd == UC::Nevertaker);
    if (op == BoolOp::And && ctd == UC::Defier && cgt == UC::Nevertaker)
      CHECK(cgd == UC::Alwaystaker);
    if (op == BoolOp::Or && ctd == UC::Complier && cgt == UC::Alwaystaker)
      CHECK(cgd == UC::Alwaystaker);
    if (op == BoolOp::Or && ctd == UC::Defier && cgt == UC::Alwaystaker)
      CHECK(cgd == UC::Nevertaker);
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("simple rule categories match the closed forms") {
  const CutoffRule g = parse_rule("I1", 2);
  const CutoffRule h = parse_rule("I2", 2);
  CHECK(simple_rule_categories(g, h, BoolOp::And, vec2(0.0, 1.0)) == UC::Complier);
  CHECK(simple_rule_categories(g, h, BoolOp::And, vec2(0.0, -1.0)) == UC::Nevertaker);
  CHECK(simple_rule_categories(g, h, BoolOp::Or, vec2(0.0, 1.0)) == UC::Alwaystaker);
  CHECK(simple_rule_categories(g, h, BoolOp::Or, vec2(0.0, -1.0)) == UC::Complier);
  CHECK_THROWS_AS(
      simple_rule_categories(g, parse_rule("I1 & I2", 2), BoolOp::And, vec2(0, 0)),
      DataError);
}

TEST_CASE("inheritance map: non-change categories pin the target") {
  using V = std::vector<UC>;
  CHECK(inherited_category(UC::Complier, UC::Nevertaker, BoolOp::And) ==
        V{UC::Nevertaker});
  CHECK(inherited_category(UC::Nevertaker, UC::Alwaystaker, BoolOp::And) ==
        V{UC::Alwaystaker});
  CHECK(inherited_category(UC::Complier, UC::Defier, BoolOp::And) == V{UC::Defier});
  CHECK(inherited_category(UC::Nevertaker, UC::Defier, BoolOp::And) ==
        V{UC::Alwaystaker});
  CHECK(inherited_category(UC::Complier, UC::Complier, BoolOp::Or) == V{UC::Complier});
  CHECK(inherited_category(UC::Alwaystaker, UC::Defier, BoolOp::Or) ==
        V{UC::Nevertaker});
  // outside the regime nothing is pinned
  CHECK(inherited_category(UC::Defier, UC::Complier, BoolOp::And).size() == 5);
}

// --- general-D classification ---------------------------------------------------

TEST_CASE("classify_general: constant decisions") {
  const CutoffRule t = parse_rule("I1 & I2", 2);
  const DecisionFn zero = [](const Eigen::VectorXd&) { return false; };
  const DecisionFn one = [](const Eigen::VectorXd&) { return true; };
  const ClassificationResult r0 =
      classify_general(t, zero, vec2(0.3, -0.8), bracketing_grid());
  CHECK(r0.category == UC::Nevertaker);
  CHECK(r0.approximate);
  CHECK(classify_general(t, one, vec2(0.3, -0.8), bracketing_grid()).category ==
        UC::Alwaystaker);
}

TEST_CASE("classify_general rejects empty grids") {
  const CutoffRule t = parse_rule("I1 & I2", 2);
  GridSpec grid;
  grid.offsets = {{0.5}, {}};
  const DecisionFn zero = [](const Eigen::VectorXd&) { return false; };
  CHECK_THROWS_AS(classify_general(t, zero, vec2(0, 0), grid), DataError);
}

TEST_CASE("grid classifier agrees with the exact one on random cutoff rules") {
  Rng rng(110);
  for (int pair = 0; pair < 300; ++pair) {
    const int dim = 2 + static_cast<int>(rng.below(3));
    const CutoffRule t = random_nondegenerate_rule(rng, dim);
    const CutoffRule d = random_nondegenerate_rule(rng, dim);
    const DecisionFn d_fn = [&](const Eigen::VectorXd& w) { return evaluate(d, w); };
    for (int xs = 0; xs < 25; ++xs) {
      const Eigen::VectorXd x = random_score(rng, dim);
      CHECK(classify_general(t, d_fn, x, bracketing_grid()).category ==
            classify_cutoff(t, d, x).category);
    }
  }
}

// --- dataset-scale helpers -------------------------------------------------------

TEST_CASE("classify_dataset counts the four-variable fixtures") {
  const CutoffRule t = parse_rule("I1 & I2", 4);
  const CutoffRule d = parse_rule("((I1 & I2) & I3) | (!I3 & I4)", 4);
  Eigen::MatrixXd scores(3, 4);
  scores << 0, 0, 0.5, 0,  // complier
      0, 0, -0.5, 0.5,     // alwaystaker
      0, 0, -0.5, -0.5;    // nevertaker
  const DatasetClassification res = classify_dataset(t, d, scores);
  CHECK(res.counts.complier == 1);
  CHECK(res.counts.alwaystaker == 1);
  CHECK(res.counts.nevertaker == 1);
  CHECK(res.counts.total() == 3);

  const DatasetClassification empty = classify_dataset(t, d, Eigen::MatrixXd(0, 4));
  CHECK(empty.counts.total() == 0);
}

TEST_CASE("subset masks drop exactly the predicate matches") {
  const OmegaPredicate omega = parse_omega("x_y <= 0");
  const std::vector<double> xy = {0.5, -0.2, 0.0, 1.0};
  std::vector<UnitCategory> cats = {UC::Complier, UC::Nevertaker, UC::Nevertaker,
                                    UC::Complier};
  const auto column_at = [&](const std::string& name, std::size_t i) {
    REQUIRE(name == "xy");
    return xy[i];
  };
  const std::vector<std::uint8_t> keep = subset_mask(omega, column_at, 4, &cats);
  CHECK(keep == std::vector<std::uint8_t>{1, 0, 0, 1});

  // empty omega keeps everything
  const std::vector<std::uint8_t> all =
      subset_mask(parse_omega(""), column_at, 4, &cats);
  CHECK(all == std::vector<std::uint8_t>{1, 1, 1, 1});

  // a complier inside omega is an error
  cats[1] = UC::Complier;
  CHECK_THROWS_AS(subset_mask(omega, column_at, 4, &cats), DataError);
}

TEST_CASE("omega predicates parse identifiers loosely and support conjunction") {
  const OmegaPredicate omega = parse_omega("xy <= 0 & XE > -0.5");
  CHECK(omega.clauses.size() == 2);
  CHECK(omega.clauses[0].column == "xy");
  CHECK(omega.clauses[1].column == "xe");
  CHECK_THROWS_AS(parse_omega("x_y <=="), ConfigError);
  CHECK_THROWS_AS(parse_omega("<= 3"), ConfigError);
}
