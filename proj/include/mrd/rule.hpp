#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mrd {

// Boolean expression over threshold indicator atoms I1..IK. Expressions are
// immutable values; combinators build new trees.
struct BoolExpr {
  enum class Kind { Atom, Not, And, Or, Const };

  Kind kind = Kind::Const;
  int atom = 0;      // 1-based coordinate index, Kind::Atom only
  bool value = false;  // Kind::Const only
  std::vector<BoolExpr> children;

  static BoolExpr make_atom(int k);
  static BoolExpr make_const(bool v);
  static BoolExpr make_not(BoolExpr child);
  static BoolExpr make_and(std::vector<BoolExpr> cs);
  static BoolExpr make_or(std::vector<BoolExpr> cs);

  // evaluation over a full assignment of atom bits (bits[k-1] for atom k)
  bool eval(const std::vector<std::uint8_t>& bits) const;

  int max_atom() const;
  void collect_atoms(std::vector<int>& out) const;  // sorted, unique

  bool operator==(const BoolExpr& other) const;
};

// A decision rule T(x) = g(1[x_1 > c_1], ..., 1[x_K > c_K]). Indicators are
// strict: a score sitting exactly on its cutoff evaluates to 0.
struct CutoffRule {
  BoolExpr expr;
  Eigen::VectorXd cutoff;  // length dim
  int dim = 0;

  bool zero_cutoff() const { return cutoff.isZero(0.0); }
};

CutoffRule make_rule(BoolExpr expr, int dim);
CutoffRule make_rule(BoolExpr expr, Eigen::VectorXd cutoff);

// Orthogonal split of a score vector into its supp(T) component and the
// remainder that cannot affect the rule.
struct Decomposition {
  Eigen::VectorXd x_supp;
  Eigen::VectorXd x_perp;
};

// --- DSL -------------------------------------------------------------------
//
// rule      := or_expr [ '@' 'c' '=' '(' num {',' num} ')' ]
// or_expr   := and_expr { '|' and_expr }
// and_expr  := unary { '&' unary }
// unary     := '!' unary | primary
// primary   := 'I' digits | '0' | '1' | '(' or_expr ')'
//
// Without a cutoff clause the cutoff defaults to the zero vector.
CutoffRule parse_rule(const std::string& text, int dim);
std::string to_string(const BoolExpr& expr);
std::string to_string(const CutoffRule& rule);

// JSON interchange form {"expr": "...", "cutoff": [...], "dim": K}
std::string rule_to_json(const CutoffRule& rule);
CutoffRule rule_from_json(const std::string& json_text);

// --- Operations ------------------------------------------------------------

bool evaluate(const CutoffRule& rule, const Eigen::VectorXd& x);

// Observationally equivalent zero-cutoff rule plus the shift that was
// absorbed: evaluate(normalized, x - shift) == evaluate(rule, x).
std::pair<CutoffRule, Eigen::VectorXd> normalize_cutoff(const CutoffRule& rule);

// Indices (1-based, sorted) of the coordinates the rule genuinely depends
// on, found by exhaustive truth-table dependence over the referenced atoms.
std::vector<int> support_directions(const CutoffRule& rule);

// Constant value if the rule has empty support, nullopt otherwise.
std::optional<bool> is_constant(const CutoffRule& rule);

Decomposition decompose(const Eigen::VectorXd& x, const CutoffRule& rule);

enum class BoolOp { And, Or };

CutoffRule combine(const CutoffRule& a, const CutoffRule& b, BoolOp op);
CutoffRule negate_rule(const CutoffRule& a);

// True when the supports of g and h are disjoint and together span the
// support of combine(g, h, op).
bool supports_direct_sum(const CutoffRule& g, const CutoffRule& h, BoolOp op);

}  // namespace mrd
