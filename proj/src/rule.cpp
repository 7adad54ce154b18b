#include "mrd/rule.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrd/errors.hpp"

namespace mrd {

namespace {
using json = nlohmann::json;

constexpr int kMaxEnumeratedAtoms = 24;
}  // namespace

BoolExpr BoolExpr::make_atom(int k) {
  BoolExpr e;
  e.kind = Kind::Atom;
  e.atom = k;
  return e;
}

BoolExpr BoolExpr::make_const(bool v) {
  BoolExpr e;
  e.kind = Kind::Const;
  e.value = v;
  return e;
}

BoolExpr BoolExpr::make_not(BoolExpr child) {
  BoolExpr e;
  e.kind = Kind::Not;
  e.children.push_back(std::move(child));
  return e;
}

BoolExpr BoolExpr::make_and(std::vector<BoolExpr> cs) {
  BoolExpr e;
  e.kind = Kind::And;
  e.children = std::move(cs);
  return e;
}

BoolExpr BoolExpr::make_or(std::vector<BoolExpr> cs) {
  BoolExpr e;
  e.kind = Kind::Or;
  e.children = std::move(cs);
  return e;
}

bool BoolExpr::eval(const std::vector<std::uint8_t>& bits) const {
  switch (kind) {
    case Kind::Atom:
      return bits[static_cast<std::size_t>(atom - 1)] != 0;
    case Kind::Not:
      return !children[0].eval(bits);
    case Kind::And:
      for (const auto& c : children)
        if (!c.eval(bits)) return false;
      return true;
    case Kind::Or:
      for (const auto& c : children)
        if (c.eval(bits)) return true;
      return false;
    case Kind::Const:
      return value;
  }
  return false;
}

int BoolExpr::max_atom() const {
  int m = 0;
  if (kind == Kind::Atom) m = atom;
  for (const auto& c : children) m = std::max(m, c.max_atom());
  return m;
}

void BoolExpr::collect_atoms(std::vector<int>& out) const {
  if (kind == Kind::Atom) out.push_back(atom);
  for (const auto& c : children) c.collect_atoms(out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

bool BoolExpr::operator==(const BoolExpr& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case Kind::Atom:
      return atom == other.atom;
    case Kind::Const:
      return value == other.value;
    default:
      return children == other.children;
  }
}

CutoffRule make_rule(BoolExpr expr, int dim) {
  if (dim < 1) throw ConfigError("rule dimension must be positive");
  if (expr.max_atom() > dim) {
    throw ConfigError("atom index " + std::to_string(expr.max_atom()) +
                      " out of range for dimension " + std::to_string(dim));
  }
  CutoffRule r;
  r.expr = std::move(expr);
  r.cutoff = Eigen::VectorXd::Zero(dim);
  r.dim = dim;
  return r;
}

CutoffRule make_rule(BoolExpr expr, Eigen::VectorXd cutoff) {
  CutoffRule r = make_rule(std::move(expr), static_cast<int>(cutoff.size()));
  r.cutoff = std::move(cutoff);
  return r;
}

// --- parsing ----------------------------------------------------------------

namespace {

struct Parser {
  const std::string& text;
  std::size_t pos = 0;
  int dim;

  explicit Parser(const std::string& t, int k) : text(t), dim(k) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("rule syntax error at position " + std::to_string(pos) +
                      ": " + what);
  }

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }

  BoolExpr parse_or() {
    std::vector<BoolExpr> terms;
    terms.push_back(parse_and());
    while (eat('|')) terms.push_back(parse_and());
    if (terms.size() == 1) return std::move(terms[0]);
    return BoolExpr::make_or(std::move(terms));
  }

  BoolExpr parse_and() {
    std::vector<BoolExpr> terms;
    terms.push_back(parse_unary());
    while (eat('&')) terms.push_back(parse_unary());
    if (terms.size() == 1) return std::move(terms[0]);
    return BoolExpr::make_and(std::move(terms));
  }

  BoolExpr parse_unary() {
    if (eat('!')) return BoolExpr::make_not(parse_unary());
    return parse_primary();
  }

  BoolExpr parse_primary() {
    skip_ws();
    if (pos >= text.size()) fail("unexpected end of input");
    const char c = text[pos];
    if (c == '(') {
      ++pos;
      BoolExpr e = parse_or();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (c == '0' || c == '1') {
      ++pos;
      return BoolExpr::make_const(c == '1');
    }
    if (c == 'I' || c == 'i') {
      ++pos;
      if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos])))
        fail("expected atom index after 'I'");
      int k = 0;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        k = k * 10 + (text[pos] - '0');
        ++pos;
      }
      if (k < 1 || k > dim)
        fail("atom I" + std::to_string(k) + " out of range 1.." + std::to_string(dim));
      return BoolExpr::make_atom(k);
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  Eigen::VectorXd parse_cutoff_clause() {
    // '@' already consumed
    skip_ws();
    if (!(eat('c') || eat('C'))) fail("expected 'c' after '@'");
    if (!eat('=')) fail("expected '=' in cutoff clause");
    if (!eat('(')) fail("expected '(' in cutoff clause");
    std::vector<double> vals;
    do {
      skip_ws();
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(text.substr(pos), &used);
      } catch (const std::exception&) {
        fail("expected number in cutoff clause");
      }
      pos += used;
      vals.push_back(v);
    } while (eat(','));
    if (!eat(')')) fail("expected ')' closing cutoff clause");
    if (static_cast<int>(vals.size()) != dim)
      fail("cutoff clause has " + std::to_string(vals.size()) + " entries, expected " +
           std::to_string(dim));
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }
};

void print_expr(const BoolExpr& e, std::ostringstream& out, int parent_prec) {
  // precedence: Or=1, And=2, Not=3, leaf=4
  switch (e.kind) {
    case BoolExpr::Kind::Atom:
      out << 'I' << e.atom;
      return;
    case BoolExpr::Kind::Const:
      out << (e.value ? '1' : '0');
      return;
    case BoolExpr::Kind::Not:
      out << '!';
      print_expr(e.children[0], out, 3);
      return;
    case BoolExpr::Kind::And: {
      const bool parens = parent_prec > 2;
      if (parens) out << '(';
      for (std::size_t i = 0; i < e.children.size(); ++i) {
        if (i) out << " & ";
        // nested And gets parens so the n-ary structure survives a reparse
        print_expr(e.children[i], out, 3);
      }
      if (parens) out << ')';
      return;
    }
    case BoolExpr::Kind::Or: {
      const bool parens = parent_prec > 1;
      if (parens) out << '(';
      for (std::size_t i = 0; i < e.children.size(); ++i) {
        if (i) out << " | ";
        print_expr(e.children[i], out, 2);
      }
      if (parens) out << ')';
      return;
    }
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

CutoffRule parse_rule(const std::string& text, int dim) {
  Parser p(text, dim);
  BoolExpr expr = p.parse_or();
  Eigen::VectorXd cutoff = Eigen::VectorXd::Zero(dim);
  if (p.eat('@')) cutoff = p.parse_cutoff_clause();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing input");
  CutoffRule r;
  r.expr = std::move(expr);
  r.cutoff = std::move(cutoff);
  r.dim = dim;
  return r;
}

std::string to_string(const BoolExpr& expr) {
  std::ostringstream out;
  print_expr(expr, out, 0);
  return out.str();
}

std::string to_string(const CutoffRule& rule) {
  std::ostringstream out;
  print_expr(rule.expr, out, 0);
  if (!rule.zero_cutoff()) {
    out << " @ c=(";
    for (int k = 0; k < rule.dim; ++k) {
      if (k) out << ", ";
      out << format_double(rule.cutoff[k]);
    }
    out << ')';
  }
  return out.str();
}

std::string rule_to_json(const CutoffRule& rule) {
  json j;
  j["expr"] = to_string(rule.expr);
  j["cutoff"] = std::vector<double>(rule.cutoff.data(), rule.cutoff.data() + rule.dim);
  j["dim"] = rule.dim;
  return j.dump();
}

CutoffRule rule_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("rule JSON parse error: ") + e.what());
  }
  const int dim = j.at("dim").get<int>();
  CutoffRule r = parse_rule(j.at("expr").get<std::string>(), dim);
  if (j.contains("cutoff")) {
    const auto c = j["cutoff"].get<std::vector<double>>();
    if (static_cast<int>(c.size()) != dim)
      throw ConfigError("rule JSON cutoff length does not match dim");
    r.cutoff = Eigen::Map<const Eigen::VectorXd>(c.data(), dim);
  }
  return r;
}

// --- evaluation & structure --------------------------------------------------

bool evaluate(const CutoffRule& rule, const Eigen::VectorXd& x) {
  if (x.size() != rule.dim) {
    throw DataError("score dimension " + std::to_string(x.size()) +
                    " does not match rule dimension " + std::to_string(rule.dim));
  }
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(rule.dim));
  for (int k = 0; k < rule.dim; ++k) bits[k] = x[k] > rule.cutoff[k] ? 1 : 0;
  return rule.expr.eval(bits);
}

std::pair<CutoffRule, Eigen::VectorXd> normalize_cutoff(const CutoffRule& rule) {
  CutoffRule out = rule;
  Eigen::VectorXd shift = rule.cutoff;
  out.cutoff.setZero();
  return {std::move(out), std::move(shift)};
}

std::vector<int> support_directions(const CutoffRule& rule) {
  std::vector<int> atoms;
  rule.expr.collect_atoms(atoms);
  const int u = static_cast<int>(atoms.size());
  if (u > kMaxEnumeratedAtoms) {
    throw DataError("rule references " + std::to_string(u) +
                    " atoms; exact support enumeration is capped at " +
                    std::to_string(kMaxEnumeratedAtoms));
  }
  std::vector<int> support;
  if (u == 0) return support;

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(rule.dim), 0);
  const std::uint32_t total = 1u << u;
  for (int a = 0; a < u; ++a) {
    bool depends = false;
    for (std::uint32_t m = 0; m < total && !depends; ++m) {
      if (m & (1u << a)) continue;  // visit each pair once, from the 0 branch
      for (int j = 0; j < u; ++j)
        bits[static_cast<std::size_t>(atoms[j] - 1)] = (m >> j) & 1u;
      const bool v0 = rule.expr.eval(bits);
      bits[static_cast<std::size_t>(atoms[a] - 1)] = 1;
      const bool v1 = rule.expr.eval(bits);
      depends = v0 != v1;
    }
    if (depends) support.push_back(atoms[a]);
  }
  return support;
}

std::optional<bool> is_constant(const CutoffRule& rule) {
  if (!support_directions(rule).empty()) return std::nullopt;
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(rule.dim), 0);
  return rule.expr.eval(bits);
}

Decomposition decompose(const Eigen::VectorXd& x, const CutoffRule& rule) {
  if (x.size() != rule.dim)
    throw DataError("decompose: score/rule dimension mismatch");
  const std::vector<int> support = support_directions(rule);
  Decomposition d;
  d.x_supp = Eigen::VectorXd::Zero(rule.dim);
  for (int k : support) d.x_supp[k - 1] = x[k - 1];
  d.x_perp = x - d.x_supp;
  return d;
}

CutoffRule combine(const CutoffRule& a, const CutoffRule& b, BoolOp op) {
  if (a.dim != b.dim) throw DataError("combine: rule dimensions differ");
  if (!a.cutoff.isApprox(b.cutoff, 0.0))
    throw DataError("combine: rules have different cutoffs; normalize first");
  CutoffRule out;
  std::vector<BoolExpr> cs;
  cs.push_back(a.expr);
  cs.push_back(b.expr);
  out.expr = op == BoolOp::And ? BoolExpr::make_and(std::move(cs))
                               : BoolExpr::make_or(std::move(cs));
  out.cutoff = a.cutoff;
  out.dim = a.dim;
  return out;
}

CutoffRule negate_rule(const CutoffRule& a) {
  CutoffRule out = a;
  out.expr = BoolExpr::make_not(a.expr);
  return out;
}

bool supports_direct_sum(const CutoffRule& g, const CutoffRule& h, BoolOp op) {
  if (g.dim != h.dim) throw DataError("supports_direct_sum: dimensions differ");
  const std::vector<int> sg = support_directions(g);
  const std::vector<int> sh = support_directions(h);
  std::vector<int> inter;
  std::set_intersection(sg.begin(), sg.end(), sh.begin(), sh.end(),
                        std::back_inserter(inter));
  if (!inter.empty()) return false;
  std::vector<int> unite;
  std::set_union(sg.begin(), sg.end(), sh.begin(), sh.end(), std::back_inserter(unite));
  const std::vector<int> st = support_directions(combine(g, h, op));
  return unite == st;
}

}  // namespace mrd
