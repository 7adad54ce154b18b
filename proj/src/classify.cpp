#include "mrd/classify.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mrd/errors.hpp"
#include "mrd/parallel.hpp"

namespace mrd {

const char* category_code(UnitCategory c) {
  switch (c) {
    case UnitCategory::Complier: return "C";
    case UnitCategory::Nevertaker: return "NT";
    case UnitCategory::Alwaystaker: return "AT";
    case UnitCategory::Defier: return "DF";
    case UnitCategory::Indecisive: return "IND";
  }
  return "?";
}

UnitCategory category_from_code(const std::string& s) {
  if (s == "C") return UnitCategory::Complier;
  if (s == "NT") return UnitCategory::Nevertaker;
  if (s == "AT") return UnitCategory::Alwaystaker;
  if (s == "DF") return UnitCategory::Defier;
  if (s == "IND") return UnitCategory::Indecisive;
  throw DataError("unknown category code '" + s + "'");
}

std::int64_t& CategoryCounts::operator[](UnitCategory c) {
  switch (c) {
    case UnitCategory::Complier: return complier;
    case UnitCategory::Nevertaker: return nevertaker;
    case UnitCategory::Alwaystaker: return alwaystaker;
    case UnitCategory::Defier: return defier;
    case UnitCategory::Indecisive: return indecisive;
  }
  return indecisive;
}

namespace {

constexpr int kMaxSupportAtoms = 20;

UnitCategory resolve_category(bool all_d0, bool all_d1, bool all_eq, bool all_ne) {
  if (all_d0) return UnitCategory::Nevertaker;
  if (all_d1) return UnitCategory::Alwaystaker;
  if (all_eq) return UnitCategory::Complier;
  if (all_ne) return UnitCategory::Defier;
  return UnitCategory::Indecisive;
}

std::vector<int> checked_support(const CutoffRule& t) {
  const std::vector<int> support = support_directions(t);
  if (support.empty()) throw DataError("degenerate rule: T has empty support");
  if (static_cast<int>(support.size()) > kMaxSupportAtoms) {
    throw DataError("support of T has " + std::to_string(support.size()) +
                    " directions; exact classification is capped at " +
                    std::to_string(kMaxSupportAtoms));
  }
  return support;
}

}  // namespace

ClassificationResult classify_cutoff(const CutoffRule& t, const CutoffRule& d,
                                     const Eigen::VectorXd& x) {
  if (t.dim != d.dim || x.size() != t.dim)
    throw DataError("classify_cutoff: dimension mismatch between T, D and x");
  if (!t.zero_cutoff() || !d.zero_cutoff())
    throw DataError(
        "classify_cutoff: rules must share the zero cutoff (normalize first); "
        "non-synchronous cutoffs are not classifiable");
  const std::vector<int> support = checked_support(t);
  const int s = static_cast<int>(support.size());

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(t.dim));
  for (int k = 0; k < t.dim; ++k) bits[k] = x[k] > 0.0 ? 1 : 0;

  ClassificationResult res;
  bool all_d0 = true, all_d1 = true, all_eq = true, all_ne = true;
  const std::uint32_t total = 1u << s;
  res.witnesses.reserve(total);
  for (std::uint32_t m = 0; m < total; ++m) {
    WitnessConfig w;
    w.support_bits.resize(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
      const std::uint8_t b = (m >> j) & 1u;
      bits[static_cast<std::size_t>(support[j] - 1)] = b;
      w.support_bits[static_cast<std::size_t>(j)] = b;
    }
    w.t_bit = t.expr.eval(bits);
    w.d_bit = d.expr.eval(bits);
    all_d0 &= !w.d_bit;
    all_d1 &= w.d_bit;
    all_eq &= w.t_bit == w.d_bit;
    all_ne &= w.t_bit != w.d_bit;
    res.witnesses.push_back(std::move(w));
  }
  res.category = resolve_category(all_d0, all_d1, all_eq, all_ne);
  return res;
}

ClassificationResult classify_general(const CutoffRule& t, const DecisionFn& d_fn,
                                      const Eigen::VectorXd& x, const GridSpec& grid) {
  if (x.size() != t.dim) throw DataError("classify_general: dimension mismatch");
  if (!t.zero_cutoff())
    throw DataError("classify_general: T must be normalized to zero cutoff");
  const std::vector<int> support = checked_support(t);
  const int s = static_cast<int>(support.size());

  if (!grid.offsets.empty() && static_cast<int>(grid.offsets.size()) != s)
    throw DataError("classify_general: grid needs one offset list per support direction");

  std::vector<std::vector<double>> offsets(static_cast<std::size_t>(s));
  for (int j = 0; j < s; ++j) {
    if (!grid.offsets.empty()) {
      offsets[j] = grid.offsets[static_cast<std::size_t>(j)];
      if (offsets[j].empty())
        throw DataError("classify_general: empty grid in direction " +
                        std::to_string(support[j]));
    } else {
      const double xk = x[support[j] - 1];
      const double scale = std::max(1.0, std::abs(xk));
      const double far = std::abs(xk) + 1.0;
      offsets[j] = {-far, -grid.epsilon * scale, grid.epsilon * scale, far};
    }
    std::sort(offsets[j].begin(), offsets[j].end());
    offsets[j].erase(std::unique(offsets[j].begin(), offsets[j].end()), offsets[j].end());
  }

  ClassificationResult res;
  res.approximate = true;
  bool all_d0 = true, all_d1 = true, all_eq = true, all_ne = true;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(t.dim);
  std::vector<std::size_t> idx(static_cast<std::size_t>(s), 0);
  while (true) {
    for (int j = 0; j < s; ++j) c[support[j] - 1] = offsets[j][idx[j]];

    CutoffRule t_at_c = t;
    t_at_c.cutoff = c;
    WitnessConfig w;
    w.support_bits.resize(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j)
      w.support_bits[static_cast<std::size_t>(j)] = x[support[j] - 1] > c[support[j] - 1];
    w.t_bit = evaluate(t_at_c, x);
    w.d_bit = d_fn(x - c);
    all_d0 &= !w.d_bit;
    all_d1 &= w.d_bit;
    all_eq &= w.t_bit == w.d_bit;
    all_ne &= w.t_bit != w.d_bit;
    res.witnesses.push_back(std::move(w));

    int j = 0;
    for (; j < s; ++j) {
      if (++idx[j] < offsets[j].size()) break;
      idx[j] = 0;
    }
    if (j == s) break;
  }
  res.category = resolve_category(all_d0, all_d1, all_eq, all_ne);
  return res;
}

UnitCategory simple_rule_categories(const CutoffRule& g, const CutoffRule& h,
                                    BoolOp op, const Eigen::VectorXd& x) {
  if (!g.zero_cutoff() || !h.zero_cutoff())
    throw DataError("simple_rule_categories: rules must be normalized");
  if (support_directions(g).empty())
    throw DataError("simple_rule_categories: G has empty support");
  if (!supports_direct_sum(g, h, op))
    throw DataError("simple_rule_categories: supports are not a direct sum");
  const Decomposition dec = decompose(x, g);
  const bool h_bit = evaluate(h, dec.x_perp);
  if (op == BoolOp::And)
    return h_bit ? UnitCategory::Complier : UnitCategory::Nevertaker;
  return h_bit ? UnitCategory::Alwaystaker : UnitCategory::Complier;
}

std::vector<UnitCategory> inherited_category(UnitCategory cat_gt, UnitCategory cat_td,
                                             BoolOp op) {
  using UC = UnitCategory;
  // non-change categories survive any subrule with nested support
  if (cat_td == UC::Nevertaker) return {UC::Nevertaker};
  if (cat_td == UC::Alwaystaker) return {UC::Alwaystaker};

  const bool gt_compliant = cat_gt == UC::Complier;
  const bool gt_nonchange = (op == BoolOp::And && cat_gt == UC::Nevertaker) ||
                            (op == BoolOp::Or && cat_gt == UC::Alwaystaker);
  if (cat_td == UC::Complier) {
    if (gt_compliant) return {UC::Complier};
    if (gt_nonchange)
      return {op == BoolOp::And ? UC::Nevertaker : UC::Alwaystaker};
  } else if (cat_td == UC::Defier) {
    if (gt_compliant) return {UC::Defier};
    if (gt_nonchange)
      return {op == BoolOp::And ? UC::Alwaystaker : UC::Nevertaker};
  }
  // outside the diagram's regime nothing is pinned down
  return {UC::Complier, UC::Nevertaker, UC::Alwaystaker, UC::Defier, UC::Indecisive};
}

DatasetClassification classify_dataset(const CutoffRule& t, const CutoffRule& d,
                                       const Eigen::MatrixXd& scores) {
  if (scores.cols() != t.dim)
    throw DataError("classify_dataset: score matrix has wrong column count");
  const std::size_t n = static_cast<std::size_t>(scores.rows());
  DatasetClassification out;
  out.categories.resize(n);
  if (n > 0) {
    // validate rules once up front so worker threads cannot throw
    classify_cutoff(t, d, Eigen::VectorXd(scores.row(0)));
  }
  parallel_for(n, [&](std::size_t i) {
    out.categories[i] =
        classify_cutoff(t, d, Eigen::VectorXd(scores.row(static_cast<Eigen::Index>(i))))
            .category;
  });
  for (const UnitCategory c : out.categories) ++out.counts[c];
  return out;
}

// --- omega predicates --------------------------------------------------------

namespace {

std::string normalize_name(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

bool OmegaPredicate::matches(
    const std::function<double(const std::string&)>& col_value) const {
  for (const Clause& cl : clauses) {
    const double v = col_value(cl.column);
    bool ok = false;
    switch (cl.op) {
      case Clause::Op::Le: ok = v <= cl.value; break;
      case Clause::Op::Lt: ok = v < cl.value; break;
      case Clause::Op::Ge: ok = v >= cl.value; break;
      case Clause::Op::Gt: ok = v > cl.value; break;
      case Clause::Op::Eq: ok = v == cl.value; break;
      case Clause::Op::Ne: ok = v != cl.value; break;
    }
    if (!ok) return false;
  }
  return true;
}

OmegaPredicate parse_omega(const std::string& text) {
  OmegaPredicate pred;
  std::size_t pos = 0;
  const auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  skip_ws();
  if (pos == text.size()) return pred;  // empty predicate selects nothing

  while (true) {
    skip_ws();
    std::string ident;
    while (pos < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_')) {
      ident.push_back(text[pos++]);
    }
    if (ident.empty())
      throw ConfigError("omega predicate: expected column name at position " +
                        std::to_string(pos));
    skip_ws();
    OmegaPredicate::Clause cl;
    cl.column = normalize_name(ident);
    if (pos + 1 < text.size() && text[pos + 1] == '=') {
      switch (text[pos]) {
        case '<': cl.op = OmegaPredicate::Clause::Op::Le; break;
        case '>': cl.op = OmegaPredicate::Clause::Op::Ge; break;
        case '=': cl.op = OmegaPredicate::Clause::Op::Eq; break;
        case '!': cl.op = OmegaPredicate::Clause::Op::Ne; break;
        default:
          throw ConfigError("omega predicate: bad operator at position " +
                            std::to_string(pos));
      }
      pos += 2;
    } else if (pos < text.size() && text[pos] == '<') {
      cl.op = OmegaPredicate::Clause::Op::Lt;
      ++pos;
    } else if (pos < text.size() && text[pos] == '>') {
      cl.op = OmegaPredicate::Clause::Op::Gt;
      ++pos;
    } else {
      throw ConfigError("omega predicate: expected comparison operator at position " +
                        std::to_string(pos));
    }
    skip_ws();
    std::size_t used = 0;
    try {
      cl.value = std::stod(text.substr(pos), &used);
    } catch (const std::exception&) {
      throw ConfigError("omega predicate: expected number at position " +
                        std::to_string(pos));
    }
    pos += used;
    pred.clauses.push_back(std::move(cl));
    skip_ws();
    if (pos == text.size()) break;
    if (text[pos] == '&') {
      ++pos;
      if (pos < text.size() && text[pos] == '&') ++pos;
      continue;
    }
    throw ConfigError("omega predicate: trailing input at position " +
                      std::to_string(pos));
  }
  return pred;
}

std::vector<std::uint8_t> subset_mask(
    const OmegaPredicate& omega,
    const std::function<double(const std::string&, std::size_t)>& column_at,
    std::size_t n_rows, const std::vector<UnitCategory>* categories) {
  std::vector<std::uint8_t> keep(n_rows, 1);
  if (omega.clauses.empty()) return keep;
  for (std::size_t i = 0; i < n_rows; ++i) {
    const bool in_omega =
        omega.matches([&](const std::string& name) { return column_at(name, i); });
    if (!in_omega) continue;
    if (categories) {
      const UnitCategory c = (*categories)[i];
      if (c != UnitCategory::Nevertaker && c != UnitCategory::Alwaystaker) {
        throw DataError("subset omega contains a " + std::string(category_code(c)) +
                        " unit at row " + std::to_string(i) +
                        "; only nevertakers/alwaystakers may be excluded");
      }
    }
    keep[i] = 0;
  }
  return keep;
}

}  // namespace mrd
