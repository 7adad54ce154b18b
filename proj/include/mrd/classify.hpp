#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrd/rule.hpp"

namespace mrd {

// Behavior of a unit's decision D under all cutoff perturbations of the
// assignment rule T inside supp(T).
enum class UnitCategory : std::uint8_t {
  Complier,
  Nevertaker,
  Alwaystaker,
  Defier,
  Indecisive,
};

const char* category_code(UnitCategory c);            // C, NT, AT, DF, IND
UnitCategory category_from_code(const std::string& s);

// One probed cutoff configuration and the (T, D) responses it produced.
struct WitnessConfig {
  std::vector<std::uint8_t> support_bits;  // atom assignment over S(T), in index order
  bool t_bit = false;
  bool d_bit = false;
};

struct ClassificationResult {
  UnitCategory category = UnitCategory::Indecisive;
  std::vector<WitnessConfig> witnesses;
  bool approximate = false;  // set by the grid-based classifier
};

// Cutoff offsets probed per support direction when classifying a general
// decision rule. Empty offsets lists mean: build a bracketing grid around the
// unit's own coordinates (strictly below and above each support coordinate,
// plus tight probes around zero).
struct GridSpec {
  std::vector<std::vector<double>> offsets;  // one list per support direction
  double epsilon = 1e-6;
};

// Exact classification for cutoff-rule D via enumeration of the atom
// configurations on S(T). Both rules must be normalized to zero cutoff;
// degenerate T (empty support) is rejected.
ClassificationResult classify_cutoff(const CutoffRule& t, const CutoffRule& d,
                                     const Eigen::VectorXd& x);

// Approximate classification of a general decision rule d_fn, probing
// D(x - c) against T(x | c) on a finite cutoff grid inside supp(T).
using DecisionFn = std::function<bool(const Eigen::VectorXd&)>;
ClassificationResult classify_general(const CutoffRule& t, const DecisionFn& d_fn,
                                      const Eigen::VectorXd& x, const GridSpec& grid);

// Closed-form category of a unit for (G, combine(G, H, op)) when the two
// supports are disjoint: AND yields complier/nevertaker, OR complier/alwaystaker.
UnitCategory simple_rule_categories(const CutoffRule& g, const CutoffRule& h,
                                    BoolOp op, const Eigen::VectorXd& x);

// Possible (G, D) categories when transitioning from T = G op H to the
// subrule G, given the (G, T) and (T, D) categories. Returns a singleton
// where the inheritance diagram pins the target, otherwise the full set.
std::vector<UnitCategory> inherited_category(UnitCategory cat_gt, UnitCategory cat_td,
                                             BoolOp op);

struct CategoryCounts {
  std::int64_t complier = 0;
  std::int64_t nevertaker = 0;
  std::int64_t alwaystaker = 0;
  std::int64_t defier = 0;
  std::int64_t indecisive = 0;

  std::int64_t total() const {
    return complier + nevertaker + alwaystaker + defier + indecisive;
  }
  std::int64_t& operator[](UnitCategory c);
};

struct DatasetClassification {
  std::vector<UnitCategory> categories;
  CategoryCounts counts;
};

// Vectorized classify_cutoff over the rows of a score matrix (n x K).
DatasetClassification classify_dataset(const CutoffRule& t, const CutoffRule& d,
                                       const Eigen::MatrixXd& scores);

// --- subset selection (Theorem-2 style exclusion sets) ----------------------
//
// Mini-expression over named numeric columns: conjunctions of comparisons,
// e.g. "x_y <= 0" or "x_y <= 0 & x_e > 0.1". Identifier matching ignores
// case and underscores, so "xy" and "x_y" are the same column.
struct OmegaPredicate {
  struct Clause {
    std::string column;
    enum class Op { Le, Lt, Ge, Gt, Eq, Ne } op;
    double value;
  };
  std::vector<Clause> clauses;  // conjunction

  bool matches(const std::function<double(const std::string&)>& col_value) const;
};

OmegaPredicate parse_omega(const std::string& text);

// Keep-mask from an exclusion predicate: true = keep, false = drop (unit is
// in Omega). When categories are supplied, dropping a complier/defier/
// indecisive unit is an error, since the subset identification argument
// only allows removing nevertakers and alwaystakers.
std::vector<std::uint8_t> subset_mask(
    const OmegaPredicate& omega,
    const std::function<double(const std::string&, std::size_t)>& column_at,
    std::size_t n_rows, const std::vector<UnitCategory>* categories);

}  // namespace mrd
