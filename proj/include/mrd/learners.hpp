#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mrd {

enum class LearnerKind {
  NoAdjust,
  LinearCovs,
  LassoLocal,
  LassoGlobal,
  Boosting,
  Stacking,
};

const char* learner_name(LearnerKind k);
LearnerKind learner_from_name(const std::string& name);

struct LearnerSpec {
  LearnerKind kind = LearnerKind::NoAdjust;
  int folds = 5;
  int lambda_grid = 50;
  double lambda_min_ratio = 1e-4;
  int boost_rounds = 200;
  double shrinkage = 0.1;
  int tree_depth = 2;
  double validation_fraction = 0.2;
  bool include_score = false;  // also feed the running variable into eta

  static LearnerSpec of(LearnerKind k) {
    LearnerSpec s;
    s.kind = k;
    return s;
  }
  // learners that produce a cross-fitted adjustment eta(Z)
  bool is_rdflex() const {
    return kind == LearnerKind::LassoLocal || kind == LearnerKind::LassoGlobal ||
           kind == LearnerKind::Boosting || kind == LearnerKind::Stacking;
  }
  bool is_local() const { return kind == LearnerKind::LassoLocal; }
};

// First-stage fit quality, reported per side of the cutoff. Treatment-model
// entries stay NaN for sharp designs.
struct FitReport {
  double rmse_left = std::numeric_limits<double>::quiet_NaN();
  double rmse_right = std::numeric_limits<double>::quiet_NaN();
  double logloss_left = std::numeric_limits<double>::quiet_NaN();
  double logloss_right = std::numeric_limits<double>::quiet_NaN();
  bool has_outcome_model = false;
  bool has_treatment_model = false;
  bool ridge_fallback = false;
};

// --- base models -------------------------------------------------------------

struct LassoFit {
  Eigen::VectorXd beta;  // original feature scale
  double intercept = 0.0;
  Eigen::VectorXd predict(const Eigen::MatrixXd& z) const;
};

// Coordinate descent to duality-gap tolerance 1e-8; features standardized
// internally; intercept unpenalized. lambda is on the (1/n)||y - Xb||^2 /2
// + lambda*||b||_1 scale.
LassoFit lasso_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda);
double lasso_lambda_max(const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

struct LogisticLassoFit {
  Eigen::VectorXd beta;
  double intercept = 0.0;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& z) const;
};

LogisticLassoFit logistic_lasso_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& d,
                                    double lambda);

// Gradient boosting with depth-capped regression trees on squared or
// logistic loss. Validation rows (for early stopping) are picked by hashing
// unit ids, so refits on permuted data give identical models.
struct BoostNode {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  double value = 0.0;  // leaf
  int left = -1, right = -1;
};

struct BoostTree {
  std::vector<BoostNode> nodes;
  double predict(const Eigen::VectorXd& z) const;
};

struct BoostFit {
  std::vector<BoostTree> trees;
  double base_score = 0.0;
  double shrinkage = 0.1;
  bool logistic = false;
  Eigen::VectorXd predict(const Eigen::MatrixXd& z) const;  // probabilities when logistic
  Eigen::VectorXd raw_score(const Eigen::MatrixXd& z) const;
  std::vector<double> train_loss;  // per kept round, validation-stopped
};

BoostFit boost_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                   const LearnerSpec& spec, bool logistic,
                   const std::vector<std::int64_t>& unit_ids, std::uint64_t seed);

// Convex weights (non-negative, sum one) over base predictions minimizing
// held-out squared or logistic loss.
Eigen::VectorXd stack_weights(const Eigen::MatrixXd& holdout_preds,
                              const Eigen::VectorXd& y_holdout, bool logistic);

// --- cross-fitting -----------------------------------------------------------

struct CrossfitResult {
  Eigen::VectorXd eta_hat;          // out-of-fold prediction per row (0 where unused)
  std::vector<std::uint8_t> used;   // rows with a prediction (the fit window)
  double rmse_left = std::numeric_limits<double>::quiet_NaN();
  double rmse_right = std::numeric_limits<double>::quiet_NaN();
  double logloss_left = std::numeric_limits<double>::quiet_NaN();
  double logloss_right = std::numeric_limits<double>::quiet_NaN();
  bool ridge_fallback = false;
};

// Out-of-fold regression predictions: row i's eta_hat is never produced by a
// model that saw row i. Fold membership is a pure function of (unit id,
// seed). `window` (optional) restricts both fitting and prediction to a row
// subset; side RMSEs split on the sign of axis_x.
CrossfitResult crossfit_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                   const LearnerSpec& spec,
                                   const std::vector<std::uint8_t>* window,
                                   const std::vector<double>& axis_x,
                                   const std::vector<std::int64_t>& unit_ids,
                                   std::uint64_t seed);

// Same contract with a binary target and logistic loss; predictions are
// clipped to [1e-6, 1-1e-6] before the loss.
CrossfitResult crossfit_classifier(const Eigen::MatrixXd& z, const Eigen::VectorXd& d,
                                   const LearnerSpec& spec,
                                   const std::vector<std::uint8_t>* window,
                                   const std::vector<double>& axis_x,
                                   const std::vector<std::int64_t>& unit_ids,
                                   std::uint64_t seed);

Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::VectorXd& eta_hat);

}  // namespace mrd
