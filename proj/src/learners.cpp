#include "mrd/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "mrd/errors.hpp"
#include "mrd/parallel.hpp"
#include "mrd/rng.hpp"

namespace mrd {

namespace {

constexpr double kProbClip = 1e-6;
constexpr double kDualityGapTol = 1e-8;
constexpr std::uint64_t kFoldSalt = 0xf01d5a17ULL;
constexpr std::uint64_t kInnerCvSalt = 0x1cc7eadULL;
constexpr std::uint64_t kValidSalt = 0x7a11da7eULL;
constexpr std::uint64_t kStackSalt = 0x57ac4b0bULL;

double clip_prob(double p) { return std::min(1.0 - kProbClip, std::max(kProbClip, p)); }

double sigmoid(double t) {
  if (t >= 0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_loss(const Eigen::VectorXd& d, const Eigen::VectorXd& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double pi = clip_prob(p[i]);
    s += d[i] > 0.5 ? -std::log(pi) : -std::log(1.0 - pi);
  }
  return s / static_cast<double>(d.size());
}

struct Standardized {
  Eigen::MatrixXd z;       // centered/scaled copy; zero-variance columns zeroed
  Eigen::VectorXd mean, scale;
  std::vector<bool> active;
};

Standardized standardize(const Eigen::MatrixXd& z) {
  Standardized s;
  const Eigen::Index n = z.rows(), p = z.cols();
  s.z = z;
  s.mean = z.colwise().mean();
  s.scale.resize(p);
  s.active.assign(static_cast<std::size_t>(p), true);
  for (Eigen::Index j = 0; j < p; ++j) {
    s.z.col(j).array() -= s.mean[j];
    const double sd = std::sqrt(s.z.col(j).squaredNorm() / static_cast<double>(n));
    s.scale[j] = sd;
    if (sd <= 1e-12) {
      s.active[static_cast<std::size_t>(j)] = false;
      s.z.col(j).setZero();
    } else {
      s.z.col(j) /= sd;
    }
  }
  return s;
}

// coordinate descent on (1/2n)||r||^2 + lambda*||b||_1, standardized design
Eigen::VectorXd lasso_cd(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                         double lambda, Eigen::VectorXd beta0,
                         const Eigen::VectorXd* weights = nullptr) {
  const Eigen::Index n = z.rows(), p = z.cols();
  Eigen::VectorXd beta = std::move(beta0);
  if (beta.size() != p) beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd r = y - z * beta;
  Eigen::VectorXd col_scale(p);  // (1/n) sum w z_j^2
  for (Eigen::Index j = 0; j < p; ++j) {
    col_scale[j] = weights ? (weights->array() * z.col(j).array().square()).sum() /
                                 static_cast<double>(n)
                           : z.col(j).squaredNorm() / static_cast<double>(n);
  }
  const double y_ss = weights ? (weights->array() * y.array().square()).sum()
                              : y.squaredNorm();
  const double gap_scale = std::max(1.0, 0.5 * y_ss);

  const int max_passes = 10000;
  for (int pass = 0; pass < max_passes; ++pass) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_scale[j] <= 0.0) continue;
      const double dot = weights
                             ? (weights->array() * z.col(j).array() * r.array()).sum()
                             : z.col(j).dot(r);
      const double rho = dot / static_cast<double>(n) + col_scale[j] * beta[j];
      const double bj =
          std::copysign(std::max(0.0, std::abs(rho) - lambda), rho) / col_scale[j];
      const double delta = bj - beta[j];
      if (delta != 0.0) {
        r -= delta * z.col(j);
        beta[j] = bj;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    // duality gap check every few passes
    if (pass % 4 == 3 || max_delta == 0.0) {
      Eigen::VectorXd grad(p);
      for (Eigen::Index j = 0; j < p; ++j) {
        grad[j] = weights ? (weights->array() * z.col(j).array() * r.array()).sum() /
                                static_cast<double>(n)
                          : z.col(j).dot(r) / static_cast<double>(n);
      }
      const double dual_norm = p > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;
      const double r_ss = weights ? (weights->array() * r.array().square()).sum()
                                  : r.squaredNorm();
      const double r_dot_y =
          weights ? (weights->array() * r.array() * y.array()).sum() : r.dot(y);
      double gap;
      if (dual_norm > lambda && dual_norm > 0.0) {
        const double c = lambda / dual_norm;
        gap = (0.5 * (r_ss + c * c * r_ss) - c * r_dot_y) / static_cast<double>(n);
      } else {
        gap = (r_ss - r_dot_y) / static_cast<double>(n);
      }
      gap += lambda * beta.cwiseAbs().sum();
      if (std::abs(gap) <= kDualityGapTol * gap_scale || max_delta == 0.0) return beta;
    }
  }
  return beta;
}

Eigen::VectorXd ols_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          bool* ridge_fallback) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) {
    if (ridge_fallback) *ridge_fallback = true;
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().maxCoeff());
    return gram.ldlt().solve(x.transpose() * y);
  }
  return qr.solve(y);
}

}  // namespace

const char* learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::NoAdjust: return "none";
    case LearnerKind::LinearCovs: return "linear";
    case LearnerKind::LassoLocal: return "lasso";
    case LearnerKind::LassoGlobal: return "global-lasso";
    case LearnerKind::Boosting: return "boosting";
    case LearnerKind::Stacking: return "stacking";
  }
  return "?";
}

LearnerKind learner_from_name(const std::string& name) {
  if (name == "none" || name == "no-adjust") return LearnerKind::NoAdjust;
  if (name == "linear") return LearnerKind::LinearCovs;
  if (name == "lasso" || name == "local-lasso") return LearnerKind::LassoLocal;
  if (name == "global-lasso") return LearnerKind::LassoGlobal;
  if (name == "boosting") return LearnerKind::Boosting;
  if (name == "stacking") return LearnerKind::Stacking;
  throw ConfigError("unknown learner '" + name + "'");
}

// --- lasso --------------------------------------------------------------------

Eigen::VectorXd LassoFit::predict(const Eigen::MatrixXd& z) const {
  return (z * beta).array() + intercept;
}

double lasso_lambda_max(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const Standardized s = standardize(z);
  const Eigen::VectorXd yc = y.array() - y.mean();
  if (z.cols() == 0) return 0.0;
  return (s.z.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(z.rows());
}

LassoFit lasso_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda) {
  if (!z.allFinite() || !y.allFinite()) throw DataError("lasso_fit: non-finite input");
  const Eigen::Index p = z.cols();
  LassoFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  fit.intercept = y.size() > 0 ? y.mean() : 0.0;
  if (p == 0 || y.size() == 0) return fit;

  const Standardized s = standardize(z);
  const Eigen::VectorXd yc = y.array() - y.mean();

  Eigen::VectorXd beta_std;
  if (lambda <= 0.0) {
    bool fb = false;
    // active columns only; inactive ones stay at zero
    std::vector<Eigen::Index> act;
    for (Eigen::Index j = 0; j < p; ++j)
      if (s.active[static_cast<std::size_t>(j)]) act.push_back(j);
    Eigen::MatrixXd za(z.rows(), static_cast<Eigen::Index>(act.size()));
    for (std::size_t j = 0; j < act.size(); ++j) za.col(static_cast<Eigen::Index>(j)) = s.z.col(act[j]);
    const Eigen::VectorXd ba = ols_solve(za, yc, &fb);
    beta_std = Eigen::VectorXd::Zero(p);
    for (std::size_t j = 0; j < act.size(); ++j) beta_std[act[j]] = ba[static_cast<Eigen::Index>(j)];
  } else {
    beta_std = lasso_cd(s.z, yc, lambda, Eigen::VectorXd::Zero(p));
  }

  for (Eigen::Index j = 0; j < p; ++j) {
    fit.beta[j] = s.active[static_cast<std::size_t>(j)] ? beta_std[j] / s.scale[j] : 0.0;
  }
  fit.intercept = y.mean() - fit.beta.dot(s.mean);
  return fit;
}

Eigen::VectorXd LogisticLassoFit::predict_proba(const Eigen::MatrixXd& z) const {
  Eigen::VectorXd f = (z * beta).array() + intercept;
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = sigmoid(f[i]);
  return f;
}

LogisticLassoFit logistic_lasso_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& d,
                                    double lambda) {
  if (!z.allFinite() || !d.allFinite())
    throw DataError("logistic_lasso_fit: non-finite input");
  const Eigen::Index n = z.rows(), p = z.cols();
  LogisticLassoFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);

  const double prior = d.size() > 0 ? d.mean() : 0.5;
  if (prior <= 0.0 || prior >= 1.0) {  // single class: prior probability model
    fit.intercept = std::log(clip_prob(prior) / (1.0 - clip_prob(prior)));
    return fit;
  }
  fit.intercept = std::log(prior / (1.0 - prior));
  if (p == 0) return fit;

  const Standardized s = standardize(z);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double b0 = fit.intercept;

  // IRLS outer loop with a weighted lasso inner solve
  for (int it = 0; it < 25; ++it) {
    Eigen::VectorXd f = (s.z * beta).array() + b0;
    Eigen::VectorXd w(n), u(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = clip_prob(sigmoid(f[i]));
      w[i] = pi * (1.0 - pi);
      u[i] = f[i] + (d[i] - pi) / w[i];
    }
    const double w_sum = w.sum();
    const double u_mean = (w.array() * u.array()).sum() / w_sum;
    Eigen::VectorXd uc = u.array() - u_mean;
    // demean columns under the working weights so the intercept drops out
    Eigen::MatrixXd zw = s.z;
    Eigen::VectorXd col_mean(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      col_mean[j] = (w.array() * s.z.col(j).array()).sum() / w_sum;
      zw.col(j).array() -= col_mean[j];
    }
    const Eigen::VectorXd beta_new = lasso_cd(zw, uc, lambda, beta, &w);
    const double b0_new = u_mean - beta_new.dot(col_mean);
    const double shift = (p > 0 ? (beta_new - beta).cwiseAbs().maxCoeff() : 0.0) +
                         std::abs(b0_new - b0);
    beta = beta_new;
    b0 = b0_new;
    if (shift < 1e-9) break;
  }

  for (Eigen::Index j = 0; j < p; ++j)
    fit.beta[j] = s.active[static_cast<std::size_t>(j)] ? beta[j] / s.scale[j] : 0.0;
  fit.intercept = b0 - fit.beta.dot(s.mean);
  return fit;
}

// --- boosting -----------------------------------------------------------------

double BoostTree::predict(const Eigen::VectorXd& z) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const BoostNode& nd = nodes[static_cast<std::size_t>(node)];
    node = z[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

Eigen::VectorXd BoostFit::raw_score(const Eigen::MatrixXd& z) const {
  Eigen::VectorXd f = Eigen::VectorXd::Constant(z.rows(), base_score);
  for (const BoostTree& tr : trees) {
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      f[i] += shrinkage * tr.predict(z.row(i));
  }
  return f;
}

Eigen::VectorXd BoostFit::predict(const Eigen::MatrixXd& z) const {
  Eigen::VectorXd f = raw_score(z);
  if (logistic)
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = sigmoid(f[i]);
  return f;
}

namespace {

struct TreeBuilder {
  const Eigen::MatrixXd& z;
  const std::vector<std::vector<int>>& sorted_idx;  // per feature, rows sorted by value
  const Eigen::VectorXd& grad;
  const Eigen::VectorXd& hess;
  const std::vector<std::uint8_t>& in_sample;
  int min_leaf = 10;

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  Split best_split(const std::vector<std::uint8_t>& node_mask, double g_sum,
                   double h_sum, int nt) const {
    Split best;
    if (nt < 2 * min_leaf) return best;
    const double parent = g_sum * g_sum / std::max(h_sum, 1e-12);
    for (int f = 0; f < static_cast<int>(z.cols()); ++f) {
      const auto& order = sorted_idx[static_cast<std::size_t>(f)];
      double gl = 0.0, hl = 0.0;
      int nl = 0;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const int i = order[k];
        if (!node_mask[static_cast<std::size_t>(i)]) continue;
        gl += grad[i];
        hl += hess[i];
        ++nl;
        if (nl < min_leaf || nl > nt - min_leaf) continue;
        // split between this value and the next in-node value
        double next_val = z(i, f);
        for (std::size_t k2 = k + 1; k2 < order.size(); ++k2) {
          if (node_mask[static_cast<std::size_t>(order[k2])]) {
            next_val = z(order[k2], f);
            break;
          }
        }
        if (next_val <= z(i, f)) continue;  // tied values
        const double gr = g_sum - gl, hr = h_sum - hl;
        const double gain = gl * gl / std::max(hl, 1e-12) +
                            gr * gr / std::max(hr, 1e-12) - parent;
        if (gain > best.gain + 1e-12) {
          best.feature = f;
          best.threshold = 0.5 * (z(i, f) + next_val);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  void build(BoostTree& tree, std::vector<std::uint8_t> node_mask, int depth,
             int max_depth, int node_id) {
    double g_sum = 0.0, h_sum = 0.0;
    int nt = 0;
    for (std::size_t i = 0; i < node_mask.size(); ++i) {
      if (node_mask[i]) {
        g_sum += grad[static_cast<Eigen::Index>(i)];
        h_sum += hess[static_cast<Eigen::Index>(i)];
        ++nt;
      }
    }
    const Split sp =
        depth < max_depth ? best_split(node_mask, g_sum, h_sum, nt) : Split{};
    if (sp.feature < 0) {
      tree.nodes[static_cast<std::size_t>(node_id)].feature = -1;
      tree.nodes[static_cast<std::size_t>(node_id)].value =
          g_sum / std::max(h_sum, 1e-12);
      return;
    }
    std::vector<std::uint8_t> left_mask(node_mask.size(), 0), right_mask(node_mask.size(), 0);
    for (std::size_t i = 0; i < node_mask.size(); ++i) {
      if (!node_mask[i]) continue;
      if (z(static_cast<Eigen::Index>(i), sp.feature) <= sp.threshold)
        left_mask[i] = 1;
      else
        right_mask[i] = 1;
    }
    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int right_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    // assign through the index: emplace_back may have moved the storage
    tree.nodes[static_cast<std::size_t>(node_id)].feature = sp.feature;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = sp.threshold;
    tree.nodes[static_cast<std::size_t>(node_id)].left = left_id;
    tree.nodes[static_cast<std::size_t>(node_id)].right = right_id;
    build(tree, std::move(left_mask), depth + 1, max_depth, left_id);
    build(tree, std::move(right_mask), depth + 1, max_depth, right_id);
  }
};

}  // namespace

BoostFit boost_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                   const LearnerSpec& spec, bool logistic,
                   const std::vector<std::int64_t>& unit_ids, std::uint64_t seed) {
  if (!z.allFinite() || !y.allFinite()) throw DataError("boost_fit: non-finite input");
  const Eigen::Index n = z.rows();
  BoostFit fit;
  fit.shrinkage = spec.shrinkage;
  fit.logistic = logistic;
  if (n == 0) return fit;

  if (logistic) {
    const double prior = clip_prob(y.mean());
    fit.base_score = std::log(prior / (1.0 - prior));
  } else {
    fit.base_score = y.mean();
  }

  // validation rows for early stopping, picked by unit-id hash
  std::vector<std::uint8_t> is_valid(static_cast<std::size_t>(n), 0);
  const auto thresh = static_cast<std::uint64_t>(
      spec.validation_fraction * 18446744073709551615.0);
  Eigen::Index n_valid = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int64_t id = unit_ids.empty() ? i : unit_ids[static_cast<std::size_t>(i)];
    if (Rng::mix(seed ^ kValidSalt, static_cast<std::uint64_t>(id)) < thresh) {
      is_valid[static_cast<std::size_t>(i)] = 1;
      ++n_valid;
    }
  }
  if (n_valid == n) {  // degenerate; train on everything
    std::fill(is_valid.begin(), is_valid.end(), 0);
    n_valid = 0;
  }

  std::vector<std::vector<int>> sorted_idx(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index f = 0; f < z.cols(); ++f) {
    auto& idx = sorted_idx[static_cast<std::size_t>(f)];
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return z(a, f) < z(b, f); });
  }

  Eigen::VectorXd f_score = Eigen::VectorXd::Constant(n, fit.base_score);
  Eigen::VectorXd grad(n), hess(n);
  std::vector<std::uint8_t> train_mask(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    train_mask[static_cast<std::size_t>(i)] = is_valid[static_cast<std::size_t>(i)] ? 0 : 1;

  const auto loss_on = [&](const std::vector<std::uint8_t>& mask) {
    double s = 0.0;
    int cnt = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      ++cnt;
      if (logistic) {
        const double p = clip_prob(sigmoid(f_score[i]));
        s += y[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
      } else {
        const double e = y[i] - f_score[i];
        s += 0.5 * e * e;
      }
    }
    return cnt > 0 ? s / cnt : 0.0;
  };

  double best_valid = n_valid > 0 ? loss_on(is_valid) : 0.0;
  std::size_t best_rounds = 0;
  int patience = 0;
  constexpr int kPatience = 20;

  for (int round = 0; round < spec.boost_rounds; ++round) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (logistic) {
        const double p = sigmoid(f_score[i]);
        grad[i] = y[i] - p;
        hess[i] = std::max(p * (1.0 - p), 1e-12);
      } else {
        grad[i] = y[i] - f_score[i];
        hess[i] = 1.0;
      }
    }
    BoostTree tree;
    tree.nodes.emplace_back();
    TreeBuilder builder{z, sorted_idx, grad, hess, train_mask};
    builder.build(tree, train_mask, 0, spec.tree_depth, 0);
    for (Eigen::Index i = 0; i < n; ++i)
      f_score[i] += fit.shrinkage * tree.predict(z.row(i));
    fit.trees.push_back(std::move(tree));
    fit.train_loss.push_back(loss_on(train_mask));

    if (n_valid > 0) {
      const double vl = loss_on(is_valid);
      if (vl < best_valid - 1e-12) {
        best_valid = vl;
        best_rounds = fit.trees.size();
        patience = 0;
      } else if (++patience >= kPatience) {
        break;
      }
    } else {
      best_rounds = fit.trees.size();
    }
  }
  if (n_valid > 0 && best_rounds < fit.trees.size()) {
    fit.trees.resize(best_rounds);
    fit.train_loss.resize(best_rounds);
  }
  return fit;
}

// --- stacking -----------------------------------------------------------------

Eigen::VectorXd stack_weights(const Eigen::MatrixXd& holdout_preds,
                              const Eigen::VectorXd& y_holdout, bool logistic) {
  const Eigen::Index k = holdout_preds.cols();
  if (k == 0) throw DataError("stack_weights: no base learners");
  const auto loss_of = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd p = holdout_preds * w;
    if (logistic) return log_loss(y_holdout, p);
    return (y_holdout - p).squaredNorm() / static_cast<double>(y_holdout.size());
  };

  Eigen::VectorXd best = Eigen::VectorXd::Zero(k);
  best[0] = 1.0;
  double best_loss = loss_of(best);
  for (Eigen::Index j = 1; j < k; ++j) {  // vertices
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
    w[j] = 1.0;
    const double l = loss_of(w);
    if (l < best_loss) {
      best_loss = l;
      best = w;
    }
  }

  if (k == 2) {  // exact 1-d search over the segment
    double lo = 0.0, hi = 1.0;
    if (!logistic) {
      const Eigen::VectorXd diff = holdout_preds.col(0) - holdout_preds.col(1);
      const double den = diff.squaredNorm();
      double w0 = 0.5;
      if (den > 0.0)
        w0 = std::clamp((y_holdout - holdout_preds.col(1)).dot(diff) / den, 0.0, 1.0);
      Eigen::VectorXd w(2);
      w << w0, 1.0 - w0;
      if (loss_of(w) < best_loss) return w;
      return best;
    }
    // golden-section on the convex log-loss
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - phi * (b - a), d2 = a + phi * (b - a);
    const auto at = [&](double w0) {
      Eigen::VectorXd w(2);
      w << w0, 1.0 - w0;
      return loss_of(w);
    };
    double fc = at(c), fd = at(d2);
    for (int it = 0; it < 60; ++it) {
      if (fc < fd) {
        b = d2;
        d2 = c;
        fd = fc;
        c = b - phi * (b - a);
        fc = at(c);
      } else {
        a = c;
        c = d2;
        fc = fd;
        d2 = a + phi * (b - a);
        fd = at(d2);
      }
    }
    const double w0 = 0.5 * (a + b);
    Eigen::VectorXd w(2);
    w << w0, 1.0 - w0;
    if (loss_of(w) < best_loss) return w;
    return best;
  }

  // k > 2: exponentiated gradient from the uniform point, vertices kept as
  // candidates so the result is never worse than the best single learner
  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd p = holdout_preds * w;
    Eigen::VectorXd g(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (logistic) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < y_holdout.size(); ++i) {
          const double pi = clip_prob(p[i]);
          s += (pi - y_holdout[i]) / (pi * (1.0 - pi)) * holdout_preds(i, j);
        }
        g[j] = s / static_cast<double>(y_holdout.size());
      } else {
        g[j] = -2.0 * (y_holdout - p).dot(holdout_preds.col(j)) /
               static_cast<double>(y_holdout.size());
      }
    }
    Eigen::VectorXd wn = (w.array().log() - 0.5 * g.array()).exp();
    wn /= wn.sum();
    if ((wn - w).cwiseAbs().maxCoeff() < 1e-12) break;
    w = wn;
  }
  if (loss_of(w) < best_loss) return w;
  return best;
}

// --- cross-fitting -----------------------------------------------------------

Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::VectorXd& eta_hat) {
  if (y.size() != eta_hat.size()) throw DataError("residualize: length mismatch");
  return y - eta_hat;
}

namespace {

struct Model {
  // one of; dispatch by spec.kind
  LassoFit lasso;
  LogisticLassoFit logit;
  BoostFit boost;
  std::vector<Model> bases;  // stacking
  Eigen::VectorXd stack_w;
  LearnerKind kind = LearnerKind::NoAdjust;
  bool classifier = false;
  double constant = 0.0;  // NoAdjust / degenerate fallback

  Eigen::VectorXd predict(const Eigen::MatrixXd& z) const {
    switch (kind) {
      case LearnerKind::NoAdjust:
        return Eigen::VectorXd::Constant(z.rows(), constant);
      case LearnerKind::LinearCovs:
        return classifier ? logit.predict_proba(z) : lasso.predict(z);
      case LearnerKind::LassoLocal:
      case LearnerKind::LassoGlobal:
        return classifier ? logit.predict_proba(z) : lasso.predict(z);
      case LearnerKind::Boosting:
        return boost.predict(z);
      case LearnerKind::Stacking: {
        Eigen::MatrixXd preds(z.rows(), static_cast<Eigen::Index>(bases.size()));
        for (std::size_t b = 0; b < bases.size(); ++b)
          preds.col(static_cast<Eigen::Index>(b)) = bases[b].predict(z);
        return preds * stack_w;
      }
    }
    return Eigen::VectorXd::Zero(z.rows());
  }
};

std::vector<double> lambda_grid(double lambda_max, int n_points, double min_ratio) {
  std::vector<double> grid;
  if (lambda_max <= 0.0) {
    grid.push_back(0.0);
    return grid;
  }
  const double lo = std::log(lambda_max * min_ratio), hi = std::log(lambda_max);
  for (int i = 0; i < n_points; ++i) {
    const double f = n_points > 1 ? static_cast<double>(i) / (n_points - 1) : 0.0;
    grid.push_back(std::exp(hi + f * (lo - hi)));
  }
  grid.push_back(0.0);  // exact-fit terminal point
  return grid;
}

// lambda chosen by K-fold CV inside the training set (folds by unit id)
double cv_lambda(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                 const std::vector<std::int64_t>& ids, const LearnerSpec& spec,
                 std::uint64_t seed, bool classifier) {
  const std::vector<double> grid =
      lambda_grid(lasso_lambda_max(z, y), spec.lambda_grid, spec.lambda_min_ratio);
  if (grid.size() == 1) return grid[0];
  const int k = std::max(2, std::min(spec.folds, static_cast<int>(y.size()) / 4));
  std::vector<int> fold(static_cast<std::size_t>(y.size()));
  for (std::size_t i = 0; i < fold.size(); ++i) {
    fold[i] = static_cast<int>(
        Rng::mix(seed ^ kInnerCvSalt, static_cast<std::uint64_t>(ids[i])) %
        static_cast<std::uint64_t>(k));
  }
  std::vector<double> cv_loss(grid.size(), 0.0);
  std::vector<int> cv_count(grid.size(), 0);
  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    if (tr.empty() || te.empty()) continue;
    Eigen::MatrixXd ztr(static_cast<Eigen::Index>(tr.size()), z.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
    Eigen::MatrixXd zte(static_cast<Eigen::Index>(te.size()), z.cols());
    Eigen::VectorXd yte(static_cast<Eigen::Index>(te.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) {
      ztr.row(static_cast<Eigen::Index>(i)) = z.row(tr[i]);
      ytr[static_cast<Eigen::Index>(i)] = y[tr[i]];
    }
    for (std::size_t i = 0; i < te.size(); ++i) {
      zte.row(static_cast<Eigen::Index>(i)) = z.row(te[i]);
      yte[static_cast<Eigen::Index>(i)] = y[te[i]];
    }
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      Eigen::VectorXd pred;
      if (classifier) {
        pred = logistic_lasso_fit(ztr, ytr, grid[gi]).predict_proba(zte);
        cv_loss[gi] += log_loss(yte, pred) * static_cast<double>(te.size());
      } else {
        pred = lasso_fit(ztr, ytr, grid[gi]).predict(zte);
        cv_loss[gi] += (yte - pred).squaredNorm();
      }
      cv_count[gi] += static_cast<int>(te.size());
    }
  }
  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    if (cv_count[gi] == 0) continue;
    const double l = cv_loss[gi] / cv_count[gi];
    if (l < best_loss - 1e-15) {
      best_loss = l;
      best = gi;
    }
  }
  return grid[best];
}

Model fit_model(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                const std::vector<std::int64_t>& ids, const LearnerSpec& spec,
                std::uint64_t seed, bool classifier, bool* ridge_fallback) {
  Model m;
  m.kind = spec.kind;
  m.classifier = classifier;
  switch (spec.kind) {
    case LearnerKind::NoAdjust:
      m.constant = classifier ? clip_prob(y.size() ? y.mean() : 0.5) : 0.0;
      return m;
    case LearnerKind::LinearCovs:
      if (classifier) {
        m.logit = logistic_lasso_fit(z, y, 0.0);
      } else {
        m.lasso = lasso_fit(z, y, 0.0);
        // lasso_fit at lambda 0 routes through OLS; surface rank problems
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
        if (ridge_fallback && z.cols() > 0 && qr.rank() < z.cols()) *ridge_fallback = true;
      }
      return m;
    case LearnerKind::LassoLocal:
    case LearnerKind::LassoGlobal: {
      const double lambda = cv_lambda(z, y, ids, spec, seed, classifier);
      if (classifier)
        m.logit = logistic_lasso_fit(z, y, lambda);
      else
        m.lasso = lasso_fit(z, y, lambda);
      return m;
    }
    case LearnerKind::Boosting:
      m.boost = boost_fit(z, y, spec, classifier, ids, seed);
      return m;
    case LearnerKind::Stacking: {
      // split the training set into base-train and stacking holdout by id hash
      std::vector<Eigen::Index> base_rows, hold_rows;
      const auto thresh =
          static_cast<std::uint64_t>(spec.validation_fraction * 18446744073709551615.0);
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const std::uint64_t hv = Rng::mix(
            seed ^ kStackSalt, static_cast<std::uint64_t>(ids[static_cast<std::size_t>(i)]));
        (hv < thresh ? hold_rows : base_rows).push_back(i);
      }
      if (hold_rows.empty() || base_rows.empty()) {
        base_rows.clear();
        for (Eigen::Index i = 0; i < y.size(); ++i) base_rows.push_back(i);
        hold_rows = base_rows;
      }
      const auto take = [&](const std::vector<Eigen::Index>& rows, Eigen::MatrixXd& zz,
                            Eigen::VectorXd& yy, std::vector<std::int64_t>& ii) {
        zz.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
        yy.resize(static_cast<Eigen::Index>(rows.size()));
        ii.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          zz.row(static_cast<Eigen::Index>(i)) = z.row(rows[i]);
          yy[static_cast<Eigen::Index>(i)] = y[rows[i]];
          ii[i] = ids[static_cast<std::size_t>(rows[i])];
        }
      };
      Eigen::MatrixXd zb, zh;
      Eigen::VectorXd yb, yh;
      std::vector<std::int64_t> ib, ih;
      take(base_rows, zb, yb, ib);
      take(hold_rows, zh, yh, ih);

      LearnerSpec lasso_spec = spec;
      lasso_spec.kind = LearnerKind::LassoGlobal;
      LearnerSpec boost_spec = spec;
      boost_spec.kind = LearnerKind::Boosting;
      Model base_lasso = fit_model(zb, yb, ib, lasso_spec, seed, classifier, nullptr);
      Model base_boost = fit_model(zb, yb, ib, boost_spec, seed, classifier, nullptr);
      Eigen::MatrixXd hold_preds(zh.rows(), 2);
      hold_preds.col(0) = base_lasso.predict(zh);
      hold_preds.col(1) = base_boost.predict(zh);
      m.stack_w = stack_weights(hold_preds, yh, classifier);
      // refit the bases on the full training set
      m.bases.push_back(fit_model(z, y, ids, lasso_spec, seed, classifier, nullptr));
      m.bases.push_back(fit_model(z, y, ids, boost_spec, seed, classifier, nullptr));
      return m;
    }
  }
  return m;
}

CrossfitResult crossfit_impl(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                             const LearnerSpec& spec,
                             const std::vector<std::uint8_t>* window,
                             const std::vector<double>& axis_x,
                             const std::vector<std::int64_t>& unit_ids,
                             std::uint64_t seed, bool classifier) {
  const Eigen::Index n = z.rows();
  if (y.size() != n) throw DataError("crossfit: z/y length mismatch");
  if (!z.allFinite() || !y.allFinite()) throw DataError("crossfit: non-finite input");
  if (window && static_cast<Eigen::Index>(window->size()) != n)
    throw DataError("crossfit: window length mismatch");
  if (static_cast<Eigen::Index>(axis_x.size()) != n)
    throw DataError("crossfit: axis length mismatch");

  CrossfitResult res;
  res.eta_hat = Eigen::VectorXd::Zero(n);
  res.used.assign(static_cast<std::size_t>(n), 0);

  // rows in the fit window, ordered by unit id so that row permutations of
  // the caller's data cannot change any floating-point accumulation order
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!window || (*window)[static_cast<std::size_t>(i)]) rows.push_back(i);
  std::stable_sort(rows.begin(), rows.end(), [&](Eigen::Index a, Eigen::Index b) {
    const std::int64_t ia = unit_ids.empty() ? a : unit_ids[static_cast<std::size_t>(a)];
    const std::int64_t ib = unit_ids.empty() ? b : unit_ids[static_cast<std::size_t>(b)];
    return ia < ib;
  });
  if (rows.empty()) return res;

  if (spec.kind == LearnerKind::NoAdjust) {
    for (const Eigen::Index i : rows) res.used[static_cast<std::size_t>(i)] = 1;
    // eta == 0; side errors are the raw second moments
  } else {
    const int k = spec.folds;
    if (k < 2) throw ConfigError("crossfit: folds must be >= 2");
    std::vector<int> fold_of(rows.size());
    std::vector<std::size_t> fold_count(static_cast<std::size_t>(k), 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::int64_t id =
          unit_ids.empty() ? rows[r] : unit_ids[static_cast<std::size_t>(rows[r])];
      fold_of[r] = static_cast<int>(Rng::mix(seed ^ kFoldSalt,
                                             static_cast<std::uint64_t>(id)) %
                                    static_cast<std::uint64_t>(k));
      ++fold_count[static_cast<std::size_t>(fold_of[r])];
    }
    for (int f = 0; f < k; ++f)
      if (fold_count[static_cast<std::size_t>(f)] == 0)
        throw DataError("crossfit: fold " + std::to_string(f) + " is empty");

    std::vector<std::uint8_t> fold_fallback(static_cast<std::size_t>(k), 0);
    std::vector<Eigen::VectorXd> fold_preds(static_cast<std::size_t>(k));
    std::vector<std::vector<std::size_t>> fold_rows(static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < rows.size(); ++r)
      fold_rows[static_cast<std::size_t>(fold_of[r])].push_back(r);

    parallel_for(static_cast<std::size_t>(k), [&](std::size_t f) {
      std::vector<std::size_t> train_r;
      for (std::size_t r = 0; r < rows.size(); ++r)
        if (fold_of[r] != static_cast<int>(f)) train_r.push_back(r);
      Eigen::MatrixXd ztr(static_cast<Eigen::Index>(train_r.size()), z.cols());
      Eigen::VectorXd ytr(static_cast<Eigen::Index>(train_r.size()));
      std::vector<std::int64_t> itr(train_r.size());
      for (std::size_t i = 0; i < train_r.size(); ++i) {
        const Eigen::Index row = rows[train_r[i]];
        ztr.row(static_cast<Eigen::Index>(i)) = z.row(row);
        ytr[static_cast<Eigen::Index>(i)] = y[row];
        itr[i] = unit_ids.empty() ? row : unit_ids[static_cast<std::size_t>(row)];
      }
      bool fb = false;
      const Model model = fit_model(ztr, ytr, itr, spec, seed, classifier, &fb);
      if (fb) fold_fallback[f] = 1;

      const auto& te = fold_rows[f];
      Eigen::MatrixXd zte(static_cast<Eigen::Index>(te.size()), z.cols());
      for (std::size_t i = 0; i < te.size(); ++i)
        zte.row(static_cast<Eigen::Index>(i)) = z.row(rows[te[i]]);
      fold_preds[f] = model.predict(zte);
    });

    for (int f = 0; f < k; ++f) {
      const auto& te = fold_rows[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < te.size(); ++i) {
        const Eigen::Index row = rows[te[i]];
        res.eta_hat[row] = fold_preds[static_cast<std::size_t>(f)][static_cast<Eigen::Index>(i)];
        res.used[static_cast<std::size_t>(row)] = 1;
      }
      if (fold_fallback[static_cast<std::size_t>(f)]) res.ridge_fallback = true;
    }
  }

  // side-wise fit quality over out-of-fold residuals, in id order
  double sl = 0.0, sr = 0.0, ll = 0.0, lr = 0.0;
  std::size_t nl = 0, nr = 0;
  for (const Eigen::Index i : rows) {
    const bool left = axis_x[static_cast<std::size_t>(i)] <= 0.0;
    if (classifier) {
      const double p = clip_prob(res.eta_hat[i]);
      const double l = y[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
      (left ? ll : lr) += l;
    } else {
      const double e = y[i] - res.eta_hat[i];
      (left ? sl : sr) += e * e;
    }
    (left ? nl : nr) += 1;
  }
  if (classifier) {
    if (nl) res.logloss_left = ll / static_cast<double>(nl);
    if (nr) res.logloss_right = lr / static_cast<double>(nr);
  } else {
    if (nl) res.rmse_left = std::sqrt(sl / static_cast<double>(nl));
    if (nr) res.rmse_right = std::sqrt(sr / static_cast<double>(nr));
  }
  return res;
}

}  // namespace

CrossfitResult crossfit_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                   const LearnerSpec& spec,
                                   const std::vector<std::uint8_t>* window,
                                   const std::vector<double>& axis_x,
                                   const std::vector<std::int64_t>& unit_ids,
                                   std::uint64_t seed) {
  return crossfit_impl(z, y, spec, window, axis_x, unit_ids, seed, false);
}

CrossfitResult crossfit_classifier(const Eigen::MatrixXd& z, const Eigen::VectorXd& d,
                                   const LearnerSpec& spec,
                                   const std::vector<std::uint8_t>* window,
                                   const std::vector<double>& axis_x,
                                   const std::vector<std::int64_t>& unit_ids,
                                   std::uint64_t seed) {
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] != 0.0 && d[i] != 1.0)
      throw DataError("crossfit_classifier: target must be binary");
  }
  return crossfit_impl(z, d, spec, window, axis_x, unit_ids, seed, true);
}

}  // namespace mrd
