#include "sgunlearn/attacker.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgunlearn/rng.hpp"

namespace sgu {

namespace {

double softplus_neg(double x) {
  // log(1 + exp(-x))
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

double sigmoid_neg(double x) {
  // 1 / (1 + exp(x)) = sigmoid(-x)
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

void check_problem(const Matrix& feats, const std::vector<double>& membership) {
  if (feats.rows == 0) throw ContractError("attacker: empty feature matrix");
  if (static_cast<long>(membership.size()) != feats.rows)
    throw ContractError("attacker: membership length mismatch");
  bool pos = false, neg = false;
  for (double y : membership) {
    if (y == 1.0) pos = true;
    else if (y == -1.0) neg = true;
    else throw ContractError("attacker: membership labels must be +1 or -1");
  }
  if (!pos || !neg) throw ContractError("attacker: both membership labels must be present");
}

double margin(const Matrix& feats, long i, const std::vector<double>& w, double b) {
  const double* s = feats.row_ptr(i);
  double m = b;
  for (long c = 0; c < feats.cols; ++c) m += w[static_cast<std::size_t>(c)] * s[c];
  return m;
}

// Objective value and gradient in (w, b).
double obj_and_grad(const Matrix& feats, const std::vector<double>& y, AttackFamily family,
                    double reg, const std::vector<double>& w, double b,
                    std::vector<double>* grad) {
  const long n = feats.rows, p = feats.cols;
  if (grad != nullptr) grad->assign(static_cast<std::size_t>(p) + 1, 0.0);
  double f = 0.0;
  if (family == AttackFamily::kSqHinge) {
    for (std::size_t c = 0; c < w.size(); ++c) f += 0.5 * w[c] * w[c];
    if (grad != nullptr)
      for (long c = 0; c < p; ++c) (*grad)[static_cast<std::size_t>(c)] = w[static_cast<std::size_t>(c)];
    for (long i = 0; i < n; ++i) {
      const double yi = y[static_cast<std::size_t>(i)];
      const double h = 1.0 - yi * margin(feats, i, w, b);
      if (h > 0.0) {
        f += reg * h * h;
        if (grad != nullptr) {
          const double coef = -2.0 * reg * h * yi;
          const double* s = feats.row_ptr(i);
          for (long c = 0; c < p; ++c) (*grad)[static_cast<std::size_t>(c)] += coef * s[c];
          (*grad)[static_cast<std::size_t>(p)] += coef;
        }
      }
    }
  } else {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < w.size(); ++c) f += 0.5 * reg * w[c] * w[c];
    if (grad != nullptr)
      for (long c = 0; c < p; ++c)
        (*grad)[static_cast<std::size_t>(c)] = reg * w[static_cast<std::size_t>(c)];
    for (long i = 0; i < n; ++i) {
      const double yi = y[static_cast<std::size_t>(i)];
      const double ym = yi * margin(feats, i, w, b);
      f += inv_n * softplus_neg(ym);
      if (grad != nullptr) {
        const double coef = -inv_n * sigmoid_neg(ym) * yi;
        const double* s = feats.row_ptr(i);
        for (long c = 0; c < p; ++c) (*grad)[static_cast<std::size_t>(c)] += coef * s[c];
        (*grad)[static_cast<std::size_t>(p)] += coef;
      }
    }
  }
  return f;
}

// Stationarity Hessian in (w, b) at the given point.
Eigen::MatrixXd hessian(const Matrix& feats, const std::vector<double>& y, AttackFamily family,
                        double reg, const std::vector<double>& w, double b) {
  const long n = feats.rows, p = feats.cols;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p + 1, p + 1);
  auto add_outer = [&](long i, double scale) {
    const double* s = feats.row_ptr(i);
    for (long a = 0; a < p; ++a) {
      for (long c = 0; c < p; ++c) h(a, c) += scale * s[a] * s[c];
      h(a, p) += scale * s[a];
      h(p, a) += scale * s[a];
    }
    h(p, p) += scale;
  };
  if (family == AttackFamily::kSqHinge) {
    for (long c = 0; c < p; ++c) h(c, c) = 1.0;
    for (long i = 0; i < n; ++i)
      if (y[static_cast<std::size_t>(i)] * margin(feats, i, w, b) < 1.0) add_outer(i, 2.0 * reg);
  } else {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (long c = 0; c < p; ++c) h(c, c) = reg;
    for (long i = 0; i < n; ++i) {
      const double pi = sigmoid_neg(y[static_cast<std::size_t>(i)] * margin(feats, i, w, b));
      add_outer(i, inv_n * pi * (1.0 - pi));
    }
  }
  return h;
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

AttackFamily attack_family_from_name(const std::string& name) {
  if (name == "sq-hinge") return AttackFamily::kSqHinge;
  if (name == "logistic") return AttackFamily::kLogistic;
  throw ContractError("unknown attack family '" + name + "'");
}

const char* attack_family_name(AttackFamily family) {
  return family == AttackFamily::kSqHinge ? "sq-hinge" : "logistic";
}

double attack_objective(const Matrix& feats, const std::vector<double>& membership,
                        AttackFamily family, double reg, const std::vector<double>& w, double b) {
  check_problem(feats, membership);
  return obj_and_grad(feats, membership, family, reg, w, b, nullptr);
}

AttackSolution solve_attack(const Matrix& feats, const std::vector<double>& membership,
                            AttackFamily family, double reg, double tol, long max_iter) {
  check_problem(feats, membership);
  if (!(tol > 0.0)) throw ContractError("solve_attack: tol must be positive");
  const long p = feats.cols;

  AttackSolution sol;
  sol.family = family;
  sol.reg = reg;
  sol.w.assign(static_cast<std::size_t>(p), 0.0);
  sol.b = 0.0;

  std::vector<double> grad;
  double f = obj_and_grad(feats, membership, family, reg, sol.w, sol.b, &grad);
  for (long iter = 0; iter < max_iter; ++iter) {
    const double gnorm = inf_norm(grad);
    if (gnorm <= tol) {
      sol.objective = f;
      sol.grad_norm_at_solution = gnorm;
      for (long i = 0; i < feats.rows; ++i)
        if (family == AttackFamily::kSqHinge &&
            membership[static_cast<std::size_t>(i)] * margin(feats, i, sol.w, sol.b) < 1.0)
          sol.active_set.push_back(i);
      return sol;
    }

    Eigen::MatrixXd h = hessian(feats, membership, family, reg, sol.w, sol.b);
    Eigen::Map<const Eigen::VectorXd> g(grad.data(), p + 1);
    Eigen::VectorXd step;
    double mu = 1e-12;
    for (;;) {
      step = (h + mu * Eigen::MatrixXd::Identity(p + 1, p + 1)).ldlt().solve(-g);
      if (step.allFinite() && g.dot(step) < 0.0) break;
      mu *= 100.0;
      if (mu > 1e6) throw NumericError("solve_attack: cannot form a descent direction");
    }

    // Backtracking Armijo line search.
    const double slope = g.dot(step);
    bool moved = false;
    for (double t = 1.0; t >= 1e-12; t *= 0.5) {
      std::vector<double> w_try(sol.w);
      for (long c = 0; c < p; ++c) w_try[static_cast<std::size_t>(c)] += t * step(c);
      const double b_try = sol.b + t * step(p);
      const double f_try = obj_and_grad(feats, membership, family, reg, w_try, b_try, nullptr);
      // the last term absorbs rounding when the predicted decrease sits below
      // the double resolution of f, so the full Newton step still goes through
      if (std::isfinite(f_try) && f_try <= f + 1e-4 * t * slope + 1e-14 * (std::fabs(f) + 1.0)) {
        sol.w = std::move(w_try);
        sol.b = b_try;
        f = obj_and_grad(feats, membership, family, reg, sol.w, sol.b, &grad);
        moved = true;
        break;
      }
    }
    if (!moved) {
      // At numerical stagnation the gradient may already be essentially flat.
      const double gn = inf_norm(grad);
      throw SolverError("solve_attack: line search stalled at grad inf-norm " +
                        std::to_string(gn));
    }
  }
  throw SolverError("solve_attack: iteration cap reached at grad inf-norm " +
                    std::to_string(inf_norm(grad)));
}

AuditSet build_audit_set_from_rows(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                                   const std::vector<long>& member_rows,
                                   const std::vector<long>& negative_pool, FeatureMode mode,
                                   std::uint64_t seed) {
  const long n = static_cast<long>(member_rows.size());
  if (n == 0) throw ContractError("build_audit_set: empty member set");
  if (static_cast<long>(negative_pool.size()) < n)
    throw ContractError("build_audit_set: negative pool smaller than the member set");

  Rng pick_rng(mix_seed(seed, 31));
  const std::vector<long> neg_positions =
      pick_rng.sample_without_replacement(static_cast<long>(negative_pool.size()), n);
  std::vector<long> rows = member_rows;
  for (long pos : neg_positions) rows.push_back(negative_pool[static_cast<std::size_t>(pos)]);

  AuditSet audit;
  audit.seed = seed;
  audit.source_rows = rows;
  audit.features = output_features_plain(ckpt.spec, ckpt.params, bundle.features.take_rows(rows),
                                         take(bundle.labels, rows), mode);
  audit.membership.assign(static_cast<std::size_t>(2 * n), 1.0);
  for (long i = n; i < 2 * n; ++i) audit.membership[static_cast<std::size_t>(i)] = -1.0;

  // 50/50 tr/val, stratified: a shuffled half-split within each label.
  Rng split_rng(mix_seed(seed, 32));
  const long n_tr = (n + 1) / 2;
  for (long base : {0L, n}) {
    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = base + i;
    split_rng.shuffle(order);
    for (long i = 0; i < n; ++i)
      (i < n_tr ? audit.tr_indices : audit.val_indices).push_back(order[static_cast<std::size_t>(i)]);
  }
  std::sort(audit.tr_indices.begin(), audit.tr_indices.end());
  std::sort(audit.val_indices.begin(), audit.val_indices.end());
  return audit;
}

AuditSet build_audit_set(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                         const ForgetPartition& partition, FeatureMode mode, std::uint64_t seed) {
  if (partition.forget_indices.empty()) throw ContractError("build_audit_set: empty forget set");
  return build_audit_set_from_rows(ckpt, bundle, partition.forget_indices,
                                   bundle.rows_in(Split::kTestAudit), mode, seed);
}

ad::Tensor attack_utility_soft(const AttackSolution& sol, const ad::Tensor& feats,
                               const std::vector<double>& membership) {
  if (feats.rank() != 2 || feats.shape()[1] != static_cast<long>(sol.w.size()))
    throw ContractError("attack_utility_soft: feature width does not match the attacker");
  if (static_cast<long>(membership.size()) != feats.shape()[0])
    throw ContractError("attack_utility_soft: membership length mismatch");
  const ad::Tensor margins =
      ad::mul(ad::add(ad::matmul(feats, ad::Tensor({static_cast<long>(sol.w.size())}, sol.w)),
                      ad::Tensor::scalar(sol.b)),
              ad::Tensor({feats.shape()[0]}, membership));
  return ad::mul(ad::logistic_loss(margins), ad::Tensor::scalar(-1.0));
}

double attack_utility_soft(const AttackSolution& sol, const Matrix& feats,
                           const std::vector<double>& membership) {
  return attack_utility_soft(sol, ad::Tensor({feats.rows, feats.cols}, feats.v), membership)
      .item();
}

std::vector<double> utility_grad_wb(const AttackSolution& sol, const Matrix& feats,
                                    const std::vector<double>& membership) {
  const long m = feats.rows, p = feats.cols;
  if (p != static_cast<long>(sol.w.size()))
    throw ContractError("utility_grad_wb: feature width does not match the attacker");
  std::vector<double> g(static_cast<std::size_t>(p) + 1, 0.0);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (long i = 0; i < m; ++i) {
    const double yi = membership[static_cast<std::size_t>(i)];
    const double coef = inv_m * sigmoid_neg(yi * margin(feats, i, sol.w, sol.b)) * yi;
    const double* s = feats.row_ptr(i);
    for (long c = 0; c < p; ++c) g[static_cast<std::size_t>(c)] += coef * s[c];
    g[static_cast<std::size_t>(p)] += coef;
  }
  return g;
}

Matrix ift_feature_grad(const AttackSolution& sol, const Matrix& tr_feats,
                        const std::vector<double>& membership,
                        const std::vector<double>& upstream_wb) {
  check_problem(tr_feats, membership);
  const long n = tr_feats.rows, p = tr_feats.cols;
  if (p != static_cast<long>(sol.w.size()))
    throw ContractError("ift_feature_grad: feature width does not match the attacker");
  if (static_cast<long>(upstream_wb.size()) != p + 1)
    throw ContractError("ift_feature_grad: upstream gradient must have length p+1");

  Eigen::MatrixXd h = hessian(tr_feats, membership, sol.family, sol.reg, sol.w, sol.b);
  h += 1e-6 * Eigen::MatrixXd::Identity(p + 1, p + 1);
  Eigen::Map<const Eigen::VectorXd> g(upstream_wb.data(), p + 1);
  const Eigen::VectorXd u = h.ldlt().solve(g);
  if (!u.allFinite()) throw NumericError("ift_feature_grad: damped Hessian solve failed");

  const Eigen::VectorXd uw = u.head(p);
  const double ub = u(p);
  Matrix out(n, p);
  for (long i = 0; i < n; ++i) {
    const double yi = membership[static_cast<std::size_t>(i)];
    const double* s = tr_feats.row_ptr(i);
    double s_dot_uw = 0.0;
    for (long c = 0; c < p; ++c) s_dot_uw += s[c] * uw(c);

    if (sol.family == AttackFamily::kSqHinge) {
      const double hinge = 1.0 - yi * margin(tr_feats, i, sol.w, sol.b);
      if (hinge > 0.0) {
        const double coef = 2.0 * sol.reg;
        for (long c = 0; c < p; ++c)
          out.at(i, c) = coef * (yi * hinge * uw(c) - (s_dot_uw + ub) * sol.w[static_cast<std::size_t>(c)]);
      }
      // inactive rows keep the zero fill: the solution is locally constant in them
    } else {
      const double pi = sigmoid_neg(yi * margin(tr_feats, i, sol.w, sol.b));
      const double inv_n = 1.0 / static_cast<double>(n);
      for (long c = 0; c < p; ++c)
        out.at(i, c) = inv_n * (yi * pi * uw(c) -
                                pi * (1.0 - pi) * (s_dot_uw + ub) * sol.w[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

double rank_auc(const std::vector<double>& decision, const std::vector<double>& y) {
  const std::size_t m = decision.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return decision[a] < decision[b]; });
  std::vector<double> rank(m);
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j + 1 < m && decision[order[j + 1]] == decision[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double rank_pos = 0.0;
  long n_pos = 0, n_neg = 0;
  for (std::size_t t = 0; t < m; ++t) {
    if (y[t] > 0) {
      rank_pos += rank[t];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) throw ContractError("fold has only one membership label");
  return (rank_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MiaMetrics cv_mia_metrics(const AuditSet& audit, long k, AttackFamily family, double reg,
                          std::uint64_t seed) {
  if (k < 2) throw ContractError("cv_mia_metrics: k must be >= 2");
  std::vector<long> pos, neg;
  for (long i = 0; i < audit.features.rows; ++i)
    (audit.membership[static_cast<std::size_t>(i)] > 0 ? pos : neg).push_back(i);
  if (static_cast<long>(pos.size()) < k || static_cast<long>(neg.size()) < k)
    throw ContractError("cv_mia_metrics: folds would miss a membership label");

  // Canonical content order before the seeded shuffle, so the fold assignment
  // depends on the data, not on the incoming row order.
  auto by_row_content = [&](long a, long b) {
    const double* ra = audit.features.row_ptr(a);
    const double* rb = audit.features.row_ptr(b);
    for (long c = 0; c < audit.features.cols; ++c)
      if (ra[c] != rb[c]) return ra[c] < rb[c];
    return false;
  };
  std::stable_sort(pos.begin(), pos.end(), by_row_content);
  std::stable_sort(neg.begin(), neg.end(), by_row_content);

  Rng rng(mix_seed(seed, 41));
  rng.shuffle(pos);
  rng.shuffle(neg);

  MiaMetrics out;
  for (long f = 0; f < k; ++f) {
    std::vector<long> tr_rows, te_rows;
    for (const std::vector<long>* group : {&pos, &neg})
      for (std::size_t i = 0; i < group->size(); ++i)
        (static_cast<long>(i) % k == f ? te_rows : tr_rows).push_back((*group)[i]);
    const AttackSolution sol = solve_attack(audit.features.take_rows(tr_rows),
                                            take(audit.membership, tr_rows), family, reg);

    std::vector<double> decision(te_rows.size());
    const std::vector<double> y = take(audit.membership, te_rows);
    long correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < te_rows.size(); ++i) {
      decision[i] = margin(audit.features, te_rows[i], sol.w, sol.b);
      const double pred = decision[i] > 0.0 ? 1.0 : -1.0;
      if (pred == y[i]) ++correct;
      if (pred > 0 && y[i] > 0) ++tp;
      if (pred > 0 && y[i] < 0) ++fp;
      if (pred < 0 && y[i] > 0) ++fn;
    }
    out.accuracy += static_cast<double>(correct) / static_cast<double>(te_rows.size());
    out.auc += rank_auc(decision, y);
    out.f1 += (2 * tp + fp + fn) == 0 ? 0.0
                                      : 2.0 * static_cast<double>(tp) /
                                            static_cast<double>(2 * tp + fp + fn);
  }
  out.accuracy /= static_cast<double>(k);
  out.auc /= static_cast<double>(k);
  out.f1 /= static_cast<double>(k);
  return out;
}

}  // namespace sgu
