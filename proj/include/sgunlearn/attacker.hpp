#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgunlearn/datasets.hpp"
#include "sgunlearn/matrix.hpp"
#include "sgunlearn/models.hpp"
#include "sgunlearn/tensor.hpp"

namespace sgu {

// Balanced membership-audit set: N forget rows labeled +1 followed by N
// sampled test rows labeled -1, split 50/50 into attacker train/val halves,
// stratified by membership.
struct AuditSet {
  Matrix features;                 // 2N x p
  std::vector<double> membership;  // +1 member, -1 non-member
  std::vector<long> source_rows;   // bundle row behind each feature row (members first)
  std::vector<long> tr_indices;
  std::vector<long> val_indices;
  std::uint64_t seed = 0;
};

enum class AttackFamily { kSqHinge, kLogistic };
AttackFamily attack_family_from_name(const std::string& name);
const char* attack_family_name(AttackFamily family);

// Stationary point of the attacker's convex objective.
//   sq-hinge:  1/2 |w|^2 + C * sum_i max(0, 1 - y_i(w.s_i + b))^2
//   logistic:  mean_i log(1 + exp(-y_i(w.s_i + b))) + lambda/2 |w|^2
struct AttackSolution {
  std::vector<double> w;
  double b = 0.0;
  AttackFamily family = AttackFamily::kSqHinge;
  double reg = 1.0;  // C for sq-hinge, lambda for logistic
  double objective = 0.0;
  double grad_norm_at_solution = 0.0;
  std::vector<long> active_set;  // sq-hinge: rows with margin < 1 at the solution
};

AuditSet build_audit_set(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                         const ForgetPartition& partition, FeatureMode mode, std::uint64_t seed);

// Variant with a caller-chosen negative pool (used for hyperparameter
// selection, where negatives come from the validation split).
AuditSet build_audit_set_from_rows(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                                   const std::vector<long>& member_rows,
                                   const std::vector<long>& negative_pool, FeatureMode mode,
                                   std::uint64_t seed);

double attack_objective(const Matrix& feats, const std::vector<double>& membership,
                        AttackFamily family, double reg, const std::vector<double>& w, double b);

// Damped Newton to gradient inf-norm <= tol.
AttackSolution solve_attack(const Matrix& feats, const std::vector<double>& membership,
                            AttackFamily family, double reg, double tol = 1e-10,
                            long max_iter = 200);

// Soft auditing utility -(1/M) sum log(1 + exp(-y_i(w.s_i + b))). Larger
// means the populations are easier to tell apart. The tensor flavor carries
// gradients into the feature tensor; (w, b) are treated as constants there.
double attack_utility_soft(const AttackSolution& sol, const Matrix& feats,
                           const std::vector<double>& membership);
ad::Tensor attack_utility_soft(const AttackSolution& sol, const ad::Tensor& feats,
                               const std::vector<double>& membership);

// d(soft utility)/d(w, b) as a flat (p+1) vector; the upstream input to ift_feature_grad.
std::vector<double> utility_grad_wb(const AttackSolution& sol, const Matrix& feats,
                                    const std::vector<double>& membership);

// Implicit-function-theorem pullback through the attacker's best response:
// given g = d(utility)/d(w,b), returns d(utility)/d(tr features) as an N x p
// matrix, computed as -J^T H^-1 g with H the damped stationarity Hessian.
Matrix ift_feature_grad(const AttackSolution& sol, const Matrix& tr_feats,
                        const std::vector<double>& membership,
                        const std::vector<double>& upstream_wb);

struct MiaMetrics {
  double accuracy = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
};

// Midrank AUC of decision scores against +-1 labels (ties count half).
double rank_auc(const std::vector<double>& decision, const std::vector<double>& labels);

// Stratified k-fold CV over the full audit set: per fold train an attacker on
// the rest, score the held-out fold at decision threshold 0; AUC by midranks.
MiaMetrics cv_mia_metrics(const AuditSet& audit, long k, AttackFamily family, double reg,
                          std::uint64_t seed);

}  // namespace sgu
