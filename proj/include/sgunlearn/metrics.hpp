#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sgunlearn/attacker.hpp"
#include "sgunlearn/datasets.hpp"
#include "sgunlearn/models.hpp"

namespace sgu {

struct MetricsReport {
  double acc_r = 0.0;
  double acc_te = 0.0;
  double acc_f = 0.0;
  double acc_gap = 0.0;  // |acc_f - acc_te|
  double mia_acc = 0.0;
  double mia_auc = 0.0;
  double mia_f1 = 0.0;
  double ks_stat = 0.0;
  double ks_pvalue = 0.0;
  double w_dist = 0.0;
  double runtime_s = 0.0;
};

// Two-sample Kolmogorov-Smirnov: sup |ECDF_a - ECDF_b| with the asymptotic
// Kolmogorov p-value (series truncated at 100 terms, clamped to [0,1]).
std::pair<double, double> ks_two_sample(const std::vector<double>& a,
                                        const std::vector<double>& b);

// 1-D Wasserstein distance: the ECDF difference integrated exactly over the
// pooled breakpoints.
double wasserstein1(const std::vector<double>& a, const std::vector<double>& b);

struct AuditConfig {
  AttackFamily family = AttackFamily::kSqHinge;
  double reg = 1.0;
  FeatureMode mode = FeatureMode::kProbsLoss;
  long k_folds = 10;
};

// Full evaluation of a checkpoint: accuracies on retain/test_eval/forget rows,
// k-fold MIA metrics on a fresh audit set, and KS/Wasserstein between the
// per-instance CE losses of forget vs test_audit rows.
MetricsReport assemble_report(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                              const ForgetPartition& partition, const AuditConfig& audit_cfg,
                              std::uint64_t seed, double runtime_s = 0.0);

}  // namespace sgu
