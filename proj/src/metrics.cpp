#include "sgunlearn/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace sgu {

std::pair<double, double> ks_two_sample(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ContractError("ks_two_sample: empty sample");
  std::vector<double> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const double m = static_cast<double>(sa.size());
  const double n = static_cast<double>(sb.size());
  double stat = 0.0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() || j < sb.size()) {
    double x;
    if (j >= sb.size() || (i < sa.size() && sa[i] <= sb[j])) x = sa[i];
    else x = sb[j];
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    stat = std::max(stat, std::fabs(static_cast<double>(i) / m - static_cast<double>(j) / n));
  }

  // Asymptotic Kolmogorov distribution. The truncated series evaluates to 0
  // at lambda=0 while the true limit is 1, so identical ECDFs are special-cased.
  double pvalue = 1.0;
  if (stat > 0.0) {
    const double n_e = m * n / (m + n);
    const double lambda = (std::sqrt(n_e) + 0.12 + 0.11 / std::sqrt(n_e)) * stat;
    double s = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
      s += sign * std::exp(-2.0 * static_cast<double>(k) * static_cast<double>(k) * lambda * lambda);
      sign = -sign;
    }
    pvalue = std::min(1.0, std::max(0.0, 2.0 * s));
  }
  return {stat, pvalue};
}

double wasserstein1(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ContractError("wasserstein1: empty sample");
  std::vector<double> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const double m = static_cast<double>(sa.size());
  const double n = static_cast<double>(sb.size());
  double dist = 0.0;
  double prev_x = 0.0;
  bool have_prev = false;
  std::size_t i = 0, j = 0;
  while (i < sa.size() || j < sb.size()) {
    double x;
    if (j >= sb.size() || (i < sa.size() && sa[i] <= sb[j])) x = sa[i];
    else x = sb[j];
    if (have_prev)
      dist += std::fabs(static_cast<double>(i) / m - static_cast<double>(j) / n) * (x - prev_x);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    prev_x = x;
    have_prev = true;
  }
  return dist;
}

MetricsReport assemble_report(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                              const ForgetPartition& partition, const AuditConfig& audit_cfg,
                              std::uint64_t seed, double runtime_s) {
  MetricsReport r;
  const std::vector<long> test_eval = bundle.rows_in(Split::kTestEval);
  const std::vector<long> test_audit = bundle.rows_in(Split::kTestAudit);

  r.acc_r = evaluate(ckpt, bundle.features.take_rows(partition.retain_indices),
                     take(bundle.labels, partition.retain_indices));
  r.acc_te = evaluate(ckpt, bundle.features.take_rows(test_eval), take(bundle.labels, test_eval));
  r.acc_f = evaluate(ckpt, bundle.features.take_rows(partition.forget_indices),
                     take(bundle.labels, partition.forget_indices));
  r.acc_gap = std::fabs(r.acc_f - r.acc_te);

  const AuditSet audit = build_audit_set(ckpt, bundle, partition, audit_cfg.mode, seed);
  const MiaMetrics mia =
      cv_mia_metrics(audit, audit_cfg.k_folds, audit_cfg.family, audit_cfg.reg, seed);
  r.mia_acc = mia.accuracy;
  r.mia_auc = mia.auc;
  r.mia_f1 = mia.f1;

  const std::vector<double> loss_f =
      per_row_ce(ckpt, bundle.features.take_rows(partition.forget_indices),
                 take(bundle.labels, partition.forget_indices));
  const std::vector<double> loss_te = per_row_ce(ckpt, bundle.features.take_rows(test_audit),
                                                 take(bundle.labels, test_audit));
  const auto [stat, pvalue] = ks_two_sample(loss_f, loss_te);
  r.ks_stat = stat;
  r.ks_pvalue = pvalue;
  r.w_dist = wasserstein1(loss_f, loss_te);
  r.runtime_s = runtime_s;
  return r;
}

}  // namespace sgu
