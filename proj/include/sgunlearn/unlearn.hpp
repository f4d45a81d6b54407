#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sgunlearn/attacker.hpp"
#include "sgunlearn/datasets.hpp"
#include "sgunlearn/models.hpp"

namespace sgu {

// The game runs 30 epochs from a small base step with heavy momentum. The
// ramp doubles the rate four times so the utility term has enough push to
// cross the auditor's indifference point, and the late decay releases the
// accumulated momentum before the trajectory can climb back out.
inline TrainConfig sg_default_schedule() {
  TrainConfig t;
  t.epochs = 30;
  t.momentum = 0.98;
  t.lr_milestones = {{3, 2.0}, {6, 2.0}, {9, 2.0}, {12, 2.0}, {25, 0.25}};
  return t;
}

// Stackelberg unlearning configuration. Each epoch applies one accumulated
// full-batch gradient step over the retain rows under `train`'s schedule,
// then one game step through its own momentum buffer scaled by alpha, so
// alpha=0 reproduces full-batch fine-tuning on the matching schedule. `seed`
// drives the per-epoch audit negative subsampling only.
struct SgConfig {
  double alpha = 1.0;
  TrainConfig train = sg_default_schedule();
  AttackFamily family = AttackFamily::kSqHinge;
  double attack_reg = 1.0;
  double attack_tol = 1e-10;
  FeatureMode mode = FeatureMode::kProbsLoss;
  std::uint64_t seed = 0;
};

struct EpochTrace {
  double retain_loss = 0.0;   // mean CE over the retain pass
  double soft_utility = 0.0;  // attacker's soft utility on the val half, pre attacker-step
  double seconds = 0.0;
};

struct UnlearnResult {
  ModelCheckpoint ckpt;
  std::vector<EpochTrace> trace;  // one entry per epoch
};

// Called after each full epoch update with the current parameters; lets the
// harness assemble per-epoch evaluation traces without re-running.
using EpochHook = std::function<void(long epoch, const ModelCheckpoint&)>;

// The Stackelberg game: per epoch, (i) one SGD pass over the retain rows,
// (ii) rebuild the audit set from forget + test_audit rows at the new
// parameters, (iii) attacker best response on the audit train half,
// (iv) soft utility on the val half, (v) descend alpha * d(utility)/d(theta)
// through both the direct val-feature path and the implicit best-response
// path. Attacker solver failures rethrow with the epoch index.
UnlearnResult sg_unlearn(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                         const ForgetPartition& partition, const SgConfig& cfg,
                         const EpochHook& hook = {});

// Fresh initialization, full training on retain rows only.
ModelCheckpoint retrain(const DatasetBundle& bundle, const ForgetPartition& partition,
                        const MlpSpec& spec, const TrainConfig& cfg, std::uint64_t seed,
                        std::vector<double>* epoch_losses = nullptr);

// Continue SGD from orig on the retain rows.
ModelCheckpoint fine_tune(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                          const ForgetPartition& partition, const TrainConfig& cfg,
                          std::vector<double>* epoch_losses = nullptr, const EpochHook& hook = {});

// Ascent on the CE loss over the forget rows (loss_sign = -1).
ModelCheckpoint gradient_ascent(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                                const ForgetPartition& partition, const TrainConfig& cfg,
                                std::vector<double>* epoch_losses = nullptr);

// One uniform draw over the k-1 wrong classes per entry; never the true label.
std::vector<long> resample_wrong_labels(const std::vector<long>& labels, long num_classes,
                                        std::uint64_t seed);

// Continue training on retain rows with true labels plus forget rows with
// labels resampled over the wrong classes (fixed per seed).
ModelCheckpoint random_label(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                             const ForgetPartition& partition, const TrainConfig& cfg,
                             std::uint64_t seed);

// fine_tune plus gamma * |theta|_1 subgradient (sign(0) = 0). gamma = 0 is
// exactly fine_tune.
ModelCheckpoint l1_sparse(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                          const ForgetPartition& partition, const TrainConfig& cfg, double gamma);

struct IuOptions {
  // Damping tau on the Hessian diagonal. Network Hessians at desk scale are
  // indefinite with eigenvalues well below -1e-2, so the update is solved at
  // a damping that keeps the system tractable inside the iteration budget.
  double damping = 1.0;
  long cg_iters = 100;
  // SolverError if the final CG residual exceeds this; the iteration already
  // stops once the residual falls a decade under it.
  double residual_tol = 1e-4;
  double step_scale = 1.0;  // optional multiplier on the applied update
};

// Solves (H + tau I) x = forget_grad_sum / n_train by conjugate gradient on
// the normal equations (CGLS), with Hessian-vector products taken by central
// finite differences of mean_train_grad. Returns x; residual_trace (when
// given) receives the true-residual norm at start and after every iteration,
// which CGLS keeps non-increasing.
std::vector<double> influence_update(
    const std::vector<double>& theta0,
    const std::function<std::vector<double>(const std::vector<double>&)>& mean_train_grad,
    const std::vector<double>& forget_grad_sum, long n_train, const IuOptions& opts = {},
    std::vector<double>* residual_trace = nullptr);

// theta_u = theta_o + step_scale/|train| * (H + tau I)^-1 sum_{i in forget} grad l_i,
// H the Hessian of the mean training loss at theta_o.
ModelCheckpoint influence_unlearn(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                                  const ForgetPartition& partition, const IuOptions& opts = {},
                                  std::vector<double>* residual_trace = nullptr);

}  // namespace sgu
