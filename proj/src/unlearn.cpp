#include "sgunlearn/unlearn.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <utility>

#include "sgunlearn/errors.hpp"

namespace sgu {

namespace {

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Shared continuation pass: every warm-start unlearner (fine_tune, l1_sparse,
// gradient_ascent, random_label, the sg retain step) goes through sgd_epoch
// with the same schedule handling, differing only in rows, sign, penalty, and
// shuffle stream.
ModelCheckpoint continue_training(const char* who, const ModelCheckpoint& orig, const Matrix& rows,
                                  const std::vector<long>& labels, const TrainConfig& cfg,
                                  double loss_sign, double l1_gamma, std::uint64_t shuffle_seed,
                                  std::vector<double>* epoch_losses, const EpochHook& hook) {
  if (rows.rows == 0) throw ContractError(std::string(who) + ": empty row set");
  if (cfg.epochs < 1) throw ContractError(std::string(who) + ": epochs must be >= 1");
  if (cfg.lr < 0.0) throw ContractError(std::string(who) + ": negative learning rate");
  for (long y : labels)
    if (y < 0 || y >= orig.spec.layer_dims.back())
      throw ContractError(std::string(who) + ": label out of range");

  ModelCheckpoint out = orig;
  std::vector<double> momentum_buf;
  Rng shuffle_rng(shuffle_seed);
  SgdOpts opts;
  opts.momentum = cfg.momentum;
  opts.weight_decay = cfg.weight_decay;
  opts.batch_size = cfg.batch_size;
  opts.loss_sign = loss_sign;
  opts.l1_gamma = l1_gamma;
  for (long e = 0; e < cfg.epochs; ++e) {
    opts.lr = lr_at_epoch(cfg, e);
    const double loss = sgd_epoch(out.params, momentum_buf, orig.spec, rows, labels, opts, shuffle_rng);
    if (epoch_losses != nullptr) epoch_losses->push_back(loss);
    out.epochs_trained = orig.epochs_trained + e + 1;
    if (hook) hook(e, out);
  }
  return out;
}

std::vector<double> full_batch_grad(const MlpSpec& spec, const std::vector<double>& params,
                                    const Matrix& rows, const std::vector<long>& labels) {
  ad::Tape tape;
  TapedModel model = stage_params(tape, spec, params);
  const ad::Tensor x({rows.rows, rows.cols}, rows.v);
  tape.backward(ad::mean(ad::softmax_ce(mlp_logits(model, x), labels)));
  return flat_grad(model);
}

}  // namespace

UnlearnResult sg_unlearn(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                         const ForgetPartition& partition, const SgConfig& cfg,
                         const EpochHook& hook) {
  if (cfg.alpha < 0.0) throw ContractError("sg_unlearn: alpha must be >= 0");
  if (cfg.train.epochs < 1) throw ContractError("sg_unlearn: epochs must be >= 1");
  if (cfg.train.lr < 0.0) throw ContractError("sg_unlearn: negative learning rate");
  if (partition.forget_indices.empty()) throw ContractError("sg_unlearn: empty forget set");

  const Matrix retain_rows = bundle.features.take_rows(partition.retain_indices);
  const std::vector<long> retain_labels = take(bundle.labels, partition.retain_indices);

  UnlearnResult res;
  res.ckpt = orig;
  std::vector<double>& params = res.ckpt.params;
  std::vector<double> momentum_buf;
  std::vector<double> game_momentum;
  // Same stream as fine_tune: with alpha = 0 and fine_tune run at a matched
  // full-batch schedule the trajectories coincide bit for bit.
  Rng shuffle_rng(mix_seed(orig.spec.seed, 23));

  SgdOpts opts;
  opts.momentum = cfg.train.momentum;
  opts.weight_decay = cfg.train.weight_decay;
  // The retain step is one update per epoch on the full retain gradient
  // (mini-batches only chunk the accumulation), keeping it on the same
  // footing as the single attacker step that follows.
  opts.batch_size = retain_rows.rows;

  for (long e = 0; e < cfg.train.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    opts.lr = lr_at_epoch(cfg.train, e);

    const double retain_loss =
        sgd_epoch(params, momentum_buf, orig.spec, retain_rows, retain_labels, opts, shuffle_rng);

    // Fresh negatives each epoch so the unlearner cannot overfit one sample.
    const AuditSet audit =
        build_audit_set(res.ckpt, bundle, partition, cfg.mode, mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(e)));
    const Matrix tr_feats = audit.features.take_rows(audit.tr_indices);
    const Matrix val_feats = audit.features.take_rows(audit.val_indices);
    const std::vector<double> tr_y = take(audit.membership, audit.tr_indices);
    const std::vector<double> val_y = take(audit.membership, audit.val_indices);

    AttackSolution sol;
    try {
      sol = solve_attack(tr_feats, tr_y, cfg.family, cfg.attack_reg, cfg.attack_tol);
    } catch (const SolverError& err) {
      throw SolverError("sg_unlearn epoch " + std::to_string(e) + ": " + err.what());
    }

    // Recompute the audit features on tape; they are bit-identical to
    // audit.features, so the solution stays consistent with the graph.
    ad::Tape tape;
    TapedModel model = stage_params(tape, orig.spec, params);
    const Matrix audit_rows = bundle.features.take_rows(audit.source_rows);
    const std::vector<long> audit_labels = take(bundle.labels, audit.source_rows);
    const ad::Tensor feats = output_features(
        model, ad::Tensor({audit_rows.rows, audit_rows.cols}, audit_rows.v), audit_labels, cfg.mode);
    const ad::Tensor tr_t = ad::gather_rows(feats, audit.tr_indices);
    const ad::Tensor val_t = ad::gather_rows(feats, audit.val_indices);

    // Direct path: the val features enter the utility as-is. Implicit path:
    // the attacker's (w, b) best-responds to the tr features, pulled back by
    // the IFT and injected as a custom node on the tr features.
    const ad::Tensor val_utility = attack_utility_soft(sol, val_t, val_y);
    const std::vector<double> upstream = utility_grad_wb(sol, val_feats, val_y);
    const Matrix tr_grad = ift_feature_grad(sol, tr_feats, tr_y, upstream);
    const ad::Tensor best_response_path =
        tape.custom_scalar({tr_t}, 0.0, [tr_grad](double up) {
          std::vector<double> g(tr_grad.v.size());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = up * tr_grad.v[i];
          return std::vector<std::vector<double>>{std::move(g)};
        });
    tape.backward(ad::add(val_utility, best_response_path));
    const std::vector<double> g = flat_grad(model);

    // The attacker step follows the same SGD-with-momentum convention as the
    // retain step, with its own buffer so the two updates stay in Algorithm
    // order and alpha = 0 leaves the trajectory untouched.
    if (game_momentum.empty()) game_momentum.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      game_momentum[i] = opts.momentum * game_momentum[i] + cfg.alpha * g[i];
      params[i] -= opts.lr * game_momentum[i];
    }
    for (double p : params)
      if (!std::isfinite(p))
        throw NumericError("sg_unlearn: non-finite parameters after the attacker step");

    res.ckpt.epochs_trained = orig.epochs_trained + e + 1;
    EpochTrace t;
    t.retain_loss = retain_loss;
    t.soft_utility = val_utility.item();
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.push_back(t);
    if (hook) hook(e, res.ckpt);
  }
  return res;
}

ModelCheckpoint retrain(const DatasetBundle& bundle, const ForgetPartition& partition,
                        const MlpSpec& spec, const TrainConfig& cfg, std::uint64_t seed,
                        std::vector<double>* epoch_losses) {
  MlpSpec seeded = spec;
  seeded.seed = seed;
  return train(bundle.features.take_rows(partition.retain_indices),
               take(bundle.labels, partition.retain_indices), seeded, cfg, epoch_losses);
}

ModelCheckpoint fine_tune(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                          const ForgetPartition& partition, const TrainConfig& cfg,
                          std::vector<double>* epoch_losses, const EpochHook& hook) {
  return continue_training("fine_tune", orig, bundle.features.take_rows(partition.retain_indices),
                           take(bundle.labels, partition.retain_indices), cfg, 1.0, 0.0,
                           mix_seed(orig.spec.seed, 23), epoch_losses, hook);
}

ModelCheckpoint gradient_ascent(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                                const ForgetPartition& partition, const TrainConfig& cfg,
                                std::vector<double>* epoch_losses) {
  return continue_training("gradient_ascent", orig,
                           bundle.features.take_rows(partition.forget_indices),
                           take(bundle.labels, partition.forget_indices), cfg, -1.0, 0.0,
                           mix_seed(orig.spec.seed, 24), epoch_losses, {});
}

std::vector<long> resample_wrong_labels(const std::vector<long>& labels, long num_classes,
                                        std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("resample_wrong_labels: needs at least two classes");
  Rng rng(mix_seed(seed, 25));
  std::vector<long> out(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const long y = labels[i];
    if (y < 0 || y >= num_classes) throw ContractError("resample_wrong_labels: label out of range");
    const long r = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(num_classes - 1)));
    out[i] = (r < y) ? r : r + 1;
  }
  return out;
}

ModelCheckpoint random_label(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                             const ForgetPartition& partition, const TrainConfig& cfg,
                             std::uint64_t seed) {
  std::vector<long> rows = partition.retain_indices;
  rows.insert(rows.end(), partition.forget_indices.begin(), partition.forget_indices.end());
  std::vector<long> labels = take(bundle.labels, partition.retain_indices);
  const std::vector<long> wrong = resample_wrong_labels(
      take(bundle.labels, partition.forget_indices), bundle.num_classes, seed);
  labels.insert(labels.end(), wrong.begin(), wrong.end());
  return continue_training("random_label", orig, bundle.features.take_rows(rows), labels, cfg, 1.0,
                           0.0, mix_seed(seed, 26), nullptr, {});
}

ModelCheckpoint l1_sparse(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                          const ForgetPartition& partition, const TrainConfig& cfg, double gamma) {
  if (gamma < 0.0) throw ContractError("l1_sparse: negative penalty");
  return continue_training("l1_sparse", orig, bundle.features.take_rows(partition.retain_indices),
                           take(bundle.labels, partition.retain_indices), cfg, 1.0, gamma,
                           mix_seed(orig.spec.seed, 23), nullptr, {});
}

std::vector<double> influence_update(
    const std::vector<double>& theta0,
    const std::function<std::vector<double>(const std::vector<double>&)>& mean_train_grad,
    const std::vector<double>& forget_grad_sum, long n_train, const IuOptions& opts,
    std::vector<double>* residual_trace) {
  if (forget_grad_sum.size() != theta0.size())
    throw ContractError("influence_update: gradient length mismatch");
  if (n_train < 1) throw ContractError("influence_update: empty training set");
  if (opts.cg_iters < 1) throw ContractError("influence_update: cg_iters must be >= 1");

  const std::size_t dim = theta0.size();
  std::vector<double> b(dim);
  for (std::size_t i = 0; i < dim; ++i) b[i] = forget_grad_sum[i] / static_cast<double>(n_train);

  const double theta_scale = 1.0 + norm2(theta0);
  const auto apply = [&](const std::vector<double>& v) {
    // Central finite-difference Hessian-vector product plus damping. The
    // step is kept tiny so the directional nonlinearity of the network
    // Hessian does not bleed into the Krylov iteration.
    const double eps = 1e-8 * theta_scale / norm2(v);
    std::vector<double> plus(dim), minus(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      plus[i] = theta0[i] + eps * v[i];
      minus[i] = theta0[i] - eps * v[i];
    }
    const std::vector<double> gp = mean_train_grad(plus);
    const std::vector<double> gm = mean_train_grad(minus);
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i)
      out[i] = (gp[i] - gm[i]) / (2.0 * eps) + opts.damping * v[i];
    return out;
  };

  // CGLS: conjugate gradient on the normal equations A^T A x = A^T b with
  // A = H + tau I (A^T = A by symmetry). The network Hessian is indefinite
  // even after damping, where plain CG breaks down; CGLS converges for any
  // symmetric nonsingular system and its true residual norm is monotone.
  std::vector<double> x(dim, 0.0), r(b);
  double res_norm = norm2(r);
  if (residual_trace != nullptr) residual_trace->push_back(res_norm);
  // Stop a decade under the acceptance threshold (or at essentially exact
  // convergence, whichever is stricter counts as done).
  const double inner_tol =
      std::max(1e-13 * std::max(1.0, norm2(b)), 0.1 * opts.residual_tol);

  if (res_norm > inner_tol) {
    std::vector<double> s = apply(r);
    std::vector<double> p = s;
    double gamma = dot(s, s);
    for (long it = 0; it < opts.cg_iters && res_norm > inner_tol; ++it) {
      const std::vector<double> q = apply(p);
      const double qq = dot(q, q);
      if (!(qq > 0.0) || !(gamma > 0.0)) break;
      const double alpha = gamma / qq;
      for (std::size_t i = 0; i < dim; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * q[i];
      }
      res_norm = norm2(r);
      if (residual_trace != nullptr) residual_trace->push_back(res_norm);
      s = apply(r);
      const double gamma_new = dot(s, s);
      const double beta = gamma_new / gamma;
      for (std::size_t i = 0; i < dim; ++i) p[i] = s[i] + beta * p[i];
      gamma = gamma_new;
    }
  }

  if (res_norm > opts.residual_tol)
    throw SolverError("influence_update: CG residual " + std::to_string(res_norm) +
                      " above tolerance after " + std::to_string(opts.cg_iters) + " iterations");
  return x;
}

ModelCheckpoint influence_unlearn(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                                  const ForgetPartition& partition, const IuOptions& opts,
                                  std::vector<double>* residual_trace) {
  if (partition.forget_indices.empty()) return orig;

  const std::vector<long> train_rows = bundle.rows_in(Split::kTrain);
  const Matrix rows = bundle.features.take_rows(train_rows);
  const std::vector<long> labels = take(bundle.labels, train_rows);
  const auto grad_at = [&](const std::vector<double>& params) {
    return full_batch_grad(orig.spec, params, rows, labels);
  };

  std::vector<double> forget_sum =
      full_batch_grad(orig.spec, orig.params, bundle.features.take_rows(partition.forget_indices),
                      take(bundle.labels, partition.forget_indices));
  const double count = static_cast<double>(partition.forget_indices.size());
  for (double& v : forget_sum) v *= count;

  const std::vector<double> delta = influence_update(
      orig.params, grad_at, forget_sum, static_cast<long>(train_rows.size()), opts, residual_trace);

  ModelCheckpoint out = orig;
  for (std::size_t i = 0; i < out.params.size(); ++i)
    out.params[i] += opts.step_scale * delta[i];
  for (double v : out.params)
    if (!std::isfinite(v)) throw NumericError("influence_unlearn: non-finite parameters");
  return out;
}

}  // namespace sgu
