#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sgunlearn/matrix.hpp"
#include "sgunlearn/rng.hpp"
#include "sgunlearn/tensor.hpp"

namespace sgu {

// Fully connected relu network: layer_dims = {input d, hidden..., K}.
struct MlpSpec {
  std::vector<long> layer_dims;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  long epochs = 60;
  long batch_size = 64;
  std::vector<std::pair<long, double>> lr_milestones;  // (epoch, multiplier)
};

struct ModelCheckpoint {
  MlpSpec spec;
  std::vector<double> params;  // per layer: W row-major (fan_in x fan_out), then bias
  std::uint64_t seed = 0;
  std::string config_digest;
  long epochs_trained = 0;
};

long param_count(const MlpSpec& spec);

// Glorot uniform init, +-sqrt(6/(fan_in+fan_out)) per layer, zero biases.
std::vector<double> init_params(const MlpSpec& spec);

// Flat parameter vector staged as per-layer tape leaves so gradients flow.
struct TapedModel {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;
};
TapedModel stage_params(ad::Tape& tape, const MlpSpec& spec, const std::vector<double>& params);

// Forward pass to logits. Works on tape leaves (differentiable) or on
// constant tensors (plain evaluation) alike.
ad::Tensor mlp_logits(const TapedModel& model, const ad::Tensor& rows);

// Constant-tensor forward with no tape.
Matrix forward_logits(const MlpSpec& spec, const std::vector<double>& params, const Matrix& rows);

// Accumulated leaf gradients flattened back into parameter layout.
std::vector<double> flat_grad(const TapedModel& model);

enum class FeatureMode { kLoss, kProbs, kProbsLoss };
FeatureMode feature_mode_from_name(const std::string& name);
const char* feature_mode_name(FeatureMode mode);
long feature_dim(FeatureMode mode, long num_classes);

// Per-instance attack features of the model's outputs: per-row CE loss (n x 1),
// softmax probabilities (n x K), or their concatenation (n x (K+1)).
// Differentiable w.r.t. the staged parameters.
ad::Tensor output_features(const TapedModel& model, const ad::Tensor& rows,
                           const std::vector<long>& labels, FeatureMode mode);

// Plain (gradient-free) feature extraction for metrics and CV attacks.
Matrix output_features_plain(const MlpSpec& spec, const std::vector<double>& params,
                             const Matrix& rows, const std::vector<long>& labels, FeatureMode mode);

// Variant knobs folded into the shared SGD pass so every trainer follows the
// same shuffle/update sequence: loss_sign=-1 gives gradient ascent, l1_gamma
// adds the subgradient of gamma*|theta|_1.
struct SgdOpts {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  long batch_size = 64;
  double loss_sign = 1.0;
  double l1_gamma = 0.0;
};

// One shuffled mini-batch pass; updates params and momentum_buf in place and
// returns the mean cross-entropy over the epoch.
double sgd_epoch(std::vector<double>& params, std::vector<double>& momentum_buf,
                 const MlpSpec& spec, const Matrix& rows, const std::vector<long>& labels,
                 const SgdOpts& opts, Rng& shuffle_rng);

// Full training from a fresh Glorot init. Shuffle stream derives from
// spec.seed. epoch_losses, when given, receives one mean loss per epoch.
ModelCheckpoint train(const Matrix& rows, const std::vector<long>& labels, const MlpSpec& spec,
                      const TrainConfig& cfg, std::vector<double>* epoch_losses = nullptr);

// Fraction of argmax-correct predictions; argmax ties go to the lower class.
double evaluate(const ModelCheckpoint& ckpt, const Matrix& rows, const std::vector<long>& labels);

// Mean cross-entropy losses, one per row (natural log).
std::vector<double> per_row_ce(const ModelCheckpoint& ckpt, const Matrix& rows,
                               const std::vector<long>& labels);

void save_ckpt(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_ckpt(const std::string& path);

// Learning rate at a 0-based epoch under the milestone schedule.
double lr_at_epoch(const TrainConfig& cfg, long epoch);

}  // namespace sgu
