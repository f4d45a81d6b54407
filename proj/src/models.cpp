#include "sgunlearn/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sgunlearn/digest.hpp"

namespace sgu {

namespace {

void check_spec(const MlpSpec& spec) {
  if (spec.layer_dims.size() < 2) throw ContractError("MlpSpec: need at least input and output dims");
  for (long d : spec.layer_dims)
    if (d < 1) throw ContractError("MlpSpec: layer dims must be positive");
}

std::string train_config_canonical(const MlpSpec& spec, const TrainConfig& cfg) {
  std::ostringstream os;
  os << "layers=";
  for (long d : spec.layer_dims) os << d << " ";
  char buf[160];
  std::snprintf(buf, sizeof buf, "lr=%.17g momentum=%.17g wd=%.17g", cfg.lr, cfg.momentum,
                cfg.weight_decay);
  os << buf << " epochs=" << cfg.epochs << " batch=" << cfg.batch_size << " milestones=";
  for (const auto& [e, m] : cfg.lr_milestones) {
    std::snprintf(buf, sizeof buf, "%ld:%.17g ", e, m);
    os << buf;
  }
  return os.str();
}

}  // namespace

long param_count(const MlpSpec& spec) {
  check_spec(spec);
  long n = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l)
    n += (spec.layer_dims[l] + 1) * spec.layer_dims[l + 1];
  return n;
}

std::vector<double> init_params(const MlpSpec& spec) {
  check_spec(spec);
  std::vector<double> params(static_cast<std::size_t>(param_count(spec)));
  Rng rng(mix_seed(spec.seed, 21));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    const long fan_in = spec.layer_dims[l], fan_out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (long i = 0; i < fan_in * fan_out; ++i)
      params[off++] = bound * (2.0 * rng.uniform01() - 1.0);
    off += static_cast<std::size_t>(fan_out);  // biases stay zero
  }
  return params;
}

TapedModel stage_params(ad::Tape& tape, const MlpSpec& spec, const std::vector<double>& params) {
  check_spec(spec);
  if (static_cast<long>(params.size()) != param_count(spec))
    throw ContractError("stage_params: parameter vector length mismatch");
  TapedModel model;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    const long fan_in = spec.layer_dims[l], fan_out = spec.layer_dims[l + 1];
    std::vector<double> w(params.begin() + static_cast<long>(off),
                          params.begin() + static_cast<long>(off) + fan_in * fan_out);
    off += static_cast<std::size_t>(fan_in * fan_out);
    std::vector<double> b(params.begin() + static_cast<long>(off),
                          params.begin() + static_cast<long>(off) + fan_out);
    off += static_cast<std::size_t>(fan_out);
    model.weights.push_back(tape.leaf({fan_in, fan_out}, std::move(w)));
    model.biases.push_back(tape.leaf({fan_out}, std::move(b)));
  }
  return model;
}

ad::Tensor mlp_logits(const TapedModel& model, const ad::Tensor& rows) {
  ad::Tensor h = rows;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    h = ad::add(ad::matmul(h, model.weights[l]), model.biases[l]);
    if (l + 1 < model.weights.size()) h = ad::relu(h);
  }
  return h;
}

namespace {

TapedModel constant_model(const MlpSpec& spec, const std::vector<double>& params) {
  check_spec(spec);
  if (static_cast<long>(params.size()) != param_count(spec))
    throw ContractError("forward: parameter vector length mismatch");
  TapedModel model;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    const long fan_in = spec.layer_dims[l], fan_out = spec.layer_dims[l + 1];
    std::vector<double> w(params.begin() + static_cast<long>(off),
                          params.begin() + static_cast<long>(off) + fan_in * fan_out);
    off += static_cast<std::size_t>(fan_in * fan_out);
    std::vector<double> b(params.begin() + static_cast<long>(off),
                          params.begin() + static_cast<long>(off) + fan_out);
    off += static_cast<std::size_t>(fan_out);
    model.weights.emplace_back(ad::Shape{fan_in, fan_out}, std::move(w));
    model.biases.emplace_back(ad::Shape{fan_out}, std::move(b));
  }
  return model;
}

ad::Tensor rows_tensor(const Matrix& rows) {
  return ad::Tensor({rows.rows, rows.cols}, rows.v);
}

}  // namespace

Matrix forward_logits(const MlpSpec& spec, const std::vector<double>& params, const Matrix& rows) {
  const ad::Tensor out = mlp_logits(constant_model(spec, params), rows_tensor(rows));
  Matrix m(out.shape()[0], out.shape()[1]);
  m.v = out.values();
  return m;
}

std::vector<double> flat_grad(const TapedModel& model) {
  std::vector<double> g;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (const ad::Tensor* t : {&model.weights[l], &model.biases[l]}) {
      if (t->has_grad()) {
        const std::vector<double>& tg = t->grad();
        g.insert(g.end(), tg.begin(), tg.end());
      } else {
        g.insert(g.end(), static_cast<std::size_t>(t->numel()), 0.0);
      }
    }
  }
  return g;
}

FeatureMode feature_mode_from_name(const std::string& name) {
  if (name == "loss") return FeatureMode::kLoss;
  if (name == "probs") return FeatureMode::kProbs;
  if (name == "probs+loss") return FeatureMode::kProbsLoss;
  throw ContractError("unknown feature mode '" + name + "'");
}

const char* feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kLoss: return "loss";
    case FeatureMode::kProbs: return "probs";
    case FeatureMode::kProbsLoss: return "probs+loss";
  }
  return "?";
}

long feature_dim(FeatureMode mode, long num_classes) {
  switch (mode) {
    case FeatureMode::kLoss: return 1;
    case FeatureMode::kProbs: return num_classes;
    case FeatureMode::kProbsLoss: return num_classes + 1;
  }
  return 0;
}

ad::Tensor output_features(const TapedModel& model, const ad::Tensor& rows,
                           const std::vector<long>& labels, FeatureMode mode) {
  const ad::Tensor logits = mlp_logits(model, rows);
  switch (mode) {
    case FeatureMode::kLoss: return ad::softmax_ce(logits, labels);
    case FeatureMode::kProbs: return ad::softmax_rows(logits);
    case FeatureMode::kProbsLoss:
      return ad::concat_cols(ad::softmax_rows(logits), ad::softmax_ce(logits, labels));
  }
  throw ContractError("output_features: bad mode");
}

Matrix output_features_plain(const MlpSpec& spec, const std::vector<double>& params,
                             const Matrix& rows, const std::vector<long>& labels,
                             FeatureMode mode) {
  const ad::Tensor out =
      output_features(constant_model(spec, params), rows_tensor(rows), labels, mode);
  Matrix m(out.shape()[0], out.shape()[1]);
  m.v = out.values();
  return m;
}

double sgd_epoch(std::vector<double>& params, std::vector<double>& momentum_buf,
                 const MlpSpec& spec, const Matrix& rows, const std::vector<long>& labels,
                 const SgdOpts& opts, Rng& shuffle_rng) {
  if (rows.rows == 0) throw ContractError("sgd_epoch: empty row set");
  if (static_cast<long>(labels.size()) != rows.rows)
    throw ContractError("sgd_epoch: label count mismatch");
  if (opts.batch_size < 1) throw ContractError("sgd_epoch: batch_size must be >= 1");
  if (opts.lr < 0.0) throw ContractError("sgd_epoch: negative learning rate");
  if (momentum_buf.empty()) momentum_buf.assign(params.size(), 0.0);
  if (momentum_buf.size() != params.size())
    throw ContractError("sgd_epoch: momentum buffer length mismatch");

  std::vector<long> order(static_cast<std::size_t>(rows.rows));
  for (long i = 0; i < rows.rows; ++i) order[static_cast<std::size_t>(i)] = i;
  shuffle_rng.shuffle(order);

  const ad::Tensor all_rows = rows_tensor(rows);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
    const std::vector<long> batch(order.begin() + static_cast<long>(start),
                                  order.begin() + static_cast<long>(stop));

    ad::Tape tape;
    const TapedModel model = stage_params(tape, spec, params);
    const ad::Tensor x = ad::gather_rows(all_rows, batch);
    const ad::Tensor loss = ad::mean(ad::softmax_ce(mlp_logits(model, x), take(labels, batch)));
    tape.backward(loss);
    loss_sum += loss.item() * static_cast<double>(batch.size());

    const std::vector<double> g = flat_grad(model);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double gi = opts.loss_sign * g[i] + opts.weight_decay * params[i];
      if (opts.l1_gamma != 0.0 && params[i] != 0.0)
        gi += opts.l1_gamma * (params[i] > 0.0 ? 1.0 : -1.0);
      momentum_buf[i] = opts.momentum * momentum_buf[i] + gi;
      params[i] -= opts.lr * momentum_buf[i];
    }
  }
  const double mean_loss = loss_sum / static_cast<double>(rows.rows);
  if (!std::isfinite(mean_loss)) throw NumericError("sgd_epoch: training loss is non-finite");
  return mean_loss;
}

double lr_at_epoch(const TrainConfig& cfg, long epoch) {
  double lr = cfg.lr;
  for (const auto& [milestone, mult] : cfg.lr_milestones)
    if (epoch >= milestone) lr *= mult;
  return lr;
}

ModelCheckpoint train(const Matrix& rows, const std::vector<long>& labels, const MlpSpec& spec,
                      const TrainConfig& cfg, std::vector<double>* epoch_losses) {
  if (rows.rows == 0) throw ContractError("train: empty row set");
  if (cfg.epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (cfg.lr < 0.0) throw ContractError("train: negative learning rate");
  for (long y : labels)
    if (y < 0 || y >= spec.layer_dims.back()) throw ContractError("train: label out of range");

  ModelCheckpoint ckpt;
  ckpt.spec = spec;
  ckpt.params = init_params(spec);
  ckpt.seed = spec.seed;
  ckpt.config_digest = hex64(fnv1a64(train_config_canonical(spec, cfg)));
  ckpt.epochs_trained = cfg.epochs;

  std::vector<double> momentum_buf;
  Rng shuffle_rng(mix_seed(spec.seed, 22));
  SgdOpts opts;
  opts.momentum = cfg.momentum;
  opts.weight_decay = cfg.weight_decay;
  opts.batch_size = cfg.batch_size;
  for (long e = 0; e < cfg.epochs; ++e) {
    opts.lr = lr_at_epoch(cfg, e);
    const double loss = sgd_epoch(ckpt.params, momentum_buf, spec, rows, labels, opts, shuffle_rng);
    if (epoch_losses != nullptr) epoch_losses->push_back(loss);
  }
  return ckpt;
}

double evaluate(const ModelCheckpoint& ckpt, const Matrix& rows, const std::vector<long>& labels) {
  if (rows.rows == 0) throw ContractError("evaluate: empty row set");
  const Matrix logits = forward_logits(ckpt.spec, ckpt.params, rows);
  long correct = 0;
  for (long r = 0; r < logits.rows; ++r) {
    long best = 0;
    for (long c = 1; c < logits.cols; ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;  // ties keep the lower index
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

std::vector<double> per_row_ce(const ModelCheckpoint& ckpt, const Matrix& rows,
                               const std::vector<long>& labels) {
  return output_features_plain(ckpt.spec, ckpt.params, rows, labels, FeatureMode::kLoss).v;
}

void save_ckpt(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("save_ckpt: cannot open '" + path + "' for writing");
  out << "sgunlearn-ckpt v1\n";
  out << "layers";
  for (long d : ckpt.spec.layer_dims) out << " " << d;
  out << "\nseed " << ckpt.spec.seed << "\nepochs " << ckpt.epochs_trained << "\ndigest "
      << (ckpt.config_digest.empty() ? "-" : ckpt.config_digest) << "\nparams "
      << ckpt.params.size() << "\n";
  char buf[64];
  for (double p : ckpt.params) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out << buf << "\n";
  }
  if (!out) throw ContractError("save_ckpt: write to '" + path + "' failed");
}

namespace {

std::string expect_line(std::ifstream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(std::string("checkpoint truncated before ") + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

ModelCheckpoint load_ckpt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("load_ckpt: cannot open '" + path + "'");
  if (expect_line(in, "header") != "sgunlearn-ckpt v1")
    throw ParseError("checkpoint header mismatch: expected 'sgunlearn-ckpt v1'");

  ModelCheckpoint ckpt;
  {
    std::istringstream is(expect_line(in, "layers"));
    std::string tag;
    is >> tag;
    if (tag != "layers") throw ParseError("checkpoint: expected 'layers' line");
    long d;
    while (is >> d) ckpt.spec.layer_dims.push_back(d);
    if (ckpt.spec.layer_dims.size() < 2) throw ParseError("checkpoint: bad layer list");
  }
  auto tagged = [&](const char* tag) {
    std::istringstream is(expect_line(in, tag));
    std::string t, value;
    is >> t >> value;
    if (t != tag || value.empty())
      throw ParseError(std::string("checkpoint: expected '") + tag + "' line");
    return value;
  };
  ckpt.seed = std::stoull(tagged("seed"));
  ckpt.spec.seed = ckpt.seed;
  ckpt.epochs_trained = std::stol(tagged("epochs"));
  ckpt.config_digest = tagged("digest");
  if (ckpt.config_digest == "-") ckpt.config_digest.clear();
  const long n = std::stol(tagged("params"));
  if (n != param_count(ckpt.spec)) throw ParseError("checkpoint: params count does not match spec");
  ckpt.params.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const std::string line = expect_line(in, "parameter values");
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || *end != '\0')
      throw ParseError("checkpoint: bad parameter value '" + line + "'");
    ckpt.params.push_back(v);
  }
  return ckpt;
}

}  // namespace sgu
