#include "sgunlearn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

namespace sgu::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

void check_finite(const std::vector<double>& values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(where) + " produced a non-finite value");
  }
}

double stable_softplus_neg(double x) {
  // log(1 + exp(-x)) without overflow.
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

double stable_sigmoid_neg(double x) {
  // sigmoid(-x) = 1 / (1 + exp(x))
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

}  // namespace

long shape_numel(const Shape& shape) {
  long n = 1;
  for (long d : shape) {
    if (d <= 0) throw ContractError("Tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSoftmaxCe: return "softmax_ce";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLogisticLoss: return "logistic_loss";
    case OpKind::kCustom: return "custom";
  }
  return "?";
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<long>(values.size()))
    throw ContractError("Tensor: shape does not match value count");
  check_finite(values, "Tensor constant");
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("Tensor::item: tensor is not scalar");
  return (*data_)[0];
}

// --- Tape ------------------------------------------------------------------

int Tape::push_node(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::wrap(int id) {
  Tensor t;
  t.shape_ = nodes_[static_cast<std::size_t>(id)].shape;
  t.data_ = nodes_[static_cast<std::size_t>(id)].out;
  t.tape_ = this;
  t.node_ = id;
  return t;
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<long>(values.size()))
    throw ContractError("Tape::leaf: shape does not match value count");
  check_finite(values, "leaf");
  Node n;
  n.op = OpKind::kLeaf;
  n.shape = shape;
  n.out = std::make_shared<std::vector<double>>(std::move(values));
  return wrap(push_node(std::move(n)));
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.leaf_grad.clear();
}

Tensor Tape::custom_scalar(const std::vector<Tensor>& inputs, double value,
                           std::function<std::vector<std::vector<double>>(double)> backward_fn) {
  if (!std::isfinite(value)) throw NumericError("custom produced a non-finite value");
  Node n;
  n.op = OpKind::kCustom;
  n.shape = {1};
  n.out = std::make_shared<std::vector<double>>(1, value);
  n.custom_back = std::move(backward_fn);
  for (const Tensor& t : inputs) {
    if (t.tape() != nullptr && t.tape() != this)
      throw ContractError("custom: input belongs to a different tape");
    n.parents.push_back({t.node(), t.shape(), t.data_});
  }
  return wrap(push_node(std::move(n)));
}

// --- op construction helpers -------------------------------------------------

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->tape() == nullptr) continue;
    if (tape == nullptr) tape = t->tape();
    else if (tape != t->tape()) throw ContractError("op inputs belong to different tapes");
  }
  return tape;
}

}  // namespace

struct OpBuilder {
  // Builds the result tensor: on the inputs' tape when any input requires
  // grad, otherwise a free constant.
  static Tensor make(OpKind op, std::initializer_list<const Tensor*> inputs, Shape shape,
                     std::vector<double> out, std::vector<double> aux = {},
                     std::vector<long> iaux = {}) {
    check_finite(out, op_name(op));
    Tape* tape = common_tape(inputs);
    if (tape == nullptr) {
      Tensor t;
      t.shape_ = std::move(shape);
      t.data_ = std::make_shared<std::vector<double>>(std::move(out));
      return t;
    }
    Tape::Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.out = std::make_shared<std::vector<double>>(std::move(out));
    n.aux = std::move(aux);
    n.iaux = std::move(iaux);
    for (const Tensor* t : inputs) n.parents.push_back({t->node(), t->shape(), t->data_});
    return tape->wrap(tape->push_node(std::move(n)));
  }
};

// --- forward ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw ContractError("matmul: left operand must be rank 2");
  const long m = a.shape()[0], k = a.shape()[1];
  if (b.rank() == 2) {
    if (b.shape()[0] != k) throw ContractError("matmul: inner dimensions disagree");
    const long n = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m * n));
    CMap am(a.values().data(), m, k);
    CMap bm(b.values().data(), k, n);
    MMap om(out.data(), m, n);
    om.noalias() = am * bm;
    return OpBuilder::make(OpKind::kMatMul, {&a, &b}, {m, n}, std::move(out));
  }
  if (b.rank() == 1) {
    if (b.shape()[0] != k) throw ContractError("matmul: inner dimensions disagree");
    std::vector<double> out(static_cast<std::size_t>(m));
    CMap am(a.values().data(), m, k);
    Eigen::Map<const Eigen::VectorXd> bv(b.values().data(), k);
    Eigen::Map<Eigen::VectorXd> ov(out.data(), m);
    ov.noalias() = am * bv;
    return OpBuilder::make(OpKind::kMatMul, {&a, &b}, {m}, std::move(out));
  }
  throw ContractError("matmul: right operand must be rank 1 or 2");
}

namespace {
enum class Broadcast { kNone, kScalarRight, kScalarLeft, kRowRight };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, bool allow_row) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kScalarRight;
  if (a.numel() == 1) return Broadcast::kScalarLeft;
  if (allow_row && a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1])
    return Broadcast::kRowRight;
  throw ContractError("add/mul: incompatible shapes");
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, true);
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();
  std::vector<double> out;
  Shape shape;
  switch (mode) {
    case Broadcast::kNone:
      shape = a.shape();
      out.resize(av.size());
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case Broadcast::kScalarRight:
      shape = a.shape();
      out.resize(av.size());
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[0];
      break;
    case Broadcast::kScalarLeft:
      shape = b.shape();
      out.resize(bv.size());
      for (std::size_t i = 0; i < bv.size(); ++i) out[i] = av[0] + bv[i];
      break;
    case Broadcast::kRowRight: {
      shape = a.shape();
      const long rows = a.shape()[0], cols = a.shape()[1];
      out.resize(av.size());
      for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c)
          out[static_cast<std::size_t>(r * cols + c)] =
              av[static_cast<std::size_t>(r * cols + c)] + bv[static_cast<std::size_t>(c)];
      break;
    }
  }
  return OpBuilder::make(OpKind::kAdd, {&a, &b}, std::move(shape), std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, false);
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();
  std::vector<double> out;
  Shape shape;
  switch (mode) {
    case Broadcast::kNone:
      shape = a.shape();
      out.resize(av.size());
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case Broadcast::kScalarRight:
      shape = a.shape();
      out.resize(av.size());
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[0];
      break;
    case Broadcast::kScalarLeft:
      shape = b.shape();
      out.resize(bv.size());
      for (std::size_t i = 0; i < bv.size(); ++i) out[i] = av[0] * bv[i];
      break;
    default:
      throw ContractError("mul: incompatible shapes");
  }
  return OpBuilder::make(OpKind::kMul, {&a, &b}, std::move(shape), std::move(out));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  return OpBuilder::make(OpKind::kRelu, {&x}, x.shape(), std::move(out));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid_neg(-x.values()[i]);
  // save outputs for the backward rule
  return OpBuilder::make(OpKind::kSigmoid, {&x}, x.shape(), out, out);
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
  return OpBuilder::make(OpKind::kLog, {&x}, x.shape(), std::move(out));
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return OpBuilder::make(OpKind::kExp, {&x}, x.shape(), out, out);
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return OpBuilder::make(OpKind::kMean, {&x}, {1}, {s / static_cast<double>(x.numel())});
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return OpBuilder::make(OpKind::kSum, {&x}, {1}, {s});
}

Tensor gather_rows(const Tensor& x, const std::vector<long>& indices) {
  if (x.rank() != 1 && x.rank() != 2) throw ContractError("gather_rows: rank must be 1 or 2");
  if (indices.empty()) throw ContractError("gather_rows: empty index set");
  const long rows = x.shape()[0];
  const long cols = x.rank() == 2 ? x.shape()[1] : 1;
  for (long i : indices)
    if (i < 0 || i >= rows) throw ContractError("gather_rows: index out of range");
  std::vector<double> out(indices.size() * static_cast<std::size_t>(cols));
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (long c = 0; c < cols; ++c)
      out[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)] =
          x.values()[static_cast<std::size_t>(indices[r] * cols + c)];
  Shape shape = x.rank() == 2 ? Shape{static_cast<long>(indices.size()), cols}
                              : Shape{static_cast<long>(indices.size())};
  return OpBuilder::make(OpKind::kGatherRows, {&x}, std::move(shape), std::move(out), {}, indices);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw ContractError("concat_cols: left operand must be rank 2");
  const long m = a.shape()[0];
  const long p = a.shape()[1];
  long q = 0;
  if (b.rank() == 2 && b.shape()[0] == m) q = b.shape()[1];
  else if (b.rank() == 1 && b.shape()[0] == m) q = 1;
  else throw ContractError("concat_cols: row counts disagree");
  std::vector<double> out(static_cast<std::size_t>(m * (p + q)));
  for (long r = 0; r < m; ++r) {
    for (long c = 0; c < p; ++c)
      out[static_cast<std::size_t>(r * (p + q) + c)] = a.values()[static_cast<std::size_t>(r * p + c)];
    for (long c = 0; c < q; ++c)
      out[static_cast<std::size_t>(r * (p + q) + p + c)] =
          b.values()[static_cast<std::size_t>(r * q + c)];
  }
  return OpBuilder::make(OpKind::kConcatCols, {&a, &b}, {m, p + q}, std::move(out));
}

Tensor softmax_ce(const Tensor& logits, const std::vector<long>& targets) {
  if (logits.rank() != 2) throw ContractError("softmax_ce: logits must be rank 2");
  const long n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<long>(targets.size()) != n)
    throw ContractError("softmax_ce: target count does not match row count");
  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  for (long i = 0; i < n; ++i) {
    if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= k)
      throw ContractError("softmax_ce: target out of range");
    const double* row = logits.values().data() + i * k;
    double mx = row[0];
    for (long c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (long c = 0; c < k; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    out[static_cast<std::size_t>(i)] = lse - row[targets[static_cast<std::size_t>(i)]];
    for (long c = 0; c < k; ++c)
      probs[static_cast<std::size_t>(i * k + c)] = std::exp(row[c] - lse);
  }
  return OpBuilder::make(OpKind::kSoftmaxCe, {&logits}, {n, 1}, std::move(out), std::move(probs),
                         targets);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ContractError("softmax_rows: logits must be rank 2");
  const long n = logits.shape()[0], k = logits.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(n * k));
  for (long i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * k;
    double mx = row[0];
    for (long c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (long c = 0; c < k; ++c) se += std::exp(row[c] - mx);
    for (long c = 0; c < k; ++c)
      out[static_cast<std::size_t>(i * k + c)] = std::exp(row[c] - mx) / se;
  }
  return OpBuilder::make(OpKind::kSoftmaxRows, {&logits}, {n, k}, out, out);
}

Tensor logistic_loss(const Tensor& margins) {
  double s = 0.0;
  for (double m : margins.values()) s += stable_softplus_neg(m);
  return OpBuilder::make(OpKind::kLogisticLoss, {&margins}, {1},
                         {s / static_cast<double>(margins.numel())});
}

// --- backward ---------------------------------------------------------------

namespace {

void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

void Tape::backward(const Tensor& root) {
  if (root.tape() != this) throw ContractError("backward: root is not on this tape");
  if (root.numel() != 1) throw ContractError("backward: root must be scalar");

  const int root_id = root.node();
  std::vector<std::vector<double>> g(static_cast<std::size_t>(root_id) + 1);
  g[static_cast<std::size_t>(root_id)] = {1.0};

  auto grad_into = [&](const Parent& p) -> std::vector<double>* {
    if (p.id < 0) return nullptr;
    auto& buf = g[static_cast<std::size_t>(p.id)];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(shape_numel(p.shape)), 0.0);
    return &buf;
  };

  for (int i = root_id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    std::vector<double>& gi = g[static_cast<std::size_t>(i)];
    if (gi.empty()) continue;

    switch (n.op) {
      case OpKind::kLeaf: {
        if (n.leaf_grad.empty()) n.leaf_grad.assign(gi.size(), 0.0);
        axpy(n.leaf_grad, gi);
        break;
      }
      case OpKind::kMatMul: {
        const Parent& pa = n.parents[0];
        const Parent& pb = n.parents[1];
        const long m = pa.shape[0], k = pa.shape[1];
        if (pb.shape.size() == 2) {
          const long c = pb.shape[1];
          CMap am(pa.vals->data(), m, k);
          CMap bm(pb.vals->data(), k, c);
          CMap gm(gi.data(), m, c);
          if (auto* da = grad_into(pa)) {
            MMap dam(da->data(), m, k);
            dam.noalias() += gm * bm.transpose();
          }
          if (auto* db = grad_into(pb)) {
            MMap dbm(db->data(), k, c);
            dbm.noalias() += am.transpose() * gm;
          }
        } else {
          CMap am(pa.vals->data(), m, k);
          Eigen::Map<const Eigen::VectorXd> bv(pb.vals->data(), k);
          Eigen::Map<const Eigen::VectorXd> gv(gi.data(), m);
          if (auto* da = grad_into(pa)) {
            MMap dam(da->data(), m, k);
            dam.noalias() += gv * bv.transpose();
          }
          if (auto* db = grad_into(pb)) {
            Eigen::Map<Eigen::VectorXd> dbv(db->data(), k);
            dbv.noalias() += am.transpose() * gv;
          }
        }
        break;
      }
      case OpKind::kAdd: {
        const Parent& pa = n.parents[0];
        const Parent& pb = n.parents[1];
        auto reduce_into = [&](const Parent& p) {
          auto* dp = grad_into(p);
          if (dp == nullptr) return;
          const long pn = shape_numel(p.shape);
          if (pn == static_cast<long>(gi.size())) {
            axpy(*dp, gi);
          } else if (pn == 1) {
            double s = 0.0;
            for (double v : gi) s += v;
            (*dp)[0] += s;
          } else {
            // row-broadcast bias: column sums
            const long cols = p.shape[0];
            const long rows = static_cast<long>(gi.size()) / cols;
            for (long r = 0; r < rows; ++r)
              for (long c = 0; c < cols; ++c)
                (*dp)[static_cast<std::size_t>(c)] += gi[static_cast<std::size_t>(r * cols + c)];
          }
        };
        reduce_into(pa);
        reduce_into(pb);
        break;
      }
      case OpKind::kMul: {
        const Parent& pa = n.parents[0];
        const Parent& pb = n.parents[1];
        const bool a_scalar = shape_numel(pa.shape) == 1 && gi.size() > 1;
        const bool b_scalar = shape_numel(pb.shape) == 1 && gi.size() > 1;
        if (auto* da = grad_into(pa)) {
          if (a_scalar) {
            double s = 0.0;
            for (std::size_t j = 0; j < gi.size(); ++j) s += gi[j] * (*pb.vals)[j];
            (*da)[0] += s;
          } else {
            for (std::size_t j = 0; j < gi.size(); ++j)
              (*da)[j] += gi[j] * (*pb.vals)[b_scalar ? 0 : j];
          }
        }
        if (auto* db = grad_into(pb)) {
          if (b_scalar) {
            double s = 0.0;
            for (std::size_t j = 0; j < gi.size(); ++j) s += gi[j] * (*pa.vals)[j];
            (*db)[0] += s;
          } else {
            for (std::size_t j = 0; j < gi.size(); ++j)
              (*db)[j] += gi[j] * (*pa.vals)[a_scalar ? 0 : j];
          }
        }
        break;
      }
      case OpKind::kRelu: {
        if (auto* dx = grad_into(n.parents[0])) {
          const std::vector<double>& x = *n.parents[0].vals;
          for (std::size_t j = 0; j < gi.size(); ++j)
            if (x[j] > 0.0) (*dx)[j] += gi[j];
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (auto* dx = grad_into(n.parents[0])) {
          for (std::size_t j = 0; j < gi.size(); ++j)
            (*dx)[j] += gi[j] * n.aux[j] * (1.0 - n.aux[j]);
        }
        break;
      }
      case OpKind::kLog: {
        if (auto* dx = grad_into(n.parents[0])) {
          const std::vector<double>& x = *n.parents[0].vals;
          for (std::size_t j = 0; j < gi.size(); ++j) (*dx)[j] += gi[j] / x[j];
        }
        break;
      }
      case OpKind::kExp: {
        if (auto* dx = grad_into(n.parents[0])) {
          for (std::size_t j = 0; j < gi.size(); ++j) (*dx)[j] += gi[j] * n.aux[j];
        }
        break;
      }
      case OpKind::kMean: {
        if (auto* dx = grad_into(n.parents[0])) {
          const double s = gi[0] / static_cast<double>(dx->size());
          for (double& v : *dx) v += s;
        }
        break;
      }
      case OpKind::kSum: {
        if (auto* dx = grad_into(n.parents[0])) {
          for (double& v : *dx) v += gi[0];
        }
        break;
      }
      case OpKind::kGatherRows: {
        if (auto* dx = grad_into(n.parents[0])) {
          const long cols = n.parents[0].shape.size() == 2 ? n.parents[0].shape[1] : 1;
          for (std::size_t r = 0; r < n.iaux.size(); ++r)
            for (long c = 0; c < cols; ++c)
              (*dx)[static_cast<std::size_t>(n.iaux[r] * cols + c)] +=
                  gi[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
        }
        break;
      }
      case OpKind::kConcatCols: {
        const long m = n.shape[0];
        const long total = n.shape[1];
        const long p = n.parents[0].shape[1];
        const long q = total - p;
        if (auto* da = grad_into(n.parents[0])) {
          for (long r = 0; r < m; ++r)
            for (long c = 0; c < p; ++c)
              (*da)[static_cast<std::size_t>(r * p + c)] +=
                  gi[static_cast<std::size_t>(r * total + c)];
        }
        if (auto* db = grad_into(n.parents[1])) {
          for (long r = 0; r < m; ++r)
            for (long c = 0; c < q; ++c)
              (*db)[static_cast<std::size_t>(r * q + c)] +=
                  gi[static_cast<std::size_t>(r * total + p + c)];
        }
        break;
      }
      case OpKind::kSoftmaxCe: {
        if (auto* dz = grad_into(n.parents[0])) {
          const long nrows = n.shape[0];
          const long k = n.parents[0].shape[1];
          for (long r = 0; r < nrows; ++r) {
            const double gr = gi[static_cast<std::size_t>(r)];
            for (long c = 0; c < k; ++c)
              (*dz)[static_cast<std::size_t>(r * k + c)] +=
                  gr * (n.aux[static_cast<std::size_t>(r * k + c)] -
                        (c == n.iaux[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
          }
        }
        break;
      }
      case OpKind::kSoftmaxRows: {
        if (auto* dz = grad_into(n.parents[0])) {
          const long nrows = n.shape[0];
          const long k = n.shape[1];
          for (long r = 0; r < nrows; ++r) {
            double dot = 0.0;
            for (long c = 0; c < k; ++c)
              dot += gi[static_cast<std::size_t>(r * k + c)] * n.aux[static_cast<std::size_t>(r * k + c)];
            for (long c = 0; c < k; ++c)
              (*dz)[static_cast<std::size_t>(r * k + c)] +=
                  n.aux[static_cast<std::size_t>(r * k + c)] *
                  (gi[static_cast<std::size_t>(r * k + c)] - dot);
          }
        }
        break;
      }
      case OpKind::kLogisticLoss: {
        if (auto* dx = grad_into(n.parents[0])) {
          const std::vector<double>& x = *n.parents[0].vals;
          const double inv_n = 1.0 / static_cast<double>(x.size());
          for (std::size_t j = 0; j < x.size(); ++j)
            (*dx)[j] += -gi[0] * inv_n * stable_sigmoid_neg(x[j]);
        }
        break;
      }
      case OpKind::kCustom: {
        std::vector<std::vector<double>> grads = n.custom_back(gi[0]);
        if (grads.size() != n.parents.size())
          throw ContractError("custom backward returned wrong input count");
        for (std::size_t p = 0; p < grads.size(); ++p) {
          check_finite(grads[p], "custom backward");
          if (auto* dp = grad_into(n.parents[p])) {
            if (dp->size() != grads[p].size())
              throw ContractError("custom backward returned wrong gradient size");
            axpy(*dp, grads[p]);
          }
        }
        break;
      }
    }
    if (i != root_id) gi.clear();  // free scratch as the sweep passes
  }
}

bool Tensor::has_grad() const {
  if (tape_ == nullptr) return false;
  const auto& node = tape_->nodes_[static_cast<std::size_t>(node_)];
  return node.op == OpKind::kLeaf && !node.leaf_grad.empty();
}

const std::vector<double>& Tensor::grad() const {
  if (tape_ == nullptr) throw ContractError("Tensor::grad: tensor is not on a tape");
  const auto& node = tape_->nodes_[static_cast<std::size_t>(node_)];
  if (node.op != OpKind::kLeaf) throw ContractError("Tensor::grad: gradients are kept on leaves only");
  if (node.leaf_grad.empty()) throw ContractError("Tensor::grad: no gradient accumulated");
  return node.leaf_grad;
}

}  // namespace sgu::ad
