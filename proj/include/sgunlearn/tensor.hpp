#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sgunlearn/errors.hpp"

namespace sgu::ad {

using Shape = std::vector<long>;

long shape_numel(const Shape& shape);

class Tape;

// Dense row-major 64-bit tensor. A tensor either lives on a tape (created by
// Tape::leaf or as an op result with at least one tape input) or is a free
// constant. Values are validated to be finite at every operation boundary.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);  // constant
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  long rank() const { return static_cast<long>(shape_.size()); }
  long numel() const { return shape_numel(shape_); }
  const std::vector<double>& values() const { return *data_; }
  double item() const;

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Accumulated gradient of the most recent backward() passes. Leaves only.
  bool has_grad() const;
  const std::vector<double>& grad() const;

 private:
  friend class Tape;
  friend struct OpBuilder;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kRelu,
  kSigmoid,
  kLog,
  kExp,
  kMean,
  kSum,
  kGatherRows,
  kConcatCols,
  kSoftmaxCe,
  kSoftmaxRows,
  kLogisticLoss,
  kCustom,
};

const char* op_name(OpKind op);

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order, so one backward sweep from the root id downward visits
// every node exactly once. Single-threaded.
class Tape {
 public:
  Tensor leaf(Shape shape, std::vector<double> values);

  // Backpropagates d(root)/d(leaf) into every leaf. Repeated calls without
  // zero_grad() accumulate. root must be a scalar on this tape.
  void backward(const Tensor& root);
  void zero_grad();

  // Scalar node with a caller-supplied backward rule: the callback receives
  // the upstream gradient and returns one flat gradient buffer per input.
  Tensor custom_scalar(const std::vector<Tensor>& inputs, double value,
                       std::function<std::vector<std::vector<double>>(double)> backward_fn);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Parent {
    int id = -1;  // -1 for constant inputs (no gradient flow)
    Shape shape;
    std::shared_ptr<std::vector<double>> vals;
  };
  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<Parent> parents;
    Shape shape;
    std::shared_ptr<std::vector<double>> out;
    std::vector<double> aux;   // saved forward values needed by the backward rule
    std::vector<long> iaux;    // integer payload (gather indices, CE targets)
    std::function<std::vector<std::vector<double>>(double)> custom_back;
    std::vector<double> leaf_grad;
  };

  int push_node(Node node);
  Tensor wrap(int id);

  std::vector<Node> nodes_;

  friend class Tensor;
  friend struct OpBuilder;
};

// Op set. Closed: a new op requires a paired finite-difference test.
Tensor matmul(const Tensor& a, const Tensor& b);  // {m,k}@{k,n} or {m,k}@{k}
Tensor add(const Tensor& a, const Tensor& b);     // same shape, scalar, or {m,n}+{n}
Tensor mul(const Tensor& a, const Tensor& b);     // same shape or scalar on either side
Tensor relu(const Tensor& x);                     // relu'(0) = 0
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor mean(const Tensor& x);  // full reduction to {1}
Tensor sum(const Tensor& x);   // full reduction to {1}
Tensor gather_rows(const Tensor& x, const std::vector<long>& indices);
Tensor concat_cols(const Tensor& a, const Tensor& b);  // rank-1 b treated as a column
// Per-row cross entropy of row-softmax against integer targets; returns {n,1}.
Tensor softmax_ce(const Tensor& logits, const std::vector<long>& targets);
Tensor softmax_rows(const Tensor& logits);
// Mean over elements of log(1 + exp(-x)); returns {1}.
Tensor logistic_loss(const Tensor& margins);

}  // namespace sgu::ad
