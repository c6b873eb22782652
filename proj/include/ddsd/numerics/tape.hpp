#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ddsd/numerics/matrix.hpp"

// Define-by-run reverse-mode automatic differentiation over Matrix values.
//
// A Tape records every op in creation order, which is a topological order of
// the graph, so backward() is a single reverse sweep. Graphs are built per
// minibatch and thrown away with the tape.

namespace ddsd::num {

// A named trainable tensor. Gradients never live here; they are read back
// from the tape that the parameter was bound into.
struct Parameter {
  std::string name;
  Matrix value;
};

enum class Op : std::uint8_t {
  Constant,
  External,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Tanh,
  Sigmoid,
  SoftmaxRows,
  SliceCols,
  SliceRows,
  ConcatCols,
  ConcatRows,
  Sum,
  Scale,
  SequenceMean,
  BceWithLogits,
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct Node {
  Op op = Op::Constant;
  Matrix value;
  const Matrix* external = nullptr;
  Matrix grad;
  std::vector<int> parents;
  bool requires_grad = false;
  std::size_t arg0 = 0;
  std::size_t arg1 = 0;
  double scalar = 0.0;
  Matrix aux;

  const Matrix& val() const { return external ? *external : value; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf owned by the tape; no gradient.
  Var constant(Matrix value);
  // Leaf viewing caller-owned storage (must outlive the tape); no gradient.
  Var external(const Matrix& value);
  // Trainable leaf. Binding the same parameter twice returns the same node.
  Var parameter(const Parameter& p);

  // Reverse sweep from a 1×1 loss. Every node gradient is reset to zero
  // first, so repeated calls give identical results.
  void backward(Var loss);

  // dLoss/dParam from the last backward(); zeros if the parameter was bound
  // but unreachable. Throws ContractError if it was never bound here.
  const Matrix& gradient(const Parameter& p) const;
  bool is_bound(const Parameter& p) const;

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Internal: used by op constructors.
  Var push(Node node);
  Node& mutable_node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  void backprop_node(Node& n);

  std::deque<Node> nodes_;  // deque: references to values stay valid while the graph grows
  std::unordered_map<const Matrix*, int> bound_;
  bool backward_done_ = false;
};

// Matrix product; a.cols must equal b.rows.
Var matmul(Var a, Var b);
// Elementwise ops. b may also be a 1×cols row (broadcast down rows) or a
// rows×1 column (broadcast across columns).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var tanh(Var x);
Var sigmoid(Var x);
Var scale(Var x, double factor);
// Row-wise softmax, max-subtracted. With a mask (same shape, 1 = keep),
// masked entries are exactly 0 and excluded from the normalisation.
Var softmax_rows(Var x);
Var softmax_rows(Var x, const Matrix& mask);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Sum of all entries as a 1×1.
Var sum(Var x);
// frames is a (T·B)×D stack, time-major (row t*B+b). Returns the B×D mean of
// the first lengths[b] frames of each sequence. Frames are summed in a
// canonical order (sorted by content), making the result bit-exactly
// invariant under reordering of a sequence's frames.
Var sequence_mean(Var frames, std::size_t batch, std::span<const std::size_t> lengths);
// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels (B×1).
// Probabilities are clamped to [1e-12, 1-1e-12]; d/dlogit = (p - y)/B.
Var bce_with_logits(Var logits, const Matrix& labels);

}  // namespace ddsd::num
