#include "ddsd/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ddsd/errors.hpp"
#include "ddsd/numerics/kernels.hpp"

namespace ddsd::num {

namespace {

enum Broadcast : std::size_t { kSame = 0, kRow = 1, kCol = 2 };

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw ContractError("operands must live on the same tape");
  }
  return *a.tape();
}

Broadcast broadcast_mode(const Matrix& a, const Matrix& b, const char* op) {
  if (a.same_shape(b)) return kSame;
  if (b.rows() == 1 && b.cols() == a.cols()) return kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return kCol;
  throw DimensionError(std::string(op) + " shape mismatch: " + shape(a) + " vs " + shape(b));
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <class F>
Var elementwise_binary(Op op, Var a, Var b, const char* name, F f) {
  Tape& tape = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, name);
  Node n;
  n.op = op;
  n.arg0 = mode;
  n.parents = {a.id(), b.id()};
  n.value = Matrix(av.rows(), av.cols());
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double y = mode == kSame ? bv(r, c) : mode == kRow ? bv(0, c) : bv(r, 0);
      n.value(r, c) = f(av(r, c), y);
    }
  }
  return tape.push(std::move(n));
}

Var unary(Op op, Var x, double (*f)(double)) {
  Node n;
  n.op = op;
  n.parents = {x.id()};
  const Matrix& xv = x.value();
  n.value = Matrix(xv.rows(), xv.cols());
  auto src = xv.values();
  auto dst = n.value.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return x.tape()->push(std::move(n));
}

// Reduce a full-shape gradient into a broadcast operand's gradient.
void accumulate_broadcast(const Matrix& g, Broadcast mode, Matrix& target, const Matrix* factor,
                          const Matrix* factor_b) {
  // factor: per-element multiplier with g's shape (nullptr = 1).
  // factor_b: multiplier shaped like target (for mul's b broadcast over a).
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = g(r, c);
      if (factor) v *= (*factor)(r, c);
      if (factor_b) {
        v *= mode == kSame ? (*factor_b)(r, c) : mode == kRow ? (*factor_b)(0, c) : (*factor_b)(r, 0);
      }
      switch (mode) {
        case kSame:
          target(r, c) += v;
          break;
        case kRow:
          target(0, c) += v;
          break;
        case kCol:
          target(r, 0) += v;
          break;
      }
    }
  }
}

}  // namespace

const Matrix& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->node(id_).val();
}

const Matrix& Var::grad() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->node(id_).grad;
}

Var Tape::push(Node node) {
  if (node.op != Op::Constant && node.op != Op::External && node.op != Op::Parameter) {
    node.requires_grad = std::any_of(node.parents.begin(), node.parents.end(),
                                     [this](int p) { return nodes_[p].requires_grad; });
  }
  nodes_.push_back(std::move(node));
  backward_done_ = false;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::external(const Matrix& value) {
  Node n;
  n.op = Op::External;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = bound_.find(&p.value); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.op = Op::Parameter;
  n.external = &p.value;
  n.requires_grad = true;
  Var v = push(std::move(n));
  bound_.emplace(&p.value, v.id());
  return v;
}

bool Tape::is_bound(const Parameter& p) const { return bound_.contains(&p.value); }

const Matrix& Tape::gradient(const Parameter& p) const {
  auto it = bound_.find(&p.value);
  if (it == bound_.end()) throw ContractError("parameter '" + p.name + "' is not bound to this tape");
  if (!backward_done_) throw ContractError("gradient requested before backward()");
  return nodes_[static_cast<std::size_t>(it->second)].grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss does not belong to this tape");
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward requires a scalar (1x1) loss, got " + shape(lv));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      const Matrix& v = n.val();
      if (n.grad.same_shape(v)) {
        n.grad.fill(0.0);
      } else {
        n.grad = Matrix(v.rows(), v.cols());
      }
    } else {
      n.grad = Matrix();
    }
  }
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (root.requires_grad) {
    root.grad(0, 0) = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad) backprop_node(n);
    }
  }
  backward_done_ = true;
}

void Tape::backprop_node(Node& n) {
  const auto& k = kernels::active();
  auto parent = [this, &n](std::size_t i) -> Node& {
    return nodes_[static_cast<std::size_t>(n.parents[i])];
  };
  switch (n.op) {
    case Op::Constant:
    case Op::External:
    case Op::Parameter:
      return;
    case Op::MatMul: {
      Node& a = parent(0);
      Node& b = parent(1);
      if (a.requires_grad) gemm_nt_acc(n.grad, b.val(), a.grad);
      if (b.requires_grad) gemm_tn_acc(a.val(), n.grad, b.grad);
      return;
    }
    case Op::Add:
    case Op::Sub: {
      Node& a = parent(0);
      Node& b = parent(1);
      if (a.requires_grad) k.axpy(1.0, n.grad.data(), a.grad.data(), n.grad.size());
      if (b.requires_grad) {
        if (n.op == Op::Add) {
          accumulate_broadcast(n.grad, static_cast<Broadcast>(n.arg0), b.grad, nullptr, nullptr);
        } else {
          Matrix neg = n.grad;
          for (double& v : neg.values()) v = -v;
          accumulate_broadcast(neg, static_cast<Broadcast>(n.arg0), b.grad, nullptr, nullptr);
        }
      }
      return;
    }
    case Op::Mul: {
      Node& a = parent(0);
      Node& b = parent(1);
      const auto mode = static_cast<Broadcast>(n.arg0);
      if (a.requires_grad) {
        if (mode == kSame) {
          k.mul_acc(n.grad.data(), b.val().data(), a.grad.data(), n.grad.size());
        } else {
          const Matrix& bv = b.val();
          for (std::size_t r = 0; r < n.grad.rows(); ++r)
            for (std::size_t c = 0; c < n.grad.cols(); ++c)
              a.grad(r, c) += n.grad(r, c) * (mode == kRow ? bv(0, c) : bv(r, 0));
        }
      }
      if (b.requires_grad) accumulate_broadcast(n.grad, mode, b.grad, &a.val(), nullptr);
      return;
    }
    case Op::Tanh: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      auto g = n.grad.values();
      auto y = n.value.values();
      auto dx = x.grad.values();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::Sigmoid: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      auto g = n.grad.values();
      auto y = n.value.values();
      auto dx = x.grad.values();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::Scale: {
      Node& x = parent(0);
      if (x.requires_grad) k.axpy(n.scalar, n.grad.data(), x.grad.data(), n.grad.size());
      return;
    }
    case Op::SoftmaxRows: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      const std::size_t cols = n.value.cols();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const double* y = n.value.data() + r * cols;
        const double* g = n.grad.data() + r * cols;
        const double inner = k.dot(y, g, cols);
        double* dx = x.grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - inner);
      }
      return;
    }
    case Op::SliceCols: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      for (std::size_t r = 0; r < n.grad.rows(); ++r) {
        k.axpy(1.0, n.grad.data() + r * n.arg1, x.grad.data() + r * x.grad.cols() + n.arg0, n.arg1);
      }
      return;
    }
    case Op::SliceRows: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      k.axpy(1.0, n.grad.data(), x.grad.data() + n.arg0 * x.grad.cols(), n.grad.size());
      return;
    }
    case Op::ConcatCols: {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        Node& p = parent(i);
        const std::size_t pc = p.val().cols();
        if (p.requires_grad) {
          for (std::size_t r = 0; r < n.grad.rows(); ++r) {
            k.axpy(1.0, n.grad.data() + r * n.grad.cols() + offset, p.grad.data() + r * pc, pc);
          }
        }
        offset += pc;
      }
      return;
    }
    case Op::ConcatRows: {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        Node& p = parent(i);
        const std::size_t count = p.val().size();
        if (p.requires_grad) k.axpy(1.0, n.grad.data() + offset, p.grad.data(), count);
        offset += count;
      }
      return;
    }
    case Op::Sum: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      const double g = n.grad(0, 0);
      for (double& v : x.grad.values()) v += g;
      return;
    }
    case Op::SequenceMean: {
      Node& x = parent(0);
      if (!x.requires_grad) return;
      const std::size_t batch = n.value.rows();
      const std::size_t cols = n.value.cols();
      for (std::size_t b = 0; b < batch; ++b) {
        const auto len = static_cast<std::size_t>(n.aux(b, 0));
        const double w = 1.0 / static_cast<double>(len);
        for (std::size_t t = 0; t < len; ++t) {
          k.axpy(w, n.grad.data() + b * cols, x.grad.data() + (t * batch + b) * cols, cols);
        }
      }
      return;
    }
    case Op::BceWithLogits: {
      Node& z = parent(0);
      if (!z.requires_grad) return;
      const double g = n.grad(0, 0);
      const std::size_t batch = n.aux.rows();
      const Matrix& zv = z.val();
      for (std::size_t b = 0; b < batch; ++b) {
        const double p = stable_sigmoid(zv(b, 0));
        z.grad(b, 0) += g * (p - n.aux(b, 0)) / static_cast<double>(batch);
      }
      return;
    }
  }
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + shape(av) + " * " + shape(bv));
  }
  Node n;
  n.op = Op::MatMul;
  n.parents = {a.id(), b.id()};
  n.value = Matrix(av.rows(), bv.cols());
  gemm_acc(av, bv, n.value);
  return tape.push(std::move(n));
}

Var add(Var a, Var b) {
  return elementwise_binary(Op::Add, a, b, "add", [](double x, double y) { return x + y; });
}

Var sub(Var a, Var b) {
  return elementwise_binary(Op::Sub, a, b, "sub", [](double x, double y) { return x - y; });
}

Var mul(Var a, Var b) {
  return elementwise_binary(Op::Mul, a, b, "mul", [](double x, double y) { return x * y; });
}

Var tanh(Var x) {
  return unary(Op::Tanh, x, [](double v) { return std::tanh(v); });
}

Var sigmoid(Var x) { return unary(Op::Sigmoid, x, stable_sigmoid); }

Var scale(Var x, double factor) {
  Node n;
  n.op = Op::Scale;
  n.scalar = factor;
  n.parents = {x.id()};
  n.value = x.value();
  for (double& v : n.value.values()) v *= factor;
  return x.tape()->push(std::move(n));
}

namespace {

Var softmax_impl(Var x, const Matrix* mask) {
  const Matrix& xv = x.value();
  if (xv.empty()) throw ContractError("softmax of an empty matrix");
  if (mask && !mask->same_shape(xv)) {
    throw DimensionError("softmax mask shape " + shape(*mask) + " does not match " + shape(xv));
  }
  Node n;
  n.op = Op::SoftmaxRows;
  n.parents = {x.id()};
  n.value = Matrix(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double hi = -INFINITY;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (!mask || (*mask)(r, c) != 0.0) hi = std::max(hi, xv(r, c));
    }
    if (hi == -INFINITY) throw ContractError("softmax row " + std::to_string(r) + " fully masked");
    double total = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      const double e = std::exp(xv(r, c) - hi);
      n.value(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) n.value(r, c) /= total;
  }
  return x.tape()->push(std::move(n));
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var softmax_rows(Var x, const Matrix& mask) { return softmax_impl(x, &mask); }

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Matrix& xv = x.value();
  if (start + count > xv.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape(xv));
  }
  Node n;
  n.op = Op::SliceCols;
  n.arg0 = start;
  n.arg1 = count;
  n.parents = {x.id()};
  n.value = Matrix(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    std::copy_n(xv.data() + r * xv.cols() + start, count, n.value.data() + r * count);
  }
  return x.tape()->push(std::move(n));
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Matrix& xv = x.value();
  if (start + count > xv.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape(xv));
  }
  Node n;
  n.op = Op::SliceRows;
  n.arg0 = start;
  n.arg1 = count;
  n.parents = {x.id()};
  n.value = Matrix(count, xv.cols(),
                   std::vector<double>(xv.data() + start * xv.cols(),
                                       xv.data() + (start + count) * xv.cols()));
  return x.tape()->push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape* tape = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw ContractError("operands must live on the same tape");
    if (p.rows() != rows) throw DimensionError("concat_cols row count mismatch");
    cols += p.cols();
  }
  Node n;
  n.op = Op::ConcatCols;
  n.value = Matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * pv.cols(), pv.cols(), n.value.data() + r * cols + offset);
    }
    offset += pv.cols();
    n.parents.push_back(p.id());
  }
  return tape->push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  Tape* tape = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw ContractError("operands must live on the same tape");
    if (p.cols() != cols) throw DimensionError("concat_rows column count mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  Node n;
  n.op = Op::ConcatRows;
  for (const Var& p : parts) {
    const auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
    n.parents.push_back(p.id());
  }
  n.value = Matrix(rows, cols, std::move(data));
  return tape->push(std::move(n));
}

Var sum(Var x) {
  Node n;
  n.op = Op::Sum;
  n.parents = {x.id()};
  const auto v = x.value().values();
  n.value = Matrix(1, 1, std::accumulate(v.begin(), v.end(), 0.0));
  return x.tape()->push(std::move(n));
}

Var sequence_mean(Var frames, std::size_t batch, std::span<const std::size_t> lengths) {
  const Matrix& fv = frames.value();
  if (batch == 0 || lengths.size() != batch || fv.rows() % batch != 0) {
    throw DimensionError("sequence_mean: " + shape(fv) + " is not a stack of batch " +
                         std::to_string(batch));
  }
  const std::size_t steps = fv.rows() / batch;
  const std::size_t cols = fv.cols();
  Node n;
  n.op = Op::SequenceMean;
  n.parents = {frames.id()};
  n.value = Matrix(batch, cols);
  n.aux = Matrix(batch, 1);
  std::vector<std::size_t> order;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths[b];
    if (len == 0 || len > steps) throw ContractError("sequence_mean: invalid sequence length");
    n.aux(b, 0) = static_cast<double>(len);
    order.resize(len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto row_of = [&](std::size_t t) { return fv.data() + (t * batch + b) * cols; };
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return std::lexicographical_compare(row_of(x), row_of(x) + cols, row_of(y), row_of(y) + cols);
    });
    double* out = n.value.data() + b * cols;
    for (std::size_t t : order) {
      const double* src = row_of(t);
      for (std::size_t c = 0; c < cols; ++c) out[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
  }
  return frames.tape()->push(std::move(n));
}

Var bce_with_logits(Var logits, const Matrix& labels) {
  const Matrix& zv = logits.value();
  if (zv.cols() != 1 || !zv.same_shape(labels)) {
    throw DimensionError("bce_with_logits expects Bx1 logits and labels, got " + shape(zv) +
                         " and " + shape(labels));
  }
  Node n;
  n.op = Op::BceWithLogits;
  n.parents = {logits.id()};
  n.aux = labels;
  double total = 0.0;
  for (std::size_t b = 0; b < zv.rows(); ++b) {
    const double p = std::clamp(stable_sigmoid(zv(b, 0)), 1e-12, 1.0 - 1e-12);
    const double y = labels(b, 0);
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  n.value = Matrix(1, 1, total / static_cast<double>(zv.rows()));
  return logits.tape()->push(std::move(n));
}

}  // namespace ddsd::num
