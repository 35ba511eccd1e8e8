#include "hyperimts/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace hyperimts {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<Tensor> inputs;
  std::function<void(const std::vector<double>&, std::vector<Tensor>&)> backward_fn;
};

}  // namespace detail

using detail::TensorNode;

namespace {

std::atomic<bool> g_finite_checks{false};
thread_local Tape* t_active_tape = nullptr;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_finite(const TensorNode& node, const char* op) {
  for (double v : node.values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op +
                         " with output shape " + shape_to_string(node.shape));
    }
  }
}

std::shared_ptr<TensorNode> make_leaf(std::vector<std::size_t> shape,
                                      std::vector<double> values,
                                      bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape) + " expects " +
                     std::to_string(shape_product(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->values.size(), 0.0);
  return node;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                     shape_to_string(t.shape()));
  }
}

thread_local std::vector<double> t_scratch;

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::constant(std::vector<std::size_t> shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return constant({1, 1}, {value}); }

Tensor Tensor::parameter(std::vector<std::size_t> shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf; }

const std::vector<double>& Tensor::values() const { return node_->values; }

double Tensor::value(std::size_t i) const {
  if (i >= node_->values.size()) {
    throw IndexError("value: index " + std::to_string(i) + " out of range for " +
                     std::to_string(node_->values.size()) + " elements");
  }
  return node_->values[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  return node_->values[r * node_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_->requires_grad) {
    throw ContractError("grad: tensor does not track gradients");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::vector<double>& Tensor::leaf_values() {
  if (!node_->is_leaf) {
    throw ContractError("leaf_values: operation outputs are immutable");
  }
  return node_->values;
}

std::vector<double>& Tensor::grad_buffer() {
  if (!node_->requires_grad) {
    throw ContractError("grad_buffer: tensor does not track gradients");
  }
  return node_->grad;
}

// ---- Tape -----------------------------------------------------------------

Tape::Tape() {
  previous_ = t_active_tape;
  t_active_tape = this;
}

Tape::~Tape() { t_active_tape = previous_; }

Tape* Tape::current() { return t_active_tape; }

void Tape::record(std::shared_ptr<TensorNode> node) { ops_.push_back(std::move(node)); }

std::size_t Tape::op_count() const { return ops_.size(); }

void Tape::clear() { ops_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) return;  // nothing reachable tracks gradients
  // Intermediate gradients are per-replay state; only leaves accumulate
  // across repeated backward calls.
  for (auto& op : ops_) {
    if (op->requires_grad) std::fill(op->grad.begin(), op->grad.end(), 0.0);
  }
  loss.node_->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    TensorNode& node = **it;
    if (!node.requires_grad || !node.backward_fn) continue;
    node.backward_fn(node.grad, node.inputs);
  }
}

void Tape::zero_all_grads() {
  for (auto& op : ops_) {
    if (op->requires_grad) std::fill(op->grad.begin(), op->grad.end(), 0.0);
    for (auto& in : op->inputs) in.zero_grad();
  }
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// ---- op builder -----------------------------------------------------------

Tensor custom_op(std::vector<Tensor> inputs, std::vector<std::size_t> shape,
                 std::vector<double> values,
                 std::function<void(const std::vector<double>&, std::vector<Tensor>&)>
                     backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  if (shape_product(node->shape) != node->values.size()) {
    throw ShapeError("custom_op: shape " + shape_to_string(node->shape) +
                     " does not match " + std::to_string(node->values.size()) +
                     " values");
  }
  node->is_leaf = false;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->grad.assign(node->values.size(), 0.0);
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward);
  }
  if (g_finite_checks.load()) check_finite(*node, "op");
  Tensor out(node);
  if (Tape* tape = Tape::current()) tape->record(std::move(node));
  return out;
}

namespace {

// Raw gradient accumulation helper: grads live on nodes, reached through the
// public Tensor handles captured by the backward closures.
std::vector<double>* grad_of(Tensor& t) {
  return t.requires_grad() ? &t.grad_buffer() : nullptr;
}

}  // namespace

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return custom_op(
      {a, b}, {m, n}, std::move(out),
      [m, k, n](const std::vector<double>& g, std::vector<Tensor>& in) {
        const auto& av = in[0].values();
        const auto& bv = in[1].values();
        if (auto* ga = grad_of(in[0])) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              (*ga)[i * k + p] += acc;
            }
        }
        if (auto* gb = grad_of(in[1])) {
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
              (*gb)[p * n + j] += acc;
            }
        }
      });
}

Tensor stable_matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "stable_matmul");
  require_rank2(b, "stable_matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("stable_matmul: inner dimensions differ: " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      t_scratch.clear();
      for (std::size_t p = 0; p < k; ++p) t_scratch.push_back(av[i * k + p] * bv[p * n + j]);
      out[i * n + j] = stable_sum(t_scratch);
    }
  }
  return custom_op(
      {a, b}, {m, n}, std::move(out),
      [m, k, n](const std::vector<double>& g, std::vector<Tensor>& in) {
        const auto& av = in[0].values();
        const auto& bv = in[1].values();
        if (auto* ga = grad_of(in[0])) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              (*ga)[i * k + p] += acc;
            }
        }
        if (auto* gb = grad_of(in[1])) {
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
              (*gb)[p * n + j] += acc;
            }
        }
      });
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ: " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return custom_op({a, b}, a.shape(), std::move(out),
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* ga = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                     if (auto* gb = grad_of(in[1]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return custom_op({a, b}, a.shape(), std::move(out),
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* ga = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                     if (auto* gb = grad_of(in[1]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return custom_op({a, b}, a.shape(), std::move(out),
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     const auto& av = in[0].values();
                     const auto& bv = in[1].values();
                     if (auto* ga = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                     if (auto* gb = grad_of(in[1]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                   });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  return custom_op({x}, x.shape(), std::move(out),
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     const auto& xv = in[0].values();
                     if (auto* gx = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xv[i] >= 0.0) (*gx)[i] += g[i];
                   });
}

Tensor sine(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(x.values()[i]);
  return custom_op({x}, x.shape(), std::move(out),
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     const auto& xv = in[0].values();
                     if (auto* gx = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i)
                         (*gx)[i] += g[i] * std::cos(xv[i]);
                   });
}

Tensor softmax(const Tensor& x, int axis) {
  require_rank2(x, "softmax");
  if (axis != 0 && axis != 1) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " invalid for shape " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  const std::size_t n_slices = axis == 1 ? rows : cols;
  const std::size_t slice_len = axis == 1 ? cols : rows;
  // element s of slice i lives at: axis==1 -> i*cols + s ; axis==0 -> s*cols + i
  auto index = [&](std::size_t slice, std::size_t s) {
    return axis == 1 ? slice * cols + s : s * cols + slice;
  };

  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n_slices; ++i) {
    if (slice_len == 0) continue;
    double mx = xv[index(i, 0)];
    for (std::size_t s = 1; s < slice_len; ++s) mx = std::max(mx, xv[index(i, s)]);
    t_scratch.clear();
    for (std::size_t s = 0; s < slice_len; ++s)
      t_scratch.push_back(std::exp(xv[index(i, s)] - mx));
    std::vector<double> exps = t_scratch;  // stable_sum sorts in place
    double denom = stable_sum(t_scratch);
    for (std::size_t s = 0; s < slice_len; ++s) out[index(i, s)] = exps[s] / denom;
  }
  return custom_op(
      {x}, x.shape(), out,
      [axis, rows, cols, out](const std::vector<double>& g, std::vector<Tensor>& in) {
        auto* gx = grad_of(in[0]);
        if (!gx) return;
        const std::size_t n_slices = axis == 1 ? rows : cols;
        const std::size_t slice_len = axis == 1 ? cols : rows;
        auto index = [&](std::size_t slice, std::size_t s) {
          return axis == 1 ? slice * cols + s : s * cols + slice;
        };
        for (std::size_t i = 0; i < n_slices; ++i) {
          double dot = 0.0;
          for (std::size_t s = 0; s < slice_len; ++s)
            dot += g[index(i, s)] * out[index(i, s)];
          for (std::size_t s = 0; s < slice_len; ++s) {
            std::size_t ix = index(i, s);
            (*gx)[ix] += out[ix] * (g[ix] - dot);
          }
        }
      });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: needs at least one part");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) require_rank2(p, "concat");
  const std::size_t fixed_axis = axis == 0 ? 1 : 0;
  const std::size_t fixed = parts[0].shape()[fixed_axis];
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.shape()[fixed_axis] != fixed) {
      throw ShapeError("concat: non-axis dimensions differ: " +
                       shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    total += p.shape()[axis];
  }
  std::vector<std::size_t> out_shape =
      axis == 0 ? std::vector<std::size_t>{total, fixed}
                : std::vector<std::size_t>{fixed, total};
  std::vector<double> out(total * fixed);
  const std::size_t out_cols = out_shape[1];
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pr = p.shape()[0], pc = p.shape()[1];
    for (std::size_t r = 0; r < pr; ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        std::size_t orow = axis == 0 ? offset + r : r;
        std::size_t ocol = axis == 0 ? c : offset + c;
        out[orow * out_cols + ocol] = p.values()[r * pc + c];
      }
    offset += p.shape()[axis];
  }
  return custom_op(
      std::vector<Tensor>(parts), out_shape, std::move(out),
      [axis, out_cols](const std::vector<double>& g, std::vector<Tensor>& in) {
        std::size_t offset = 0;
        for (Tensor& p : in) {
          const std::size_t pr = p.shape()[0], pc = p.shape()[1];
          if (auto* gp = grad_of(p)) {
            for (std::size_t r = 0; r < pr; ++r)
              for (std::size_t c = 0; c < pc; ++c) {
                std::size_t orow = axis == 0 ? offset + r : r;
                std::size_t ocol = axis == 0 ? c : offset + c;
                (*gp)[r * pc + c] += g[orow * out_cols + ocol];
              }
          }
          offset += p.shape()[axis];
        }
      });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.shape()[0], p = x.shape()[1];
  for (std::size_t i : idx) {
    if (i >= n) {
      throw IndexError("gather_rows: index " + std::to_string(i) +
                       " out of range for " + std::to_string(n) + " rows");
    }
  }
  std::vector<double> out(idx.size() * p);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(&out[r * p], &x.values()[idx[r] * p], p * sizeof(double));
  return custom_op({x}, {idx.size(), p}, std::move(out),
                   [idx, p](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0])) {
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t c = 0; c < p; ++c)
                           (*gx)[idx[r] * p + c] += g[r * p + c];
                     }
                   });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (begin > end || end > cols) {
    throw IndexError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + std::to_string(cols) +
                     " columns");
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x.values()[r * cols + begin + c];
  return custom_op({x}, {rows, w}, std::move(out),
                   [begin, w, cols](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0])) {
                       const std::size_t rows = in[0].shape()[0];
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < w; ++c)
                           (*gx)[r * cols + begin + c] += g[r * w + c];
                     }
                   });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x.values()[r * cols + c];
  return custom_op({x}, {cols, rows}, std::move(out),
                   [rows, cols](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0])) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           (*gx)[r * cols + c] += g[c * rows + r];
                     }
                   });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  return custom_op({x}, x.shape(), std::move(out),
                   [factor](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
                   });
}

Tensor add_rowvec(const Tensor& x, const Tensor& row) {
  require_rank2(x, "add_rowvec");
  require_rank2(row, "add_rowvec");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (row.shape()[0] != 1 || row.shape()[1] != n) {
    throw ShapeError("add_rowvec: row shape " + shape_to_string(row.shape()) +
                     " does not broadcast over " + shape_to_string(x.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.values()[r * n + c] + row.values()[c];
  return custom_op({x, row}, {m, n}, std::move(out),
                   [m, n](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0]))
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                     if (auto* gr = grad_of(in[1])) {
                       for (std::size_t c = 0; c < n; ++c) {
                         double acc = 0.0;
                         for (std::size_t r = 0; r < m; ++r) acc += g[r * n + c];
                         (*gr)[c] += acc;
                       }
                     }
                   });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return custom_op({x}, {1, 1}, {acc},
                   [](const std::vector<double>& g, std::vector<Tensor>& in) {
                     if (auto* gx = grad_of(in[0]))
                       for (double& gi : *gx) gi += g[0];
                   });
}

}  // namespace hyperimts
