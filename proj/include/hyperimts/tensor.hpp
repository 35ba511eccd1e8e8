#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "hyperimts/common.hpp"

namespace hyperimts {

namespace detail {
struct TensorNode;
}

/// Dense 64-bit float array with an optional gradient buffer. Value-semantics
/// handle: copying a Tensor aliases the same storage. Values are immutable
/// once an operation has produced them; only gradient buffers (and leaf
/// values, between tapes, e.g. by an optimizer) may be mutated.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf with requires_grad set; the unit every optimizer step touches.
  static Tensor parameter(std::vector<std::size_t> shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const;
  bool is_leaf() const;

  const std::vector<double>& values() const;
  double value(std::size_t i = 0) const;
  double at(std::size_t r, std::size_t c) const;

  const std::vector<double>& grad() const;
  void zero_grad();

  /// Leaf-only mutation hook (optimizer updates, finite-difference probes).
  std::vector<double>& leaf_values();
  std::vector<double>& grad_buffer();

  /// Stable identity of the underlying storage, for aliasing checks in tests.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor custom_op(std::vector<Tensor>, std::vector<std::size_t>,
                          std::vector<double>,
                          std::function<void(const std::vector<double>&,
                                             std::vector<Tensor>&)>);
  friend class Tape;
};

/// Ordered record of the operations of one forward pass. Constructing a Tape
/// makes it the active recorder for the current thread; destruction restores
/// the previous one. backward() replays the record once, in reverse execution
/// order. Gradients accumulate across repeated backward calls until reset.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backward. The loss must
  /// be a scalar (single element).
  void backward(const Tensor& loss);

  /// Zeroes the gradient of every tensor this tape has seen, leaves included.
  void zero_all_grads();

  /// Drops all recorded operations (their outputs stay alive only if the
  /// caller still holds them).
  void clear();

  std::size_t op_count() const;

 private:
  void record(std::shared_ptr<detail::TensorNode> node);
  std::vector<std::shared_ptr<detail::TensorNode>> ops_;
  Tape* previous_ = nullptr;

  friend Tensor custom_op(std::vector<Tensor>, std::vector<std::size_t>,
                          std::vector<double>,
                          std::function<void(const std::vector<double>&,
                                             std::vector<Tensor>&)>);
};

/// When enabled, every operation sweeps its output for NaN/Inf and throws
/// NumericError on the first hit. Off by default; tests and debug runs turn
/// it on.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- operations ----------------------------------------------------------
// All matrix operations are rank-2. Reductions are plain serial loops unless
// stated otherwise; softmax and stable_matmul use value-sorted summation so
// their outputs are bitwise invariant under permutation of the reduced axis.

Tensor matmul(const Tensor& a, const Tensor& b);

/// Matrix product whose inner-axis summation is value-sorted. Used for
/// attention aggregation, where the key axis must be permutable without
/// changing output bits.
Tensor stable_matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sine(const Tensor& x);

/// Max-subtracted softmax along the given axis (0 = down columns, 1 = along
/// rows). Denominator uses value-sorted summation.
Tensor softmax(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Copies the selected rows in index order; backward scatter-adds, so
/// duplicate indices accumulate their gradients.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

/// x (m*n) plus a 1*n row broadcast over the m rows. The only broadcasting
/// the model needs (bias terms).
Tensor add_rowvec(const Tensor& x, const Tensor& row);

/// Sum of all elements as a 1x1 tensor. Serial row-major accumulation.
Tensor sum_all(const Tensor& x);

/// Extension point used by every built-in op: creates an op node from input
/// tensors, an output buffer, and a backward rule receiving the output
/// gradient and the inputs. Recorded on the active tape.
Tensor custom_op(std::vector<Tensor> inputs, std::vector<std::size_t> shape,
                 std::vector<double> values,
                 std::function<void(const std::vector<double>& out_grad,
                                    std::vector<Tensor>& inputs)>
                     backward);

}  // namespace hyperimts
