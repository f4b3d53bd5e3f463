#pragma once

// Dense row-major f64 tensors with a tape-based reverse-mode autodiff.
//
// Every differentiable op appends one entry to the calling thread's Tape when
// gradient recording is enabled and at least one input requires a gradient.
// backward() replays the tape in reverse, touching each entry once, and then
// resets it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agf/errors.hpp"

namespace agf {

class SplitMix64;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);
  // Entries drawn from N(0, stddev^2).
  static Tensor randn(Shape shape, SplitMix64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, SplitMix64& rng, double lo, double hi,
                        bool requires_grad = false);
  // Row-major nested initializer, e.g. matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  double item() const;

  // Writable view of a leaf's buffer (optimizer updates, finite-difference
  // probes). Throws ContractError for tensors produced by an op.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;  // empty when absent
  void zero_grad();
  void clear_grad();

  // Deep copy of the values as a fresh leaf.
  Tensor detach() const;

  // Identity of the underlying node.
  const void* id() const { return node_.get(); }

 private:
  friend class Tape;
  friend Tensor record_op(std::string_view, Shape, std::vector<double>,
                          std::vector<Tensor>, std::function<void(std::span<const double>)>);
  friend std::span<double> grad_sink(const Tensor&);

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

// A parameter tensor with a stable, human-readable name.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

// Creates the output of an op. The data is checked for non-finite values
// (NumericError names the op). When recording is active and any input requires
// a gradient, the output requires one too and `backward` is taped; it receives
// dL/d(output) and must accumulate into the inputs through grad_sink().
Tensor record_op(std::string_view name, Shape shape, std::vector<double> data,
                 std::vector<Tensor> inputs, BackwardFn backward);

// Gradient accumulator of `t`, allocated (zero-filled) on first use. Empty
// when `t` does not require a gradient.
std::span<double> grad_sink(const Tensor& t);

class Tape {
 public:
  struct Entry {
    std::string name;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  // The calling thread's tape.
  static Tape& current();

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void reset() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every entry in reverse order.
  void backward(const Tensor& loss);

  // Entries visited by the most recent backward().
  std::size_t last_replay_count() const { return last_replay_count_; }

 private:
  friend Tensor record_op(std::string_view, Shape, std::vector<double>,
                          std::vector<Tensor>, BackwardFn);
  std::vector<Entry> entries_;
  std::size_t last_replay_count_ = 0;
};

void backward(const Tensor& loss);

bool grad_enabled();

// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Largest single tensor buffer (in elements) created on this thread since the
// last reset. Used to assert that linear-cost paths never allocate n x n.
struct AllocationStats {
  static void reset();
  static std::size_t peak_numel();
};

// ---------------------------------------------------------------------------
// Differentiable ops.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Same values, new shape with the same element count.
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// x[i, :] + bias[0, :] for every row; bias is 1 x cols or rank-1 of length cols.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Elementwise x^k for an integer k >= 0, through std::pow.
Tensor powi(const Tensor& x, int k);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // (n x d) -> (1 x d)
Tensor frobenius_norm(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);  // over the last axis, max-stabilized
// Normalizes each row, then y = xhat * gamma + beta (gamma/beta: 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

// sum_k weights[k] * terms[k]; weights has one entry per term and all terms
// share a shape.
Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> terms);

// Mean cross-entropy of row-wise logits against integer class labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace agf
