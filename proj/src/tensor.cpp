#include "agf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agf/rng.hpp"

namespace agf {

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::size_t t_peak_numel = 0;

void note_allocation(std::size_t numel) { t_peak_numel = std::max(t_peak_numel, numel); }

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t s : shape) {
    if (s == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("tensor data must be finite");
  }
  note_allocation(data.size());
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> data(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
  return from({n, n}, std::move(data));
}

Tensor Tensor::randn(Shape shape, SplitMix64& rng, double stddev, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = stddev * rng.normal();
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(Shape shape, SplitMix64& rng, double lo, double hi, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty() || rows.front().empty()) throw ShapeError("matrix literal must be non-empty");
  const std::size_t c = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return from({rows.size(), c}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() == 1) return 1;
  return shape_numel(Shape(s.begin(), s.end() - 1));
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (!node_->is_leaf) throw ContractError("only leaf tensors may be mutated in place");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  return from(shape(), std::vector<double>(data().begin(), data().end()));
}

// ---------------------------------------------------------------------------

Tensor record_op(std::string_view name, Shape shape, std::vector<double> data,
                 std::vector<Tensor> inputs, BackwardFn backward) {
  check_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw ShapeError(std::string(name) + ": produced " + std::to_string(data.size()) +
                     " values for shape " + shape_str(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(name) + " produced a non-finite value");
  }
  note_allocation(data.size());
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->is_leaf = false;
  Tensor out(std::move(node));

  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  Tape::current().entries_.push_back(
      Tape::Entry{std::string(name), std::move(inputs), out, std::move(backward)});
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.node_ || !t.node_->requires_grad) return {};
  auto& g = t.node_->grad;
  if (g.empty()) g.assign(t.node_->data.size(), 0.0);
  return g;
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad() || loss.is_leaf()) {
    throw ContractError("backward requires a loss produced by taped operations");
  }
  const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                   [&](const Entry& e) { return e.output.id() == loss.id(); });
  if (!on_tape) throw ContractError("loss was not recorded on this thread's tape");

  grad_sink(loss)[0] += 1.0;
  std::size_t visited = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    ++visited;
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
  last_replay_count_ = visited;
  entries_.clear();
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void AllocationStats::reset() { t_peak_numel = 0; }
std::size_t AllocationStats::peak_numel() { return t_peak_numel; }

}  // namespace agf
