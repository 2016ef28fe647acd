#pragma once

// Dense n-dimensional arrays and a define-by-run reverse-mode
// differentiation graph built on top of them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kinadapt/error.hpp"

namespace kinadapt {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Immutable row-major array of doubles. Copies share the underlying buffer.
class NdArray {
 public:
  NdArray();
  NdArray(Shape shape, std::vector<double> values);

  static NdArray zeros(Shape shape);
  static NdArray filled(Shape shape, double value);
  static NdArray scalar(double value);
  static NdArray vector(std::vector<double> values);
  static NdArray matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  // Same as the constructor but rejects NaN/Inf; use for external input.
  static NdArray checked(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool all_finite() const;
  std::vector<double> to_vector() const { return *data_; }

  // Shape equality plus bitwise-equal values.
  friend bool operator==(const NdArray& a, const NdArray& b);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

enum class Op {
  leaf,
  add,
  subtract,
  multiply,
  scale,
  matmul,
  relu,
  sigmoid,
  tanh,
  exp,
  log,
  concat,
  mean,
  sum,
  slice,
  transpose,
  broadcast_add,
  reshape,
  unfold1d,
  softmax,
  softmax_cross_entropy,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::leaf;
  NdArray value;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<double> grad;  // sized on demand by backward()
  std::uint64_t grad_pass = 0;  // backward() call that last wrote `grad`
  bool requires_grad = false;
  std::function<void(Node&)> backprop;
};

// Handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const NdArray& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Op op() const { return node_->op; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Gradient from the calling thread's last backward() call; zeros if that
  // call did not reach this node.
  NdArray grad() const;
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(NdArray value);
Var parameter(NdArray value);

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise, operands of identical shape.
Var add(const Var& a, const Var& b);
Var subtract(const Var& a, const Var& b);
Var multiply(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// {m,n} x {n,p} -> {m,p} and {m,n} x {n} -> {m}.
Var matmul(const Var& a, const Var& b);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var concat(const std::vector<Var>& parts, std::size_t axis);
// Removes `axis`.
Var mean(const Var& a, std::size_t axis);
// Sum of all elements, rank-0 result.
Var sum(const Var& a);
// Half-open range [begin, end) along `axis`.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var transpose(const Var& a);
// Adds vector `v` (length a.dim(axis)) along `axis` of `a`.
Var broadcast_add(const Var& a, const Var& v, std::size_t axis);
Var reshape(const Var& a, Shape shape);
// {C,T} -> {C*width, T+pad_left+pad_right-width+1}; row c*width+w holds
// the zero-padded input of channel c shifted by w.
Var unfold1d(const Var& a, std::size_t width, std::size_t pad_left, std::size_t pad_right);
// Rank-1 softmax.
Var softmax(const Var& logits);
// -log softmax(logits)[label], rank-0 result; logits rank-1.
Var softmax_cross_entropy(const Var& logits, std::size_t label);

// Reverse-mode pass from a scalar. Zeroes every reachable accumulator first.
void backward(const Var& loss);

// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12)
// for every element of `params`, perturbing them in place and re-evaluating
// `loss_fn` without recording a graph.
double finite_difference_check(const std::function<Var()>& loss_fn, std::span<Var> params,
                               double epsilon);
// Single-argument form: `f` maps a parameter leaf to a scalar.
double finite_difference_check(const std::function<Var(const Var&)>& f, const NdArray& point,
                               double epsilon);

// Replaces the value of a leaf in place; used by gradient checking and optimizers.
void assign(Var& leaf, NdArray value);

}  // namespace kinadapt
