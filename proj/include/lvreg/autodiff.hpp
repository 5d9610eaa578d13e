#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "lvreg/geometry.hpp"

/// Minimal reverse-mode automatic differentiation over dense float64 tensors.
///
/// Tensors are immutable values. A tensor produced by an op with at least one
/// tracked input is recorded on that input's Tape; tensors with no tracked
/// inputs are plain constants and cost nothing beyond the forward value.
/// Only rank 0, 1 and 2 shapes are used; matrices are row-major.
namespace lvreg::ad {

using Shape = std::vector<std::size_t>;

class Tape;

class Tensor {
 public:
  Tensor();  // scalar zero constant
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// n x 3 matrix of point coordinates.
  static Tensor from_points(std::span<const Vec3> points);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const double> data() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  /// Value of a single-element tensor.
  double item() const;
  std::vector<Vec3> to_points() const;

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }

 private:
  friend class Tape;
  friend class Gradients;
  friend struct OpRecorder;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
  int node_ = -1;
};

/// Local gradient rule: receives dL/d(output) and accumulates into
/// dL/d(input k) through `grad_in[k]` (null when input k is untracked).
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

class Gradients {
 public:
  /// Gradient with respect to a tracked tensor (zeros if the loss does not
  /// depend on it).
  Tensor of(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
  std::vector<std::vector<double>> grads_;
};

/// Append-only record of ops in execution (hence topological) order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf tensor whose gradient is wanted.
  Tensor parameter(const Tensor& value);

  /// Reverse sweep from a single-element loss. Allowed once per recording;
  /// call reset() before recording again.
  Gradients backward(const Tensor& loss);

  /// Drops all nodes; tensors recorded before the reset become unusable as
  /// tracked inputs.
  void reset();

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct OpRecorder;
  friend class Gradients;

  struct Node {
    std::string_view op;
    std::vector<int> inputs;  // -1 for untracked inputs
    std::size_t size = 0;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool backward_done_ = false;
};

/// Detached copy: same value, no gradient flow.
Tensor constant(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
/// Gradient is 0 at exactly 0.
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
/// Elementwise square root. The gradient at an output of exactly 0 is taken
/// as 0 (subgradient at the kink).
Tensor sqrt(const Tensor& a);
/// Sum of all elements (scalar).
Tensor sum(const Tensor& a);
/// Mean of all elements (scalar).
Tensor mean(const Tensor& a);
/// Per-row sum of an n x k matrix, giving n x 1.
Tensor sum_cols(const Tensor& a);
/// Column-wise max over the rows of an n x k matrix, giving 1 x k. The
/// gradient goes to the argmax row (lowest row on ties).
Tensor max_over_rows(const Tensor& a);
/// [a | b] for matrices with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Repeats a 1 x k row n times.
Tensor broadcast_rows(const Tensor& row, std::size_t n);
/// Repeats an n x 1 column k times.
Tensor broadcast_cols(const Tensor& col, std::size_t k);
/// Rows a[indices[i]]; gradients scatter-add back.
Tensor gather_rows(const Tensor& a, std::span<const int> indices);
/// Row-wise cross product of two n x 3 matrices.
Tensor cross_rows(const Tensor& a, const Tensor& b);

/// Fixed (non-differentiable) sparse matrix in CSR form.
struct SparseRows {
  std::size_t cols = 0;
  std::vector<int> row_start{0};
  std::vector<int> col_index;
  std::vector<double> value;
  std::size_t rows() const { return row_start.size() - 1; }
};
/// S * a for a fixed sparse S.
Tensor spmm(const SparseRows& s, const Tensor& a);

/// Objective evaluated on the parameter list; the same callable is used for the
/// recorded pass and for the finite-difference evaluations.
using Objective = std::function<Tensor(std::span<const Tensor> params)>;

/// Max over all parameter coordinates of |a - n| / max(1e-8, |a| + |n|), with a
/// the reverse-mode gradient and n the central difference with step h.
double grad_check(const Objective& f, std::span<const Tensor> params, double h = 1e-5);

struct AdamOptions {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter. Moments are allocated on
/// the first call.
void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state);

}  // namespace lvreg::ad
