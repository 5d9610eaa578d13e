#include "lvreg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "lvreg/error.hpp"

namespace lvreg::ad {

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw ValidationError(
      fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
}

void require_matrix(std::string_view op, const Tensor& a) {
  if (a.shape().size() != 2) {
    throw ValidationError(fmt::format("{}: expected a matrix, got shape {}", op, shape_str(a.shape())));
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

}  // namespace

// Records an op result on the tape shared by its tracked inputs.
struct OpRecorder {
  static Tensor make(std::string_view op, Shape shape, std::vector<double> data,
                     std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    for (double v : data) {
      if (!std::isfinite(v)) throw Error(fmt::format("{}: produced a non-finite value", op));
    }
    Tensor out(std::move(shape), std::move(data));
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
      if (!t->tracked()) continue;
      if (t->generation_ != t->tape_->generation_) {
        throw Error(fmt::format("{}: input was recorded on a tape that has since been reset", op));
      }
      if (tape != nullptr && tape != t->tape_) throw Error(fmt::format("{}: inputs live on different tapes", op));
      tape = t->tape_;
    }
    if (tape == nullptr) return out;
    if (tape->backward_done_) throw Error(fmt::format("{}: tape already differentiated; reset it first", op));

    Tape::Node node;
    node.op = op;
    node.size = out.size();
    node.backward = std::move(backward);
    for (const Tensor* t : inputs) node.inputs.push_back(t->tracked() ? t->node_ : -1);
    tape->nodes_.push_back(std::move(node));
    out.tape_ = tape;
    out.generation_ = tape->generation_;
    out.node_ = static_cast<int>(tape->nodes_.size() - 1);
    return out;
  }

  static Tensor leaf(Tape& tape, const Tensor& value) {
    Tensor out(value.shape(), std::vector<double>(value.data().begin(), value.data().end()));
    Tape::Node node;
    node.op = "parameter";
    node.size = out.size();
    tape.nodes_.push_back(std::move(node));
    out.tape_ = &tape;
    out.generation_ = tape.generation_;
    out.node_ = static_cast<int>(tape.nodes_.size() - 1);
    return out;
  }
};

Tensor::Tensor() : shape_{}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_size(shape_) != data.size()) {
    throw ValidationError(fmt::format("tensor data length {} does not match shape {}", data.size(),
                                      shape_str(shape_)));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::from_points(std::span<const Vec3> points) {
  std::vector<double> data(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int c = 0; c < 3; ++c) data[3 * i + static_cast<std::size_t>(c)] = points[i][c];
  }
  return matrix(points.size(), 3, std::move(data));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (size() != 1) throw ValidationError(fmt::format("item() on tensor of shape {}", shape_str(shape_)));
  return (*data_)[0];
}

std::vector<Vec3> Tensor::to_points() const {
  if (shape_.size() != 2 || shape_[1] != 3) {
    throw ValidationError(fmt::format("to_points() needs an n x 3 tensor, got {}", shape_str(shape_)));
  }
  std::vector<Vec3> out(shape_[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(at(i, 0), at(i, 1), at(i, 2));
  return out;
}

Tensor Gradients::of(const Tensor& t) const {
  if (!t.tracked()) throw ValidationError("gradient requested for an untracked tensor");
  if (t.tape_ != tape_ || t.generation_ != generation_) {
    throw ValidationError("gradient requested for a tensor from another tape");
  }
  const auto& g = grads_.at(static_cast<std::size_t>(t.node()));
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), g);
}

Tensor Tape::parameter(const Tensor& value) {
  if (backward_done_) throw Error("tape already differentiated; reset it first");
  return OpRecorder::leaf(*this, value);
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ValidationError(fmt::format("backward needs a scalar loss, got shape {}", shape_str(loss.shape())));
  }
  if (backward_done_) throw Error("backward already called on this tape; reset it first");
  backward_done_ = true;

  Gradients out;
  out.tape_ = this;
  out.generation_ = generation_;
  out.grads_.resize(nodes_.size());
  if (!loss.tracked()) return out;
  if (loss.tape_ != this || loss.generation_ != generation_) {
    throw ValidationError("loss was not recorded on this tape");
  }

  auto& grads = out.grads_;
  grads[static_cast<std::size_t>(loss.node())] = {1.0};
  std::vector<std::vector<double>*> grad_in;
  for (int id = loss.node(); id >= 0; --id) {
    auto& g = grads[static_cast<std::size_t>(id)];
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (g.empty() || !node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const int in = node.inputs[k];
      if (in < 0) continue;
      auto& gi = grads[static_cast<std::size_t>(in)];
      if (gi.empty()) gi.assign(nodes_[static_cast<std::size_t>(in)].size, 0.0);
      grad_in[k] = &gi;
    }
    node.backward(g, grad_in);
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  ++generation_;
  backward_done_ = false;
}

Tensor constant(const Tensor& t) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return OpRecorder::make("add", a.shape(), std::move(out), {&a, &b},
                          [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (auto* gi : gin) {
                              if (gi == nullptr) continue;
                              for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                            }
                          });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return OpRecorder::make("sub", a.shape(), std::move(out), {&a, &b},
                          [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            if (auto* ga = gin[0]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                            }
                            if (auto* gb = gin[1]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                            }
                          });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return OpRecorder::make("mul", a.shape(), std::move(out), {&a, &b},
                          [a, b](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            if (auto* ga = gin[0]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
                            }
                            if (auto* gb = gin[1]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
                            }
                          });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape("divide", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return OpRecorder::make("divide", a.shape(), std::move(out), {&a, &b},
                          [a, b](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            if (auto* ga = gin[0]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / b[i];
                            }
                            if (auto* gb = gin[1]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * a[i] / (b[i] * b[i]);
                            }
                          });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return OpRecorder::make("scale", a.shape(), std::move(out), {&a},
                          [s](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * s;
                          });
}

// Plain i-p-j loops: every output element accumulates in the same order
// regardless of its row, which keeps row permutations exact.
Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_error("matmul", a, b);
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return OpRecorder::make(
      "matmul", {m, n}, std::move(out), {&a, &b},
      [a, b, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
        const auto ad = a.data();
        const auto bd = b.data();
        if (auto* ga = gin[0]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
              (*ga)[i * k + p] += acc;
            }
          }
        }
        if (auto* gb = gin[1]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = ad[i * k + p];
              double* dst = gb->data() + p * n;
              for (std::size_t j = 0; j < n; ++j) dst[j] += aip * g[i * n + j];
            }
          }
        }
      });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return OpRecorder::make("relu", a.shape(), std::move(out), {&a},
                          [a](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              if (a[i] > 0.0) (*gin[0])[i] += g[i];
                            }
                          });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto values = std::make_shared<const std::vector<double>>(out);
  return OpRecorder::make("tanh", a.shape(), std::move(out), {&a},
                          [values](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const double t = (*values)[i];
                              (*gin[0])[i] += g[i] * (1.0 - t * t);
                            }
                          });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return OpRecorder::make("square", a.shape(), std::move(out), {&a},
                          [a](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += 2.0 * a[i] * g[i];
                          });
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a[i] < 0.0) throw Error(fmt::format("sqrt: negative input {}", a[i]));
    out[i] = std::sqrt(a[i]);
  }
  auto values = std::make_shared<const std::vector<double>>(out);
  return OpRecorder::make("sqrt", a.shape(), std::move(out), {&a},
                          [values](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const double r = (*values)[i];
                              if (r > 0.0) (*gin[0])[i] += g[i] / (2.0 * r);
                            }
                          });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return OpRecorder::make("sum", {}, {acc}, {&a},
                          [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (double& x : *gin[0]) x += g[0];
                          });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ValidationError("mean of an empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return OpRecorder::make("mean", {}, {acc * inv}, {&a},
                          [inv](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (double& x : *gin[0]) x += g[0] * inv;
                          });
}

Tensor sum_cols(const Tensor& a) {
  require_matrix("sum_cols", a);
  const std::size_t n = a.rows(), k = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i] += a[i * k + j];
  }
  return OpRecorder::make("sum_cols", {n, 1}, std::move(out), {&a},
                          [n, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) (*gin[0])[i * k + j] += g[i];
                            }
                          });
}

Tensor max_over_rows(const Tensor& a) {
  require_matrix("max_over_rows", a);
  const std::size_t n = a.rows(), k = a.cols();
  if (n == 0) throw ValidationError("max_over_rows: no rows");
  std::vector<double> out(k);
  auto argmax = std::make_shared<std::vector<std::size_t>>(k, 0);
  for (std::size_t j = 0; j < k; ++j) {
    double best = a[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (a[i * k + j] > best) {
        best = a[i * k + j];
        (*argmax)[j] = i;
      }
    }
    out[j] = best;
  }
  return OpRecorder::make("max_over_rows", {1, k}, std::move(out), {&a},
                          [argmax, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t j = 0; j < k; ++j) (*gin[0])[(*argmax)[j] * k + j] += g[j];
                          });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix("concat_cols", a);
  require_matrix("concat_cols", b);
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  std::vector<double> out(n * (p + q));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(b.data().data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return OpRecorder::make("concat_cols", {n, p + q}, std::move(out), {&a, &b},
                          [n, p, q](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < n; ++i) {
                              if (auto* ga = gin[0]) {
                                for (std::size_t j = 0; j < p; ++j) (*ga)[i * p + j] += g[i * (p + q) + j];
                              }
                              if (auto* gb = gin[1]) {
                                for (std::size_t j = 0; j < q; ++j) (*gb)[i * q + j] += g[i * (p + q) + p + j];
                              }
                            }
                          });
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  require_matrix("broadcast_rows", row);
  if (row.rows() != 1) {
    throw ValidationError(fmt::format("broadcast_rows: expected a 1 x k row, got {}", shape_str(row.shape())));
  }
  const std::size_t k = row.cols();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(row.data().data(), k, out.data() + i * k);
  return OpRecorder::make("broadcast_rows", {n, k}, std::move(out), {&row},
                          [n, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) (*gin[0])[j] += g[i * k + j];
                            }
                          });
}

Tensor broadcast_cols(const Tensor& col, std::size_t k) {
  require_matrix("broadcast_cols", col);
  if (col.cols() != 1) {
    throw ValidationError(fmt::format("broadcast_cols: expected an n x 1 column, got {}", shape_str(col.shape())));
  }
  const std::size_t n = col.rows();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.data() + i * k, k, col[i]);
  return OpRecorder::make("broadcast_cols", {n, k}, std::move(out), {&col},
                          [n, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) (*gin[0])[i] += g[i * k + j];
                            }
                          });
}

Tensor gather_rows(const Tensor& a, std::span<const int> indices) {
  require_matrix("gather_rows", a);
  const std::size_t n = a.rows(), k = a.cols();
  auto idx = std::make_shared<const std::vector<int>>(indices.begin(), indices.end());
  std::vector<double> out(idx->size() * k);
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const int src = (*idx)[r];
    if (src < 0 || static_cast<std::size_t>(src) >= n) {
      throw ValidationError(fmt::format("gather_rows: index {} out of range for {} rows", src, n));
    }
    std::copy_n(a.data().data() + static_cast<std::size_t>(src) * k, k, out.data() + r * k);
  }
  return OpRecorder::make("gather_rows", {idx->size(), k}, std::move(out), {&a},
                          [idx, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t r = 0; r < idx->size(); ++r) {
                              const auto dst = static_cast<std::size_t>((*idx)[r]) * k;
                              for (std::size_t j = 0; j < k; ++j) (*gin[0])[dst + j] += g[r * k + j];
                            }
                          });
}

Tensor cross_rows(const Tensor& a, const Tensor& b) {
  require_matrix("cross_rows", a);
  require_same_shape("cross_rows", a, b);
  if (a.cols() != 3) shape_error("cross_rows", a, b);
  const std::size_t n = a.rows();
  std::vector<double> out(n * 3);
  auto cross = [](const double* x, const double* y, double* z) {
    z[0] = x[1] * y[2] - x[2] * y[1];
    z[1] = x[2] * y[0] - x[0] * y[2];
    z[2] = x[0] * y[1] - x[1] * y[0];
  };
  for (std::size_t i = 0; i < n; ++i) cross(a.data().data() + 3 * i, b.data().data() + 3 * i, out.data() + 3 * i);
  return OpRecorder::make(
      "cross_rows", {n, 3}, std::move(out), {&a, &b},
      [a, b, n, cross](std::span<const double> g, std::span<std::vector<double>* const> gin) {
        double tmp[3];
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data() + 3 * i;
          // d/da (a x b) . g = b x g ; d/db = g x a
          if (auto* ga = gin[0]) {
            cross(b.data().data() + 3 * i, gi, tmp);
            for (int c = 0; c < 3; ++c) (*ga)[3 * i + static_cast<std::size_t>(c)] += tmp[c];
          }
          if (auto* gb = gin[1]) {
            cross(gi, a.data().data() + 3 * i, tmp);
            for (int c = 0; c < 3; ++c) (*gb)[3 * i + static_cast<std::size_t>(c)] += tmp[c];
          }
        }
      });
}

Tensor spmm(const SparseRows& s, const Tensor& a) {
  require_matrix("spmm", a);
  if (a.rows() != s.cols) {
    throw ValidationError(fmt::format("spmm: sparse matrix has {} columns, dense operand {} rows", s.cols, a.rows()));
  }
  const std::size_t rows = s.rows(), k = a.cols();
  std::vector<double> out(rows * k, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int e = s.row_start[r]; e < s.row_start[r + 1]; ++e) {
      const auto src = static_cast<std::size_t>(s.col_index[static_cast<std::size_t>(e)]) * k;
      const double w = s.value[static_cast<std::size_t>(e)];
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] += w * a[src + j];
    }
  }
  auto sp = std::make_shared<const SparseRows>(s);
  return OpRecorder::make("spmm", {rows, k}, std::move(out), {&a},
                          [sp, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (std::size_t r = 0; r < sp->rows(); ++r) {
                              for (int e = sp->row_start[r]; e < sp->row_start[r + 1]; ++e) {
                                const auto dst = static_cast<std::size_t>(sp->col_index[static_cast<std::size_t>(e)]) * k;
                                const double w = sp->value[static_cast<std::size_t>(e)];
                                for (std::size_t j = 0; j < k; ++j) (*gin[0])[dst + j] += w * g[r * k + j];
                              }
                            }
                          });
}

double grad_check(const Objective& f, std::span<const Tensor> params, double h) {
  Tape tape;
  std::vector<Tensor> tracked;
  tracked.reserve(params.size());
  for (const Tensor& p : params) tracked.push_back(tape.parameter(p));
  const Tensor loss = f(tracked);
  const Gradients grads = tape.backward(loss);

  std::vector<Tensor> probe;
  for (const Tensor& p : params) probe.push_back(constant(p));

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor analytic = grads.of(tracked[i]);
    std::vector<double> base(params[i].data().begin(), params[i].data().end());
    for (std::size_t j = 0; j < base.size(); ++j) {
      std::vector<double> plus = base;
      std::vector<double> minus = base;
      plus[j] += h;
      minus[j] -= h;
      const double step = plus[j] - minus[j];
      probe[i] = Tensor(params[i].shape(), plus);
      const double fp = f(probe).item();
      probe[i] = Tensor(params[i].shape(), minus);
      const double fm = f(probe).item();
      const double numeric = (fp - fm) / step;
      const double a = analytic[j];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
    }
    probe[i] = constant(params[i]);
  }
  return worst;
}

void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw ValidationError(fmt::format("adam_step: {} parameters but {} gradients", params.size(), grads.size()));
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ValidationError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) shape_error("adam_step", params[i], grads[i]);
    if (state.first_moment[i].size() != params[i].size()) {
      throw ValidationError("adam_step: moment size does not match parameter size");
    }
  }

  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    std::vector<double> x(params[i].data().begin(), params[i].data().end());
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      x[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
    params[i] = Tensor(params[i].shape(), std::move(x));
  }
}

}  // namespace lvreg::ad
