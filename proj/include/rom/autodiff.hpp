#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rom/tensor.hpp"

namespace rom::nn {

/// A trainable (or frozen) named tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

using ParameterRefs = std::vector<Parameter*>;

/// Raised when an operation produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Parameter gradients produced by one backward pass.
class Gradients {
 public:
  /// nullptr when the parameter received no gradient (frozen or unused).
  const Tensor* find(const Parameter& p) const;
  Tensor& accumulate_into(const Parameter& p);
  std::size_t size() const { return grads_.size(); }
  double squared_norm() const;

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

/// Records primitive operations in creation order (which is a topological
/// order) so a single reverse sweep propagates gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  /// With record_gradients false, params and leaves never need a gradient.
  explicit Tape(bool record_gradients) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that does not need a gradient. The tensor is copied.
  Var constant(Tensor value);
  /// Leaf that receives a gradient readable through grad().
  Var leaf(Tensor value);
  /// References p.value without copying; p must outlive the tape. Receives a
  /// gradient iff p.trainable.
  Var param(const Parameter& p);

  /// Appends an op result. `backward` is dropped when no input needs a
  /// gradient. Throws NumericalError on non-finite output.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  /// Reverse sweep from a scalar loss.
  Gradients backward(Var loss);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward() w.r.t. v (zeros if none reached it).
  Tensor grad(Var v) const;
  /// Zero-initialized on first access; for use inside backward functions.
  Tensor& grad_buffer(Var v);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    const Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor& value() const { return external ? *external : owned; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool record_gradients_ = true;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var relu(Var a);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// Shape manipulation on rank-2 tensors unless stated.
Var reshape(Var a, Shape shape);
Var transpose(Var a);
Var concat_cols(Var a, Var b);

// Linear algebra.
Var matmul(Var a, Var b);
/// y = x * w^T (+ bias), x: [batch, in], w: [out, in], bias: [out].
Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt);

// Row-wise helpers, a: [batch, n].
Var row_dot(Var a, Var b);           // [batch, 1]
Var scale_rows(Var a, Var c);        // a[i, :] * c[i, 0]
/// num / den elementwise, and 0 (with zero gradient) where den < eps.
Var guarded_div(Var num, Var den, double eps);

// Reductions to a scalar.
Var sum(Var a);
Var sum_squares(Var a);
/// sum_squares(a) / a.shape()[0]: mean squared norm of the rows.
Var mean_squared_norm(Var a);

// 1D convolutions. x: [batch, channels, length].
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 std::size_t stride, std::size_t padding);
std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t padding,
                                           std::size_t output_padding);
/// Cross-correlation; w: [out_channels, in_channels, kernel], bias: [out].
Var conv1d(Var x, Var w, std::optional<Var> bias, std::size_t stride,
           std::size_t padding);
/// Adjoint of conv1d; w: [in_channels, out_channels, kernel], bias: [out].
Var conv1d_transpose(Var x, Var w, std::optional<Var> bias, std::size_t stride,
                     std::size_t padding, std::size_t output_padding = 0);

}  // namespace rom::nn
