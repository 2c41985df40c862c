#include "rom/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace rom::nn {

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument("operands live on different tapes");
  }
  return *a.tape;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " +
                                shape_string(a.shape()));
  }
}

Eigen::Map<Eigen::ArrayXd> arr(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}
Eigen::Map<const Eigen::ArrayXd> arr(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

const Tensor* Gradients::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor& Gradients::accumulate_into(const Parameter& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end()) it = grads_.emplace(&p, Tensor(p.value.shape())).first;
  return it->second;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& [p, g] : grads_) s += arr(g).square().sum();
  return s;
}

Tape::Node& Tape::node(Var v) {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_gradients_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_gradients_ && p.trainable;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.owned = std::move(value);
  for (Var in : inputs) {
    if (requires_grad(in)) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? n.grad : Tensor(n.value().shape());
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor(n.value().shape());
    n.has_grad = true;
  }
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss).fill(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
  Gradients grads;
  for (const Node& n : nodes_) {
    if (n.param != nullptr && n.requires_grad && n.has_grad) {
      arr(grads.accumulate_into(*n.param)) += arr(n.grad);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  arr(out) += arr(b.value());
  return t.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) arr(t.grad_buffer(a)) += arr(g);
    if (t.requires_grad(b)) arr(t.grad_buffer(b)) += arr(g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  arr(out) -= arr(b.value());
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) arr(t.grad_buffer(a)) += arr(g);
    if (t.requires_grad(b)) arr(t.grad_buffer(b)) -= arr(g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  arr(out) *= arr(b.value());
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) arr(t.grad_buffer(a)) += arr(g) * arr(t.value(b));
    if (t.requires_grad(b)) arr(t.grad_buffer(b)) += arr(g) * arr(t.value(a));
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  arr(out) *= c;
  return a.tape->record("scale", std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    arr(t.grad_buffer(a)) += c * arr(g);
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  arr(out) = arr(out).max(0.0);
  return a.tape->record("relu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    // Derivative at 0 is taken as 0.
    arr(t.grad_buffer(a)) += (arr(t.value(a)) > 0.0).cast<double>() * arr(g);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    arr(t.grad_buffer(a)) += arr(g);
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  out.as_matrix(c, r) = a.value().as_matrix(r, c).transpose();
  return a.tape->record("transpose", std::move(out), {a}, [a, r, c](Tape& t, const Tensor& g) {
    t.grad_buffer(a).as_matrix(r, c) += g.as_matrix(c, r).transpose();
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  const std::size_t rows = a.shape()[0];
  if (b.shape()[0] != rows) throw std::invalid_argument("concat_cols: row mismatch");
  const std::size_t ca = a.shape()[1], cb = b.shape()[1];
  Tensor out({rows, ca + cb});
  auto m = out.as_matrix(rows, ca + cb);
  m.leftCols(static_cast<Eigen::Index>(ca)) = a.value().as_matrix(rows, ca);
  m.rightCols(static_cast<Eigen::Index>(cb)) = b.value().as_matrix(rows, cb);
  return t.record("concat_cols", std::move(out), {a, b},
                  [a, b, rows, ca, cb](Tape& t, const Tensor& g) {
                    auto gm = g.as_matrix(rows, ca + cb);
                    if (t.requires_grad(a)) {
                      t.grad_buffer(a).as_matrix(rows, ca) +=
                          gm.leftCols(static_cast<Eigen::Index>(ca));
                    }
                    if (t.requires_grad(b)) {
                      t.grad_buffer(b).as_matrix(rows, cb) +=
                          gm.rightCols(static_cast<Eigen::Index>(cb));
                    }
                  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul: inner dimension mismatch " +
                                shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  out.as_matrix(m, n).noalias() = a.value().as_matrix(m, k) * b.value().as_matrix(k, n);
  return t.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    auto gm = g.as_matrix(m, n);
    if (t.requires_grad(a)) {
      t.grad_buffer(a).as_matrix(m, k).noalias() += gm * t.value(b).as_matrix(k, n).transpose();
    }
    if (t.requires_grad(b)) {
      t.grad_buffer(b).as_matrix(k, n).noalias() += t.value(a).as_matrix(m, k).transpose() * gm;
    }
  });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  Tape& t = same_tape(x, w);
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_w = w.shape()[0];
  if (w.shape()[1] != in) {
    throw std::invalid_argument("linear: input width " + std::to_string(in) +
                                " does not match weight " + shape_string(w.shape()));
  }
  if (bias && bias->shape() != Shape{out_w}) {
    throw std::invalid_argument("linear: bias shape " + shape_string(bias->shape()));
  }
  Tensor out({batch, out_w});
  auto om = out.as_matrix(batch, out_w);
  om.noalias() = x.value().as_matrix(batch, in) * w.value().as_matrix(out_w, in).transpose();
  if (bias) {
    om.rowwise() += bias->value().as_matrix(1, out_w).row(0);
  }
  const Var b = bias.value_or(Var{});
  const bool has_bias = bias.has_value();
  if (has_bias) same_tape(x, b);
  auto backward = [x, w, b, has_bias, batch, in, out_w](Tape& t, const Tensor& g) {
    auto gm = g.as_matrix(batch, out_w);
    if (t.requires_grad(x)) {
      t.grad_buffer(x).as_matrix(batch, in).noalias() += gm * t.value(w).as_matrix(out_w, in);
    }
    if (t.requires_grad(w)) {
      t.grad_buffer(w).as_matrix(out_w, in).noalias() +=
          gm.transpose() * t.value(x).as_matrix(batch, in);
    }
    if (has_bias && t.requires_grad(b)) {
      t.grad_buffer(b).as_matrix(1, out_w) += gm.colwise().sum();
    }
  };
  if (has_bias) return t.record("linear", std::move(out), {x, w, b}, backward);
  return t.record("linear", std::move(out), {x, w}, backward);
}

Var row_dot(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_rank("row_dot", a, 2);
  require_same_shape("row_dot", a, b);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out({rows, 1});
  out.as_matrix(rows, 1) = a.value().as_matrix(rows, cols).cwiseProduct(
                               b.value().as_matrix(rows, cols)).rowwise().sum();
  return t.record("row_dot", std::move(out), {a, b}, [a, b, rows, cols](Tape& t, const Tensor& g) {
    Eigen::VectorXd gv = g.as_matrix(rows, 1).col(0);
    if (t.requires_grad(a)) {
      t.grad_buffer(a).as_matrix(rows, cols) +=
          gv.asDiagonal() * t.value(b).as_matrix(rows, cols);
    }
    if (t.requires_grad(b)) {
      t.grad_buffer(b).as_matrix(rows, cols) +=
          gv.asDiagonal() * t.value(a).as_matrix(rows, cols);
    }
  });
}

Var scale_rows(Var a, Var c) {
  Tape& t = same_tape(a, c);
  require_rank("scale_rows", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (c.shape() != Shape{rows, 1}) {
    throw std::invalid_argument("scale_rows: factor shape " + shape_string(c.shape()));
  }
  Tensor out({rows, cols});
  Eigen::VectorXd cv = c.value().as_matrix(rows, 1).col(0);
  out.as_matrix(rows, cols) = cv.asDiagonal() * a.value().as_matrix(rows, cols);
  return t.record("scale_rows", std::move(out), {a, c}, [a, c, rows, cols](Tape& t, const Tensor& g) {
    auto gm = g.as_matrix(rows, cols);
    if (t.requires_grad(a)) {
      Eigen::VectorXd cv = t.value(c).as_matrix(rows, 1).col(0);
      t.grad_buffer(a).as_matrix(rows, cols) += cv.asDiagonal() * gm;
    }
    if (t.requires_grad(c)) {
      t.grad_buffer(c).as_matrix(rows, 1) +=
          gm.cwiseProduct(t.value(a).as_matrix(rows, cols)).rowwise().sum();
    }
  });
}

Var guarded_div(Var num, Var den, double eps) {
  Tape& t = same_tape(num, den);
  require_same_shape("guarded_div", num, den);
  const std::size_t n = num.value().size();
  Tensor out(num.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double d = den.value()[i];
    out[i] = d < eps ? 0.0 : num.value()[i] / d;
  }
  return t.record("guarded_div", std::move(out), {num, den}, [num, den, eps, n](Tape& t, const Tensor& g) {
    const Tensor& nv = t.value(num);
    const Tensor& dv = t.value(den);
    if (t.requires_grad(num)) {
      Tensor& gn = t.grad_buffer(num);
      for (std::size_t i = 0; i < n; ++i) {
        if (dv[i] >= eps) gn[i] += g[i] / dv[i];
      }
    }
    if (t.requires_grad(den)) {
      Tensor& gd = t.grad_buffer(den);
      for (std::size_t i = 0; i < n; ++i) {
        if (dv[i] >= eps) gd[i] -= g[i] * nv[i] / (dv[i] * dv[i]);
      }
    }
  });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(arr(a.value()).sum());
  return a.tape->record("sum", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    arr(t.grad_buffer(a)) += g[0];
  });
}

Var sum_squares(Var a) {
  Tensor out = Tensor::scalar(arr(a.value()).square().sum());
  return a.tape->record("sum_squares", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    arr(t.grad_buffer(a)) += 2.0 * g[0] * arr(t.value(a));
  });
}

Var mean_squared_norm(Var a) {
  if (a.shape().empty() || a.shape()[0] == 0) {
    throw std::invalid_argument("mean_squared_norm: needs a leading batch dimension");
  }
  return scale(sum_squares(a), 1.0 / static_cast<double>(a.shape()[0]));
}

// ---------------------------------------------------------------------------
// Convolutions.

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 std::size_t stride, std::size_t padding) {
  if (kernel == 0 || stride == 0) {
    throw std::invalid_argument("conv1d: kernel and stride must be positive");
  }
  if (length + 2 * padding < kernel) {
    throw std::invalid_argument("conv1d: padded length " +
                                std::to_string(length + 2 * padding) +
                                " shorter than kernel " + std::to_string(kernel));
  }
  return (length + 2 * padding - kernel) / stride + 1;
}

std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t padding,
                                           std::size_t output_padding) {
  if (kernel == 0 || stride == 0 || length == 0) {
    throw std::invalid_argument("conv1d_transpose: kernel, stride and length must be positive");
  }
  if (output_padding >= stride && output_padding > 0) {
    throw std::invalid_argument("conv1d_transpose: output_padding must be below stride");
  }
  const std::size_t full = (length - 1) * stride + kernel + output_padding;
  if (full <= 2 * padding) {
    throw std::invalid_argument("conv1d_transpose: padding consumes the output");
  }
  return full - 2 * padding;
}

namespace {

// col[(c * k + j), o] = x[c, o * stride - padding + j] (0 outside the signal).
void im2col(const double* x, std::size_t channels, std::size_t length, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_len, double* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < kernel; ++j) {
      double* row = col + (c * kernel + j) * out_len;
      for (std::size_t o = 0; o < out_len; ++o) {
        const long pos = static_cast<long>(o * stride + j) - static_cast<long>(padding);
        row[o] = (pos >= 0 && pos < static_cast<long>(length))
                     ? x[c * length + static_cast<std::size_t>(pos)]
                     : 0.0;
      }
    }
  }
}

// Adjoint of im2col: x[c, o * stride - padding + j] += col[(c * k + j), o].
void col2im(const double* col, std::size_t channels, std::size_t length, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_len, double* x) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const double* row = col + (c * kernel + j) * out_len;
      for (std::size_t o = 0; o < out_len; ++o) {
        const long pos = static_cast<long>(o * stride + j) - static_cast<long>(padding);
        if (pos >= 0 && pos < static_cast<long>(length)) {
          x[c * length + static_cast<std::size_t>(pos)] += row[o];
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, kernel, stride, padding;
  std::size_t in_len;   // length of the conv1d-side "signal"
  std::size_t out_len;  // length of the conv1d-side "output"
};

using Idx = Eigen::Index;

}  // namespace

Var conv1d(Var x, Var w, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  Tape& t = same_tape(x, w);
  require_rank("conv1d input", x, 3);
  require_rank("conv1d filters", w, 3);
  ConvGeometry geo{};
  geo.batch = x.shape()[0];
  geo.in_ch = x.shape()[1];
  geo.in_len = x.shape()[2];
  geo.out_ch = w.shape()[0];
  geo.kernel = w.shape()[2];
  geo.stride = stride;
  geo.padding = padding;
  if (w.shape()[1] != geo.in_ch) {
    throw std::invalid_argument("conv1d: filter channels " + shape_string(w.shape()) +
                                " do not match input " + shape_string(x.shape()));
  }
  if (bias && bias->shape() != Shape{geo.out_ch}) {
    throw std::invalid_argument("conv1d: bias shape " + shape_string(bias->shape()));
  }
  geo.out_len = conv1d_output_length(geo.in_len, geo.kernel, stride, padding);

  const std::size_t ck = geo.in_ch * geo.kernel;
  Tensor out({geo.batch, geo.out_ch, geo.out_len});
  RowMatrix col(static_cast<Idx>(ck), static_cast<Idx>(geo.out_len));
  auto wm = w.value().as_matrix(geo.out_ch, ck);
  for (std::size_t b = 0; b < geo.batch; ++b) {
    im2col(x.value().data() + b * geo.in_ch * geo.in_len, geo.in_ch, geo.in_len, geo.kernel,
           stride, padding, geo.out_len, col.data());
    RowMap ob(out.data() + b * geo.out_ch * geo.out_len, static_cast<Idx>(geo.out_ch),
              static_cast<Idx>(geo.out_len));
    ob.noalias() = wm * col;
    if (bias) {
      ob.colwise() += bias->value().as_matrix(geo.out_ch, 1).col(0);
    }
  }

  const Var bv = bias.value_or(Var{});
  const bool has_bias = bias.has_value();
  if (has_bias) same_tape(x, bv);
  auto backward = [x, w, bv, has_bias, geo, ck](Tape& t, const Tensor& g) {
    RowMatrix col(static_cast<Idx>(ck), static_cast<Idx>(geo.out_len));
    RowMatrix dcol(static_cast<Idx>(ck), static_cast<Idx>(geo.out_len));
    auto wm = t.value(w).as_matrix(geo.out_ch, ck);
    const bool gx = t.requires_grad(x);
    const bool gw = t.requires_grad(w);
    const bool gb = has_bias && t.requires_grad(bv);
    for (std::size_t b = 0; b < geo.batch; ++b) {
      ConstRowMap gb_map(g.data() + b * geo.out_ch * geo.out_len, static_cast<Idx>(geo.out_ch),
                         static_cast<Idx>(geo.out_len));
      if (gw) {
        im2col(t.value(x).data() + b * geo.in_ch * geo.in_len, geo.in_ch, geo.in_len,
               geo.kernel, geo.stride, geo.padding, geo.out_len, col.data());
        t.grad_buffer(w).as_matrix(geo.out_ch, ck).noalias() += gb_map * col.transpose();
      }
      if (gx) {
        dcol.noalias() = wm.transpose() * gb_map;
        col2im(dcol.data(), geo.in_ch, geo.in_len, geo.kernel, geo.stride, geo.padding,
               geo.out_len, t.grad_buffer(x).data() + b * geo.in_ch * geo.in_len);
      }
      if (gb) {
        t.grad_buffer(bv).as_matrix(geo.out_ch, 1) += gb_map.rowwise().sum();
      }
    }
  };
  if (has_bias) return t.record("conv1d", std::move(out), {x, w, bv}, backward);
  return t.record("conv1d", std::move(out), {x, w}, backward);
}

Var conv1d_transpose(Var x, Var w, std::optional<Var> bias, std::size_t stride,
                     std::size_t padding, std::size_t output_padding) {
  Tape& t = same_tape(x, w);
  require_rank("conv1d_transpose input", x, 3);
  require_rank("conv1d_transpose filters", w, 3);
  // Here "in" is the transposed op's input; on the conv1d side it is the output.
  const std::size_t batch = x.shape()[0];
  const std::size_t in_ch = x.shape()[1];
  const std::size_t in_len = x.shape()[2];
  if (w.shape()[0] != in_ch) {
    throw std::invalid_argument("conv1d_transpose: filter channels " +
                                shape_string(w.shape()) + " do not match input " +
                                shape_string(x.shape()));
  }
  const std::size_t out_ch = w.shape()[1];
  const std::size_t kernel = w.shape()[2];
  if (bias && bias->shape() != Shape{out_ch}) {
    throw std::invalid_argument("conv1d_transpose: bias shape " + shape_string(bias->shape()));
  }
  const std::size_t out_len =
      conv1d_transpose_output_length(in_len, kernel, stride, padding, output_padding);
  const std::size_t ck = out_ch * kernel;

  Tensor out({batch, out_ch, out_len});
  RowMatrix cols(static_cast<Idx>(ck), static_cast<Idx>(in_len));
  auto wm = w.value().as_matrix(in_ch, ck);
  for (std::size_t b = 0; b < batch; ++b) {
    ConstRowMap xb(x.value().data() + b * in_ch * in_len, static_cast<Idx>(in_ch),
                   static_cast<Idx>(in_len));
    cols.noalias() = wm.transpose() * xb;
    double* ob = out.data() + b * out_ch * out_len;
    col2im(cols.data(), out_ch, out_len, kernel, stride, padding, in_len, ob);
    if (bias) {
      RowMap om(ob, static_cast<Idx>(out_ch), static_cast<Idx>(out_len));
      om.colwise() += bias->value().as_matrix(out_ch, 1).col(0);
    }
  }

  const Var bv = bias.value_or(Var{});
  const bool has_bias = bias.has_value();
  if (has_bias) same_tape(x, bv);
  auto backward = [=](Tape& t, const Tensor& g) {
    RowMatrix dcols(static_cast<Idx>(ck), static_cast<Idx>(in_len));
    auto wm = t.value(w).as_matrix(in_ch, ck);
    const bool gx = t.requires_grad(x);
    const bool gw = t.requires_grad(w);
    const bool gb = has_bias && t.requires_grad(bv);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* gbp = g.data() + b * out_ch * out_len;
      im2col(gbp, out_ch, out_len, kernel, stride, padding, in_len, dcols.data());
      if (gx) {
        RowMap dx(t.grad_buffer(x).data() + b * in_ch * in_len, static_cast<Idx>(in_ch),
                  static_cast<Idx>(in_len));
        dx.noalias() += wm * dcols;
      }
      if (gw) {
        ConstRowMap xb(t.value(x).data() + b * in_ch * in_len, static_cast<Idx>(in_ch),
                       static_cast<Idx>(in_len));
        t.grad_buffer(w).as_matrix(in_ch, ck).noalias() += xb * dcols.transpose();
      }
      if (gb) {
        ConstRowMap gm(gbp, static_cast<Idx>(out_ch), static_cast<Idx>(out_len));
        t.grad_buffer(bv).as_matrix(out_ch, 1) += gm.rowwise().sum();
      }
    }
  };
  if (has_bias) return t.record("conv1d_transpose", std::move(out), {x, w, bv}, backward);
  return t.record("conv1d_transpose", std::move(out), {x, w}, backward);
}

}  // namespace rom::nn
