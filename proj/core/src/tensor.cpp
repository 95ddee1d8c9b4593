// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace ctcadapt {

namespace {

thread_local int g_no_grad_depth = 0;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::shared_ptr<TensorImpl> make_node(Shape shape, const char* op) {
  auto impl = std::make_shared<TensorImpl>();
  impl->op = op;
  int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), 0.0);
  return impl;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Attach tape linkage when recording is on and some input needs gradients.
void record(const std::shared_ptr<TensorImpl>& out,
            std::initializer_list<const Tensor*> ins,
            std::function<void(TensorImpl&)> fn) {
  if (g_no_grad_depth > 0) return;
  bool rg = false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) rg = true;
  if (!rg) return;
  out->requires_grad = true;
  out->inputs.reserve(ins.size());
  for (const Tensor* t : ins) out->inputs.push_back(t->impl());
  out->backward_fn = std::move(fn);
}

void record(const std::shared_ptr<TensorImpl>& out, const std::vector<Tensor>& ins,
            std::function<void(TensorImpl&)> fn) {
  if (g_no_grad_depth > 0) return;
  bool rg = false;
  for (const Tensor& t : ins)
    if (t.requires_grad()) rg = true;
  if (!rg) return;
  out->requires_grad = true;
  out->inputs.reserve(ins.size());
  for (const Tensor& t : ins) out->inputs.push_back(t.impl());
  out->backward_fn = std::move(fn);
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined tensor");
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

enum class Broadcast { Same, Scalar, Row, Col };

Broadcast classify_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (shape_numel(b) == 1) return Broadcast::Scalar;
  if (a.size() == 2) {
    int64_t m = a[0], n = a[1];
    if (b.size() == 1 && b[0] == n) return Broadcast::Row;
    if (b.size() == 2 && b[0] == 1 && b[1] == n) return Broadcast::Row;
    if (b.size() == 2 && b[0] == m && b[1] == 1) return Broadcast::Col;
  }
  shape_fail(op, a, b);
}

// index of the matching b entry for flat position i of a
struct BroadcastIndex {
  Broadcast kind;
  int64_t cols;
  int64_t operator()(int64_t i) const {
    switch (kind) {
      case Broadcast::Same: return i;
      case Broadcast::Scalar: return 0;
      case Broadcast::Row: return i % cols;
      case Broadcast::Col: return i / cols;
    }
    return 0;
  }
};

}  // namespace

std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::ostringstream os;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_recording_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = make_node(std::move(shape), "leaf");
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("from_vector: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.impl()->data) v = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  if (rank() != 2) throw ShapeError("at(r,c): tensor is not 2-D");
  return impl_->data[static_cast<size_t>(r * dim(1) + c)];
}

Tensor Tensor::clone_detached() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(impl);
}

// ---- elementwise with broadcast --------------------------------------------

namespace {

template <typename Fwd>
Tensor binary_ew(const char* name, const Tensor& a, const Tensor& b, Fwd f,
                 bool is_mul, double b_sign) {
  check_defined(a, name);
  check_defined(b, name);
  Broadcast kind = classify_broadcast(name, a.shape(), b.shape());
  int64_t cols = a.rank() == 2 ? a.dim(1) : a.size();
  BroadcastIndex bi{kind, cols};

  auto out = make_node(a.shape(), name);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int64_t i = 0; i < a.size(); ++i)
    out->data[static_cast<size_t>(i)] = f(av[static_cast<size_t>(i)], bv[static_cast<size_t>(bi(i))]);

  record(out, {&a, &b}, [bi, is_mul, b_sign](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    TensorImpl& ib = *o.inputs[1];
    int64_t n = static_cast<int64_t>(o.data.size());
    if (ia.requires_grad) {
      ia.ensure_grad();
      if (is_mul) {
        for (int64_t i = 0; i < n; ++i)
          ia.grad[static_cast<size_t>(i)] +=
              o.grad[static_cast<size_t>(i)] * ib.data[static_cast<size_t>(bi(i))];
      } else {
        for (int64_t i = 0; i < n; ++i)
          ia.grad[static_cast<size_t>(i)] += o.grad[static_cast<size_t>(i)];
      }
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      if (is_mul) {
        for (int64_t i = 0; i < n; ++i)
          ib.grad[static_cast<size_t>(bi(i))] +=
              o.grad[static_cast<size_t>(i)] * ia.data[static_cast<size_t>(i)];
      } else {
        for (int64_t i = 0; i < n; ++i)
          ib.grad[static_cast<size_t>(bi(i))] += b_sign * o.grad[static_cast<size_t>(i)];
      }
    }
  });
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew("add", a, b, [](double x, double y) { return x + y; }, false, 1.0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew("sub", a, b, [](double x, double y) { return x - y; }, false, -1.0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew("mul", a, b, [](double x, double y) { return x * y; }, true, 1.0);
}

Tensor add(const Tensor& a, double c) {
  check_defined(a, "add");
  auto out = make_node(a.shape(), "add_const");
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.values()[i] + c;
  record(out, {&a}, [](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (size_t i = 0; i < o.data.size(); ++i) ia.grad[i] += o.grad[i];
  });
  return Tensor(out);
}

Tensor mul(const Tensor& a, double c) {
  check_defined(a, "mul");
  auto out = make_node(a.shape(), "mul_const");
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.values()[i] * c;
  record(out, {&a}, [c](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (size_t i = 0; i < o.data.size(); ++i) ia.grad[i] += c * o.grad[i];
  });
  return Tensor(out);
}

// ---- matmul / transpose -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", a.shape(), b.shape());
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node({m, n}, "matmul");
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = out->data.data();
  for (int64_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  record(out, {&a, &b}, [m, k, n](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    TensorImpl& ib = *o.inputs[1];
    const double* G = o.grad.data();
    if (ia.requires_grad) {
      ia.ensure_grad();
      const double* B = ib.data.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = G + i * n;
          const double* brow = B + p * n;
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ia.grad[static_cast<size_t>(i * k + p)] += s;
        }
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      const double* A = ia.data.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = G + i * n;
          double* brow = ib.grad.data() + p * n;
          for (int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
    }
  });
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  int64_t m = a.dim(0), n = a.dim(1);
  auto out = make_node({n, m}, "transpose");
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out->data[static_cast<size_t>(j * m + i)] = a.values()[static_cast<size_t>(i * n + j)];
  record(out, {&a}, [m, n](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        ia.grad[static_cast<size_t>(i * n + j)] += o.grad[static_cast<size_t>(j * m + i)];
  });
  return Tensor(out);
}

// ---- unary nonlinearities -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd f, Bwd dfdx_from_out_and_in) {
  check_defined(a, name);
  auto out = make_node(a.shape(), name);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = f(a.values()[i]);
  record(out, {&a}, [dfdx_from_out_and_in](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (size_t i = 0; i < o.data.size(); ++i)
      ia.grad[i] += o.grad[i] * dfdx_from_out_and_in(o.data[i], ia.data[i]);
  });
  return Tensor(out);
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a,
                  [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                : std::exp(x) / (1.0 + std::exp(x)); },
                  [](double y, double) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double y, double) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double, double x) { return 1.0 / x; });
}

// ---- softmax / logsumexp ------------------------------------------------------

Tensor softmax(const Tensor& a) {
  check_defined(a, "softmax");
  if (a.size() == 0) throw ValueError("softmax: empty input");
  if (a.rank() != 1 && a.rank() != 2)
    throw ShapeError("softmax: expected 1-D or 2-D, got " + shape_str(a.shape()));
  int64_t rows = a.rank() == 2 ? a.dim(0) : 1;
  int64_t n = a.rank() == 2 ? a.dim(1) : a.dim(0);
  if (n < 1) throw ValueError("softmax: empty rows");
  auto out = make_node(a.shape(), "softmax");
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.values().data() + r * n;
    double* y = out->data.data() + r * n;
    double m = x[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (int64_t j = 0; j < n; ++j) y[j] /= z;
  }
  record(out, {&a}, [rows, n](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* da = ia.grad.data() + r * n;
      for (int64_t j = 0; j < n; ++j) da[j] += y[j] * (g[j] - dot);
    }
  });
  return Tensor(out);
}

namespace {

// shared core: lse over `count` strided entries
double lse_strided(const double* x, int64_t count, int64_t stride) {
  double m = kNegInf;
  for (int64_t i = 0; i < count; ++i) m = std::max(m, x[i * stride]);
  if (m == kNegInf) return kNegInf;
  double z = 0.0;
  for (int64_t i = 0; i < count; ++i) z += std::exp(x[i * stride] - m);
  return m + std::log(z);
}

void lse_backward_strided(const double* x, double out, double gout, double* dx,
                          int64_t count, int64_t stride) {
  if (out == kNegInf) return;  // all terms absent, nothing to propagate
  for (int64_t i = 0; i < count; ++i)
    dx[i * stride] += gout * std::exp(x[i * stride] - out);
}

}  // namespace

Tensor logsumexp(const Tensor& a) {
  check_defined(a, "logsumexp");
  if (a.size() == 0) throw ValueError("logsumexp: empty input");
  auto out = make_node({}, "logsumexp");
  out->data[0] = lse_strided(a.values().data(), a.size(), 1);
  record(out, {&a}, [n = a.size()](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    lse_backward_strided(ia.data.data(), o.data[0], o.grad[0], ia.grad.data(), n, 1);
  });
  return Tensor(out);
}

Tensor logsumexp(const Tensor& a, int axis) {
  check_defined(a, "logsumexp");
  if (a.rank() != 2) throw ShapeError("logsumexp(axis): expected 2-D, got " + shape_str(a.shape()));
  if (axis != 0 && axis != 1) throw ValueError("logsumexp: axis must be 0 or 1");
  int64_t m = a.dim(0), n = a.dim(1);
  Shape oshape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  auto out = make_node(oshape, "logsumexp_axis");
  const double* x = a.values().data();
  if (axis == 0) {
    for (int64_t j = 0; j < n; ++j) out->data[static_cast<size_t>(j)] = lse_strided(x + j, m, n);
  } else {
    for (int64_t i = 0; i < m; ++i) out->data[static_cast<size_t>(i)] = lse_strided(x + i * n, n, 1);
  }
  record(out, {&a}, [m, n, axis](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    const double* x = ia.data.data();
    double* dx = ia.grad.data();
    if (axis == 0) {
      for (int64_t j = 0; j < n; ++j)
        lse_backward_strided(x + j, o.data[static_cast<size_t>(j)], o.grad[static_cast<size_t>(j)],
                             dx + j, m, n);
    } else {
      for (int64_t i = 0; i < m; ++i)
        lse_backward_strided(x + i * n, o.data[static_cast<size_t>(i)],
                             o.grad[static_cast<size_t>(i)], dx + i * n, n, 1);
    }
  });
  return Tensor(out);
}

// ---- structural ops ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat: no parts");
  // rank-0 scalars stack like length-1 vectors
  std::vector<Shape> shapes;
  shapes.reserve(parts.size());
  for (const Tensor& p : parts) {
    check_defined(p, "concat");
    shapes.push_back(p.rank() == 0 ? Shape{1} : p.shape());
  }
  size_t rank = shapes[0].size();
  if (rank > 2 || axis < 0 || static_cast<size_t>(axis) >= rank)
    throw ShapeError("concat: bad axis for rank " + std::to_string(rank));
  int64_t total = 0;
  for (const Shape& s : shapes) {
    if (s.size() != rank) throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d)
      if (d != static_cast<size_t>(axis) && s[d] != shapes[0][d])
        shape_fail("concat", shapes[0], s);
    total += s[static_cast<size_t>(axis)];
  }
  Shape oshape = shapes[0];
  oshape[static_cast<size_t>(axis)] = total;
  auto out = make_node(oshape, "concat");

  std::vector<int64_t> offsets(parts.size());
  if (rank == 1 || axis == 0) {
    int64_t off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      std::copy(parts[p].values().begin(), parts[p].values().end(), out->data.begin() + off);
      off += parts[p].size();
    }
  } else {  // rank 2, axis 1
    int64_t m = oshape[0], ncols = oshape[1];
    int64_t coloff = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = coloff;
      int64_t pc = shapes[p][1];
      for (int64_t i = 0; i < m; ++i)
        std::copy_n(parts[p].values().data() + i * pc, pc,
                    out->data.data() + i * ncols + coloff);
      coloff += pc;
    }
  }
  record(out, parts, [shapes, offsets, axis, rank, oshape](TensorImpl& o) {
    for (size_t p = 0; p < o.inputs.size(); ++p) {
      TensorImpl& ip = *o.inputs[p];
      if (!ip.requires_grad) continue;
      ip.ensure_grad();
      if (rank == 1 || axis == 0) {
        for (size_t i = 0; i < ip.data.size(); ++i)
          ip.grad[i] += o.grad[static_cast<size_t>(offsets[p]) + i];
      } else {
        int64_t m = oshape[0], ncols = oshape[1], pc = shapes[p][1];
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < pc; ++j)
            ip.grad[static_cast<size_t>(i * pc + j)] +=
                o.grad[static_cast<size_t>(i * ncols + offsets[p] + j)];
      }
    }
  });
  return Tensor(out);
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  check_defined(a, "slice");
  if (a.rank() < 1 || a.rank() > 2) throw ShapeError("slice: expected 1-D or 2-D");
  if (axis < 0 || axis >= a.rank()) throw ShapeError("slice: bad axis");
  int64_t extent = a.dim(axis);
  if (start < 0 || len < 0 || start + len > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for axis size " +
                     std::to_string(extent));
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = len;
  auto out = make_node(oshape, "slice");
  int64_t rows = a.rank() == 2 ? a.dim(0) : 1;
  int64_t cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  if (a.rank() == 1 || axis == 1) {
    int64_t r0 = 0, c0 = start, orows = a.rank() == 1 ? 1 : rows;
    for (int64_t i = 0; i < orows; ++i)
      std::copy_n(a.values().data() + (r0 + i) * cols + c0, len, out->data.data() + i * len);
  } else {  // rank 2, axis 0
    std::copy_n(a.values().data() + start * cols, len * cols, out->data.data());
  }
  record(out, {&a}, [axis, start, len, rows, cols, r = a.rank()](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    if (r == 1 || axis == 1) {
      int64_t orows = r == 1 ? 1 : rows;
      for (int64_t i = 0; i < orows; ++i)
        for (int64_t j = 0; j < len; ++j)
          ia.grad[static_cast<size_t>(i * cols + start + j)] +=
              o.grad[static_cast<size_t>(i * len + j)];
    } else {
      for (int64_t i = 0; i < len * cols; ++i)
        ia.grad[static_cast<size_t>(start * cols + i)] += o.grad[static_cast<size_t>(i)];
    }
  });
  return Tensor(out);
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto out = make_node(std::move(shape), "reshape");
  std::copy(a.values().begin(), a.values().end(), out->data.begin());
  record(out, {&a}, [](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) ia.grad[i] += o.grad[i];
  });
  return Tensor(out);
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  auto out = make_node({}, "sum");
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->data[0] = s;
  record(out, {&a}, [](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (double& g : ia.grad) g += o.grad[0];
  });
  return Tensor(out);
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  if (a.size() == 0) throw ValueError("mean: empty input");
  Tensor s = sum(a);
  return mul(s, 1.0 / static_cast<double>(a.size()));
}

namespace {

Tensor reduce_axis(const char* name, const Tensor& a, int axis, double scale) {
  check_defined(a, name);
  if (a.rank() != 2) throw ShapeError(std::string(name) + "(axis): expected 2-D");
  if (axis != 0 && axis != 1) throw ValueError(std::string(name) + ": axis must be 0 or 1");
  int64_t m = a.dim(0), n = a.dim(1);
  Shape oshape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  auto out = make_node(oshape, name);
  const double* x = a.values().data();
  if (axis == 0) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out->data[static_cast<size_t>(j)] += x[i * n + j];
  } else {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out->data[static_cast<size_t>(i)] += x[i * n + j];
  }
  for (double& v : out->data) v *= scale;
  record(out, {&a}, [m, n, axis, scale](TensorImpl& o) {
    TensorImpl& ia = *o.inputs[0];
    ia.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        ia.grad[static_cast<size_t>(i * n + j)] +=
            scale * o.grad[static_cast<size_t>(axis == 0 ? j : i)];
  });
  return Tensor(out);
}

}  // namespace

Tensor sum(const Tensor& a, int axis) { return reduce_axis("sum", a, axis, 1.0); }

Tensor mean(const Tensor& a, int axis) {
  if (a.rank() != 2) throw ShapeError("mean(axis): expected 2-D");
  int64_t count = axis == 0 ? a.dim(0) : a.dim(1);
  if (count == 0) throw ValueError("mean: empty axis");
  return reduce_axis("mean", a, axis, 1.0 / static_cast<double>(count));
}

// ---- embedding gather -----------------------------------------------------------

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
  check_defined(table, "embedding_gather");
  if (table.rank() != 2) throw ShapeError("embedding_gather: table must be 2-D");
  if (ids.empty()) throw ValueError("embedding_gather: empty id list");
  int64_t v = table.dim(0), e = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ValueError("embedding_gather: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  auto out = make_node({static_cast<int64_t>(ids.size()), e}, "embedding_gather");
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.values().data() + static_cast<int64_t>(ids[i]) * e, e,
                out->data.data() + static_cast<int64_t>(i) * e);
  record(out, {&table}, [ids, e](TensorImpl& o) {
    TensorImpl& it = *o.inputs[0];
    it.ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t j = 0; j < e; ++j)
        it.grad[static_cast<size_t>(static_cast<int64_t>(ids[i]) * e + j)] +=
            o.grad[static_cast<size_t>(static_cast<int64_t>(i) * e + j)];
  });
  return Tensor(out);
}

// ---- backward -------------------------------------------------------------------

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad)
    throw ValueError("backward: loss is detached from every gradient-requiring tensor");

  // iterative post-order DFS: inputs land before consumers
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      TensorImpl* child = f.node->inputs[f.next_input++].get();
      if (child->requires_grad && visited.insert(child).second)
        stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

// ---- gradient checking -------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0) || opts.eps > 1e-3)
    throw ValueError("grad_check: eps must lie in (0, 1e-3]");

  Tensor loss = f();
  if (loss.size() != 1) throw ShapeError("grad_check: f() must return a scalar");
  if (!std::isfinite(loss.item())) throw ValueError("grad_check: non-finite loss");
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    std::vector<double> g(static_cast<size_t>(p.size()), 0.0);
    if (!p.grad().empty()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  double max_rel = 0.0;
  NoGradGuard ng;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<int64_t> entries;
    int64_t n = p.size();
    if (opts.max_entries_per_tensor > 0 && n > opts.max_entries_per_tensor) {
      Rng rng(mix64(opts.sample_seed ^ (0x5eedULL + pi)));
      std::unordered_set<int64_t> seen;
      while (static_cast<int>(entries.size()) < opts.max_entries_per_tensor) {
        int64_t i = rng.uniform_int(0, n - 1);
        if (seen.insert(i).second) entries.push_back(i);
      }
      std::sort(entries.begin(), entries.end());
    } else {
      entries.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) entries[static_cast<size_t>(i)] = i;
    }
    auto vals = p.values_mut();
    for (int64_t i : entries) {
      double orig = vals[static_cast<size_t>(i)];
      vals[static_cast<size_t>(i)] = orig + opts.eps;
      double lp = f().item();
      vals[static_cast<size_t>(i)] = orig - opts.eps;
      double lm = f().item();
      vals[static_cast<size_t>(i)] = orig;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw ValueError("grad_check: non-finite loss during perturbation");
      double numeric = (lp - lm) / (2.0 * opts.eps);
      double a = analytic[pi][static_cast<size_t>(i)];
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ctcadapt
