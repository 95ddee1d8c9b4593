// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"

namespace ctcadapt {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantic handle onto a node of the dynamically recorded graph.
// Tensors without recorded history are plain immutable values.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const double> values() const { return impl_->data; }
  // In-place mutation is for leaves only (optimizer updates, data loading);
  // mutating a node with recorded history invalidates its tape.
  std::span<double> values_mut() { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  // Mutable gradient view for optimizer-side rescaling (e.g. norm clipping).
  std::span<double> grad_mut() { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  double item() const;
  double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const;

  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Deep copy of the values as a fresh leaf (no history, no grad).
  Tensor clone_detached() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Scoped guard that disables tape recording; forward values are unchanged.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_recording_enabled();

// ---- primitive operations -------------------------------------------------
// Elementwise add/sub/mul accept equal shapes, a [n] or [1xn] row vector
// against [mxn], an [mx1] column against [mxn], or a single-element tensor
// broadcast over everything.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// softmax over the last axis (1-D vector or rows of a 2-D matrix),
// computed with max subtraction.
Tensor softmax(const Tensor& a);

// log(sum(exp(.))) over all entries -> scalar. -inf entries are absent terms;
// an all -inf input yields -inf.
Tensor logsumexp(const Tensor& a);
// reduce along `axis` of a 2-D tensor; keeps the reduced axis at size 1.
Tensor logsumexp(const Tensor& a, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);

// rows of `table` selected by ids; gradient scatter-adds into the table.
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);

// ---- backward pass ----------------------------------------------------------
// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node the
// loss depends on. Accumulation is additive across calls; use zero_grad on
// leaves between steps.
void backward(const Tensor& loss);

// ---- gradient checking -------------------------------------------------------
struct GradCheckOptions {
  double eps = 1e-5;
  // With max_entries_per_tensor > 0, only a deterministic sample of entries
  // per parameter is probed.
  int max_entries_per_tensor = 0;
  uint64_t sample_seed = 0;
};

// Max over checked parameter entries of
// |analytic - central difference| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  const GradCheckOptions& opts = {});

}  // namespace ctcadapt
