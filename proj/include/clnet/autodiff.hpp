#pragma once

// Dense row-major tensors of doubles with tape-based reverse-mode
// differentiation. Operations record themselves on the tape that is active
// on the calling thread (see TapeScope) whenever an operand requires a
// gradient; with no active tape they run as plain forward computations.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clnet::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad()
  {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Column vector of shape {n, 1}.
  static Tensor column(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t size() const { return s_->data.size(); }
  std::size_t rank() const { return s_->shape.size(); }
  // Leading dimension; the remaining dimensions form one "row".
  std::size_t rows() const { return s_->shape.empty() ? 1 : s_->shape[0]; }
  std::size_t row_size() const { return rows() == 0 ? 0 : size() / rows(); }
  std::size_t cols() const;

  std::span<const double> data() const { return s_->data; }
  std::span<double> mutable_data() { return s_->data; }
  double operator[](std::size_t i) const { return s_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }
  // Accumulated gradient; zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh leaf holding a copy of the values, detached from any tape.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

// Append-only record of differentiable operations. Node i only refers to
// tensors produced before it, so reverse append order is a valid reverse
// topological order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::shared_ptr<Storage> output, BackwardFn backward);
  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<Storage> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// a * s where s is a one-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// ---- broadcasting over rows of an N x d matrix ------------------------------
// X + b, X - b, X / b with b holding d values (one per column).
Tensor add_row(const Tensor& x, const Tensor& b);
Tensor sub_row(const Tensor& x, const Tensor& b);
Tensor mul_row(const Tensor& x, const Tensor& b);
Tensor div_row(const Tensor& x, const Tensor& b);
// Row i of X scaled by s[i]; s holds N values.
Tensor mul_rows(const Tensor& x, const Tensor& s);

// ---- linear algebra ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- reductions -------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Population variance over all entries.
Tensor variance(const Tensor& a);
// Per-column mean / population variance of an N x d matrix, shape {1, d}.
Tensor mean_rows(const Tensor& x);
Tensor variance_rows(const Tensor& x);

// ---- structural -------------------------------------------------------------
Tensor concat(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
Tensor reshape(const Tensor& x, Shape shape);
// Sum / max over consecutive groups of `group` rows: (G*group) x d -> G x d.
Tensor sum_groups(const Tensor& x, std::size_t group);
Tensor max_groups(const Tensor& x, std::size_t group);

// Unit eigenvector of the smallest eigenvalue of a symmetric n x n matrix,
// returned as {n, 1}. The sign is fixed so the largest-magnitude entry is
// positive.
Tensor symmetric_min_eigenvector(const Tensor& m);

// max over coordinates of |analytic - numeric| / max(1, |numeric|), with
// central differences of step h.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace clnet::ad
