#include "clnet/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>

#include "clnet/errors.hpp"

namespace clnet::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

bool needs_grad(std::initializer_list<const Tensor*> inputs)
{
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void record(Tensor& out, Tape::BackwardFn fn)
{
  out.set_requires_grad(true);
  g_active_tape->record(out.storage(), std::move(fn));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b)
{
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_same(const char* op, const Tensor& a, const Tensor& b)
{
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

void require_matrix(const char* op, const Tensor& a)
{
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
}

// Gradient buffer of an input that participates in backward, or nullptr.
std::vector<double>* grad_of(const std::shared_ptr<Storage>& s)
{
  if (!s->requires_grad) return nullptr;
  s->ensure_grad();
  return &s->grad;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv)
{
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a})) {
    record(r, [as = a.storage(), rs = r.storage(), deriv] {
      auto* ga = grad_of(as);
      if (!ga) return;
      for (std::size_t i = 0; i < rs->grad.size(); ++i)
        (*ga)[i] += rs->grad[i] * deriv(as->data[i], rs->data[i]);
    });
  }
  return r;
}

double stable_sigmoid(double x)
{
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class RowOp { kAdd, kSub, kMul, kDiv };

Tensor row_broadcast(const Tensor& x, const Tensor& b, RowOp op, const char* name)
{
  require_matrix(name, x);
  const std::size_t n = x.rows(), d = x.cols();
  if (b.size() != d) shape_fail(name, x.shape(), b.shape());
  if (op == RowOp::kDiv) {
    for (double v : b.data())
      if (v == 0.0) throw DomainError(std::string(name) + ": division by zero");
  }
  std::vector<double> out(n * d);
  const auto xv = x.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = xv.data() + i * d;
    double* o = out.data() + i * d;
    switch (op) {
      case RowOp::kAdd: for (std::size_t j = 0; j < d; ++j) o[j] = u[j] + bv[j]; break;
      case RowOp::kSub: for (std::size_t j = 0; j < d; ++j) o[j] = u[j] - bv[j]; break;
      case RowOp::kMul: for (std::size_t j = 0; j < d; ++j) o[j] = u[j] * bv[j]; break;
      case RowOp::kDiv: for (std::size_t j = 0; j < d; ++j) o[j] = u[j] / bv[j]; break;
    }
  }
  Tensor r(x.shape(), std::move(out));
  if (needs_grad({&x, &b})) {
    record(r, [xs = x.storage(), bs = b.storage(), rs = r.storage(), n, d, op] {
      auto* gx = grad_of(xs);
      auto* gb = grad_of(bs);
      const double* v = bs->data.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = rs->grad.data() + i * d;
        const double* u = xs->data.data() + i * d;
        if (gx) {
          double* dx = gx->data() + i * d;
          switch (op) {
            case RowOp::kAdd: for (std::size_t j = 0; j < d; ++j) dx[j] += g[j]; break;
            case RowOp::kSub: for (std::size_t j = 0; j < d; ++j) dx[j] += g[j]; break;
            case RowOp::kMul: for (std::size_t j = 0; j < d; ++j) dx[j] += g[j] * v[j]; break;
            case RowOp::kDiv: for (std::size_t j = 0; j < d; ++j) dx[j] += g[j] / v[j]; break;
          }
        }
        if (gb) {
          double* db = gb->data();
          switch (op) {
            case RowOp::kAdd: for (std::size_t j = 0; j < d; ++j) db[j] += g[j]; break;
            case RowOp::kSub: for (std::size_t j = 0; j < d; ++j) db[j] -= g[j]; break;
            case RowOp::kMul: for (std::size_t j = 0; j < d; ++j) db[j] += g[j] * u[j]; break;
            case RowOp::kDiv: for (std::size_t j = 0; j < d; ++j) db[j] -= g[j] * u[j] / (v[j] * v[j]); break;
          }
        }
      }
    });
  }
  return r;
}

}  // namespace

std::size_t shape_size(const Shape& shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : s_(std::make_shared<Storage>())
{
  if (shape_size(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad)
{
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::column(std::vector<double> values, bool requires_grad)
{
  const std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values), requires_grad);
}

std::size_t Tensor::cols() const
{
  if (rank() != 2) throw ShapeError("cols: expected a 2-D tensor, got " + shape_str(shape()));
  return s_->shape[1];
}

double Tensor::item() const
{
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return s_->data[0];
}

std::span<const double> Tensor::grad() const
{
  s_->ensure_grad();
  return s_->grad;
}

std::span<double> Tensor::mutable_grad()
{
  s_->ensure_grad();
  return s_->grad;
}

void Tensor::zero_grad() { s_->grad.assign(s_->data.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(s_->shape, s_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(s_->shape, s_->data, requires_grad); }

// ---- Tape -------------------------------------------------------------------

void Tape::record(std::shared_ptr<Storage> output, BackwardFn backward)
{
  nodes_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss)
{
  if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  loss.storage()->ensure_grad();
  loss.storage()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->backward();
  }
  // Intermediate gradients are spent; clearing them lets a later backward on
  // the same tape propagate only its own loss.
  for (auto& node : nodes_) node.output->grad.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b)
{
  require_same("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record(r, [as = a.storage(), bs = b.storage(), rs = r.storage()] {
      for (auto* g : {grad_of(as), grad_of(bs)})
        if (g)
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += rs->grad[i];
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b)
{
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record(r, [as = a.storage(), bs = b.storage(), rs = r.storage()] {
      if (auto* ga = grad_of(as))
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += rs->grad[i];
      if (auto* gb = grad_of(bs))
        for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= rs->grad[i];
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b)
{
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record(r, [as = a.storage(), bs = b.storage(), rs = r.storage()] {
      auto* ga = grad_of(as);
      auto* gb = grad_of(bs);
      for (std::size_t i = 0; i < rs->grad.size(); ++i) {
        if (ga) (*ga)[i] += rs->grad[i] * bs->data[i];
        if (gb) (*gb)[i] += rs->grad[i] * as->data[i];
      }
    });
  }
  return r;
}

Tensor div(const Tensor& a, const Tensor& b)
{
  require_same("div", a, b);
  for (double v : b.data())
    if (v == 0.0) throw DomainError("div: division by zero");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record(r, [as = a.storage(), bs = b.storage(), rs = r.storage()] {
      auto* ga = grad_of(as);
      auto* gb = grad_of(bs);
      for (std::size_t i = 0; i < rs->grad.size(); ++i) {
        const double v = bs->data[i];
        if (ga) (*ga)[i] += rs->grad[i] / v;
        if (gb) (*gb)[i] -= rs->grad[i] * as->data[i] / (v * v);
      }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double s)
{
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s)
{
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor scale_by(const Tensor& a, const Tensor& s)
{
  if (s.size() != 1) shape_fail("scale_by", a.shape(), s.shape());
  const double k = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * k;
  Tensor r(a.shape(), std::move(out));
  if (needs_grad({&a, &s})) {
    record(r, [as = a.storage(), ss = s.storage(), rs = r.storage()] {
      auto* ga = grad_of(as);
      auto* gs = grad_of(ss);
      const double kk = ss->data[0];
      double acc = 0.0;
      for (std::size_t i = 0; i < rs->grad.size(); ++i) {
        if (ga) (*ga)[i] += rs->grad[i] * kk;
        acc += rs->grad[i] * as->data[i];
      }
      if (gs) (*gs)[0] += acc;
    });
  }
  return r;
}

Tensor relu(const Tensor& a)
{
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a)
{
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a)
{
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a)
{
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a)
{
  for (double v : a.data())
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a)
{
  for (double v : a.data())
    if (v < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v));
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor softplus(const Tensor& a)
{
  return unary(
      a, [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor clamp_min(const Tensor& a, double lo)
{
  return unary(a, [lo](double x) { return std::max(x, lo); }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---- broadcasting -----------------------------------------------------------

Tensor add_row(const Tensor& x, const Tensor& b) { return row_broadcast(x, b, RowOp::kAdd, "add_row"); }
Tensor sub_row(const Tensor& x, const Tensor& b) { return row_broadcast(x, b, RowOp::kSub, "sub_row"); }
Tensor mul_row(const Tensor& x, const Tensor& b) { return row_broadcast(x, b, RowOp::kMul, "mul_row"); }
Tensor div_row(const Tensor& x, const Tensor& b) { return row_broadcast(x, b, RowOp::kDiv, "div_row"); }

Tensor mul_rows(const Tensor& x, const Tensor& s)
{
  const std::size_t n = x.rows();
  if (s.size() != n) shape_fail("mul_rows", x.shape(), s.shape());
  const std::size_t d = x.row_size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * s[i];
  Tensor r(x.shape(), std::move(out));
  if (needs_grad({&x, &s})) {
    record(r, [xs = x.storage(), ss = s.storage(), rs = r.storage(), n, d] {
      auto* gx = grad_of(xs);
      auto* gs = grad_of(ss);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = rs->grad[i * d + j];
          if (gx) (*gx)[i * d + j] += g * ss->data[i];
          acc += g * xs->data[i * d + j];
        }
        if (gs) (*gs)[i] += acc;
      }
    });
  }
  return r;
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b)
{
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_fail("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor r({m, n}, std::move(out));
  if (needs_grad({&a, &b})) {
    record(r, [as = a.storage(), bs = b.storage(), rs = r.storage(), m, k, n] {
      ConstMap g(rs->grad.data(), m, n);
      if (auto* ga = grad_of(as))
        MutMap(ga->data(), m, k).noalias() += g * ConstMap(bs->data.data(), k, n).transpose();
      if (auto* gb = grad_of(bs))
        MutMap(gb->data(), k, n).noalias() += ConstMap(as->data.data(), m, k).transpose() * g;
    });
  }
  return r;
}

Tensor transpose(const Tensor& a)
{
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  Tensor r({n, m}, std::move(out));
  if (needs_grad({&a})) {
    record(r, [as = a.storage(), rs = r.storage(), m, n] {
      auto* ga = grad_of(as);
      if (!ga) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += rs->grad[j * m + i];
    });
  }
  return r;
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a)
{
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor r = Tensor::scalar(acc);
  if (needs_grad({&a})) {
    record(r, [as = a.storage(), rs = r.storage()] {
      auto* ga = grad_of(as);
      if (!ga) return;
      for (double& g : *ga) g += rs->grad[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& a)
{
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor variance(const Tensor& a)
{
  if (a.size() == 0) throw ShapeError("variance: empty tensor");
  const double n = static_cast<double>(a.size());
  double mu = 0.0;
  for (double v : a.data()) mu += v;
  mu /= n;
  double acc = 0.0;
  for (double v : a.data()) acc += (v - mu) * (v - mu);
  Tensor r = Tensor::scalar(acc / n);
  if (needs_grad({&a})) {
    record(r, [as = a.storage(), rs = r.storage(), mu, n] {
      auto* ga = grad_of(as);
      if (!ga) return;
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += rs->grad[0] * 2.0 * (as->data[i] - mu) / n;
    });
  }
  return r;
}

Tensor mean_rows(const Tensor& x)
{
  require_matrix("mean_rows", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  for (double& v : out) v /= static_cast<double>(n);
  Tensor r({1, d}, std::move(out));
  if (needs_grad({&x})) {
    record(r, [xs = x.storage(), rs = r.storage(), n, d] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gx)[i * d + j] += rs->grad[j] * inv;
    });
  }
  return r;
}

Tensor variance_rows(const Tensor& x)
{
  require_matrix("variance_rows", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ShapeError("variance_rows: no rows");
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> mu(d, 0.0), out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j];
  for (double& v : mu) v *= inv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mu[j];
      out[j] += c * c;
    }
  for (double& v : out) v *= inv;
  Tensor r({1, d}, std::move(out));
  if (needs_grad({&x})) {
    record(r, [xs = x.storage(), rs = r.storage(), mu = std::move(mu), n, d, inv] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          (*gx)[i * d + j] += rs->grad[j] * 2.0 * (xs->data[i * d + j] - mu[j]) * inv;
    });
  }
  return r;
}

// ---- structural -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts)
{
  if (parts.empty()) throw ShapeError("concat: no operands");
  for (const auto& p : parts) require_matrix("concat", p);
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != n) shape_fail("concat", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = widths[k];
    const auto src = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    offset += w;
  }
  Tensor r({n, total}, std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (active_tape() && any) {
    std::vector<std::shared_ptr<Storage>> inputs;
    for (const auto& p : parts) inputs.push_back(p.storage());
    record(r, [inputs = std::move(inputs), widths = std::move(widths), rs = r.storage(), n, total] {
      std::size_t off = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t w = widths[k];
        if (auto* g = grad_of(inputs[k]))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) (*g)[i * w + j] += rs->grad[i * total + off + j];
        off += w;
      }
    });
  }
  return r;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index)
{
  const std::size_t n = x.rows(), d = x.row_size();
  for (std::size_t idx : index)
    if (idx >= n)
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " + shape_str(x.shape()));
  std::vector<double> out(index.size() * d);
  const auto src = x.data();
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  Shape shape = x.shape();
  if (shape.empty()) shape = {1};
  shape[0] = index.size();
  Tensor r(std::move(shape), std::move(out));
  if (needs_grad({&x})) {
    record(r, [xs = x.storage(), rs = r.storage(), idx = std::vector<std::size_t>(index.begin(), index.end()), d] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) (*gx)[idx[r] * d + j] += rs->grad[r * d + j];
    });
  }
  return r;
}

Tensor reshape(const Tensor& x, Shape shape)
{
  if (shape_size(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  Tensor r(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (needs_grad({&x})) {
    record(r, [xs = x.storage(), rs = r.storage()] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += rs->grad[i];
    });
  }
  return r;
}

Tensor sum_groups(const Tensor& x, std::size_t group)
{
  require_matrix("sum_groups", x);
  if (group == 0 || x.rows() % group != 0)
    throw ShapeError("sum_groups: " + std::to_string(x.rows()) + " rows not divisible into groups of " +
                     std::to_string(group));
  const std::size_t groups = x.rows() / group, d = x.cols();
  std::vector<double> out(groups * d, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < d; ++j) out[g * d + j] += x[(g * group + r) * d + j];
  Tensor res({groups, d}, std::move(out));
  if (needs_grad({&x})) {
    record(res, [xs = x.storage(), rs = res.storage(), groups, group, d] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t r = 0; r < group; ++r)
          for (std::size_t j = 0; j < d; ++j) (*gx)[(g * group + r) * d + j] += rs->grad[g * d + j];
    });
  }
  return res;
}

Tensor max_groups(const Tensor& x, std::size_t group)
{
  require_matrix("max_groups", x);
  if (group == 0 || x.rows() % group != 0)
    throw ShapeError("max_groups: " + std::to_string(x.rows()) + " rows not divisible into groups of " +
                     std::to_string(group));
  const std::size_t groups = x.rows() / group, d = x.cols();
  std::vector<double> out(groups * d);
  std::vector<std::size_t> arg(groups * d);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = g * group;
      for (std::size_t r = 1; r < group; ++r)
        if (x[(g * group + r) * d + j] > x[best * d + j]) best = g * group + r;
      out[g * d + j] = x[best * d + j];
      arg[g * d + j] = best;
    }
  Tensor res({groups, d}, std::move(out));
  if (needs_grad({&x})) {
    record(res, [xs = x.storage(), rs = res.storage(), arg = std::move(arg), d] {
      auto* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t i = 0; i < arg.size(); ++i) (*gx)[arg[i] * d + i % d] += rs->grad[i];
    });
  }
  return res;
}

Tensor symmetric_min_eigenvector(const Tensor& m)
{
  require_matrix("symmetric_min_eigenvector", m);
  const std::size_t n = m.rows();
  if (m.cols() != n) shape_fail("symmetric_min_eigenvector", m.shape(), m.shape());
  const RowMatrix sym = 0.5 * (ConstMap(m.data().data(), n, n) + ConstMap(m.data().data(), n, n).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric_min_eigenvector: eigen solver failed");
  Eigen::VectorXd v = solver.eigenvectors().col(0);
  Eigen::Index big = 0;
  v.cwiseAbs().maxCoeff(&big);
  if (v(big) < 0.0) v = -v;
  Tensor r({n, 1}, std::vector<double>(v.data(), v.data() + n));
  if (needs_grad({&m})) {
    record(r, [ms = m.storage(), rs = r.storage(), vecs = Eigen::MatrixXd(solver.eigenvectors()),
               vals = Eigen::VectorXd(solver.eigenvalues()), v, n] {
      auto* gm = grad_of(ms);
      if (!gm) return;
      const Eigen::Map<const Eigen::VectorXd> g(rs->grad.data(), static_cast<Eigen::Index>(n));
      const double scale_ref = std::max(vals.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
      Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (Eigen::Index i = 1; i < static_cast<Eigen::Index>(n); ++i) {
        const double gap = vals(0) - vals(i);
        if (std::abs(gap) <= 1e-12 * scale_ref) continue;
        dm += (vecs.col(i).dot(g) / gap) * vecs.col(i) * v.transpose();
      }
      dm = 0.5 * (dm + dm.transpose()).eval();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          (*gm)[i * n + j] += dm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    });
  }
  return r;
}

// ---- gradient checking ------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h)
{
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  Tensor leaf = x.clone(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = f(leaf);
    if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(y.shape()));
    tape.backward(y);
  }
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradScope no_tape;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x.clone(false);
    Tensor minus = x.clone(false);
    plus.mutable_data()[i] += h;
    minus.mutable_data()[i] -= h;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace clnet::ad
