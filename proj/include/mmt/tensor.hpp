#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/rng.hpp"

namespace mmt {

namespace detail {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// C (m x n) = or += A (m x k) * B (k x n)
inline void mm(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (m x n) = or += A (m x k) * B^T, B given as (n x k)
inline void mm_nt(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      if (accumulate)
        ci[j] += s;
      else
        ci[j] = s;
    }
  }
}

// C (k x n) = or += A^T * B, A given as (m x k), B as (m x n)
inline void mm_tn(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(k) * n, 0.0);
  for (int p = 0; p < m; ++p) {
    const double* ap = a + static_cast<std::size_t>(p) * k;
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Cheap-to-copy handle over a dense row-major f64 array. Copies share storage;
// ops never mutate their inputs, so a produced value stays stable.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<TensorData>()) {}

  explicit Tensor(std::vector<int> shape) : data_(std::make_shared<TensorData>()) {
    for (int e : shape) {
      if (e <= 0) throw DimensionError("tensor extent must be positive, got " +
                                       detail::shape_str(shape));
    }
    data_->shape = std::move(shape);
    data_->values.assign(size_of(data_->shape), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> vals) {
    Tensor t(std::move(shape));
    if (vals.size() != t.values().size())
      throw DimensionError("value count " + std::to_string(vals.size()) +
                           " does not match shape " + detail::shape_str(t.shape()));
    t.data_->values = std::move(vals);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
  }

  const std::vector<int>& shape() const { return data_->shape; }
  int ndim() const { return static_cast<int>(data_->shape.size()); }
  int dim(int i) const { return data_->shape[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(data_->values.size()); }

  int rows() const { return data_->shape.at(0); }
  int cols() const { return data_->shape.at(1); }

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }

  double& at(int i) { return data_->values[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data_->values[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) {
    return data_->values[static_cast<std::size_t>(i) * cols() + j];
  }
  double at(int i, int j) const {
    return data_->values[static_cast<std::size_t>(i) * cols() + j];
  }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) { data_->requires_grad = b; }

  bool has_grad() const { return !data_->grad.empty(); }

  // Gradient buffer, allocated (zero-filled) on first access.
  std::vector<double>& grad() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad;
  }

  void zero_grad() {
    if (!data_->grad.empty())
      std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
  }

  // Deep copy with fresh storage and no gradient.
  Tensor clone() const {
    Tensor t;
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    t.data_->requires_grad = data_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  static std::size_t size_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
  }

 private:
  std::shared_ptr<TensorData> data_;
};

// Record of executed ops for reverse-mode differentiation. backward() replays
// the recorded closures in exact reverse order of forward execution; each
// closure accumulates (+=) into its input gradients.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  void backward(Tensor loss) {
    if (loss.size() != 1)
      throw DimensionError("backward expects a scalar loss, got shape " +
                           detail::shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw ValidationError("backward on a tensor that does not require grad");
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline bool want_grad(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values())
    if (!std::isfinite(v))
      throw NumericalError(std::string(op) + " produced a non-finite value");
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw DimensionError(std::string(op) + " expects a 2-d tensor, got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// ---- ops -------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul shape mismatch " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  detail::mm(a.values().data(), b.values().data(), out.values().data(), m, k, n,
             false);
  detail::check_finite(out, "matmul");
  if (detail::want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad())
        detail::mm_nt(g, bc.values().data(), ac.grad().data(), m, n, k, true);
      if (bc.requires_grad())
        detail::mm_tn(ac.values().data(), g, bc.grad().data(), m, k, n, true);
    });
  }
  return out;
}

// a * b^T with b given row-major as (n x k); avoids materialising transposes.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt shape mismatch " +
                         detail::shape_str(a.shape()) + " x " +
                         detail::shape_str(b.shape()) + "^T");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  detail::mm_nt(a.values().data(), b.values().data(), out.values().data(), m, k,
                n, false);
  detail::check_finite(out, "matmul_nt");
  if (detail::want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad())
        detail::mm(g, bc.values().data(), ac.grad().data(), m, n, k, true);
      if (bc.requires_grad())
        detail::mm_tn(g, ac.values().data(), bc.grad().data(), m, n, k, true);
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch " + detail::shape_str(a.shape()) +
                         " vs " + detail::shape_str(b.shape()));
  Tensor out(a.shape());
  for (int i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

// x (m x n) + row-broadcast bias (n)
inline Tensor add_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr) {
  detail::require_2d(x, "add_bias");
  if (b.ndim() != 1 || b.dim(0) != x.cols())
    throw DimensionError("add_bias expects bias of length " +
                         std::to_string(x.cols()) + ", got " +
                         detail::shape_str(b.shape()));
  const int m = x.rows(), n = x.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
  if (detail::want_grad(tape, {&x, &b})) {
    out.set_requires_grad(true);
    Tensor xc = x, bc = b, oc = out;
    tape->record([xc, bc, oc, m, n]() mutable {
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        const auto& g = oc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += oc.grad()[i * n + j];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double c, Tape* tape = nullptr) {
  Tensor out(x.shape());
  for (int i = 0; i < x.size(); ++i) out.at(i) = c * x.at(i);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, c]() mutable {
      auto& gx = xc.grad();
      const auto& g = oc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  for (int i = 0; i < x.size(); ++i) out.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      auto& gx = xc.grad();
      const auto& g = oc.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xc.values()[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

// Exact Gaussian gelu: x * Phi(x).
inline Tensor gelu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  for (int i = 0; i < x.size(); ++i) {
    const double v = x.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::erf(v / 1.4142135623730951));
  }
  detail::check_finite(out, "gelu");
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      auto& gx = xc.grad();
      const auto& g = oc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xc.values()[i];
        const double phi = 0.5 * (1.0 + std::erf(v / 1.4142135623730951));
        const double pdf =
            std::exp(-0.5 * v * v) / 2.5066282746310002;  // sqrt(2*pi)
        gx[i] += g[i] * (phi + v * pdf);
      }
    });
  }
  return out;
}

// Row-wise normalisation over the last axis, then affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps, Tape* tape = nullptr) {
  detail::require_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm gain/bias must have length " +
                         std::to_string(n));
  if (eps <= 0.0) throw ValidationError("layer_norm eps must be positive");
  Tensor out({m, n});
  Tensor xhat({m, n});  // cached for backward
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const double h = (x.at(i, j) - mean) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = gain.at(j) * h + bias.at(j);
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::want_grad(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gain, bc = bias, oc = out, hc = xhat;
    tape->record([xc, gc, bc, oc, hc, inv_std, m, n]() mutable {
      for (int i = 0; i < m; ++i) {
        const double* g = oc.grad().data() + static_cast<std::size_t>(i) * n;
        const double* h = hc.values().data() + static_cast<std::size_t>(i) * n;
        if (gc.requires_grad()) {
          auto& gg = gc.grad();
          for (int j = 0; j < n; ++j) gg[j] += g[j] * h[j];
        }
        if (bc.requires_grad()) {
          auto& gb = bc.grad();
          for (int j = 0; j < n; ++j) gb[j] += g[j];
        }
        if (xc.requires_grad()) {
          // dx = (w - mean(w) - xhat * mean(w .* xhat)) * inv_std,
          // where w = gain .* dy
          double mw = 0.0, mwh = 0.0;
          for (int j = 0; j < n; ++j) {
            const double w = gc.values()[static_cast<std::size_t>(j)] * g[j];
            mw += w;
            mwh += w * h[j];
          }
          mw /= n;
          mwh /= n;
          auto& gx = xc.grad();
          const double is = inv_std[static_cast<std::size_t>(i)];
          for (int j = 0; j < n; ++j) {
            const double w = gc.values()[static_cast<std::size_t>(j)] * g[j];
            gx[static_cast<std::size_t>(i) * n + j] +=
                (w - mw - h[j] * mwh) * is;
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

// Shared forward for the softmax family. When mask is null every entry is
// live; otherwise rows are stabilised by the max over unmasked entries only,
// so fully-masked columns never contaminate the shift.
inline Tensor softmax_impl(const Tensor& x, const Tensor* mask, const char* op) {
  require_2d(x, op);
  const int m = x.rows(), n = x.cols();
  if (mask) {
    if (mask->ndim() != 2 || mask->rows() != m || mask->cols() != n)
      throw DimensionError(std::string(op) + " mask shape " +
                           shape_str(mask->shape()) + " does not match logits " +
                           shape_str(x.shape()));
    for (double v : mask->values())
      if (v != 0.0 && v != 1.0)
        throw ValidationError(std::string(op) + " mask must be binary");
  }
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (!mask || mask->at(i, j) == 1.0) mx = std::max(mx, x.at(i, j));
    if (mx == -std::numeric_limits<double>::infinity())
      throw DegenerateRowError(std::string(op) + ": mask row " +
                               std::to_string(i) + " has no unmasked entries");
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask && mask->at(i, j) == 0.0) {
        out.at(i, j) = 0.0;
      } else {
        const double e = std::exp(x.at(i, j) - mx);
        out.at(i, j) = e;
        denom += e;
      }
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  check_finite(out, op);
  return out;
}

inline void softmax_backward(Tensor& x, Tensor& out) {
  const int m = x.rows(), n = x.cols();
  auto& gx = x.grad();
  for (int i = 0; i < m; ++i) {
    const double* a = out.values().data() + static_cast<std::size_t>(i) * n;
    const double* g = out.grad().data() + static_cast<std::size_t>(i) * n;
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += a[j] * g[j];
    for (int j = 0; j < n; ++j)
      gx[static_cast<std::size_t>(i) * n + j] += a[j] * (g[j] - dot);
  }
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = detail::softmax_impl(x, nullptr, "softmax");
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable { detail::softmax_backward(xc, oc); });
  }
  return out;
}

// Eq. of guided attention rows: a_ij = c_ij exp(z_ij) / sum_l c_il exp(z_il).
// Entries with mask 0 come out exactly 0 and receive exactly zero gradient.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask,
                             Tape* tape = nullptr) {
  Tensor out = detail::softmax_impl(logits, &mask, "masked_softmax");
  if (detail::want_grad(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor xc = logits, oc = out;
    tape->record([xc, oc]() mutable { detail::softmax_backward(xc, oc); });
  }
  return out;
}

inline Tensor log_softmax(const Tensor& x, Tape* tape = nullptr) {
  detail::require_2d(x, "log_softmax");
  const int m = x.rows(), n = x.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(x.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) - lse;
  }
  detail::check_finite(out, "log_softmax");
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, m, n]() mutable {
      auto& gx = xc.grad();
      for (int i = 0; i < m; ++i) {
        const double* y = oc.values().data() + static_cast<std::size_t>(i) * n;
        const double* g = oc.grad().data() + static_cast<std::size_t>(i) * n;
        double gs = 0.0;
        for (int j = 0; j < n; ++j) gs += g[j];
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * n + j] += g[j] - std::exp(y[j]) * gs;
      }
    });
  }
  return out;
}

// Mean label-smoothed cross-entropy over rows of logits (rows x vocab).
// Target distribution: 1 - eps + eps/V on the gold id, eps/V elsewhere.
inline Tensor label_smoothed_ce(const Tensor& logits,
                                const std::vector<int>& targets,
                                double smoothing, Tape* tape = nullptr) {
  detail::require_2d(logits, "label_smoothed_ce");
  const int m = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("label_smoothed_ce expects one target per row");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ValidationError("label smoothing must be in [0, 1)");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw ValidationError("label_smoothed_ce target id " + std::to_string(t) +
                            " outside vocabulary of size " + std::to_string(v));
  Tensor lsm = detail::softmax_impl(logits, nullptr, "label_smoothed_ce");
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0, row_sum = 0.0;
    for (int j = 0; j < v; ++j) {
      denom += std::exp(logits.at(i, j) - mx);
      row_sum += logits.at(i, j);
    }
    const double lse = mx + std::log(denom);
    const double gold = logits.at(i, targets[static_cast<std::size_t>(i)]) - lse;
    const double sum_logp = row_sum - v * lse;
    total += -((1.0 - smoothing) * gold + (smoothing / v) * sum_logp);
  }
  Tensor out = Tensor::scalar(total / m);
  detail::check_finite(out, "label_smoothed_ce");
  if (detail::want_grad(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor xc = logits, oc = out, pc = lsm;
    auto tgt = targets;
    tape->record([xc, oc, pc, tgt, smoothing, m, v]() mutable {
      const double g = oc.grad()[0] / m;
      auto& gx = xc.grad();
      for (int i = 0; i < m; ++i) {
        const double* p = pc.values().data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) {
          double ptilde = smoothing / v;
          if (j == tgt[static_cast<std::size_t>(i)]) ptilde += 1.0 - smoothing;
          gx[static_cast<std::size_t>(i) * v + j] += g * (p[j] - ptilde);
        }
      }
    });
  }
  return out;
}

// Row gather; serves as embedding lookup and masked-position selection.
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& ids,
                          Tape* tape = nullptr) {
  detail::require_2d(x, "gather_rows");
  const int n = x.cols();
  for (int id : ids)
    if (id < 0 || id >= x.rows())
      throw ValidationError("gather_rows index " + std::to_string(id) +
                            " outside [0, " + std::to_string(x.rows()) + ")");
  Tensor out({static_cast<int>(ids.size()), n});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < n; ++j)
      out.at(static_cast<int>(i), j) = x.at(ids[i], j);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    auto idx = ids;
    tape->record([xc, oc, idx, n]() mutable {
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(idx[i]) * n + j] +=
              oc.grad()[i * static_cast<std::size_t>(n) + j];
    });
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1, Tape* tape = nullptr) {
  detail::require_2d(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw DimensionError("slice_rows range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") invalid for " +
                         detail::shape_str(x.shape()));
  const int n = x.cols(), m = r1 - r0;
  Tensor out({m, n});
  std::copy(x.values().begin() + static_cast<std::size_t>(r0) * n,
            x.values().begin() + static_cast<std::size_t>(r1) * n,
            out.values().begin());
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, r0, m, n]() mutable {
      auto& gx = xc.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(r0 + i) * n + j] +=
              oc.grad()[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1, Tape* tape = nullptr) {
  detail::require_2d(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw DimensionError("slice_cols range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " +
                         detail::shape_str(x.shape()));
  const int m = x.rows(), n = c1 - c0, stride = x.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, c0, m, n, stride]() mutable {
      auto& gx = xc.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * stride + c0 + j] +=
              oc.grad()[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
  if (parts.empty()) throw DimensionError("concat_rows needs at least one part");
  const int n = parts.front().cols();
  int m = 0;
  for (const Tensor& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != n)
      throw DimensionError("concat_rows column mismatch: " + std::to_string(n) +
                           " vs " + std::to_string(p.cols()));
    m += p.rows();
  }
  Tensor out({m, n});
  int r = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(),
              out.values().begin() + static_cast<std::size_t>(r) * n);
    r += p.rows();
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    Tensor oc = out;
    auto pc = parts;
    tape->record([pc, oc, n]() mutable {
      int r = 0;
      for (Tensor& p : pc) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < n; ++j)
              gp[static_cast<std::size_t>(i) * n + j] +=
                  oc.grad()[static_cast<std::size_t>(r + i) * n + j];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
  const int m = parts.front().rows();
  int n = 0;
  for (const Tensor& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != m)
      throw DimensionError("concat_cols row mismatch: " + std::to_string(m) +
                           " vs " + std::to_string(p.rows()));
    n += p.cols();
  }
  Tensor out({m, n});
  int c = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, c + j) = p.at(i, j);
    c += p.cols();
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    Tensor oc = out;
    auto pc = parts;
    tape->record([pc, oc, m, n]() mutable {
      int c = 0;
      for (Tensor& p : pc) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
              gp[static_cast<std::size_t>(i) * p.cols() + j] +=
                  oc.grad()[static_cast<std::size_t>(i) * n + c + j];
        }
        c += p.cols();
      }
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x, Tape* tape = nullptr) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const double g = oc.grad()[0];
      auto& gx = xc.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

// Inverted dropout; identity when rate is 0. Draws one uniform per element.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng,
                      Tape* tape = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValidationError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  Tensor keep(x.shape());
  const double inv = 1.0 / (1.0 - rate);
  for (int i = 0; i < x.size(); ++i)
    keep.at(i) = rng.uniform() < rate ? 0.0 : inv;
  Tensor out(x.shape());
  for (int i = 0; i < x.size(); ++i) out.at(i) = x.at(i) * keep.at(i);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out, kc = keep;
    tape->record([xc, oc, kc]() mutable {
      auto& gx = xc.grad();
      const auto& g = oc.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * kc.values()[i];
    });
  }
  return out;
}

}  // namespace mmt
