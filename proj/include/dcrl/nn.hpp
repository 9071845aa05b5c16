#pragma once

// Dense-network numerical core: elementwise and layer kernels with exact
// reverse-mode gradients, a layer program with a recording tape, and Adam.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dcrl/core.hpp"

namespace dcrl {

template <class Real>
inline Real sigmoid(Real z) {
  if (z >= Real(0)) return Real(1) / (Real(1) + std::exp(-z));
  const Real e = std::exp(z);
  return e / (Real(1) + e);
}

template <class Real>
inline Real swish(Real z) {
  return z * sigmoid(z);
}

template <class Real>
inline Real swish_grad(Real z) {
  const Real s = sigmoid(z);
  return s + z * s * (Real(1) - s);
}

template <class Real>
Matrix<Real> swish(const Matrix<Real>& x) {
  Matrix<Real> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = swish(x[i]);
  return y;
}

inline constexpr double kLayerNormEps = 1e-6;

// Saved intermediates of a layer norm evaluation, one inv_std per row.
template <class Real>
struct LayerNormCache {
  Matrix<Real> xhat;
  Buffer<Real> inv_std;
};

template <class Real>
Matrix<Real> layer_norm(const Matrix<Real>& h, const Matrix<Real>& gain, const Matrix<Real>& bias,
                        Real eps = Real(kLayerNormEps), LayerNormCache<Real>* cache = nullptr) {
  const std::size_t n = h.cols();
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias length must equal width " + std::to_string(n));
  Matrix<Real> y(h.rows(), n);
  if (cache) {
    cache->xhat.resize(h.rows(), n);
    cache->inv_std.assign(h.rows(), Real(0));
  }
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const Real* x = h.data() + r * n;
    Real mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= Real(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= Real(n);
    const Real inv = Real(1) / std::sqrt(var + eps);
    Real* out = y.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real xh = (x[j] - mean) * inv;
      if (cache) cache->xhat(r, j) = xh;
      out[j] = xh * gain[j] + bias[j];
    }
    if (cache) cache->inv_std[r] = inv;
  }
  return y;
}

// dx for layer norm; accumulates dgain/dbias when given.
template <class Real>
Matrix<Real> layer_norm_backward(const LayerNormCache<Real>& cache, const Matrix<Real>& gain,
                                 const Matrix<Real>& dy, Matrix<Real>* dgain, Matrix<Real>* dbias) {
  const std::size_t n = dy.cols();
  Matrix<Real> dx(dy.rows(), n);
  Buffer<Real> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const Real* g = dy.data() + r * n;
    const Real* xh = cache.xhat.data() + r * n;
    Real mean_d = 0, mean_dx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dxhat[j] = g[j] * gain[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xh[j];
    }
    mean_d /= Real(n);
    mean_dx /= Real(n);
    const Real inv = cache.inv_std[r];
    Real* out = dx.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
    if (dgain)
      for (std::size_t j = 0; j < n; ++j) (*dgain)[j] += g[j] * xh[j];
    if (dbias)
      for (std::size_t j = 0; j < n; ++j) (*dbias)[j] += g[j];
  }
  return dx;
}

template <class Real>
using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapMut = Eigen::Map<RowMajor<Real>>;
template <class Real>
using MapConst = Eigen::Map<const RowMajor<Real>>;

template <class Real>
MapConst<Real> as_eigen(const Matrix<Real>& m) {
  return MapConst<Real>(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols()));
}
template <class Real>
MapMut<Real> as_eigen(Matrix<Real>& m) {
  return MapMut<Real>(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols()));
}

// y = xW + b for every row of x.
template <class Real>
Matrix<Real> dense(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& b) {
  if (x.cols() != w.rows() || b.size() != w.cols())
    throw DimensionError("dense: input " + dims_str(x.rows(), x.cols()) + ", weight " +
                         dims_str(w.rows(), w.cols()) + ", bias length " + std::to_string(b.size()));
  Matrix<Real> y(x.rows(), w.cols());
  auto ye = as_eigen(y);
  ye.noalias() = as_eigen(x) * as_eigen(w);
  ye.rowwise() += as_eigen(b).row(0);
  return y;
}

// dx = dy W^T; accumulates dW += x^T dy and db += colsum(dy) when given.
template <class Real>
Matrix<Real> dense_backward(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& dy,
                            Matrix<Real>* dw, Matrix<Real>* db) {
  Matrix<Real> dx(dy.rows(), w.rows());
  const auto dye = as_eigen(dy);
  as_eigen(dx).noalias() = dye * as_eigen(w).transpose();
  if (dw) as_eigen(*dw).noalias() += as_eigen(x).transpose() * dye;
  if (db) as_eigen(*db).row(0) += dye.colwise().sum();
  return dx;
}

// A network is a flat program of layer instructions over a ParameterStore.
// Residual branches are bracketed by ResidualBegin/ResidualEnd; the skip is
// added right after the last instruction of the branch.
enum class OpKind : std::uint8_t { Dense, LayerNorm, Swish, ResidualBegin, ResidualEnd };

struct Instruction {
  OpKind kind;
  std::size_t p0 = 0;  // Dense: weight, LayerNorm: gain
  std::size_t p1 = 0;  // Dense: bias, LayerNorm: bias
};

template <class Real>
struct TapeRecord {
  Matrix<Real> input;        // Dense input / Swish pre-activation
  LayerNormCache<Real> ln;   // LayerNorm
};

// Evaluation record of one forward pass; consumed by Program::backward.
template <class Real>
class Tape {
 public:
  bool recorded() const { return recorded_; }
  std::size_t batch() const { return batch_; }
  void clear() {
    records_.clear();
    recorded_ = false;
  }

 private:
  template <class>
  friend class Program;
  std::vector<TapeRecord<Real>> records_;
  const void* owner_ = nullptr;
  std::size_t batch_ = 0;
  std::size_t in_cols_ = 0;
  bool recorded_ = false;
};

template <class Real>
class Program {
 public:
  std::vector<Instruction>& instructions() { return code_; }
  const std::vector<Instruction>& instructions() const { return code_; }

  Matrix<Real> forward(const ParameterStore<Real>& params, const Matrix<Real>& x,
                       Tape<Real>* tape = nullptr,
                       std::vector<double>* residual_norms = nullptr) const {
    if (tape) {
      tape->records_.assign(code_.size(), {});
      tape->recorded_ = false;
    }
    std::vector<Matrix<Real>> skips;
    Matrix<Real> h = x;
    for (std::size_t i = 0; i < code_.size(); ++i) {
      const Instruction& ins = code_[i];
      switch (ins.kind) {
        case OpKind::Dense: {
          Matrix<Real> y = dense(h, params[ins.p0].value, params[ins.p1].value);
          if (tape) tape->records_[i].input = std::move(h);
          h = std::move(y);
          break;
        }
        case OpKind::LayerNorm:
          h = layer_norm(h, params[ins.p0].value, params[ins.p1].value, Real(kLayerNormEps),
                         tape ? &tape->records_[i].ln : nullptr);
          break;
        case OpKind::Swish: {
          Matrix<Real> y = swish(h);
          if (tape) tape->records_[i].input = std::move(h);
          h = std::move(y);
          break;
        }
        case OpKind::ResidualBegin:
          skips.push_back(h);
          break;
        case OpKind::ResidualEnd: {
          if (skips.empty()) throw UsageError("unbalanced residual program");
          if (residual_norms) {
            double total = 0;
            for (std::size_t r = 0; r < h.rows(); ++r) {
              double s = 0;
              for (Real v : h.row_span(r)) s += double(v) * double(v);
              total += std::sqrt(s);
            }
            residual_norms->push_back(h.rows() ? total / double(h.rows()) : 0.0);
          }
          const Matrix<Real>& skip = skips.back();
          for (std::size_t k = 0; k < h.size(); ++k) h[k] += skip[k];
          skips.pop_back();
          break;
        }
      }
    }
    if (tape) {
      tape->owner_ = this;
      tape->batch_ = x.rows();
      tape->in_cols_ = x.cols();
      tape->recorded_ = true;
    }
    return h;
  }

  // Propagates dy back through the recorded evaluation and returns the input
  // gradient. Parameter gradients are accumulated into grads when given;
  // grads may alias params.
  Matrix<Real> backward(const ParameterStore<Real>& params, const Tape<Real>& tape, const Matrix<Real>& dy,
                        ParameterStore<Real>* grads) const {
    if (!tape.recorded_) throw UsageError("backward called without a recorded forward pass");
    if (tape.owner_ != this) throw UsageError("tape was recorded by a different network");
    if (dy.rows() != tape.batch_)
      throw DimensionError("backward: upstream batch " + std::to_string(dy.rows()) +
                           " does not match recorded batch " + std::to_string(tape.batch_));
    std::vector<Matrix<Real>> skip_grads;
    Matrix<Real> g = dy;
    for (std::size_t i = code_.size(); i-- > 0;) {
      const Instruction& ins = code_[i];
      const TapeRecord<Real>& rec = tape.records_[i];
      switch (ins.kind) {
        case OpKind::Dense:
          g = dense_backward(rec.input, params[ins.p0].value, g, grads ? &(*grads)[ins.p0].grad : nullptr,
                             grads ? &(*grads)[ins.p1].grad : nullptr);
          break;
        case OpKind::LayerNorm:
          g = layer_norm_backward(rec.ln, params[ins.p0].value, g, grads ? &(*grads)[ins.p0].grad : nullptr,
                                  grads ? &(*grads)[ins.p1].grad : nullptr);
          break;
        case OpKind::Swish:
          for (std::size_t k = 0; k < g.size(); ++k) g[k] *= swish_grad(rec.input[k]);
          break;
        case OpKind::ResidualEnd:
          skip_grads.push_back(g);
          break;
        case OpKind::ResidualBegin: {
          const Matrix<Real>& s = skip_grads.back();
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += s[k];
          skip_grads.pop_back();
          break;
        }
      }
    }
    return g;
  }

 private:
  std::vector<Instruction> code_;
};

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping. max_norm <= 0 disables clipping.
template <class Real>
double clip_grad_norm(ParameterStore<Real>& store, double max_norm) {
  const double norm = store.grad_norm();
  if (max_norm > 0 && norm > max_norm) {
    const Real scale = Real(max_norm / norm);
    for (auto& e : store)
      for (Real& g : e.grad.values()) g *= scale;
  }
  return norm;
}

// Joint clipping over several stores (e.g. the two critic encoders), as if
// their gradients were one vector. Returns the joint norm before clipping.
template <class Real>
double clip_grad_norm(std::initializer_list<ParameterStore<Real>*> stores, double max_norm) {
  double sq = 0;
  for (auto* s : stores) {
    const double n = s->grad_norm();
    sq += n * n;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real scale = Real(max_norm / norm);
    for (auto* s : stores)
      for (auto& e : *s)
        for (Real& g : e.grad.values()) g *= scale;
  }
  return norm;
}

template <class Real>
struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Matrix<Real>> m;
  std::vector<Matrix<Real>> v;

  AdamState() = default;
  explicit AdamState(const ParameterStore<Real>& store, double learning_rate = 3e-4)
      : lr(learning_rate) {
    for (const auto& e : store) {
      m.emplace_back(e.value.rows(), e.value.cols());
      v.emplace_back(e.value.rows(), e.value.cols());
    }
  }
};

// Bias-corrected Adam update followed by zeroing the gradients. Nothing is
// modified when any gradient is non-finite.
template <class Real>
void adam_step(ParameterStore<Real>& store, AdamState<Real>& state) {
  if (state.m.size() != store.size()) throw UsageError("AdamState does not mirror the parameter store");
  for (const auto& e : store)
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
  const Real b1 = Real(state.beta1), b2 = Real(state.beta2);
  const Real step = Real(state.lr / c1);
  const Real inv_c2 = Real(1.0 / c2);
  const Real eps = Real(state.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store[i];
    Real* p = e.value.data();
    Real* g = e.grad.data();
    Real* m = state.m[i].data();
    Real* v = state.v[i].data();
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      m[k] = b1 * m[k] + (Real(1) - b1) * g[k];
      v[k] = b2 * v[k] + (Real(1) - b2) * g[k] * g[k];
      p[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      g[k] = Real(0);
    }
  }
}

}  // namespace dcrl
