#pragma once

// Residual MLP builder: input projection -> depth/4 residual blocks of four
// (dense -> layer norm -> swish) units -> output head.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "dcrl/nn.hpp"

namespace dcrl {

inline constexpr int kUnitsPerBlock = 4;

struct NetworkSpec {
  int input_dim = 1;
  int width = 256;
  int depth = 4;  // dense layers inside residual blocks only
  int output_dim = 1;
  bool use_input_projection = true;

  int blocks() const { return depth / kUnitsPerBlock; }

  void validate() const {
    if (depth <= 0 || depth % kUnitsPerBlock != 0)
      throw ConfigError("network depth must be a positive multiple of 4 (got " +
                        std::to_string(depth) + ")");
    if (width < 1) throw ConfigError("network width must be >= 1");
    if (input_dim < 1 || output_dim < 1) throw ConfigError("network input/output dims must be >= 1");
    if (!use_input_projection && input_dim != width)
      throw ConfigError("without an input projection, input_dim must equal width");
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline std::size_t param_count(const NetworkSpec& spec) {
  spec.validate();
  const std::size_t w = spec.width, in = spec.input_dim, out = spec.output_dim;
  std::size_t n = 0;
  if (spec.use_input_projection) n += in * w + w;
  n += std::size_t(spec.depth) * (w * w + w + 2 * w);
  n += w * out + out;
  return n;
}

// Parameters of one dense -> layer norm -> swish unit, for standalone use.
template <class Real>
struct UnitParams {
  Matrix<Real> weight, bias, ln_gain, ln_bias;
};

template <class Real>
Matrix<Real> residual_block(const Matrix<Real>& h, const std::array<UnitParams<Real>, kUnitsPerBlock>& units) {
  Matrix<Real> f = h;
  for (const auto& u : units) f = swish(layer_norm(dense(f, u.weight, u.bias), u.ln_gain, u.ln_bias));
  for (std::size_t k = 0; k < f.size(); ++k) f[k] += h[k];
  return f;
}

template <class Real>
class Network {
 public:
  Network() = default;

  Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    auto& code = program_.instructions();
    auto add_dense = [&](const std::string& prefix, int in, int out) {
      const double limit = std::sqrt(1.0 / double(in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Matrix<Real> w(in, out);
      for (auto& x : w.values()) x = Real(dist(rng));
      const auto wi = params_.add(prefix + ".W", std::move(w));
      const auto bi = params_.add(prefix + ".b", Matrix<Real>(1, out));
      code.push_back({OpKind::Dense, wi, bi});
    };
    if (spec_.use_input_projection) add_dense("in", spec_.input_dim, spec_.width);
    for (int b = 0; b < spec_.blocks(); ++b) {
      code.push_back({OpKind::ResidualBegin});
      for (int u = 0; u < kUnitsPerBlock; ++u) {
        const std::string prefix = "blk" + std::to_string(b) + ".u" + std::to_string(u);
        add_dense(prefix, spec_.width, spec_.width);
        const auto gi = params_.add(prefix + ".ln_g", Matrix<Real>(1, spec_.width, Real(1)));
        const auto li = params_.add(prefix + ".ln_b", Matrix<Real>(1, spec_.width));
        code.push_back({OpKind::LayerNorm, gi, li});
        code.push_back({OpKind::Swish});
      }
      code.push_back({OpKind::ResidualEnd});
    }
    add_dense("out", spec_.width, spec_.output_dim);
  }

  const NetworkSpec& spec() const { return spec_; }
  ParameterStore<Real>& params() { return params_; }
  const ParameterStore<Real>& params() const { return params_; }

  Matrix<Real> forward(const Matrix<Real>& x, Tape<Real>* tape = nullptr) const {
    check_input(x);
    return program_.forward(params_, x, tape);
  }

  Matrix<Real> backward(const Tape<Real>& tape, const Matrix<Real>& dy) {
    return program_.backward(params_, tape, dy, &params_);
  }

  // Input gradient only; parameter gradients are left untouched.
  Matrix<Real> backward_input(const Tape<Real>& tape, const Matrix<Real>& dy) const {
    return program_.backward(params_, tape, dy, nullptr);
  }

  // Mean L2 norm of each residual branch output F_i(h_i) over the batch.
  std::vector<double> residual_norms(const Matrix<Real>& x) const {
    check_input(x);
    std::vector<double> norms;
    program_.forward(params_, x, nullptr, &norms);
    return norms;
  }

  // Sets every parameter of residual block b to zero.
  void zero_block(int b) {
    const std::string prefix = "blk" + std::to_string(b) + ".";
    for (auto& e : params_)
      if (e.name.rfind(prefix, 0) == 0) e.value.fill(Real(0));
  }

 private:
  void check_input(const Matrix<Real>& x) const {
    if (int(x.cols()) != spec_.input_dim)
      throw DimensionError("network expects input width " + std::to_string(spec_.input_dim) + ", got " +
                           std::to_string(x.cols()));
  }

  NetworkSpec spec_;
  ParameterStore<Real> params_;
  Program<Real> program_;
};

}  // namespace dcrl
