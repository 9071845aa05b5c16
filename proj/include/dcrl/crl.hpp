#pragma once

// Contrastive RL objectives: L2 energy critic over a pair of encoders, the
// InfoNCE critic loss with a logsumexp penalty, and the tanh-Gaussian policy
// trained to maximize critic energy.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "dcrl/arch.hpp"

namespace dcrl {

// Negated L2 distance: 0 when the embeddings coincide, more negative as
// they move apart.
template <class Real>
Real critic_energy(std::span<const Real> phi, std::span<const Real> psi) {
  if (phi.size() != psi.size())
    throw DimensionError("critic_energy: embedding dims " + std::to_string(phi.size()) + " and " +
                         std::to_string(psi.size()) + " differ");
  double s = 0;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    const double d = double(phi[k]) - double(psi[k]);
    s += d * d;
  }
  return Real(-std::sqrt(s));
}

// Euclidean distances between all row pairs. The bulk comes from the Gram
// expansion; pairs whose squared distance is small next to the squared norms
// (where the expansion cancels) are recomputed from the differences.
template <class Real>
Matrix<Real> pairwise_distance(const Matrix<Real>& phi, const Matrix<Real>& psi) {
  if (phi.cols() != psi.cols())
    throw DimensionError("energy_matrix: embedding dims " + std::to_string(phi.cols()) + " and " +
                         std::to_string(psi.cols()) + " differ");
  Matrix<Real> r(phi.rows(), psi.rows());
  const auto a = as_eigen(phi);
  const auto b = as_eigen(psi);
  auto re = as_eigen(r);
  const Eigen::Matrix<Real, Eigen::Dynamic, 1> na = a.rowwise().squaredNorm();
  const Eigen::Matrix<Real, Eigen::Dynamic, 1> nb = b.rowwise().squaredNorm();
  re.noalias() = Real(-2) * a * b.transpose();
  for (Eigen::Index i = 0; i < re.rows(); ++i) {
    for (Eigen::Index j = 0; j < re.cols(); ++j) {
      const Real scale = na[i] + nb[j];
      const Real d2 = re(i, j) + scale;
      if (d2 > Real(0.05) * scale) {
        re(i, j) = std::sqrt(d2);
      } else {
        re(i, j) = (a.row(i) - b.row(j)).norm();
      }
    }
  }
  return r;
}

// L[i][j] = energy(phi_i, psi_j).
template <class Real>
Matrix<Real> energy_matrix(const Matrix<Real>& phi, const Matrix<Real>& psi) {
  Matrix<Real> out = pairwise_distance(phi, psi);
  for (auto& x : out.values()) x = -x;
  return out;
}

// Gradients of sum_ij dl[i][j] * L[i][j] with respect to phi and psi. Where
// two embeddings coincide the distance is not differentiable; that pair
// contributes zero. `energies` must equal energy_matrix(phi, psi).
template <class Real>
void energy_matrix_backward(const Matrix<Real>& phi, const Matrix<Real>& psi, const Matrix<Real>& energies,
                            const Matrix<Real>& dl, Matrix<Real>& dphi, Matrix<Real>& dpsi) {
  // With w_ij = dl_ij / r_ij:  dphi_i = sum_j w_ij (psi_j - phi_i),  dpsi_j = sum_i w_ij (phi_i - psi_j).
  Matrix<Real> w(dl.rows(), dl.cols());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = energies[k] == Real(0) ? Real(0) : -dl[k] / energies[k];
  dphi.resize(phi.rows(), phi.cols());
  dpsi.resize(psi.rows(), psi.cols());
  const auto we = as_eigen(std::as_const(w));
  const auto a = as_eigen(phi);
  const auto b = as_eigen(psi);
  auto da = as_eigen(dphi);
  auto db = as_eigen(dpsi);
  da.noalias() = we * b;
  da -= (we.rowwise().sum().asDiagonal() * a);
  db.noalias() = we.transpose() * a;
  db -= (we.colwise().sum().transpose().asDiagonal() * b);
}

template <class Real>
void energy_matrix_backward(const Matrix<Real>& phi, const Matrix<Real>& psi, const Matrix<Real>& dl,
                            Matrix<Real>& dphi, Matrix<Real>& dpsi) {
  energy_matrix_backward(phi, psi, energy_matrix(phi, psi), dl, dphi, dpsi);
}

template <class Real>
struct InfoNceResult {
  double loss = 0;
  double accuracy = 0;  // fraction of rows whose argmax is the diagonal
  Matrix<Real> grad;    // d loss / d L, filled when requested
};

// mean_i[lse_i - L_ii] + penalty * mean_i[lse_i^2], lse_i = logsumexp_j L_ij.
template <class Real>
InfoNceResult<Real> infonce(const Matrix<Real>& logits, double penalty, bool want_grad = true) {
  if (logits.rows() != logits.cols() || logits.rows() == 0)
    throw DimensionError("infonce: energy matrix must be square and non-empty, got " +
                         dims_str(logits.rows(), logits.cols()));
  if (penalty < 0) throw ConfigError("logsumexp penalty must be >= 0");
  const std::size_t n = logits.rows();
  InfoNceResult<Real> res;
  if (want_grad) res.grad.resize(n, n);
  std::vector<double> p(n);
  double ce = 0, pen = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (double(logits(i, j)) > mx) {
        mx = logits(i, j);
        arg = j;
      }
    if (arg == i) ++hits;
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(double(logits(i, j)) - mx);
      z += p[j];
    }
    const double lse = mx + std::log(z);
    ce += lse - double(logits(i, i));
    pen += lse * lse;
    if (want_grad) {
      for (std::size_t j = 0; j < n; ++j) {
        const double pj = p[j] / z;
        const double g = pj - (i == j ? 1.0 : 0.0) + 2.0 * penalty * lse * pj;
        res.grad(i, j) = Real(g / double(n));
      }
    }
  }
  res.loss = ce / double(n) + penalty * pen / double(n);
  res.accuracy = double(hits) / double(n);
  return res;
}

template <class Real>
Real infonce_loss(const Matrix<Real>& logits, double penalty) {
  return Real(infonce(logits, penalty, false).loss);
}

// Rows share an index: goal i is a future state of the trajectory that
// produced (state i, action i). Other rows act as negatives.
template <class Real>
struct TrainingBatch {
  Matrix<Real> states, actions, goals;
  std::size_t size() const { return states.rows(); }
};

template <class Real>
struct CriticPair {
  Network<Real> sa_encoder;
  Network<Real> g_encoder;
  int repr_dim = 64;

  CriticPair() = default;
  CriticPair(int state_dim, int action_dim, int goal_dim, int width, int depth, int repr, std::uint64_t seed_sa,
             std::uint64_t seed_g)
      : sa_encoder(NetworkSpec{state_dim + action_dim, width, depth, repr, true}, seed_sa),
        g_encoder(NetworkSpec{goal_dim, width, depth, repr, true}, seed_g),
        repr_dim(repr) {}

  int state_dim_plus_action() const { return sa_encoder.spec().input_dim; }
  int goal_dim() const { return g_encoder.spec().input_dim; }

  Matrix<Real> embed_sa(const Matrix<Real>& states, const Matrix<Real>& actions) const {
    return sa_encoder.forward(concat_cols(states, actions));
  }
  Matrix<Real> embed_goal(const Matrix<Real>& goals) const { return g_encoder.forward(goals); }

  void zero_grad() {
    sa_encoder.params().zero_grad();
    g_encoder.params().zero_grad();
  }
};

template <class Real>
Matrix<Real> energy_matrix(const TrainingBatch<Real>& batch, const CriticPair<Real>& critic) {
  return energy_matrix(critic.embed_sa(batch.states, batch.actions), critic.embed_goal(batch.goals));
}

// Critic InfoNCE loss; accumulates gradients into both encoders.
template <class Real>
InfoNceResult<Real> critic_loss_and_grad(CriticPair<Real>& critic, const TrainingBatch<Real>& batch,
                                         double penalty) {
  Tape<Real> sa_tape, g_tape;
  const Matrix<Real> phi = critic.sa_encoder.forward(concat_cols(batch.states, batch.actions), &sa_tape);
  const Matrix<Real> psi = critic.g_encoder.forward(batch.goals, &g_tape);
  const Matrix<Real> energies = energy_matrix(phi, psi);
  auto res = infonce(energies, penalty, true);
  if (!std::isfinite(res.loss)) throw NumericError("critic loss is not finite");
  Matrix<Real> dphi, dpsi;
  energy_matrix_backward(phi, psi, energies, res.grad, dphi, dpsi);
  critic.sa_encoder.backward(sa_tape, dphi);
  critic.g_encoder.backward(g_tape, dpsi);
  return res;
}

template <class Real>
struct GaussianPolicy {
  Network<Real> actor;  // (state ++ goal) -> (mean, log_std)
  int state_dim = 0;
  int goal_dim = 0;
  int action_dim = 0;
  double action_bound = 1.0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  GaussianPolicy() = default;
  GaussianPolicy(int s_dim, int g_dim, int a_dim, double bound, int width, int depth, std::uint64_t seed)
      : actor(NetworkSpec{s_dim + g_dim, width, depth, 2 * a_dim, true}, seed),
        state_dim(s_dim),
        goal_dim(g_dim),
        action_dim(a_dim),
        action_bound(bound) {}
};

// Largest |tanh| kept for actions, so that samples stay strictly inside the
// bounds in 32-bit arithmetic.
inline constexpr double kTanhLimit = 1.0 - 1e-6;

template <class Real>
Real squash(Real u, double bound) {
  const double t = std::clamp(double(std::tanh(u)), -kTanhLimit, kTanhLimit);
  return Real(bound * t);
}

// log(1 - tanh(u)^2), stable for large |u|.
inline double log1m_tanh_sq(double u) {
  const double a = std::abs(u);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

// Deterministic actions (noise == nullptr) are tanh(mean) scaled to bounds;
// otherwise mean + std * noise is squashed.
template <class Real>
Matrix<Real> policy_actions(const GaussianPolicy<Real>& policy, const Matrix<Real>& states,
                            const Matrix<Real>& goals, const Matrix<Real>* noise) {
  const Matrix<Real> out = policy.actor.forward(concat_cols(states, goals));
  const std::size_t a = policy.action_dim;
  Matrix<Real> act(states.rows(), a);
  for (std::size_t i = 0; i < states.rows(); ++i)
    for (std::size_t k = 0; k < a; ++k) {
      Real u = out(i, k);
      if (noise) {
        const double ls = std::clamp(double(out(i, a + k)), policy.log_std_min, policy.log_std_max);
        u = Real(double(u) + std::exp(ls) * double((*noise)(i, k)));
      }
      act(i, k) = squash(u, policy.action_bound);
    }
  return act;
}

template <class Real>
Matrix<Real> standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix<Real> m(rows, cols);
  for (auto& x : m.values()) x = Real(n01(rng));
  return m;
}

template <class Real>
Matrix<Real> policy_sample(const GaussianPolicy<Real>& policy, const Matrix<Real>& states, const Matrix<Real>& goals,
                           std::mt19937_64& rng, bool deterministic) {
  if (deterministic) return policy_actions(policy, states, goals, static_cast<const Matrix<Real>*>(nullptr));
  const Matrix<Real> noise = standard_normal<Real>(states.rows(), policy.action_dim, rng);
  return policy_actions(policy, states, goals, &noise);
}

// Single-observation convenience form; the same seed gives the same action.
template <class Real>
std::vector<Real> policy_sample(const GaussianPolicy<Real>& policy, std::span<const Real> state,
                                std::span<const Real> goal, std::uint64_t seed, bool deterministic) {
  if (int(state.size()) != policy.state_dim || int(goal.size()) != policy.goal_dim)
    throw DimensionError("policy_sample: state/goal dims do not match the actor");
  std::mt19937_64 rng(seed);
  const auto s = Matrix<Real>::row({state.begin(), state.end()});
  const auto g = Matrix<Real>::row({goal.begin(), goal.end()});
  return policy_sample(policy, s, g, rng, deterministic).to_vector();
}

struct ActorLossResult {
  double loss = 0;
  double mean_energy = 0;
  double mean_log_prob = 0;
};

// -mean_i energy(phi(s_i, a_i), psi(g_i)) + alpha * mean_i log pi(a_i | s_i, g_i)
// with a_i reparameterized from the given standard-normal noise. Gradients go
// to the actor only; the critic is read but never written.
template <class Real>
ActorLossResult actor_loss_and_grad(GaussianPolicy<Real>& policy, const CriticPair<Real>& critic,
                                    const Matrix<Real>& states, const Matrix<Real>& goals,
                                    const Matrix<Real>& noise, double alpha, bool want_grad = true) {
  const std::size_t n = states.rows();
  const std::size_t a = policy.action_dim;
  const double bound = policy.action_bound;
  Tape<Real> actor_tape;
  const Matrix<Real> out = policy.actor.forward(concat_cols(states, goals), want_grad ? &actor_tape : nullptr);

  Matrix<Real> actions(n, a), tanh_u(n, a), sigma(n, a);
  double log_prob_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_lp = 0;
    for (std::size_t k = 0; k < a; ++k) {
      const double ls = std::clamp(double(out(i, a + k)), policy.log_std_min, policy.log_std_max);
      const double sd = std::exp(ls);
      const double eps = noise(i, k);
      const double u = double(out(i, k)) + sd * eps;
      const double t = std::tanh(u);
      tanh_u(i, k) = Real(t);
      sigma(i, k) = Real(sd);
      actions(i, k) = squash(Real(u), bound);
      row_lp += -0.5 * eps * eps - ls - 0.5 * std::log(2.0 * M_PI) - std::log(bound) - log1m_tanh_sq(u);
    }
    if (!std::isfinite(row_lp)) throw NumericError("non-finite policy log-density in row " + std::to_string(i));
    log_prob_sum += row_lp;
  }

  Tape<Real> sa_tape;
  const Network<Real>& sa = critic.sa_encoder;
  const Matrix<Real> phi = sa.forward(concat_cols(states, actions), want_grad ? &sa_tape : nullptr);
  const Matrix<Real> psi = critic.g_encoder.forward(goals);

  ActorLossResult res;
  double energy_sum = 0;
  Matrix<Real> dphi(n, phi.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const Real e = critic_energy(phi.row_span(i), psi.row_span(i));
    energy_sum += e;
    if (e != Real(0)) {
      // d(-E_i/n)/d phi_i = (phi_i - psi_i) / (n * r_i)
      const Real scale = Real(1.0 / (double(n) * -double(e)));
      for (std::size_t k = 0; k < phi.cols(); ++k) dphi(i, k) = scale * (phi(i, k) - psi(i, k));
    }
  }
  res.mean_energy = energy_sum / double(n);
  res.mean_log_prob = log_prob_sum / double(n);
  res.loss = -res.mean_energy + alpha * res.mean_log_prob;
  if (!std::isfinite(res.loss)) throw NumericError("actor loss is not finite");
  if (!want_grad) return res;

  const Matrix<Real> dsa = sa.backward_input(sa_tape, dphi);
  const std::size_t s_dim = states.cols();
  Matrix<Real> dout(n, 2 * a);
  const double inv_n = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < a; ++k) {
      const double t = tanh_u(i, k);
      const double du = double(dsa(i, s_dim + k)) * bound * (1.0 - t * t) + alpha * inv_n * 2.0 * t;
      dout(i, k) = Real(du);
      const double raw = out(i, a + k);
      if (raw >= policy.log_std_min && raw <= policy.log_std_max)
        dout(i, a + k) = Real(du * double(sigma(i, k)) * double(noise(i, k)) - alpha * inv_n);
    }
  policy.actor.backward(actor_tape, dout);
  return res;
}

}  // namespace dcrl
