#pragma once

// Episode-segmented replay storage with geometric future-state relabeling.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <span>
#include <vector>

#include "dcrl/crl.hpp"

namespace dcrl {

template <class Real>
struct Transition {
  std::vector<Real> state, action, next_state;
  int step_index = 0;
  std::int64_t episode_id = 0;
};

template <class Real>
struct Episode {
  std::int64_t id = 0;
  std::size_t state_dim = 0, action_dim = 0;
  std::vector<Real> states;   // length x state_dim
  std::vector<Real> actions;  // length x action_dim
  std::size_t length() const { return state_dim ? states.size() / state_dim : 0; }
  std::span<const Real> state(std::size_t t) const { return {states.data() + t * state_dim, state_dim}; }
  std::span<const Real> action(std::size_t t) const { return {actions.data() + t * action_dim, action_dim}; }
};

inline constexpr int kFutureGoalRejections = 20;

// Index t + delta with delta >= 1 drawn from Geometric(1 - gamma), resampled
// while it overshoots the episode; after 20 rejections the offset is uniform
// over the remaining future.
inline std::size_t sample_future_index(std::size_t length, std::size_t t, double gamma, std::mt19937_64& rng) {
  if (length < 2 || t + 1 >= length) throw UsageError("sample_future_index: no future state after t");
  if (gamma < 0 || gamma >= 1) throw ConfigError("discount must lie in [0, 1)");
  const std::size_t last = length - 1;
  if (gamma == 0.0 || t + 1 == last) return t + 1;
  std::geometric_distribution<std::uint64_t> geom(1.0 - gamma);
  for (int attempt = 0; attempt < kFutureGoalRejections; ++attempt) {
    const std::uint64_t delta = 1 + geom(rng);
    if (delta <= last - t) return t + delta;
  }
  std::uniform_int_distribution<std::size_t> uni(t + 1, last);
  return uni(rng);
}

template <class Real>
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t state_dim, std::size_t action_dim, std::size_t capacity_transitions,
               std::size_t min_size_transitions)
      : state_dim_(state_dim),
        action_dim_(action_dim),
        capacity_(capacity_transitions),
        min_size_(min_size_transitions) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
  }

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t min_size() const { return min_size_; }

  // Steps of one episode must arrive in order. Several episodes may be open
  // at once (one per parallel environment); they are keyed by episode_id.
  void append_step(const Transition<Real>& tr) {
    if (tr.state.size() != state_dim_ || tr.action.size() != action_dim_)
      throw DimensionError("transition dims do not match the buffer");
    auto& ep = pending_[tr.episode_id];
    if (ep.state_dim == 0) {
      ep.id = tr.episode_id;
      ep.state_dim = state_dim_;
      ep.action_dim = action_dim_;
    }
    if (std::size_t(tr.step_index) != ep.length())
      throw UsageError("episode " + std::to_string(tr.episode_id) + ": expected step " +
                       std::to_string(ep.length()) + ", got " + std::to_string(tr.step_index));
    ep.states.insert(ep.states.end(), tr.state.begin(), tr.state.end());
    ep.actions.insert(ep.actions.end(), tr.action.begin(), tr.action.end());
  }

  // Publishes the episode; it becomes sampleable atomically. Oldest whole
  // episodes are evicted while the capacity is exceeded.
  void end_episode(std::int64_t episode_id) {
    auto it = pending_.find(episode_id);
    if (it == pending_.end()) return;
    Episode<Real> ep = std::move(it->second);
    pending_.erase(it);
    if (ep.length() == 0) return;
    std::unique_lock lock(mutex_);
    total_ += ep.length();
    episodes_.push_back(std::make_shared<const Episode<Real>>(std::move(ep)));
    while (total_ > capacity_ && !episodes_.empty()) {
      total_ -= episodes_.front()->length();
      episodes_.pop_front();
    }
    ++version_;
  }

  // Single-episode form for callers with one open episode.
  void end_episode() {
    if (pending_.size() > 1) throw UsageError("end_episode(): several open episodes; pass an id");
    if (!pending_.empty()) end_episode(pending_.begin()->first);
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return total_;
  }
  std::size_t num_episodes() const {
    std::shared_lock lock(mutex_);
    return episodes_.size();
  }
  std::uint64_t version() const {
    std::shared_lock lock(mutex_);
    return version_;
  }
  bool ready() const { return size() >= min_size_ && size() > 0; }

  std::vector<std::shared_ptr<const Episode<Real>>> snapshot() const {
    std::shared_lock lock(mutex_);
    return {episodes_.begin(), episodes_.end()};
  }

  // B rows, each a uniform draw over (episode, t) pairs that have a future
  // state, with goal = projection of the relabeled future state.
  TrainingBatch<Real> sample_training_batch(std::size_t batch_size, double gamma, std::span<const int> goal_indices,
                                            std::mt19937_64& rng) const {
    if (!ready()) throw UsageError("replay buffer below minimum size");
    const auto eps = snapshot();
    std::vector<std::size_t> cum;
    cum.reserve(eps.size());
    std::size_t total = 0;
    for (const auto& e : eps) {
      total += e->length() > 1 ? e->length() - 1 : 0;
      cum.push_back(total);
    }
    if (total == 0) throw UsageError("replay buffer holds no episode longer than one step");
    TrainingBatch<Real> b{Matrix<Real>(batch_size, state_dim_), Matrix<Real>(batch_size, action_dim_),
                          Matrix<Real>(batch_size, goal_indices.size())};
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t flat = pick(rng);
      const std::size_t e = std::upper_bound(cum.begin(), cum.end(), flat) - cum.begin();
      const std::size_t t = flat - (e ? cum[e - 1] : 0);
      const Episode<Real>& ep = *eps[e];
      const std::size_t g = sample_future_index(ep.length(), t, gamma, rng);
      std::copy_n(ep.state(t).data(), state_dim_, b.states.data() + i * state_dim_);
      std::copy_n(ep.action(t).data(), action_dim_, b.actions.data() + i * action_dim_);
      const auto gs = ep.state(g);
      for (std::size_t k = 0; k < goal_indices.size(); ++k) b.goals(i, k) = gs[goal_indices[k]];
      if (row_log_) row_log_->push_back({ep.id, t, g});
    }
    return b;
  }

  // Records (episode id, t, goal index) for every sampled row; test hook.
  struct RowOrigin {
    std::int64_t episode_id;
    std::size_t t, goal_t;
  };
  void set_row_log(std::vector<RowOrigin>* log) const { row_log_ = log; }

 private:
  std::size_t state_dim_, action_dim_, capacity_, min_size_;
  std::map<std::int64_t, Episode<Real>> pending_;
  std::deque<std::shared_ptr<const Episode<Real>>> episodes_;
  std::size_t total_ = 0;
  std::uint64_t version_ = 0;
  mutable std::shared_mutex mutex_;
  mutable std::vector<RowOrigin>* row_log_ = nullptr;
};

}  // namespace dcrl
