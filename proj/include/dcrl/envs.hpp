#pragma once

// Analytic goal-conditioned environments: a damped 2D point mass in an
// arena or maze built from a text grid, and a planar two-link arm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dcrl/core.hpp"

namespace dcrl {

struct Rect {
  double x0, y0, x1, y1;
  bool strictly_contains(double x, double y) const { return x > x0 && x < x1 && y > y0 && y < y1; }
};

// Grid of cells: '#' wall, '.' free, 'S' start region, 'G' goal region.
// Cell (r, c) covers x in [c, c+1] * cell, y in [r, r+1] * cell.
struct Layout {
  std::vector<std::string> grid;
  double cell = 1.0;

  int rows() const { return int(grid.size()); }
  int cols() const { return grid.empty() ? 0 : int(grid[0].size()); }
  char at(int r, int c) const { return grid[r][c]; }
  bool is_wall(int r, int c) const { return grid[r][c] == '#'; }
  Rect cell_rect(int r, int c) const { return {c * cell, r * cell, (c + 1) * cell, (r + 1) * cell}; }

  std::vector<std::pair<int, int>> cells_of(char kind) const {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < rows(); ++r)
      for (int c = 0; c < cols(); ++c)
        if (grid[r][c] == kind) out.emplace_back(r, c);
    return out;
  }
  std::vector<std::pair<int, int>> free_cells() const {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < rows(); ++r)
      for (int c = 0; c < cols(); ++c)
        if (!is_wall(r, c)) out.emplace_back(r, c);
    return out;
  }
  std::string text() const {
    std::string s;
    for (const auto& row : grid) s += row + "\n";
    return s;
  }
};

inline Layout parse_layout(const std::string& text, double cell_size) {
  Layout lay;
  lay.cell = cell_size;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!lay.grid.empty() && line.size() != lay.grid[0].size())
      throw FormatError("layout rows must have equal length (row " + std::to_string(lay.grid.size()) + ")");
    for (char ch : line)
      if (ch != '#' && ch != '.' && ch != 'S' && ch != 'G')
        throw FormatError(std::string("layout: unexpected character '") + ch + "'");
    lay.grid.push_back(line);
  }
  if (lay.rows() < 3 || lay.cols() < 3) throw FormatError("layout must be at least 3x3");
  for (int r = 0; r < lay.rows(); ++r)
    for (int c = 0; c < lay.cols(); ++c)
      if ((r == 0 || c == 0 || r == lay.rows() - 1 || c == lay.cols() - 1) && !lay.is_wall(r, c))
        throw FormatError("layout must be enclosed by walls");
  if (lay.free_cells().empty()) throw FormatError("layout has no free cells");
  if (cell_size <= 0) throw ConfigError("cell size must be positive");
  return lay;
}

inline Layout load_layout(const std::string& path, double cell_size) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open layout file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_layout(ss.str(), cell_size);
}

namespace layouts {
inline constexpr const char* kPointReach =
    "######\n#....#\n#....#\n#....#\n#....#\n######\n";
inline constexpr const char* kPointUMaze =
    "#####\n#S..#\n###.#\n#GGG#\n#####\n";
inline constexpr const char* kPointU4Maze =
    "#########\n#S......#\n#######.#\n#.......#\n#.#######\n#.......#\n#######.#\n#GGGG...#\n#########\n";
inline constexpr const char* kPointU5Maze =
    "#########\n#S......#\n#######.#\n#.......#\n#.#######\n#.......#\n#######.#\n#.......#\n#.#######\n"
    "#GGGG...#\n#########\n";
inline constexpr const char* kPointBigMaze =
    "##########\n#S...#...#\n#.##.#.#.#\n#.#..#.#.#\n#.#.##.#.#\n#...#..#.#\n###.#.##.#\n#........#\n"
    "#.###.##G#\n##########\n";
}  // namespace layouts

enum class Dynamics { Point, Arm };

struct EnvSpec {
  std::string name;
  Dynamics kind = Dynamics::Point;
  int state_dim = 4;
  int action_dim = 2;
  int goal_dim = 2;
  double action_bound = 4.0;
  double goal_radius = 0.5;
  int episode_length = 200;
  std::vector<int> goal_indices{0, 1};

  // Point mass.
  Layout layout;
  double agent_radius = 0.05;
  std::vector<Rect> walls;  // wall cells inflated by agent_radius
  double dt = 0.05;
  double damping = 0.1;
  double v_max = 2.0;

  // Two-link arm.
  double link1 = 1.0, link2 = 1.0;
  double omega_max = 4.0;

  bool positional() const { return kind == Dynamics::Point; }

  void validate() const {
    if (goal_radius <= 0) throw ConfigError("goal radius must be positive");
    if (episode_length < 2) throw ConfigError("episode length must be >= 2");
    if (action_bound <= 0) throw ConfigError("action bound must be positive");
    if (int(goal_indices.size()) != goal_dim) throw ConfigError("goal projection does not match goal_dim");
    for (const auto& w : walls)
      if (!(w.x1 > w.x0 && w.y1 > w.y0)) throw ConfigError("degenerate wall rectangle");
  }
};

inline EnvSpec make_point_env(std::string name, Layout layout) {
  EnvSpec s;
  s.name = std::move(name);
  s.kind = Dynamics::Point;
  s.layout = std::move(layout);
  for (int r = 0; r < s.layout.rows(); ++r)
    for (int c = 0; c < s.layout.cols(); ++c)
      if (s.layout.is_wall(r, c)) {
        Rect w = s.layout.cell_rect(r, c);
        s.walls.push_back({w.x0 - s.agent_radius, w.y0 - s.agent_radius, w.x1 + s.agent_radius, w.y1 + s.agent_radius});
      }
  s.validate();
  return s;
}

inline EnvSpec make_arm_env() {
  EnvSpec s;
  s.name = "arm_reach";
  s.kind = Dynamics::Arm;
  s.state_dim = 6;  // theta1, theta2, omega1, omega2, fingertip x, fingertip y
  s.action_dim = 2;
  s.goal_dim = 2;
  s.goal_indices = {4, 5};
  s.action_bound = 4.0;
  s.goal_radius = 0.5;
  s.validate();
  return s;
}

inline std::vector<std::string> env_preset_names() {
  return {"point_reach", "point_umaze", "point_u4maze", "point_u5maze", "point_bigmaze", "arm_reach"};
}

// Named environment presets. Episode length defaults to the desk-scale 200.
// maze_scale multiplies the cell size of the point mazes.
inline EnvSpec make_env(const std::string& name, double maze_scale = 1.0) {
  if (!(maze_scale > 0)) throw ConfigError("maze_scale must be positive");
  if (name == "point_reach") return make_point_env(name, parse_layout(layouts::kPointReach, maze_scale));
  if (name == "point_umaze") return make_point_env(name, parse_layout(layouts::kPointUMaze, maze_scale));
  if (name == "point_u4maze") return make_point_env(name, parse_layout(layouts::kPointU4Maze, maze_scale));
  if (name == "point_u5maze") return make_point_env(name, parse_layout(layouts::kPointU5Maze, maze_scale));
  if (name == "point_bigmaze") return make_point_env(name, parse_layout(layouts::kPointBigMaze, maze_scale));
  if (name == "arm_reach") return make_arm_env();
  throw ConfigError("unknown environment preset '" + name + "'");
}

struct EnvState {
  std::vector<double> s;
  int t = 0;
};

struct GoalSpec {
  std::vector<double> g;
};

inline std::vector<double> goal_projection(const EnvSpec& spec, const std::vector<double>& state) {
  std::vector<double> g(spec.goal_indices.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = state[spec.goal_indices[k]];
  return g;
}

inline bool near_goal(const EnvSpec& spec, const std::vector<double>& state, const GoalSpec& goal) {
  double d2 = 0;
  for (std::size_t k = 0; k < spec.goal_indices.size(); ++k) {
    const double d = state[spec.goal_indices[k]] - goal.g[k];
    d2 += d * d;
  }
  return std::sqrt(d2) <= spec.goal_radius;
}

inline bool inside_wall(const EnvSpec& spec, double x, double y) {
  for (const auto& w : spec.walls)
    if (w.strictly_contains(x, y)) return true;
  return false;
}

inline std::vector<double> arm_fingertip(const EnvSpec& spec, double th1, double th2) {
  return {spec.link1 * std::cos(th1) + spec.link2 * std::cos(th1 + th2),
          spec.link1 * std::sin(th1) + spec.link2 * std::sin(th1 + th2)};
}

// Separation filter on (start position, goal) pairs. Training resets of the
// stitching protocol draw starts and goals from all free space; evaluation
// resets keep the start and goal regions of the layout.
struct StartGoalConstraint {
  double min_sep = 0.0;
  double max_sep = INFINITY;
  bool anywhere = false;
};

namespace detail {

inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2 * pi);
  if (a < 0) a += 2 * pi;
  return a - pi;
}

inline std::vector<double> sample_in_cells(const EnvSpec& spec, const std::vector<std::pair<int, int>>& cells,
                                           std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const auto [r, c] = cells[pick(rng)];
    const Rect cr = spec.layout.cell_rect(r, c);
    const double x = cr.x0 + u(rng) * (cr.x1 - cr.x0);
    const double y = cr.y0 + u(rng) * (cr.y1 - cr.y0);
    if (!inside_wall(spec, x, y)) return {x, y};
  }
  throw ConfigError("could not sample a free position in " + spec.name);
}

inline std::vector<std::pair<int, int>> region(const Layout& lay, char kind) {
  auto cells = lay.cells_of(kind);
  if (cells.empty()) return lay.free_cells();
  return cells;
}

}  // namespace detail

inline constexpr int kResetRejections = 10000;

inline std::pair<EnvState, GoalSpec> reset(const EnvSpec& spec, std::mt19937_64& rng,
                                           const std::optional<StartGoalConstraint>& constraint = std::nullopt) {
  if (spec.kind == Dynamics::Arm) {
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
    for (int attempt = 0; attempt < kResetRejections; ++attempt) {
      const double a1 = ang(rng), a2 = ang(rng);
      const double g1 = ang(rng), g2 = ang(rng);
      auto tip = arm_fingertip(spec, a1, a2);
      auto goal = arm_fingertip(spec, g1, g2);
      const double sep = std::hypot(tip[0] - goal[0], tip[1] - goal[1]);
      if (constraint && (sep < constraint->min_sep || sep > constraint->max_sep)) continue;
      return {EnvState{{a1, a2, 0, 0, tip[0], tip[1]}, 0}, GoalSpec{goal}};
    }
    throw ConfigError("start/goal constraint unsatisfiable for " + spec.name);
  }
  const bool anywhere = constraint && constraint->anywhere;
  const auto starts = anywhere ? spec.layout.free_cells() : detail::region(spec.layout, 'S');
  const auto goals = anywhere ? spec.layout.free_cells() : detail::region(spec.layout, 'G');
  for (int attempt = 0; attempt < kResetRejections; ++attempt) {
    auto p = detail::sample_in_cells(spec, starts, rng);
    auto g = detail::sample_in_cells(spec, goals, rng);
    const double sep = std::hypot(p[0] - g[0], p[1] - g[1]);
    if (constraint && (sep < constraint->min_sep || sep > constraint->max_sep)) continue;
    return {EnvState{{p[0], p[1], 0.0, 0.0}, 0}, GoalSpec{g}};
  }
  throw ConfigError("start/goal constraint unsatisfiable for " + spec.name + " after " +
                    std::to_string(kResetRejections) + " rejections");
}

inline std::pair<EnvState, GoalSpec> reset(const EnvSpec& spec, std::uint64_t seed,
                                           const std::optional<StartGoalConstraint>& constraint = std::nullopt) {
  std::mt19937_64 rng(seed);
  return reset(spec, rng, constraint);
}

struct StepResult {
  EnvState next;
  double reward = 0;
  bool near_goal = false;
};

namespace detail {

// Moves along one axis from pos by delta, stopping at the first wall face
// crossed. axis 0 = x, 1 = y. Returns true on contact.
inline bool sweep_axis(const EnvSpec& spec, double& x, double& y, double delta, int axis) {
  double& p = axis == 0 ? x : y;
  const double other = axis == 0 ? y : x;
  double target = p + delta;
  bool hit = false;
  for (const auto& w : spec.walls) {
    const double lo = axis == 0 ? w.x0 : w.y0, hi = axis == 0 ? w.x1 : w.y1;
    const double olo = axis == 0 ? w.y0 : w.x0, ohi = axis == 0 ? w.y1 : w.x1;
    if (!(other > olo && other < ohi)) continue;
    if (delta > 0 && p <= lo && target > lo) {
      target = lo;
      hit = true;
    } else if (delta < 0 && p >= hi && target < hi) {
      target = hi;
      hit = true;
    }
  }
  p = target;
  return hit;
}

}  // namespace detail

// Deterministic transition. Actions are clipped to the bound.
inline StepResult step(const EnvSpec& spec, const EnvState& state, std::span<const double> action,
                       const GoalSpec& goal) {
  if (int(action.size()) != spec.action_dim) throw DimensionError("step: action dim mismatch");
  StepResult res;
  res.next = state;
  res.next.t = state.t + 1;
  auto& s = res.next.s;
  const double a0 = std::clamp(action[0], -spec.action_bound, spec.action_bound);
  const double a1 = std::clamp(action[1], -spec.action_bound, spec.action_bound);
  if (spec.kind == Dynamics::Point) {
    double vx = (s[2] + a0 * spec.dt) * (1.0 - spec.damping);
    double vy = (s[3] + a1 * spec.dt) * (1.0 - spec.damping);
    const double speed = std::hypot(vx, vy);
    if (speed > spec.v_max) {
      vx *= spec.v_max / speed;
      vy *= spec.v_max / speed;
    }
    double x = s[0], y = s[1];
    if (detail::sweep_axis(spec, x, y, vx * spec.dt, 0)) vx = 0;
    if (detail::sweep_axis(spec, x, y, vy * spec.dt, 1)) vy = 0;
    s = {x, y, vx, vy};
  } else {
    double w1 = std::clamp((s[2] + a0 * spec.dt) * (1.0 - spec.damping), -spec.omega_max, spec.omega_max);
    double w2 = std::clamp((s[3] + a1 * spec.dt) * (1.0 - spec.damping), -spec.omega_max, spec.omega_max);
    const double th1 = detail::wrap_angle(s[0] + w1 * spec.dt);
    const double th2 = detail::wrap_angle(s[1] + w2 * spec.dt);
    const auto tip = arm_fingertip(spec, th1, th2);
    s = {th1, th2, w1, w2, tip[0], tip[1]};
  }
  res.near_goal = near_goal(spec, s, goal);
  res.reward = res.near_goal ? 1.0 : 0.0;
  return res;
}

// Batched deterministic controller: (states, goals) -> actions.
using PolicyFn = std::function<Matrix<double>(const Matrix<double>&, const Matrix<double>&)>;

struct EvalResult {
  double mean = 0;
  double stderr_ = 0;
  std::vector<int> counts;
};

inline EvalResult summarize_counts(std::vector<int> counts) {
  EvalResult r;
  r.counts = std::move(counts);
  const double n = double(r.counts.size());
  if (n == 0) return r;
  for (int c : r.counts) r.mean += c;
  r.mean /= n;
  if (n > 1) {
    double var = 0;
    for (int c : r.counts) var += (c - r.mean) * (c - r.mean);
    var /= (n - 1);
    r.stderr_ = std::sqrt(var / n);
  }
  return r;
}

// Runs full-length episodes from the given initial states in lockstep and
// counts steps that end within the goal radius. Episodes never terminate
// early.
inline EvalResult rollout_from(const PolicyFn& policy, const EnvSpec& spec, std::vector<EnvState> states,
                               const std::vector<GoalSpec>& goals) {
  const std::size_t n = states.size();
  std::vector<int> counts(n, 0);
  Matrix<double> obs(n, spec.state_dim), gm(n, spec.goal_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < spec.goal_dim; ++k) gm(i, k) = goals[i].g[k];
  for (int t = 0; t < spec.episode_length; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < spec.state_dim; ++k) obs(i, k) = states[i].s[k];
    const Matrix<double> act = policy(obs, gm);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = step(spec, states[i], act.row_span(i), goals[i]);
      counts[i] += r.near_goal ? 1 : 0;
      states[i] = std::move(r.next);
    }
  }
  return summarize_counts(std::move(counts));
}

inline EvalResult rollout_eval(const PolicyFn& policy, const EnvSpec& spec, int n_episodes, std::uint64_t seed,
                               const std::optional<StartGoalConstraint>& constraint = std::nullopt) {
  if (n_episodes <= 0) throw ConfigError("evaluation needs at least one episode");
  std::mt19937_64 rng(seed);
  std::vector<EnvState> states;
  std::vector<GoalSpec> goals;
  for (int i = 0; i < n_episodes; ++i) {
    auto [s, g] = reset(spec, rng, constraint);
    states.push_back(std::move(s));
    goals.push_back(std::move(g));
  }
  return rollout_from(policy, spec, std::move(states), goals);
}

// N independent environments stepped in lockstep, each with its own rng
// stream; all episodes share the same length so they end together.
class VecEnv {
 public:
  VecEnv(EnvSpec spec, int num_envs, std::uint64_t seed, std::optional<StartGoalConstraint> constraint = std::nullopt)
      : spec_(std::move(spec)), constraint_(constraint) {
    std::seed_seq seq{seed, std::uint64_t(0x5eedULL)};
    std::vector<std::uint64_t> seeds(num_envs);
    seq.generate(seeds.begin(), seeds.end());
    for (int i = 0; i < num_envs; ++i) rngs_.emplace_back(seeds[i]);
    states_.resize(num_envs);
    goals_.resize(num_envs);
    reset_all();
  }

  const EnvSpec& spec() const { return spec_; }
  int size() const { return int(states_.size()); }
  const std::vector<EnvState>& states() const { return states_; }
  const std::vector<GoalSpec>& goals() const { return goals_; }
  std::vector<std::mt19937_64>& rngs() { return rngs_; }
  const std::vector<std::mt19937_64>& rngs() const { return rngs_; }

  void reset_all() {
    for (int i = 0; i < size(); ++i) {
      auto [s, g] = reset(spec_, rngs_[i], constraint_);
      states_[i] = std::move(s);
      goals_[i] = std::move(g);
    }
  }

  Matrix<double> observations() const {
    Matrix<double> m(size(), spec_.state_dim);
    for (int i = 0; i < size(); ++i)
      for (int k = 0; k < spec_.state_dim; ++k) m(i, k) = states_[i].s[k];
    return m;
  }
  Matrix<double> goal_matrix() const {
    Matrix<double> m(size(), spec_.goal_dim);
    for (int i = 0; i < size(); ++i)
      for (int k = 0; k < spec_.goal_dim; ++k) m(i, k) = goals_[i].g[k];
    return m;
  }

  // Steps every environment. Returns true when the episodes just ended.
  bool step_all(const Matrix<double>& actions, std::vector<StepResult>* out = nullptr) {
    if (out) out->clear();
    for (int i = 0; i < size(); ++i) {
      auto r = step(spec_, states_[i], actions.row_span(i), goals_[i]);
      states_[i] = r.next;
      if (out) out->push_back(std::move(r));
    }
    return states_[0].t >= spec_.episode_length;
  }

 private:
  EnvSpec spec_;
  std::optional<StartGoalConstraint> constraint_;
  std::vector<std::mt19937_64> rngs_;
  std::vector<EnvState> states_;
  std::vector<GoalSpec> goals_;
};

}  // namespace dcrl
