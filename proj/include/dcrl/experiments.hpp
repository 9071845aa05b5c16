#pragma once

// Ablation protocols over the desk environments. Each cell is one training
// run keyed by (config hash, seed); finished cells are cached under
// out_dir/cells so an interrupted sweep picks up where it stopped.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dcrl/arch.hpp"
#include "dcrl/csv.hpp"
#include "dcrl/trainer.hpp"
#include "json.hpp"

namespace dcrl {

// Depth ladder of the depth sweep.
inline const std::vector<int> kDepthLadder{4, 8, 16, 32, 64};

struct SweepOptions {
  TrainConfig base;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::int64_t budget = 200'000;
  std::string out_dir;                            // empty: nothing cached or written
  std::function<void(const std::string&)> log{};  // progress lines
};

struct CellResult {
  double final_score = std::nan("");
  bool aborted = false;
  std::string abort_reason;
  std::int64_t env_steps = 0;
  std::vector<double> learner_scores;
  std::vector<std::int64_t> learner_env_steps;
  std::map<std::string, double> extra;
  bool resumed = false;
};

// Scores computed from the trained collector policy after a finished run.
using CellExtras = std::function<std::map<std::string, double>(const PolicyFn&, const EnvSpec&)>;

inline std::string cell_key(const TrainConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, config_hash(cfg));
  return std::string(buf) + "-s" + std::to_string(cfg.seed);
}

namespace detail {

inline nlohmann::json num_or_null(double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); }
inline double null_or_num(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

inline nlohmann::json cell_to_json(const TrainConfig& cfg, const CellResult& r) {
  nlohmann::json j;
  j["config"] = cfg.to_text();
  j["final_score"] = num_or_null(r.final_score);
  j["aborted"] = r.aborted;
  j["abort_reason"] = r.abort_reason;
  j["env_steps"] = r.env_steps;
  j["learner_scores"] = nlohmann::json::array();
  for (double x : r.learner_scores) j["learner_scores"].push_back(num_or_null(x));
  j["learner_env_steps"] = r.learner_env_steps;
  j["extra"] = nlohmann::json::object();
  for (const auto& [k, v] : r.extra) j["extra"][k] = num_or_null(v);
  return j;
}

inline CellResult cell_from_json(const nlohmann::json& j) {
  CellResult r;
  r.final_score = null_or_num(j.at("final_score"));
  r.aborted = j.at("aborted").get<bool>();
  r.abort_reason = j.at("abort_reason").get<std::string>();
  r.env_steps = j.at("env_steps").get<std::int64_t>();
  for (const auto& x : j.at("learner_scores")) r.learner_scores.push_back(null_or_num(x));
  r.learner_env_steps = j.at("learner_env_steps").get<std::vector<std::int64_t>>();
  for (const auto& [k, v] : j.at("extra").items()) r.extra[k] = null_or_num(v);
  r.resumed = true;
  return r;
}

template <class Real>
CellResult train_cell(const TrainConfig& cfg, const RunPaths& paths, const CellExtras& extras) {
  Trainer<Real> tr(cfg);
  const TrainResult res = tr.train(paths);
  CellResult out;
  out.final_score = res.final_score;
  out.aborted = res.aborted;
  out.abort_reason = res.abort_reason;
  out.env_steps = tr.env_steps();
  out.learner_scores = res.learner_final_scores;
  for (const auto& l : tr.learners()) out.learner_env_steps.push_back(l.env_steps);
  if (res.aborted) {
    out.final_score = std::nan("");
    out.learner_scores.assign(cfg.learner_depths.size(), std::nan(""));
  } else if (extras) {
    out.extra = extras(tr.collector().deterministic_policy(), tr.env());
  }
  return out;
}

}  // namespace detail

// Trains one cell, or loads it if out_dir already holds its result.
inline CellResult run_cell(const TrainConfig& cfg, const SweepOptions& opt, const CellExtras& extras = {}) {
  namespace fs = std::filesystem;
  const std::string key = cell_key(cfg);
  fs::path cell_file, run_dir;
  if (!opt.out_dir.empty()) {
    cell_file = fs::path(opt.out_dir) / "cells" / (key + ".json");
    run_dir = fs::path(opt.out_dir) / "runs";
    if (fs::exists(cell_file)) {
      std::ifstream f(cell_file);
      try {
        auto r = detail::cell_from_json(nlohmann::json::parse(f));
        if (opt.log) opt.log("cached " + key);
        return r;
      } catch (const std::exception&) {
        // unreadable cache entry: retrain
      }
    }
    fs::create_directories(cell_file.parent_path());
    fs::create_directories(run_dir);
  }
  RunPaths paths;
  if (!run_dir.empty()) {
    paths.metrics = (run_dir / (key + ".jsonl")).string();
    paths.checkpoint = (run_dir / (key + ".ckpt")).string();
    paths.diagnostic = (run_dir / (key + ".diag.ckpt")).string();
    fs::remove(paths.metrics);  // leftovers of an interrupted attempt
  }
  if (opt.log) opt.log("train " + key + " (" + cfg.env + ", seed " + std::to_string(cfg.seed) + ")");
  CellResult r = cfg.precision == "double" ? detail::train_cell<double>(cfg, paths, extras)
                                           : detail::train_cell<float>(cfg, paths, extras);
  if (!cell_file.empty()) {
    const fs::path tmp = cell_file.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::trunc);
      f << detail::cell_to_json(cfg, r).dump(1) << "\n";
    }
    fs::rename(tmp, cell_file);
  }
  if (opt.log)
    opt.log("done  " + key + " score " + csv_number(r.final_score) + (r.aborted ? " (aborted)" : ""));
  return r;
}

// Hash of a cell config with the swept keys and seed reset to the base
// values. All cells of one experiment must agree on it.
inline std::uint64_t preset_hash(const TrainConfig& cfg, const TrainConfig& base, const std::vector<std::string>& swept) {
  TrainConfig c = cfg;
  for (const auto& k : swept) c.set(k, base.get(k));
  return config_hash(c);
}

inline void check_shared_preset(const std::vector<TrainConfig>& cells, const TrainConfig& base,
                                const std::vector<std::string>& swept) {
  if (cells.empty()) return;
  const auto h = preset_hash(cells.front(), base, swept);
  for (const auto& c : cells)
    if (preset_hash(c, base, swept) != h) throw ConfigError("experiment cells differ outside the swept axes");
}

// Actor plus both critic encoders.
inline std::size_t agent_param_count(const EnvSpec& env, int width, int actor_depth, int critic_depth, int repr_dim) {
  const std::size_t actor = param_count(NetworkSpec{env.state_dim + env.goal_dim, width, actor_depth, 2 * env.action_dim, true});
  const std::size_t sa = param_count(NetworkSpec{env.state_dim + env.action_dim, width, critic_depth, repr_dim, true});
  const std::size_t g = param_count(NetworkSpec{env.goal_dim, width, critic_depth, repr_dim, true});
  return actor + sa + g;
}

namespace detail {

inline TrainConfig cell_config(const SweepOptions& opt, std::uint64_t seed) {
  TrainConfig c = opt.base;
  c.total_env_steps = opt.budget;
  c.seed = seed;
  return c;
}

inline void check_depths(const std::vector<int>& depths) {
  if (depths.empty()) throw ConfigError("no depths given");
  for (int d : depths)
    if (d <= 0 || d % kUnitsPerBlock != 0) throw ConfigError("depth " + std::to_string(d) + " is not a positive multiple of 4");
}

inline void check_positive(const std::vector<int>& xs, const char* what) {
  if (xs.empty()) throw ConfigError(std::string("no ") + what + " given");
  for (int x : xs)
    if (x <= 0) throw ConfigError(std::string(what) + " must be positive");
}

inline void check_seeds(const SweepOptions& opt) {
  if (opt.seeds.empty()) throw ConfigError("no seeds given");
  if (opt.budget <= 0) throw ConfigError("budget must be positive");
}

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline void finish(const SweepOptions& opt, const std::string& name, const CsvTable& t) {
  if (!opt.out_dir.empty()) write_csv((std::filesystem::path(opt.out_dir) / (name + ".csv")).string(), t);
}

}  // namespace detail

// ---------------------------------------------------------------- depth sweep

inline CsvTable run_depth_sweep(const SweepOptions& opt, const std::vector<int>& depths) {
  detail::check_depths(depths);
  detail::check_seeds(opt);
  CsvTable t{{"env", "depth", "seed", "budget", "final_score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (int d : detail::sorted_unique(depths)) {
    for (auto seed : detail::sorted_unique(opt.seeds)) {
      TrainConfig c = detail::cell_config(opt, seed);
      c.actor_depth = c.critic_depth = d;
      cells.push_back(c);
    }
  }
  check_shared_preset(cells, opt.base, {"actor_depth", "critic_depth", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt);
    t.add({c.env, std::to_string(c.actor_depth), std::to_string(c.seed), std::to_string(opt.budget),
           csv_number(r.final_score), r.aborted ? "1" : "0"});
  }
  detail::finish(opt, "depth_sweep", t);
  return t;
}

// ---------------------------------------------------------------- width vs depth

// Width ladder at depth 4 plus a depth ladder at pareto_width.
inline CsvTable run_width_depth_pareto(const SweepOptions& opt, const std::vector<int>& widths,
                                       const std::vector<int>& depths, int pareto_width = 256) {
  detail::check_positive(widths, "widths");
  detail::check_depths(depths);
  detail::check_seeds(opt);
  if (pareto_width <= 0) throw ConfigError("pareto width must be positive");
  std::set<std::pair<int, int>> grid;
  for (int w : widths) grid.insert({w, 4});
  for (int d : depths) grid.insert({pareto_width, d});
  const EnvSpec env = make_env(opt.base);
  CsvTable t{{"env", "width", "depth", "param_count", "seed", "budget", "final_score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (const auto& [w, d] : grid) {
    for (auto seed : detail::sorted_unique(opt.seeds)) {
      TrainConfig c = detail::cell_config(opt, seed);
      c.width = w;
      c.actor_depth = c.critic_depth = d;
      cells.push_back(c);
    }
  }
  check_shared_preset(cells, opt.base, {"width", "actor_depth", "critic_depth", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt);
    t.add({c.env, std::to_string(c.width), std::to_string(c.actor_depth),
           std::to_string(agent_param_count(env, c.width, c.actor_depth, c.critic_depth, c.repr_dim)),
           std::to_string(c.seed), std::to_string(opt.budget), csv_number(r.final_score), r.aborted ? "1" : "0"});
  }
  detail::finish(opt, "pareto", t);
  return t;
}

// ---------------------------------------------------------------- actor x critic

inline CsvTable run_actor_critic_grid(const SweepOptions& opt, const std::vector<int>& actor_depths,
                                      const std::vector<int>& critic_depths) {
  detail::check_depths(actor_depths);
  detail::check_depths(critic_depths);
  detail::check_seeds(opt);
  CsvTable t{{"env", "actor_depth", "critic_depth", "seed", "budget", "final_score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (int a : detail::sorted_unique(actor_depths)) {
    for (int c_depth : detail::sorted_unique(critic_depths)) {
      for (auto seed : detail::sorted_unique(opt.seeds)) {
        TrainConfig c = detail::cell_config(opt, seed);
        c.actor_depth = a;
        c.critic_depth = c_depth;
        cells.push_back(c);
      }
    }
  }
  check_shared_preset(cells, opt.base, {"actor_depth", "critic_depth", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt);
    t.add({c.env, std::to_string(c.actor_depth), std::to_string(c.critic_depth), std::to_string(c.seed),
           std::to_string(opt.budget), csv_number(r.final_score), r.aborted ? "1" : "0"});
  }
  detail::finish(opt, "actor_critic_grid", t);
  return t;
}

// ---------------------------------------------------------------- batch x depth

inline CsvTable run_batch_depth_grid(const SweepOptions& opt, const std::vector<int>& batch_sizes,
                                     const std::vector<int>& depths) {
  detail::check_positive(batch_sizes, "batch sizes");
  detail::check_depths(depths);
  detail::check_seeds(opt);
  CsvTable t{{"env", "batch_size", "depth", "seed", "budget", "final_score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (int b : detail::sorted_unique(batch_sizes)) {
    for (int d : detail::sorted_unique(depths)) {
      for (auto seed : detail::sorted_unique(opt.seeds)) {
        TrainConfig c = detail::cell_config(opt, seed);
        c.batch_size = b;
        c.actor_depth = c.critic_depth = d;
        cells.push_back(c);
      }
    }
  }
  check_shared_preset(cells, opt.base, {"batch_size", "actor_depth", "critic_depth", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt);
    t.add({c.env, std::to_string(c.batch_size), std::to_string(c.actor_depth), std::to_string(c.seed),
           std::to_string(opt.budget), csv_number(r.final_score), r.aborted ? "1" : "0"});
  }
  detail::finish(opt, "batch_grid", t);
  return t;
}

// ---------------------------------------------------------------- collector / learners

// One run per (collector depth, seed): the collector acts and learns, the
// learners only learn from the shared buffer at the same UTD.
inline CsvTable run_collector_experiment(const SweepOptions& opt, const std::vector<int>& collector_depths,
                                         const std::vector<int>& learner_depths = {4, 32}) {
  detail::check_depths(collector_depths);
  detail::check_depths(learner_depths);
  detail::check_seeds(opt);
  CsvTable t{{"env", "collector_depth", "role", "depth", "seed", "env_steps", "budget", "final_score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (int cd : collector_depths) {
    for (auto seed : detail::sorted_unique(opt.seeds)) {
      TrainConfig c = detail::cell_config(opt, seed);
      c.actor_depth = c.critic_depth = cd;
      c.learner_depths = learner_depths;
      cells.push_back(c);
    }
  }
  check_shared_preset(cells, opt.base, {"actor_depth", "critic_depth", "learner_depths", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt);
    const std::string cd = std::to_string(c.actor_depth), seed = std::to_string(c.seed),
                      budget = std::to_string(opt.budget), ab = r.aborted ? "1" : "0";
    t.add({c.env, cd, "collector", cd, seed, std::to_string(r.env_steps), budget, csv_number(r.final_score), ab});
    for (std::size_t k = 0; k < c.learner_depths.size(); ++k) {
      const double score = k < r.learner_scores.size() ? r.learner_scores[k] : std::nan("");
      const std::int64_t steps = k < r.learner_env_steps.size() ? r.learner_env_steps[k] : 0;
      t.add({c.env, cd, "learner", std::to_string(c.learner_depths[k]), seed, std::to_string(steps), budget,
             csv_number(score), ab});
    }
  }
  detail::finish(opt, "collector", t);
  return t;
}

// ---------------------------------------------------------------- generalization

// Eval bucket k holds start/goal pairs with separation in [k, k + 1).
inline StartGoalConstraint generalization_bucket(int k) { return {double(k), double(k) + 1.0, true}; }

// Trains on start/goal pairs at most train_sep apart, then evaluates each
// held-out separation bucket. Buckets must not reach below train_sep.
inline CsvTable run_generalization(const SweepOptions& opt, const std::vector<int>& depths, double train_sep = 3.0,
                                   const std::vector<int>& eval_seps = {4, 5, 6}, int eval_episodes = 32) {
  detail::check_depths(depths);
  detail::check_seeds(opt);
  if (!(train_sep > 0)) throw ConfigError("train separation must be positive");
  if (eval_seps.empty()) throw ConfigError("no eval separations given");
  if (eval_episodes <= 0) throw ConfigError("eval episodes must be positive");
  for (int k : eval_seps)
    if (double(k) <= train_sep) throw ConfigError("eval bucket " + std::to_string(k) + " overlaps training pairs");
  const auto seps = detail::sorted_unique(eval_seps);
  const CellExtras extras = [&](const PolicyFn& pol, const EnvSpec& env) {
    std::map<std::string, double> m;
    for (int k : seps) {
      m["sep" + std::to_string(k)] = rollout_eval(pol, env, eval_episodes, 5000 + std::uint64_t(k), generalization_bucket(k)).mean;
    }
    return m;
  };
  CsvTable t{{"env", "depth", "seed", "eval_sep", "train_sep", "budget", "score", "aborted"}, {}};
  std::vector<TrainConfig> cells;
  for (int d : detail::sorted_unique(depths)) {
    for (auto seed : detail::sorted_unique(opt.seeds)) {
      TrainConfig c = detail::cell_config(opt, seed);
      c.actor_depth = c.critic_depth = d;
      c.train_max_sep = train_sep;
      c.train_anywhere = 1;
      cells.push_back(c);
    }
  }
  check_shared_preset(cells, opt.base, {"actor_depth", "critic_depth", "seed"});
  for (const auto& c : cells) {
    const CellResult r = run_cell(c, opt, extras);
    for (int k : seps) {
      const auto it = r.extra.find("sep" + std::to_string(k));
      const double score = it == r.extra.end() ? std::nan("") : it->second;
      t.add({c.env, std::to_string(c.actor_depth), std::to_string(c.seed), std::to_string(k), csv_number(train_sep),
             std::to_string(opt.budget), csv_number(score), r.aborted ? "1" : "0"});
    }
  }
  detail::finish(opt, "generalization", t);
  return t;
}

// Mean of a numeric column over rows where every filter column equals its value.
inline double mean_where(const CsvTable& t, const std::string& col,
                         const std::vector<std::pair<std::string, std::string>>& filters) {
  double sum = 0;
  int n = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    bool ok = true;
    for (const auto& [k, v] : filters) ok = ok && t.rows[r][t.column(k)] == v;
    if (!ok) continue;
    sum += t.number(r, col);
    ++n;
  }
  return n ? sum / n : std::nan("");
}

}  // namespace dcrl
