#include <gtest/gtest.h>

#include <filesystem>

#include "dcrl/experiments.hpp"

using namespace dcrl;
namespace fs = std::filesystem;

namespace {

SweepOptions tiny(const std::string& name, const std::string& env = "point_reach") {
  SweepOptions o;
  o.base.env = env;
  o.base.width = 8;
  o.base.repr_dim = 4;
  o.base.batch_size = 16;
  o.base.num_envs = 8;
  o.base.min_replay = 100;
  o.base.eval_every = 400;
  o.base.eval_episodes = 2;
  o.seeds = {0};
  o.budget = 1600;
  o.out_dir = (fs::temp_directory_path() / ("dcrl_experiments_test_" + name)).string();
  fs::remove_all(o.out_dir);
  return o;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return std::size_t(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST(Csv, RoundTripWithNaN) {
  CsvTable t{{"a", "b"}, {}};
  t.add({"1", csv_number(std::nan(""))});
  t.add({"x", csv_number(0.25)});
  const CsvTable u = parse_csv(to_csv(t));
  EXPECT_EQ(t, u);
  EXPECT_TRUE(std::isnan(u.number(0, "b")));
  EXPECT_EQ(u.number(1, "b"), 0.25);
  EXPECT_THROW(u.column("c"), ConfigError);
  EXPECT_THROW(parse_csv("a,b\n1\n"), FormatError);
  EXPECT_THROW(t.add({"1"}), DimensionError);
}

TEST(DepthSweep, SingleDepthSingleSeedIsOneRow) {
  auto o = tiny("one");
  const auto t = run_depth_sweep(o, {4});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][t.column("depth")], "4");
  EXPECT_EQ(t.rows[0][t.column("budget")], "1600");
  EXPECT_FALSE(std::isnan(t.number(0, "final_score")));
  EXPECT_TRUE(fs::exists(fs::path(o.out_dir) / "depth_sweep.csv"));
  EXPECT_EQ(read_csv((fs::path(o.out_dir) / "depth_sweep.csv").string()), t);
}

TEST(DepthSweep, SortedByDepthThenSeed) {
  auto o = tiny("sorted");
  o.seeds = {1, 0};
  o.budget = 800;
  const auto t = run_depth_sweep(o, {8, 4});
  ASSERT_EQ(t.rows.size(), 4u);
  std::vector<std::string> order;
  for (const auto& r : t.rows) order.push_back(r[t.column("depth")] + "/" + r[t.column("seed")]);
  EXPECT_EQ(order, (std::vector<std::string>{"4/0", "4/1", "8/0", "8/1"}));
}

TEST(DepthSweep, RejectsBadDepths) {
  auto o = tiny("bad");
  EXPECT_THROW(run_depth_sweep(o, {6}), ConfigError);
  EXPECT_THROW(run_depth_sweep(o, {}), ConfigError);
  o.seeds.clear();
  EXPECT_THROW(run_depth_sweep(o, {4}), ConfigError);
}

TEST(DepthSweep, ResumeSkipsCompletedCells) {
  auto o = tiny("resume");
  int trained = 0, cached = 0;
  o.log = [&](const std::string& s) {
    trained += s.rfind("train", 0) == 0;
    cached += s.rfind("cached", 0) == 0;
  };
  const auto first = run_depth_sweep(o, {4});
  EXPECT_EQ(trained, 1);
  const auto second = run_depth_sweep(o, {4});
  EXPECT_EQ(trained, 1);
  EXPECT_EQ(cached, 1);
  EXPECT_EQ(first, second);
  // a new seed only trains the missing cell
  o.seeds = {0, 1};
  run_depth_sweep(o, {4});
  EXPECT_EQ(trained, 2);
  EXPECT_EQ(count_files(fs::path(o.out_dir) / "cells"), 2u);
}

TEST(DepthSweep, AbortedCellIsNaNRowAndSweepContinues) {
  auto o = tiny("abort");
  o.base.critic_lr = 1e37;
  o.base.actor_lr = 1e37;
  o.budget = 4000;
  o.seeds = {0, 1};
  const auto t = run_depth_sweep(o, {4});
  ASSERT_EQ(t.rows.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_TRUE(std::isnan(t.number(r, "final_score")));
    EXPECT_EQ(t.rows[r][t.column("aborted")], "1");
  }
}

TEST(Pareto, WidthRowsAndParamCounts) {
  auto o = tiny("pareto");
  o.budget = 800;
  const auto t = run_width_depth_pareto(o, {8, 16}, {4, 8}, 16);
  // (8,4), (16,4), (16,8): (16,4) is shared by both ladders
  ASSERT_EQ(t.rows.size(), 3u);
  std::set<std::pair<std::string, std::string>> keys;
  const auto env = make_env("point_reach");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int w = std::stoi(t.rows[r][t.column("width")]);
    const int d = std::stoi(t.rows[r][t.column("depth")]);
    keys.insert({t.rows[r][t.column("width")], t.rows[r][t.column("depth")]});
    const std::size_t expect = param_count(NetworkSpec{env.state_dim + env.goal_dim, w, d, 2 * env.action_dim, true}) +
                               param_count(NetworkSpec{env.state_dim + env.action_dim, w, d, 4, true}) +
                               param_count(NetworkSpec{env.goal_dim, w, d, 4, true});
    EXPECT_EQ(t.rows[r][t.column("param_count")], std::to_string(expect));
  }
  EXPECT_EQ(keys.size(), t.rows.size());
}

TEST(Pareto, FigureWidthLadderGivesThreeDepthFourRows) {
  // Shape only: no training is needed to count the cells of the figure design.
  std::set<std::pair<int, int>> grid;
  for (int w : {256, 512, 1024}) grid.insert({w, 4});
  EXPECT_EQ(grid.size(), 3u);
  EXPECT_GT(agent_param_count(make_env("point_reach"), 512, 4, 4, 64),
            agent_param_count(make_env("point_reach"), 256, 4, 4, 64));
}

TEST(ActorCriticGrid, TwoByTwoAndDiagonalMatchesDepthSweep) {
  auto o = tiny("grid");
  o.budget = 800;
  const auto grid = run_actor_critic_grid(o, {4, 8}, {4, 8});
  ASSERT_EQ(grid.rows.size(), 4u);
  auto o2 = o;
  o2.out_dir = (fs::temp_directory_path() / "dcrl_experiments_test_grid_sweep").string();
  fs::remove_all(o2.out_dir);
  const auto sweep = run_depth_sweep(o2, {4, 8});
  for (const char* d : {"4", "8"}) {
    EXPECT_EQ(mean_where(grid, "final_score", {{"actor_depth", d}, {"critic_depth", d}}),
              mean_where(sweep, "final_score", {{"depth", d}}));
  }
  std::set<std::string> axes;
  for (const auto& r : grid.rows) axes.insert(r[grid.column("actor_depth")] + "x" + r[grid.column("critic_depth")]);
  EXPECT_EQ(axes, (std::set<std::string>{"4x4", "4x8", "8x4", "8x8"}));
}

TEST(BatchGrid, RowCountIsProduct) {
  auto o = tiny("batch");
  o.budget = 800;
  o.seeds = {0, 1};
  const auto t = run_batch_depth_grid(o, {8, 16}, {4});
  EXPECT_EQ(t.rows.size(), 2u * 1u * 2u);
  EXPECT_FALSE(std::isnan(mean_where(t, "final_score", {{"depth", "4"}})));
}

TEST(Collector, LearnersTakeNoEnvSteps) {
  auto o = tiny("collector", "point_umaze");
  o.budget = 800;
  const auto t = run_collector_experiment(o, {8, 4}, {4, 8});
  ASSERT_EQ(t.rows.size(), 2u * 3u);
  int collectors = 0;
  std::set<std::string> collector_depths;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto role = t.rows[r][t.column("role")];
    collector_depths.insert(t.rows[r][t.column("collector_depth")]);
    if (role == "learner") {
      EXPECT_EQ(t.rows[r][t.column("env_steps")], "0");
    } else {
      ++collectors;
      EXPECT_GE(std::stoll(t.rows[r][t.column("env_steps")]), 800);
    }
    EXPECT_FALSE(std::isnan(t.number(r, "final_score")));
  }
  EXPECT_EQ(collectors, 2);
  EXPECT_EQ(collector_depths, (std::set<std::string>{"4", "8"}));
}

TEST(Generalization, BucketsAreDisjointFromTraining) {
  auto o = tiny("gen", "point_umaze");
  o.base.maze_scale = 2.0;
  o.budget = 800;
  EXPECT_THROW(run_generalization(o, {4}, 3.0, {3, 4}), ConfigError);
  const auto t = run_generalization(o, {4}, 3.0, {4, 5, 6}, 4);
  ASSERT_EQ(t.rows.size(), 3u);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EXPECT_GE(t.number(r, "eval_sep"), 4.0);
    EXPECT_FALSE(std::isnan(t.number(r, "score")));
  }
  // every eval pair lies in its bucket, above the training cap
  const auto env = make_env("point_umaze", 2.0);
  std::mt19937_64 rng(3);
  for (int k : {4, 5, 6}) {
    for (int i = 0; i < 200; ++i) {
      auto [s, g] = reset(env, rng, generalization_bucket(k));
      const double sep = std::hypot(s.s[0] - g.g[0], s.s[1] - g.g[1]);
      EXPECT_GE(sep, double(k));
      EXPECT_LT(sep, double(k) + 1.0);
    }
  }
}

TEST(Generalization, TrainingPairsRespectCap) {
  TrainConfig c = tiny("gen_audit", "point_umaze").base;
  c.maze_scale = 2.0;
  c.train_max_sep = 3.0;
  c.train_anywhere = 1;
  c.total_env_steps = 1600;
  Trainer<float> tr(c);
  std::vector<double> seps;
  tr.set_pair_log(&seps);
  tr.train();
  ASSERT_FALSE(seps.empty());
  EXPECT_LE(*std::max_element(seps.begin(), seps.end()), 3.0);
}

TEST(Presets, CellsOutsideSweptAxesMustAgree) {
  TrainConfig base;
  TrainConfig a = base, b = base;
  a.actor_depth = 8;
  EXPECT_NO_THROW(check_shared_preset({a, base}, base, {"actor_depth"}));
  b.gamma = 0.5;
  EXPECT_THROW(check_shared_preset({a, b}, base, {"actor_depth"}), ConfigError);
  EXPECT_NE(cell_key(a), cell_key(base));
  TrainConfig a7 = a;
  a7.seed = 7;
  EXPECT_EQ(cell_key(a7).substr(0, 16), cell_key(a).substr(0, 16));
  EXPECT_NE(cell_key(a7), cell_key(a));
}

TEST(Presets, DepthLadder) { EXPECT_EQ(kDepthLadder, (std::vector<int>{4, 8, 16, 32, 64})); }
