// dcrl command line: training, evaluation, experiment sweeps and analysis
// exports. Every TrainConfig key is also a --flag that overrides --config.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dcrl/experiments.hpp"
#include "dcrl/viz.hpp"

using namespace dcrl;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!detail::trim(item).empty()) out.push_back(detail::trim(item));
  return out;
}

std::vector<int> int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  for (const auto& x : split(s)) out.push_back(detail::parse_number<int>(what, x));
  return out;
}

std::vector<double> double_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& x : split(s)) out.push_back(detail::parse_number<double>(what, x));
  return out;
}

// --config plus one --<key> option per TrainConfig key.
struct ConfigFlags {
  std::string file;
  std::vector<std::pair<std::string, CLI::Option*>> opts;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::vector<std::string>& skip = {}) {
    app->add_option("--config", file, "key=value config file");
    for (const auto& k : TrainConfig::keys()) {
      if (std::find(skip.begin(), skip.end(), k) != skip.end()) continue;
      opts.emplace_back(k, app->add_option("--" + k, values[k], "config key " + k));
    }
  }
  bool given(const std::string& key) const {
    for (const auto& [k, o] : opts)
      if (k == key) return o->count() > 0;
    return false;
  }
  TrainConfig build() const {
    TrainConfig c = file.empty() ? TrainConfig{} : TrainConfig::from_file(file);
    for (const auto& [k, o] : opts)
      if (o->count() > 0) c.set(k, values.at(k));
    return c;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
}

void print_record(const MetricsRecord& r) {
  std::fprintf(stderr, "epoch %d  env %lld  grad %lld  eval %.1f +- %.1f  critic %.3f (acc %.2f)  actor %.3f  %.0fs\n",
               r.epoch, static_cast<long long>(r.env_steps), static_cast<long long>(r.grad_steps), r.eval_mean,
               r.eval_stderr, r.critic_loss, r.critic_accuracy, r.actor_loss, r.wall_seconds);
}

// Common experiment flags.
struct SweepFlags {
  ConfigFlags cfg;
  std::string seeds = "0,1,2";
  std::int64_t budget = 200'000;
  std::string out_dir;

  void attach(CLI::App* app) {
    cfg.attach(app, {"seed", "total_env_steps"});
    app->add_option("--seeds", seeds, "comma-separated seeds");
    app->add_option("--budget", budget, "env steps per cell");
    app->add_option("--out-dir", out_dir, "results directory (resumable)")->required();
  }
  SweepOptions build() const {
    SweepOptions o;
    o.base = cfg.build();
    o.seeds.clear();
    for (const auto& s : split(seeds)) o.seeds.push_back(detail::parse_number<std::uint64_t>("seeds", s));
    o.budget = budget;
    o.out_dir = out_dir;
    o.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
    return o;
  }
};

Agent<float> load_agent(const std::string& path, int learner) {
  const Checkpoint ck = read_checkpoint(path);
  return agent_from_checkpoint(ck, learner < 0 ? "" : learner_prefix(std::size_t(learner)));
}

EnvSpec checkpoint_env(const std::string& path, const std::string& override_env) {
  TrainConfig cfg = TrainConfig::from_text(read_checkpoint(path).config_text);
  if (!override_env.empty()) cfg.env = override_env;
  return make_env(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep contrastive RL: training, sweeps and analysis"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train one agent");
  ConfigFlags train_cfg;
  train_cfg.attach(train);
  std::string train_out;
  train->add_option("--out-dir", train_out, "writes config.txt, metrics.jsonl, final.ckpt");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  std::string eval_ckpt, eval_env;
  int eval_n = 32, eval_learner = -1;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--env", eval_env, "environment (default: the training env)");
  eval->add_option("--episodes", eval_n);
  eval->add_option("--seed", eval_seed);
  eval->add_option("--learner", eval_learner, "learner index instead of the collector");

  // experiments
  auto* sweep = app.add_subcommand("sweep-depth", "depth sweep");
  SweepFlags sweep_f;
  sweep_f.attach(sweep);
  std::string sweep_depths = "4,8,16,32,64";
  sweep->add_option("--depths", sweep_depths);

  auto* pareto = app.add_subcommand("pareto", "width vs depth");
  SweepFlags pareto_f;
  pareto_f.attach(pareto);
  std::string pareto_widths = "256,512,1024", pareto_depths = "4,8,16,32,64";
  int pareto_width = 256;
  pareto->add_option("--widths", pareto_widths);
  pareto->add_option("--depths", pareto_depths);
  pareto->add_option("--pareto-width", pareto_width, "width of the depth ladder");

  auto* grid = app.add_subcommand("actor-critic-grid", "actor depth x critic depth");
  SweepFlags grid_f;
  grid_f.attach(grid);
  std::string grid_actor = "4,16,64", grid_critic = "4,16,64";
  grid->add_option("--actor-depths", grid_actor);
  grid->add_option("--critic-depths", grid_critic);

  auto* batch = app.add_subcommand("batch-grid", "batch size x depth");
  SweepFlags batch_f;
  batch_f.attach(batch);
  std::string batch_sizes = "256,512,1024", batch_depths = "4,16,64";
  batch->add_option("--batch-sizes", batch_sizes);
  batch->add_option("--depths", batch_depths);

  auto* coll = app.add_subcommand("collector", "collector/learner protocol");
  SweepFlags coll_f;
  coll_f.attach(coll);
  std::string coll_depths = "32,4", coll_learners = "4,32";
  coll->add_option("--collector-depths", coll_depths);
  coll->add_option("--learner-depths", coll_learners);

  auto* gen = app.add_subcommand("generalization", "train on near pairs, evaluate far pairs");
  SweepFlags gen_f;
  gen_f.attach(gen);
  std::string gen_depths = "4,16,64", gen_seps = "4,5,6";
  double gen_train_sep = 3.0;
  int gen_episodes = 32;
  gen->add_option("--depths", gen_depths);
  gen->add_option("--train-sep", gen_train_sep);
  gen->add_option("--eval-seps", gen_seps);
  gen->add_option("--eval-episodes", gen_episodes);

  // analysis
  auto* qgrid = app.add_subcommand("q-grid", "critic energy over the maze");
  std::string q_ckpt, q_goal, q_action, q_out;
  int q_res = 32, q_learner = -1;
  qgrid->add_option("--checkpoint", q_ckpt)->required();
  qgrid->add_option("--goal", q_goal, "x,y")->required();
  qgrid->add_option("--resolution", q_res);
  qgrid->add_option("--action", q_action, "fixed action (default zero)");
  qgrid->add_option("--learner", q_learner);
  qgrid->add_option("--out", q_out, "CSV path (default stdout)");

  auto* pca = app.add_subcommand("pca", "PCA of embeddings");
  std::string pca_in, pca_ckpt, pca_out;
  int pca_k = 2, pca_n = 256, pca_learner = -1;
  std::uint64_t pca_seed = 0;
  pca->add_option("--input", pca_in, "CSV of numeric embedding columns");
  pca->add_option("--checkpoint", pca_ckpt, "embed sampled state-action pairs with this critic");
  pca->add_option("--samples", pca_n);
  pca->add_option("--seed", pca_seed);
  pca->add_option("--learner", pca_learner);
  pca->add_option("-k,--components", pca_k);
  pca->add_option("--out", pca_out);

  auto* resn = app.add_subcommand("resnorms", "residual branch norms per block");
  std::string r_ckpt, r_out;
  int r_n = 256, r_learner = -1;
  std::uint64_t r_seed = 0;
  resn->add_option("--checkpoint", r_ckpt)->required();
  resn->add_option("--batch", r_n);
  resn->add_option("--seed", r_seed);
  resn->add_option("--learner", r_learner);
  resn->add_option("--out", r_out);

  auto* plot = app.add_subcommand("plot", "SVG from a CSV");
  std::string p_csv, p_out;
  PlotSpec p_spec;
  plot->add_option("--csv", p_csv)->required();
  plot->add_option("--kind", p_spec.kind, "line or heatmap");
  plot->add_option("--x", p_spec.x)->required();
  plot->add_option("--y", p_spec.y)->required();
  plot->add_option("--group", p_spec.group);
  plot->add_option("--value", p_spec.value);
  plot->add_option("--title", p_spec.title);
  plot->add_option("--out", p_out);

  auto* trace = app.add_subcommand("trace", "dump one deterministic rollout as CSV");
  std::string t_ckpt, t_env, t_out;
  std::uint64_t t_seed = 0;
  int t_learner = -1;
  trace->add_option("--checkpoint", t_ckpt)->required();
  trace->add_option("--env", t_env);
  trace->add_option("--seed", t_seed);
  trace->add_option("--learner", t_learner);
  trace->add_option("--out", t_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const TrainConfig cfg = train_cfg.build();
      for (const auto& w : cfg.validate()) std::fprintf(stderr, "warning: %s\n", w.c_str());
      RunPaths paths;
      if (!train_out.empty()) {
        fs::create_directories(train_out);
        write_text((fs::path(train_out) / "config.txt").string(), cfg.to_text());
        paths.metrics = (fs::path(train_out) / "metrics.jsonl").string();
        paths.checkpoint = (fs::path(train_out) / "final.ckpt").string();
        paths.diagnostic = (fs::path(train_out) / "diagnostic.ckpt").string();
      }
      const TrainResult res = run_training(cfg, paths, print_record);
      nlohmann::json j;
      j["final_score"] = detail::num_or_null(res.final_score);
      j["aborted"] = res.aborted;
      if (res.aborted) j["abort_reason"] = res.abort_reason;
      std::cout << j.dump() << "\n";
      return res.aborted ? 3 : 0;
    }
    if (*eval) {
      const EnvSpec env = checkpoint_env(eval_ckpt, eval_env);
      const Checkpoint ck = read_checkpoint(eval_ckpt);
      check_env_compatible(ck, env);
      const Agent<float> a = load_agent(eval_ckpt, eval_learner);
      const EvalResult r = rollout_eval(a.deterministic_policy(), env, eval_n, eval_seed);
      nlohmann::json j{{"env", env.name}, {"episodes", eval_n}, {"mean", r.mean}, {"stderr", r.stderr_}};
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (*sweep) {
      std::cout << to_csv(run_depth_sweep(sweep_f.build(), int_list(sweep_depths, "depths")));
      return 0;
    }
    if (*pareto) {
      std::cout << to_csv(run_width_depth_pareto(pareto_f.build(), int_list(pareto_widths, "widths"),
                                                 int_list(pareto_depths, "depths"), pareto_width));
      return 0;
    }
    if (*grid) {
      std::cout << to_csv(run_actor_critic_grid(grid_f.build(), int_list(grid_actor, "actor-depths"),
                                                int_list(grid_critic, "critic-depths")));
      return 0;
    }
    if (*batch) {
      std::cout << to_csv(
          run_batch_depth_grid(batch_f.build(), int_list(batch_sizes, "batch-sizes"), int_list(batch_depths, "depths")));
      return 0;
    }
    if (*coll) {
      SweepOptions o = coll_f.build();
      if (!coll_f.cfg.given("env") && coll_f.cfg.file.empty()) o.base.env = "point_umaze";
      std::cout << to_csv(run_collector_experiment(o, int_list(coll_depths, "collector-depths"),
                                                   int_list(coll_learners, "learner-depths")));
      return 0;
    }
    if (*gen) {
      SweepOptions o = gen_f.build();
      if (!gen_f.cfg.given("env") && gen_f.cfg.file.empty()) o.base.env = "point_umaze";
      // separations of 4-6 need the doubled maze
      if (!gen_f.cfg.given("maze_scale") && gen_f.cfg.file.empty()) o.base.maze_scale = 2.0;
      std::cout << to_csv(run_generalization(o, int_list(gen_depths, "depths"), gen_train_sep,
                                             int_list(gen_seps, "eval-seps"), gen_episodes));
      return 0;
    }
    if (*qgrid) {
      const EnvSpec env = checkpoint_env(q_ckpt, "");
      QGridOptions o;
      o.goal = double_list(q_goal, "goal");
      o.resolution = q_res;
      o.fixed_action = double_list(q_action, "action");
      write_text(q_out, to_csv(export_q_grid(load_agent(q_ckpt, q_learner), env, o)));
      return 0;
    }
    if (*pca) {
      if (pca_in.empty() == pca_ckpt.empty()) throw UsageError("pca needs exactly one of --input or --checkpoint");
      Matrix<double> x;
      if (!pca_in.empty()) {
        const CsvTable t = read_csv(pca_in);
        x = Matrix<double>(t.rows.size(), t.header.size());
        for (std::size_t r = 0; r < t.rows.size(); ++r)
          for (std::size_t c = 0; c < t.header.size(); ++c) x(r, c) = parse_csv_number(t.rows[r][c]);
      } else {
        const EnvSpec env = checkpoint_env(pca_ckpt, "");
        const Agent<float> a = load_agent(pca_ckpt, pca_learner);
        Matrix<float> s, act, g;
        probe_batch(env, pca_n, pca_seed, s, act, g);
        x = a.critic.embed_sa(s, act).cast<double>();
      }
      const PcaResult r = pca_project(x, pca_k);
      std::string ev;
      for (std::size_t i = 0; i < r.explained.size(); ++i) ev += (i ? " " : "") + csv_number(r.explained[i]);
      std::fprintf(stderr, "explained variance: %s\n", ev.c_str());
      write_text(pca_out, to_csv(pca_csv(r)));
      return 0;
    }
    if (*resn) {
      const EnvSpec env = checkpoint_env(r_ckpt, "");
      const Agent<float> a = load_agent(r_ckpt, r_learner);
      Matrix<float> s, act, g;
      probe_batch(env, r_n, r_seed, s, act, g);
      write_text(r_out, to_csv(residual_norm_profile(a, s, act, g)));
      return 0;
    }
    if (*plot) {
      write_text(p_out, emit_plot(read_csv(p_csv), p_spec));
      return 0;
    }
    if (*trace) {
      const EnvSpec env = checkpoint_env(t_ckpt, t_env);
      check_env_compatible(read_checkpoint(t_ckpt), env);
      const Agent<float> a = load_agent(t_ckpt, t_learner);
      write_text(t_out, to_csv(rollout_trace(a.deterministic_policy(), env, t_seed)));
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
