// Acceptance runner: one PASS/FAIL line per criterion.
//
//   dcrl_acceptance --work-dir DIR [--only 1,2,...] [--fresh]
//
// Training cells are cached under DIR by config hash, so an interrupted run
// resumes; --fresh clears DIR first.

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "../gradcheck.hpp"
#include "CLI11.hpp"
#include "dcrl/experiments.hpp"
#include "dcrl/viz.hpp"

using namespace dcrl;
namespace fs = std::filesystem;
using M = Matrix<double>;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradMinutes = 5.0;
constexpr double kLossTol = 1e-6;
constexpr double kDeepForwardSeconds = 10.0;
constexpr double kGeometricRelTol = 0.02;
constexpr int kGeometricDraws = 1'000'000;
constexpr int kReplayFuzzSteps = 1'000'000;
constexpr int kWallSteps = 1'000'000;
constexpr double kReachFraction = 0.60;
constexpr std::int64_t kDeskBudget = 200'000;
constexpr double kReachMinutes = 15.0;  // all three seeds together
constexpr double kPcaTol = 1e-8;
constexpr double kPcaSumTol = 1e-12;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  bool verbose = true;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << x;
  return o.str();
}

M random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0, sd);
  M m(r, c);
  for (auto& x : m.values()) x = n(rng);
  return m;
}

TrainConfig desk_preset(const std::string& env) {
  TrainConfig c;
  c.env = env;
  c.actor_depth = c.critic_depth = 4;
  c.width = 64;
  c.repr_dim = 64;
  c.batch_size = 512;
  c.num_envs = 64;
  c.utd = 40;
  c.episode_length = 200;
  c.total_env_steps = kDeskBudget;
  return c;
}

SweepOptions sweep(const Context& ctx, const std::string& name, const std::string& env) {
  SweepOptions o;
  o.base = desk_preset(env);
  o.seeds = kSeeds;
  o.budget = kDeskBudget;
  o.out_dir = (ctx.work / name).string();
  o.log = [](const std::string& s) { std::cerr << "  " << s << std::endl; };
  return o;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string where;
  int checks = 0;
  for (int depth : {4, 8, 16}) {
    for (int width : {8, 32}) {
      std::mt19937_64 rng(depth * 1000 + width);
      const int sd = 4, ad = 2, gd = 2, repr = 6, n = 5;
      CriticPair<double> critic(sd, ad, gd, width, depth, repr, rng(), rng());
      TrainingBatch<double> batch{random_matrix(n, sd, rng), random_matrix(n, ad, rng, 0.5),
                                  random_matrix(n, gd, rng)};
      critic.zero_grad();
      critic_loss_and_grad(critic, batch, 0.1);
      auto closs = [&] { return infonce(energy_matrix(batch, critic), 0.1, false).loss; };
      for (auto* store : {&critic.sa_encoder.params(), &critic.g_encoder.params()}) {
        const auto rep = testing_util::check_store_gradients(*store, closs, kGradStep);
        ++checks;
        if (rep.max_rel_error > worst) {
          worst = rep.max_rel_error;
          where = "critic d" + std::to_string(depth) + " w" + std::to_string(width) + " " + rep.worst;
        }
      }

      GaussianPolicy<double> policy(sd, gd, ad, 1.0, width, depth, rng());
      const M states = random_matrix(n, sd, rng), goals = random_matrix(n, gd, rng), noise = random_matrix(n, ad, rng);
      policy.actor.params().zero_grad();
      actor_loss_and_grad(policy, critic, states, goals, noise, 0.001);
      auto aloss = [&] { return actor_loss_and_grad(policy, critic, states, goals, noise, 0.001, false).loss; };
      const auto rep = testing_util::check_store_gradients(policy.actor.params(), aloss, kGradStep);
      ++checks;
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        where = "actor d" + std::to_string(depth) + " w" + std::to_string(width) + " " + rep.worst;
      }
    }
  }
  const double minutes = seconds_since(t0) / 60;
  return {worst <= kGradRelTol && minutes <= kGradMinutes,
          std::to_string(checks) + " stores, max rel err " + fmt(worst) + " (tol " + fmt(kGradRelTol) + "), " +
              fmt(minutes, 3) + " min; worst " + where};
}

// ---------------------------------------------------------------- 2

Outcome loss_oracles(const Context&) {
  double worst = 0;
  for (std::size_t b : {2u, 4u, 512u})
    worst = std::max(worst, std::abs(infonce_loss(M(b, b, -1.3), 0.0) - std::log(double(b))));
  const double hand = std::log1p(std::exp(-1.0));
  const double got = infonce_loss(M(2, 2, std::vector<double>{0, -1, -1, 0}), 0.0);
  worst = std::max(worst, std::abs(got - hand));
  return {worst <= kLossTol, "max abs err " + fmt(worst) + "; 2x2 gives " + fmt(got, 12)};
}

// ---------------------------------------------------------------- 3

Outcome architecture_identities(const Context&) {
  std::mt19937_64 rng(9);
  std::vector<std::string> fails;

  Network<double> net(NetworkSpec{4, 8, 12, 3}, 17);
  const M x = random_matrix(5, 4, rng);
  Network<double> zeroed = net;
  zeroed.zero_block(1);
  Network<double> two_blocks(NetworkSpec{4, 8, 8, 3}, 0);
  for (auto& e : two_blocks.params()) {
    std::string name = e.name;
    if (name.rfind("blk1.", 0) == 0) name.replace(0, 4, "blk2");
    e.value = net.params().at(name).value;
  }
  if (!(zeroed.forward(x) == two_blocks.forward(x))) fails.push_back("zeroed block is not an identity");

  std::uniform_int_distribution<int> dim(1, 40), blocks(1, 6);
  for (int i = 0; i < 20; ++i) {
    NetworkSpec s{dim(rng), dim(rng), 4 * blocks(rng), dim(rng)};
    if (param_count(s) != Network<float>(s, i).params().scalar_count()) fails.push_back("param_count spec " + std::to_string(i));
  }

  const auto t0 = std::chrono::steady_clock::now();
  Network<float> deep(NetworkSpec{8, 64, 1024, 4}, 5);
  const auto y = deep.forward(Matrix<float>(4, 8, 1.0f));
  const double secs = seconds_since(t0);
  if (!y.all_finite()) fails.push_back("depth-1024 output not finite");
  if (secs >= kDeepForwardSeconds) fails.push_back("depth-1024 build+forward took " + fmt(secs) + " s");

  std::string d = "identity, 20 param counts, depth-1024 in " + fmt(secs, 3) + " s";
  for (const auto& f : fails) d += "; " + f;
  return {fails.empty(), d};
}

// ---------------------------------------------------------------- 4

Outcome replay_statistics(const Context&) {
  std::vector<std::string> fails;
  std::mt19937_64 rng(17);

  double sum = 0;
  for (int i = 0; i < kGeometricDraws; ++i) sum += double(sample_future_index(100'000, 0, 0.99, rng));
  const double mean = sum / kGeometricDraws, expect = 1.0 / (1.0 - 0.99);
  const double rel = std::abs(mean - expect) / expect;
  if (rel > kGeometricRelTol) fails.push_back("geometric mean " + fmt(mean));

  // Fuzz: interleaved episodes of random length. After every
  // completion the buffer must hold exactly the longest suffix of completed
  // episodes that fits, with contents intact, and every sampled goal must be
  // strictly in the future of its row.
  const std::size_t capacity = 5000;
  ReplayBuffer<float> buf(2, 1, capacity, 1);
  std::vector<std::pair<std::int64_t, std::size_t>> completed;
  struct Open {
    std::int64_t id;
    int t, len;
  };
  std::vector<Open> open;
  std::int64_t next_id = 0;
  std::uniform_int_distribution<int> len_dist(1, 300), slots(1, 8);
  std::vector<ReplayBuffer<float>::RowOrigin> rows;
  buf.set_row_log(&rows);
  const std::vector<int> goal_idx{0};
  long steps = 0, violations = 0, samples = 0;
  while (steps < kReplayFuzzSteps) {
    while (int(open.size()) < slots(rng)) open.push_back({next_id++, 0, len_dist(rng)});
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng);
    Open& o = open[k];
    buf.append_step({{float(o.t), float(o.id)}, {0.f}, {float(o.t + 1), float(o.id)}, o.t, o.id});
    ++steps;
    if (++o.t < o.len) continue;
    buf.end_episode(o.id);
    completed.push_back({o.id, std::size_t(o.len)});
    open.erase(open.begin() + k);

    std::size_t total = 0, first = completed.size();
    while (first > 0 && total + completed[first - 1].second <= capacity) total += completed[--first].second;
    const auto eps = buf.snapshot();
    bool ok = buf.size() == total && buf.size() <= capacity && eps.size() == completed.size() - first;
    for (std::size_t i = 0; ok && i < eps.size(); ++i) {
      const auto& want = completed[first + i];
      ok = eps[i]->id == want.first && eps[i]->length() == want.second;
      for (std::size_t t = 0; ok && t < eps[i]->length(); ++t)
        ok = eps[i]->state(t)[0] == float(t) && eps[i]->state(t)[1] == float(want.first);
    }
    if (!ok) ++violations;
    if (completed.size() % 64 == 0 && buf.ready()) {
      rows.clear();
      try {
        const auto b = buf.sample_training_batch(256, 0.99, goal_idx, rng);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          ++samples;
          if (rows[i].goal_t <= rows[i].t || b.goals(i, 0) <= b.states(i, 0)) ++violations;
        }
      } catch (const UsageError&) {
        // only single-step episodes retained
      }
    }
  }
  if (violations) fails.push_back(std::to_string(violations) + " contract violations");
  if (samples == 0) fails.push_back("no batches sampled");

  std::string d = "mean " + fmt(mean, 6) + " vs " + fmt(expect) + " (rel " + fmt(rel, 3) + "); fuzz " +
                  std::to_string(steps) + " steps, " + std::to_string(completed.size()) + " episodes, " +
                  std::to_string(samples) + " goal draws";
  for (const auto& f : fails) d += "; " + f;
  return {fails.empty(), d};
}

// ---------------------------------------------------------------- 5

double linf_distance(const Rect& r, double x, double y) {
  const double dx = std::max({r.x0 - x, 0.0, x - r.x1});
  const double dy = std::max({r.y0 - y, 0.0, y - r.y1});
  return std::max(dx, dy);
}

// Same point-mass update written out by hand for an open arena.
int hand_trace_count(double px, double py, double gx, double gy, double bound, int steps, double radius) {
  const double dt = 0.05, damping = 0.1, vmax = 2.0;
  double vx = 0, vy = 0;
  int count = 0;
  for (int t = 0; t < steps; ++t) {
    const double dx = gx - px, dy = gy - py, d = std::sqrt(dx * dx + dy * dy);
    const double ax = d > 1e-9 ? bound * dx / d : 0.0, ay = d > 1e-9 ? bound * dy / d : 0.0;
    vx = (vx + ax * dt) * (1 - damping);
    vy = (vy + ay * dt) * (1 - damping);
    const double sp = std::sqrt(vx * vx + vy * vy);
    if (sp > vmax) {
      vx *= vmax / sp;
      vy *= vmax / sp;
    }
    px += vx * dt;
    py += vy * dt;
    if (std::sqrt((px - gx) * (px - gx) + (py - gy) * (py - gy)) <= radius) ++count;
  }
  return count;
}

Outcome environment_soundness(const Context&) {
  std::vector<std::string> fails;
  std::mt19937_64 rng(77);
  std::string d;
  for (const auto& name : {"point_reach", "point_umaze", "point_u4maze", "point_u5maze", "point_bigmaze"}) {
    const auto spec = make_env(name);
    std::vector<Rect> walls;
    for (int r = 0; r < spec.layout.rows(); ++r)
      for (int c = 0; c < spec.layout.cols(); ++c)
        if (spec.layout.is_wall(r, c)) walls.push_back(spec.layout.cell_rect(r, c));
    std::uniform_real_distribution<double> act(-spec.action_bound * 1.5, spec.action_bound * 1.5);
    auto [s, g] = reset(spec, rng);
    long penetrations = 0;
    for (int t = 0; t < kWallSteps; ++t) {
      if (t % spec.episode_length == 0 && t > 0) std::tie(s, g) = reset(spec, rng);
      s = step(spec, s, std::vector<double>{act(rng), act(rng)}, g).next;
      for (const auto& w : walls)
        if (linf_distance(w, s.s[0], s.s[1]) < spec.agent_radius - 1e-9) {
          ++penetrations;
          break;
        }
    }
    if (penetrations) fails.push_back(std::string(name) + ": " + std::to_string(penetrations) + " penetrations");
  }
  d = "0 penetrations required in 5 mazes x " + std::to_string(kWallSteps) + " steps";

  const auto spec = make_env("point_reach");
  const double bound = spec.action_bound;
  PolicyFn straight = [bound](const M& s, const M& g) {
    M a(s.rows(), 2);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      const double dx = g(i, 0) - s(i, 0), dy = g(i, 1) - s(i, 1), n = std::hypot(dx, dy);
      if (n > 1e-9) {
        a(i, 0) = bound * dx / n;
        a(i, 1) = bound * dy / n;
      }
    }
    return a;
  };
  const int expected = hand_trace_count(1.5, 1.5, 3.0, 3.0, bound, spec.episode_length, spec.goal_radius);
  const int got = rollout_from(straight, spec, {EnvState{{1.5, 1.5, 0, 0}, 0}}, {GoalSpec{{3.0, 3.0}}}).counts[0];
  if (got != expected || expected == 0)
    fails.push_back("scripted controller " + std::to_string(got) + " vs hand " + std::to_string(expected));
  d += "; scripted " + std::to_string(got) + " = hand " + std::to_string(expected);
  for (const auto& f : fails) d += "; " + f;
  return {fails.empty(), d};
}

// ---------------------------------------------------------------- 6

// Brute random search over open-loop constant actions: the best of 64 draws,
// picked on one set of episodes and scored on another.
double random_search_floor(const EnvSpec& env) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-env.action_bound, env.action_bound);
  double best = -1, best_ax = 0, best_ay = 0;
  for (int i = 0; i < 64; ++i) {
    const double ax = u(rng), ay = u(rng);
    PolicyFn p = [=](const M& s, const M&) {
      M a(s.rows(), 2);
      for (std::size_t r = 0; r < s.rows(); ++r) {
        a(r, 0) = ax;
        a(r, 1) = ay;
      }
      return a;
    };
    const double score = rollout_eval(p, env, 32, 7).mean;
    if (score > best) {
      best = score;
      best_ax = ax;
      best_ay = ay;
    }
  }
  PolicyFn p = [=](const M& s, const M&) {
    M a(s.rows(), 2);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      a(r, 0) = best_ax;
      a(r, 1) = best_ay;
    }
    return a;
  };
  return rollout_eval(p, env, 32, 8).mean;
}

// Wall time of a finished cell, from the last record of its metrics log.
double cell_minutes(const SweepOptions& o, const TrainConfig& c) {
  const fs::path p = fs::path(o.out_dir) / "runs" / (cell_key(c) + ".jsonl");
  if (!fs::exists(p)) return std::nan("");
  const auto recs = read_metrics(p.string());
  return recs.empty() ? std::nan("") : recs.back().wall_seconds / 60;
}

Outcome end_to_end(const Context& ctx) {
  auto o = sweep(ctx, "reach", "point_reach");
  const double T = o.base.episode_length;
  const double floor = random_search_floor(make_env(o.base));
  const auto t = run_depth_sweep(o, {4});
  int hits = 0;
  double minutes = 0;
  std::string scores;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double s = t.number(r, "final_score");
    hits += s >= kReachFraction * T;
    scores += (r ? " " : "") + fmt(s);
    TrainConfig c = o.base;
    c.total_env_steps = o.budget;
    c.seed = std::stoull(t.rows[r][t.column("seed")]);
    minutes += cell_minutes(o, c);
  }
  return {hits == int(t.rows.size()) && t.rows.size() == kSeeds.size() && minutes <= kReachMinutes &&
              floor < kReachFraction * T,
          "scores [" + scores + "] of T=" + fmt(T) + ", need >= " + fmt(kReachFraction * T) + "; " +
              std::to_string(hits) + "/" + std::to_string(t.rows.size()) + " seeds; random-search floor " + fmt(floor) +
              "; " + fmt(minutes, 3) + " min training for all seeds (limit " + fmt(kReachMinutes) + ")"};
}

// ---------------------------------------------------------------- 7

Outcome depth_trend(const Context& ctx) {
  auto o = sweep(ctx, "umaze", "point_umaze");
  const auto t = run_depth_sweep(o, {4, 16});
  const double d4 = mean_where(t, "final_score", {{"depth", "4"}});
  const double d16 = mean_where(t, "final_score", {{"depth", "16"}});
  auto deep = o;
  deep.seeds = {0};
  deep.out_dir = (ctx.work / "umaze_d64").string();
  const auto t64 = run_depth_sweep(deep, {64});
  bool nan_free = t64.rows.size() == 1 && t64.rows[0][t64.column("aborted")] == "0" &&
                  !std::isnan(t64.number(0, "final_score"));
  // every logged epoch of the deep run must be finite too (losses are NaN
  // only before the first update)
  const auto key = cell_key([&] {
    TrainConfig c = o.base;
    c.total_env_steps = deep.budget;
    c.seed = 0;
    c.actor_depth = c.critic_depth = 64;
    return c;
  }());
  std::int64_t last_step = 0;
  const fs::path metrics = fs::path(deep.out_dir) / "runs" / (key + ".jsonl");
  if (fs::exists(metrics)) {
    for (const auto& r : read_metrics(metrics.string())) {
      last_step = std::max(last_step, r.env_steps);
      const bool losses = r.grad_steps == 0 || (std::isfinite(r.critic_loss) && std::isfinite(r.actor_loss));
      nan_free = nan_free && losses && std::isfinite(r.eval_mean);
    }
  }
  nan_free = nan_free && last_step >= deep.budget;
  return {!std::isnan(d4) && !std::isnan(d16) && d16 >= d4 && nan_free,
          "mean final depth 4 " + fmt(d4) + ", depth 16 " + fmt(d16) + " (margin " + fmt(d16 - d4) +
              "); depth 64 " + (nan_free ? "NaN-free" : "NOT NaN-free") + " to " + std::to_string(last_step) +
              " steps, score " + (t64.rows.empty() ? "?" : t64.rows[0][t64.column("final_score")])};
}

// ---------------------------------------------------------------- 8

Outcome collector_protocol(const Context& ctx) {
  auto o = sweep(ctx, "collector", "point_umaze");
  const auto t = run_collector_experiment(o, {32}, {4, 32});
  bool zero = true;
  int learners = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (t.rows[r][t.column("role")] == "learner") {
      ++learners;
      zero = zero && t.rows[r][t.column("env_steps")] == "0";
    }
  const double shallow = mean_where(t, "final_score", {{"role", "learner"}, {"depth", "4"}});
  const double deep = mean_where(t, "final_score", {{"role", "learner"}, {"depth", "32"}});
  const double coll = mean_where(t, "final_score", {{"role", "collector"}});
  return {zero && learners == 2 * int(kSeeds.size()) && !std::isnan(deep) && !std::isnan(shallow) && deep >= shallow,
          std::to_string(learners) + " learners, env steps " + (zero ? "all 0" : "NONZERO") + "; deep learner " +
              fmt(deep) + ", shallow learner " + fmt(shallow) + " (margin " + fmt(deep - shallow) +
              "), collector " + fmt(coll)};
}

// ---------------------------------------------------------------- 9

TrainConfig tiny_run() {
  TrainConfig c;
  c.width = 8;
  c.repr_dim = 4;
  c.batch_size = 16;
  c.num_envs = 8;
  c.utd = 4;
  c.min_replay = 100;
  c.total_env_steps = 1600;
  c.eval_every = 400;
  c.eval_episodes = 4;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary | std::ios::trunc) << s; }

Outcome determinism_persistence(const Context& ctx) {
  std::vector<std::string> fails;
  const auto cfg = tiny_run();
  const auto a = Trainer<float>(cfg).train(), b = Trainer<float>(cfg).train();
  bool same = a.records.size() == b.records.size() && !a.records.empty();
  for (std::size_t i = 0; same && i < a.records.size(); ++i) same = a.records[i].same_run_values(b.records[i]);
  if (!same) fails.push_back("metrics differ between identical runs");

  const fs::path dir = ctx.work / "persist";
  fs::create_directories(dir);
  const auto path = dir / "a.ckpt";
  Trainer<float> tr(cfg);
  tr.train();
  const auto before = tr.evaluate(16, 5);
  tr.save(path.string());
  auto other = cfg;
  other.seed = 99;
  Trainer<float> fresh(other);
  fresh.load(path.string());
  const auto after = fresh.evaluate(16, 5);
  if (after.counts != before.counts || after.mean != before.mean) fails.push_back("reloaded evaluation differs");

  const std::string bytes = slurp(path);
  Trainer<float> target(other);
  const std::string untouched = encode_checkpoint(target.checkpoint());
  std::vector<std::pair<std::string, std::string>> bad{{"trunc", bytes.substr(0, bytes.size() / 2)}};
  std::string flip = bytes;
  flip[bytes.size() / 3] ^= 0x10;
  bad.push_back({"flip", flip});
  std::string magic = bytes;
  magic[0] = 'X';
  bad.push_back({"magic", magic});
  for (const auto& [name, data] : bad) {
    spit(dir / (name + ".ckpt"), data);
    bool rejected = false;
    try {
      target.load((dir / (name + ".ckpt")).string());
    } catch (const FormatError&) {
      rejected = true;
    }
    if (!rejected) fails.push_back(name + " checkpoint accepted");
  }
  if (encode_checkpoint(target.checkpoint()) != untouched) fails.push_back("rejected load mutated state");

  std::string d = std::to_string(a.records.size()) + " identical epochs; reload eval " + fmt(after.mean) + " = " +
                  fmt(before.mean) + "; 3 corrupt files rejected";
  for (const auto& f : fails) d += "; " + f;
  return {fails.empty(), d};
}

// ---------------------------------------------------------------- 10

// Eigen decomposition of the sample covariance, sorted descending, with the
// same sign convention as pca_project.
void pca_oracle(const M& x, int k, M& coords, std::vector<double>& explained) {
  const Eigen::Index n = Eigen::Index(x.rows()), d = Eigen::Index(x.cols());
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = x(i, j);
  const Eigen::MatrixXd C = X.rowwise() - X.colwise().mean();
  const Eigen::MatrixXd cov = C.transpose() * C / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0);
  const double total = vals.sum();
  coords = M(x.rows(), k);
  explained.clear();
  for (int c = 0; c < k; ++c) {
    const Eigen::Index col = d - 1 - c;
    Eigen::VectorXd p = C * es.eigenvectors().col(col);
    Eigen::Index arg;
    p.cwiseAbs().maxCoeff(&arg);
    if (p(arg) < 0) p = -p;
    for (Eigen::Index i = 0; i < n; ++i) coords(i, c) = p(i);
    explained.push_back(vals(col) / total);
  }
}

Outcome pca_qgrid(const Context& ctx) {
  std::vector<std::string> fails;
  double worst = 0, sum_err = 0;
  std::vector<M> data;
  data.push_back(M(3, 2, std::vector<double>{0, 0, 2, 1, 4, 5}));
  data.push_back(M(5, 3, std::vector<double>{1, 2, 0, 3, 1, 1, -1, 0, 2, 4, 4, -2, 0, 1, 3}));
  std::mt19937_64 rng(11);
  data.push_back(random_matrix(50, 6, rng));
  data.push_back(random_matrix(200, 12, rng));
  for (const auto& x : data) {
    const int k = int(std::min<std::size_t>(x.cols(), 3));
    const auto r = pca_project(x, k);
    M coords;
    std::vector<double> explained;
    pca_oracle(x, k, coords, explained);
    for (int c = 0; c < k; ++c) {
      worst = std::max(worst, std::abs(r.explained[c] - explained[c]));
      for (std::size_t i = 0; i < x.rows(); ++i) worst = std::max(worst, std::abs(r.coords(i, c) - coords(i, c)));
    }
    double s = 0;
    for (double e : r.explained_all) s += e;
    sum_err = std::max(sum_err, std::abs(s - 1.0));
  }
  if (worst > kPcaTol) fails.push_back("PCA differs from eigen oracle by " + fmt(worst));
  if (sum_err > kPcaSumTol) fails.push_back("explained variance sum off by " + fmt(sum_err));

  // Q grid of the trained depth-4 PointReach critic (seed 0 of criterion 6).
  auto o = sweep(ctx, "reach", "point_reach");
  TrainConfig c = o.base;
  c.total_env_steps = o.budget;
  c.seed = 0;
  c.actor_depth = c.critic_depth = 4;
  run_cell(c, o);
  const auto ckpt = fs::path(o.out_dir) / "runs" / (cell_key(c) + ".ckpt");
  const Agent<float> agent = agent_from_checkpoint(read_checkpoint(ckpt.string()));
  const EnvSpec env = make_env(c);
  std::string grid_detail;
  int on_goal = 0, goals = 0;
  for (const auto& g : std::vector<std::vector<double>>{{1.5, 1.5}, {3.5, 2.5}, {2.5, 4.5}, {4.5, 3.5}}) {
    QGridOptions q;
    q.goal = g;
    q.resolution = 4 * env.layout.cols();
    const auto t = export_q_grid(agent, env, q);
    std::size_t best = 0;
    for (std::size_t r = 1; r < t.rows.size(); ++r) {
      const double e = t.number(r, "energy");
      if (!std::isnan(e) && (std::isnan(t.number(best, "energy")) || e > t.number(best, "energy"))) best = r;
    }
    const double bx = t.number(best, "x"), by = t.number(best, "y");
    const bool hit = int(bx / env.layout.cell) == int(g[0] / env.layout.cell) &&
                     int(by / env.layout.cell) == int(g[1] / env.layout.cell);
    on_goal += hit;
    ++goals;
    grid_detail += " (" + fmt(g[0]) + "," + fmt(g[1]) + ")->(" + fmt(bx) + "," + fmt(by) + ")";
  }
  if (on_goal != goals) fails.push_back("Q grid max off the goal cell for " + std::to_string(goals - on_goal) + " goals");

  std::string d = "PCA max err " + fmt(worst) + ", sum err " + fmt(sum_err) + "; Q max in goal cell " +
                  std::to_string(on_goal) + "/" + std::to_string(goals) + ":" + grid_detail;
  for (const auto& f : fails) d += "; " + f;
  return {fails.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcrl acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool fresh = false;
  app.add_option("--work-dir", work, "directory for cached training cells");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_flag("--fresh", fresh, "clear the work directory first");
  CLI11_PARSE(app, argc, argv);

  Context ctx{fs::path(work)};
  if (fresh) fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"loss oracles", loss_oracles},
      {"architecture identities", architecture_identities},
      {"replay statistics", replay_statistics},
      {"environment soundness", environment_soundness},
      {"end-to-end learning", end_to_end},
      {"depth trend", depth_trend},
      {"collector/learner protocol", collector_protocol},
      {"determinism and persistence", determinism_persistence},
      {"pca and q grid", pca_qgrid},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    failed += !out.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                out.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
