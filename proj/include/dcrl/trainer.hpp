#pragma once

// Online training: vectorized collection into an episode buffer, UTD-gated
// critic/actor updates, evaluation epochs, JSONL metrics and checkpoints.

#include <bit>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <zlib.h>

#include "dcrl/crl.hpp"
#include "dcrl/envs.hpp"
#include "dcrl/replay.hpp"
#include "json.hpp"

namespace dcrl {

// ---------------------------------------------------------------- config

struct TrainConfig {
  std::string env = "point_reach";
  int actor_depth = 4;
  int critic_depth = 4;
  int width = 64;
  int repr_dim = 64;
  int batch_size = 512;
  int num_envs = 64;
  double gamma = 0.99;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double logsumexp_penalty = 0.1;
  double alpha = 0.001;
  int utd = 40;
  std::int64_t total_env_steps = 200'000;
  std::int64_t eval_every = 0;  // 0: total_env_steps / 50
  int eval_episodes = 32;
  std::uint64_t seed = 0;
  std::string precision = "float";
  std::int64_t min_replay = 1'000;
  std::int64_t replay_capacity = 1'000'000;
  double grad_clip = 10.0;
  int episode_length = 200;
  double maze_scale = 1.0;            // cell size multiplier for the point mazes
  int train_anywhere = 0;             // 1: training starts and goals drawn from all free cells
  double train_max_sep = 0;           // > 0: training start/goal pairs at most this far apart
  std::vector<int> learner_depths{};  // passive learners sharing the buffer

  std::int64_t epoch_steps() const { return eval_every > 0 ? eval_every : std::max<std::int64_t>(1, total_env_steps / 50); }

  // Throws ConfigError; returns non-fatal warnings.
  std::vector<std::string> validate() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Canonical key=value text, one key per line in keys() order.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_file(const std::string& path);

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) { return a.to_text() == b.to_text(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (in.fail() || !in.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return x;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

using Field = std::variant<std::string TrainConfig::*, int TrainConfig::*, std::int64_t TrainConfig::*,
                           std::uint64_t TrainConfig::*, double TrainConfig::*, std::vector<int> TrainConfig::*>;

inline const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const std::vector<std::pair<std::string, Field>> f{
      {"env", &TrainConfig::env},
      {"actor_depth", &TrainConfig::actor_depth},
      {"critic_depth", &TrainConfig::critic_depth},
      {"width", &TrainConfig::width},
      {"repr_dim", &TrainConfig::repr_dim},
      {"batch_size", &TrainConfig::batch_size},
      {"num_envs", &TrainConfig::num_envs},
      {"gamma", &TrainConfig::gamma},
      {"actor_lr", &TrainConfig::actor_lr},
      {"critic_lr", &TrainConfig::critic_lr},
      {"logsumexp_penalty", &TrainConfig::logsumexp_penalty},
      {"alpha", &TrainConfig::alpha},
      {"utd", &TrainConfig::utd},
      {"total_env_steps", &TrainConfig::total_env_steps},
      {"eval_every", &TrainConfig::eval_every},
      {"eval_episodes", &TrainConfig::eval_episodes},
      {"seed", &TrainConfig::seed},
      {"precision", &TrainConfig::precision},
      {"min_replay", &TrainConfig::min_replay},
      {"replay_capacity", &TrainConfig::replay_capacity},
      {"grad_clip", &TrainConfig::grad_clip},
      {"episode_length", &TrainConfig::episode_length},
      {"maze_scale", &TrainConfig::maze_scale},
      {"train_anywhere", &TrainConfig::train_anywhere},
      {"train_max_sep", &TrainConfig::train_max_sep},
      {"learner_depths", &TrainConfig::learner_depths},
  };
  return f;
}

inline const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : config_fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

inline const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : detail::config_fields()) out.push_back(name);
    return out;
  }();
  return k;
}

inline void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = detail::trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          this->*member = v;
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
          std::vector<int> out;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ','))
            if (!detail::trim(item).empty()) out.push_back(detail::parse_number<int>(key, detail::trim(item)));
          this->*member = out;
        } else {
          this->*member = detail::parse_number<T>(key, v);
        }
      },
      detail::find_field(key));
}

inline std::string TrainConfig::get(const std::string& key) const {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(this->*member)>;
        const auto& x = this->*member;
        if constexpr (std::is_same_v<T, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
          std::string out;
          for (std::size_t i = 0; i < x.size(); ++i) out += (i ? "," : "") + std::to_string(x[i]);
          return out;
        } else if constexpr (std::is_same_v<T, double>) {
          return detail::format_double(x);
        } else {
          return std::to_string(x);
        }
      },
      detail::find_field(key));
}

inline std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + get(k) + "\n";
  return out;
}

inline TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

inline TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

inline std::vector<std::string> TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) throw ConfigError(std::string(name) + " must be positive");
  };
  make_env(env, maze_scale);
  positive("episode_length", episode_length);
  for (int d : {actor_depth, critic_depth})
    if (d <= 0 || d % kUnitsPerBlock != 0) throw ConfigError("network depth must be a positive multiple of 4");
  for (int d : learner_depths)
    if (d <= 0 || d % kUnitsPerBlock != 0) throw ConfigError("learner depth must be a positive multiple of 4");
  positive("width", width);
  positive("repr_dim", repr_dim);
  positive("batch_size", batch_size);
  positive("num_envs", num_envs);
  positive("actor_lr", actor_lr);
  positive("critic_lr", critic_lr);
  positive("utd", utd);
  positive("total_env_steps", double(total_env_steps));
  positive("eval_episodes", eval_episodes);
  positive("replay_capacity", double(replay_capacity));
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (min_replay < 0) throw ConfigError("min_replay must be >= 0");
  if (!(gamma >= 0 && gamma < 1)) throw ConfigError("gamma must lie in [0, 1)");
  if (train_anywhere != 0 && train_anywhere != 1) throw ConfigError("train_anywhere must be 0 or 1");
  if (logsumexp_penalty < 0 || alpha < 0 || grad_clip < 0 || train_max_sep < 0)
    throw ConfigError("logsumexp_penalty, alpha, grad_clip and train_max_sep must be >= 0");
  if (precision != "float" && precision != "double") throw ConfigError("precision must be 'float' or 'double'");
  std::vector<std::string> warnings;
  if (actor_depth >= 1024)
    warnings.push_back("actor_depth >= 1024: consider scaling only the critic and keeping the actor at 512");
  return warnings;
}

// FNV-1a over the config text without its seed: runs that differ only by
// seed share a hash.
// Environment described by a config: preset, maze scale and episode length.
inline EnvSpec make_env(const TrainConfig& cfg) {
  EnvSpec e = make_env(cfg.env, cfg.maze_scale);
  e.episode_length = cfg.episode_length;
  return e;
}

inline std::uint64_t config_hash(const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.seed = 0;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : c.to_text()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------- metrics

struct MetricsRecord {
  int epoch = 0;
  std::int64_t env_steps = 0;
  std::int64_t grad_steps = 0;
  double eval_mean = 0;
  double eval_stderr = 0;
  double critic_loss = 0;
  double critic_accuracy = 0;
  double actor_loss = 0;
  double critic_grad_norm = 0;
  double actor_grad_norm = 0;
  std::vector<double> learner_eval;
  double wall_seconds = 0;

  // Everything except wall time, which is the only nondeterministic field.
  // NaN (no updates yet) matches NaN.
  bool same_run_values(const MetricsRecord& o) const {
    auto eq = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    if (learner_eval.size() != o.learner_eval.size()) return false;
    for (std::size_t k = 0; k < learner_eval.size(); ++k)
      if (!eq(learner_eval[k], o.learner_eval[k])) return false;
    return epoch == o.epoch && env_steps == o.env_steps && grad_steps == o.grad_steps && eq(eval_mean, o.eval_mean) &&
           eq(eval_stderr, o.eval_stderr) && eq(critic_loss, o.critic_loss) &&
           eq(critic_accuracy, o.critic_accuracy) && eq(actor_loss, o.actor_loss) &&
           eq(critic_grad_norm, o.critic_grad_norm) && eq(actor_grad_norm, o.actor_grad_norm);
  }
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["env_steps"] = r.env_steps;
  j["grad_steps"] = r.grad_steps;
  j["eval_time_near_goal"] = {{"mean", num(r.eval_mean)}, {"stderr", num(r.eval_stderr)}};
  j["critic_loss"] = num(r.critic_loss);
  j["critic_accuracy"] = num(r.critic_accuracy);
  j["actor_loss"] = num(r.actor_loss);
  j["critic_grad_norm"] = num(r.critic_grad_norm);
  j["actor_grad_norm"] = num(r.actor_grad_norm);
  if (!r.learner_eval.empty()) {
    j["learner_eval"] = nlohmann::json::array();
    for (double x : r.learner_eval) j["learner_eval"].push_back(num(x));
  }
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  MetricsRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.env_steps = j.at("env_steps").get<std::int64_t>();
  r.grad_steps = j.at("grad_steps").get<std::int64_t>();
  r.eval_mean = num(j.at("eval_time_near_goal").at("mean"));
  r.eval_stderr = num(j.at("eval_time_near_goal").at("stderr"));
  r.critic_loss = num(j.at("critic_loss"));
  r.critic_accuracy = num(j.value("critic_accuracy", nlohmann::json(nullptr)));
  r.actor_loss = num(j.at("actor_loss"));
  r.critic_grad_norm = num(j.at("critic_grad_norm"));
  r.actor_grad_norm = num(j.at("actor_grad_norm"));
  if (j.contains("learner_eval"))
    for (const auto& x : j["learner_eval"]) r.learner_eval.push_back(num(x));
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

// Reads every complete line; a torn final line (crash mid-write) is skipped.
inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open metrics file '" + path + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (detail::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    out.push_back(metrics_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointEntry> entries;
  std::string rng_state;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(char((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void raw(const std::string& s) { bytes_ += s; }
  void blob(const std::string& s) {
    u32(std::uint32_t(s.size()));
    raw(s);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string blob() { return raw(u32()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc_of(std::string_view s) {
  return std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(s.data()), uInt(s.size())));
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw("DCRL");
  w.u32(kCheckpointVersion);
  w.blob(ck.config_text);
  w.u32(std::uint32_t(ck.entries.size()));
  for (const auto& e : ck.entries) {
    w.blob(e.name);
    w.u32(std::uint32_t(e.dims.size()));
    std::size_t n = 1;
    for (auto d : e.dims) {
      w.u32(d);
      n *= d;
    }
    if (n != e.values.size()) throw DimensionError("checkpoint entry '" + e.name + "' payload does not match dims");
    for (float x : e.values) w.f32(x);
  }
  w.blob(ck.rng_state);
  const std::uint32_t crc = detail::crc_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DCRL") != 0) throw FormatError("not a checkpoint (bad magic)");
  detail::ByteReader head(std::string_view(bytes).substr(4, 4));
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const std::string_view body(bytes.data(), bytes.size() - 4);
  detail::ByteReader tail(std::string_view(bytes).substr(bytes.size() - 4));
  if (tail.u32() != detail::crc_of(body)) throw FormatError("checkpoint checksum mismatch (corrupted or truncated)");
  detail::ByteReader r(body.substr(8));
  Checkpoint ck;
  ck.config_text = r.blob();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.blob();
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.u32());
      n *= e.dims.back();
    }
    e.values.resize(n);
    for (auto& x : e.values) x = r.f32();
    ck.entries.push_back(std::move(e));
  }
  ck.rng_state = r.blob();
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write checkpoint '" + path + "'");
    f.write(bytes.data(), std::streamsize(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

template <class Real>
void append_entries(std::vector<CheckpointEntry>& out, const std::string& prefix, const ParameterStore<Real>& store) {
  for (const auto& e : store) {
    CheckpointEntry c;
    c.name = prefix + e.name;
    c.dims = {std::uint32_t(e.value.rows()), std::uint32_t(e.value.cols())};
    c.values.assign(e.value.values().begin(), e.value.values().end());
    out.push_back(std::move(c));
  }
}

// Checks every entry first and only then writes, so a mismatch leaves the
// store untouched.
template <class Real>
void check_entries(const Checkpoint& ck, const std::string& prefix, const ParameterStore<Real>& store) {
  for (const auto& e : store) {
    const auto* c = ck.find(prefix + e.name);
    if (!c) throw ConfigError("checkpoint has no entry '" + prefix + e.name + "'");
    if (c->dims.size() != 2 || c->dims[0] != e.value.rows() || c->dims[1] != e.value.cols())
      throw DimensionError("checkpoint entry '" + c->name + "' has shape " +
                           (c->dims.size() == 2 ? dims_str(c->dims[0], c->dims[1]) : std::string("rank ") + std::to_string(c->dims.size())) +
                           ", network expects " + dims_str(e.value.rows(), e.value.cols()));
  }
}

template <class Real>
void load_entries(const Checkpoint& ck, const std::string& prefix, ParameterStore<Real>& store) {
  for (auto& e : store) {
    const auto* c = ck.find(prefix + e.name);
    std::copy(c->values.begin(), c->values.end(), e.value.data());
  }
}

// ---------------------------------------------------------------- agent

struct UpdateStats {
  double critic_loss = 0, critic_accuracy = 0, actor_loss = 0, critic_grad_norm = 0, actor_grad_norm = 0;
};

// One actor plus one critic pair with their optimizers.
template <class Real>
struct Agent {
  GaussianPolicy<Real> policy;
  CriticPair<Real> critic;
  AdamState<Real> actor_opt, sa_opt, g_opt;
  std::int64_t env_steps = 0;
  std::int64_t grad_steps = 0;

  Agent() = default;
  Agent(const EnvSpec& env, const TrainConfig& cfg, int actor_depth, int critic_depth, std::uint64_t seed) {
    std::seed_seq seq{seed, std::uint64_t(actor_depth), std::uint64_t(critic_depth)};
    std::uint64_t s[3];
    seq.generate(s, s + 3);
    policy = GaussianPolicy<Real>(env.state_dim, env.goal_dim, env.action_dim, env.action_bound, cfg.width,
                                  actor_depth, s[0]);
    critic = CriticPair<Real>(env.state_dim, env.action_dim, env.goal_dim, cfg.width, critic_depth, cfg.repr_dim,
                              s[1], s[2]);
    actor_opt = AdamState<Real>(policy.actor.params(), cfg.actor_lr);
    sa_opt = AdamState<Real>(critic.sa_encoder.params(), cfg.critic_lr);
    g_opt = AdamState<Real>(critic.g_encoder.params(), cfg.critic_lr);
  }

  // Critic step on the batch, then an actor step against the updated critic.
  UpdateStats update(const TrainingBatch<Real>& batch, const TrainConfig& cfg, std::mt19937_64& rng) {
    UpdateStats st;
    critic.zero_grad();
    const auto c = critic_loss_and_grad(critic, batch, cfg.logsumexp_penalty);
    st.critic_loss = c.loss;
    st.critic_accuracy = c.accuracy;
    st.critic_grad_norm = clip_grad_norm({&critic.sa_encoder.params(), &critic.g_encoder.params()}, cfg.grad_clip);
    adam_step(critic.sa_encoder.params(), sa_opt);
    adam_step(critic.g_encoder.params(), g_opt);

    policy.actor.params().zero_grad();
    const Matrix<Real> noise = standard_normal<Real>(batch.states.rows(), policy.action_dim, rng);
    const auto a = actor_loss_and_grad(policy, critic, batch.states, batch.goals, noise, cfg.alpha);
    st.actor_loss = a.loss;
    st.actor_grad_norm = clip_grad_norm(policy.actor.params(), cfg.grad_clip);
    adam_step(policy.actor.params(), actor_opt);
    ++grad_steps;
    return st;
  }

  PolicyFn deterministic_policy() const {
    return [this](const Matrix<double>& s, const Matrix<double>& g) {
      return policy_actions(policy, s.template cast<Real>(), g.template cast<Real>(),
                            static_cast<const Matrix<Real>*>(nullptr))
          .template cast<double>();
    };
  }

  void append_to(std::vector<CheckpointEntry>& out, const std::string& prefix) const {
    append_entries(out, prefix + "actor/", policy.actor.params());
    append_entries(out, prefix + "critic_sa/", critic.sa_encoder.params());
    append_entries(out, prefix + "critic_g/", critic.g_encoder.params());
  }
  void check(const Checkpoint& ck, const std::string& prefix) const {
    check_entries(ck, prefix + "actor/", policy.actor.params());
    check_entries(ck, prefix + "critic_sa/", critic.sa_encoder.params());
    check_entries(ck, prefix + "critic_g/", critic.g_encoder.params());
  }
  void load(const Checkpoint& ck, const std::string& prefix) {
    load_entries(ck, prefix + "actor/", policy.actor.params());
    load_entries(ck, prefix + "critic_sa/", critic.sa_encoder.params());
    load_entries(ck, prefix + "critic_g/", critic.g_encoder.params());
  }
};

inline std::string learner_prefix(std::size_t k) { return "learner" + std::to_string(k) + "/"; }

// ---------------------------------------------------------------- trainer

struct TrainResult {
  std::vector<MetricsRecord> records;
  double final_score = std::nan("");  // mean eval over the last five epochs
  std::vector<double> learner_final_scores;
  bool aborted = false;
  std::string abort_reason;
};

struct RunPaths {
  std::string metrics;     // JSONL, appended
  std::string checkpoint;  // written at the end of a finished run
  std::string diagnostic;  // written when a run aborts
};

template <class Real>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        warnings_(cfg_.validate()),
        env_(make_env(cfg_)),
        envs_(env_, cfg_.num_envs, derive(0), train_constraint()),
        buffer_(std::size_t(env_.state_dim), std::size_t(env_.action_dim), std::size_t(cfg_.replay_capacity),
                std::size_t(cfg_.min_replay)),
        rng_(derive(1)),
        collector_(env_, cfg_, cfg_.actor_depth, cfg_.critic_depth, derive(2)) {
    for (std::size_t k = 0; k < cfg_.learner_depths.size(); ++k)
      learners_.emplace_back(env_, cfg_, cfg_.learner_depths[k], cfg_.learner_depths[k], derive(3 + k));
    begin_episodes();
  }

  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const EnvSpec& env() const { return env_; }
  const Agent<Real>& collector() const { return collector_; }
  Agent<Real>& collector() { return collector_; }
  const std::vector<Agent<Real>>& learners() const { return learners_; }
  const ReplayBuffer<Real>& buffer() const { return buffer_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t grad_steps() const { return collector_.grad_steps; }
  std::optional<std::int64_t> warmup_env_steps() const { return warmup_; }

  // Records every sampled training start/goal pair; audit hook.
  void set_pair_log(std::vector<double>* separations) { pair_log_ = separations; }

  // One vectorized env step (num_envs transitions) followed by whatever
  // gradient steps the UTD budget now allows.
  void collect_step() {
    const Matrix<Real> obs = envs_.observations().template cast<Real>();
    const Matrix<Real> goals = envs_.goal_matrix().template cast<Real>();
    const Matrix<Real> act = policy_sample(collector_.policy, obs, goals, rng_, false);
    const bool done = envs_.step_all(act.template cast<double>());
    for (int i = 0; i < envs_.size(); ++i) {
      Transition<Real> tr;
      tr.state.assign(obs.row_span(i).begin(), obs.row_span(i).end());
      tr.action.assign(act.row_span(i).begin(), act.row_span(i).end());
      for (double x : envs_.states()[i].s) tr.next_state.push_back(Real(x));
      tr.step_index = step_in_episode_;
      tr.episode_id = episode_ids_[i];
      buffer_.append_step(tr);
    }
    ++step_in_episode_;
    env_steps_ += envs_.size();
    collector_.env_steps = env_steps_;
    if (done) {
      for (auto id : episode_ids_) buffer_.end_episode(id);
      envs_.reset_all();
      begin_episodes();
    }
    if (!warmup_ && buffer_.ready()) warmup_ = env_steps_;
    if (!warmup_) return;
    const std::int64_t target = (env_steps_ - *warmup_) / cfg_.utd;
    while (collector_.grad_steps < target) gradient_step();
  }

  // Runs until total_env_steps, emitting one record per epoch. Resumes from
  // the current counters, so a loaded trainer continues where it stopped.
  TrainResult train(const RunPaths& paths = {}, const std::function<void(const MetricsRecord&)>& on_epoch = {}) {
    TrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    std::ofstream metrics;
    if (!paths.metrics.empty()) {
      metrics.open(paths.metrics, std::ios::app);
      if (!metrics) throw ConfigError("cannot open metrics file '" + paths.metrics + "'");
    }
    const std::int64_t epoch_len = cfg_.epoch_steps();
    try {
      while (env_steps_ < cfg_.total_env_steps) {
        collect_step();
        if (env_steps_ >= (epoch_ + 1) * epoch_len || env_steps_ >= cfg_.total_env_steps) {
          MetricsRecord r = close_epoch();
          r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          if (metrics) metrics << to_json(r).dump() << "\n" << std::flush;
          if (on_epoch) on_epoch(r);
          res.records.push_back(std::move(r));
        }
      }
    } catch (const NumericError& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      if (!paths.diagnostic.empty()) save(paths.diagnostic);
      return res;
    }
    res.final_score = last_epochs_mean(res.records, [](const MetricsRecord& r) { return r.eval_mean; });
    for (std::size_t k = 0; k < learners_.size(); ++k)
      res.learner_final_scores.push_back(
          last_epochs_mean(res.records, [k](const MetricsRecord& r) { return r.learner_eval[k]; }));
    if (!paths.checkpoint.empty()) save(paths.checkpoint);
    return res;
  }

  // Deterministic-policy evaluation of the collector (or learner k).
  EvalResult evaluate(int n, std::uint64_t seed, int learner = -1) const {
    const Agent<Real>& a = learner < 0 ? collector_ : learners_.at(std::size_t(learner));
    return rollout_eval(a.deterministic_policy(), env_, n, seed);
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config_text = cfg_.to_text();
    collector_.append_to(ck.entries, "");
    for (std::size_t k = 0; k < learners_.size(); ++k) learners_[k].append_to(ck.entries, learner_prefix(k));
    std::ostringstream rs;
    rs << rng_ << "\n";
    for (const auto& r : envs_.rngs()) rs << r << "\n";
    ck.rng_state = rs.str();
    return ck;
  }
  void save(const std::string& path) const { write_checkpoint(path, checkpoint()); }

  // Restores network parameters and rng streams. Every check runs before the
  // first write.
  void restore(const Checkpoint& ck) {
    collector_.check(ck, "");
    for (std::size_t k = 0; k < learners_.size(); ++k) learners_[k].check(ck, learner_prefix(k));
    std::istringstream rs(ck.rng_state);
    std::mt19937_64 rng;
    std::vector<std::mt19937_64> env_rngs(envs_.rngs().size());
    rs >> rng;
    for (auto& r : env_rngs) rs >> r;
    if (rs.fail()) throw FormatError("checkpoint rng state is malformed");
    collector_.load(ck, "");
    for (std::size_t k = 0; k < learners_.size(); ++k) learners_[k].load(ck, learner_prefix(k));
    rng_ = rng;
    envs_.rngs() = env_rngs;
  }
  void load(const std::string& path) { restore(read_checkpoint(path)); }

 private:
  std::uint64_t derive(std::uint64_t stream) const {
    std::seed_seq seq{cfg_.seed, stream, std::uint64_t(0xdc71)};
    std::uint64_t out;
    seq.generate(&out, &out + 1);
    return out;
  }

  std::optional<StartGoalConstraint> train_constraint() const {
    if (cfg_.train_max_sep <= 0 && !cfg_.train_anywhere) return std::nullopt;
    StartGoalConstraint c;
    if (cfg_.train_max_sep > 0) c.max_sep = cfg_.train_max_sep;
    c.anywhere = cfg_.train_anywhere != 0;
    return c;
  }

  void begin_episodes() {
    step_in_episode_ = 0;
    episode_ids_.resize(std::size_t(envs_.size()));
    for (auto& id : episode_ids_) id = next_episode_id_++;
    if (pair_log_)
      for (int i = 0; i < envs_.size(); ++i) {
        const auto g = goal_projection(env_, envs_.states()[i].s);
        double d2 = 0;
        for (std::size_t k = 0; k < g.size(); ++k) d2 += (g[k] - envs_.goals()[i].g[k]) * (g[k] - envs_.goals()[i].g[k]);
        pair_log_->push_back(std::sqrt(d2));
      }
  }

  void gradient_step() {
    const std::span<const int> gi(env_.goal_indices);
    const auto batch = buffer_.sample_training_batch(std::size_t(cfg_.batch_size), cfg_.gamma, gi, rng_);
    const UpdateStats st = collector_.update(batch, cfg_, rng_);
    acc_.critic_loss += st.critic_loss;
    acc_.critic_accuracy += st.critic_accuracy;
    acc_.actor_loss += st.actor_loss;
    acc_.critic_grad_norm += st.critic_grad_norm;
    acc_.actor_grad_norm += st.actor_grad_norm;
    ++acc_count_;
    for (auto& l : learners_) {
      const auto lb = buffer_.sample_training_batch(std::size_t(cfg_.batch_size), cfg_.gamma, gi, rng_);
      l.update(lb, cfg_, rng_);
    }
  }

  MetricsRecord close_epoch() {
    MetricsRecord r;
    r.epoch = epoch_++;
    r.env_steps = env_steps_;
    r.grad_steps = collector_.grad_steps;
    const std::uint64_t eval_seed = derive(1000);
    const auto ev = evaluate(cfg_.eval_episodes, eval_seed);
    r.eval_mean = ev.mean;
    r.eval_stderr = ev.stderr_;
    const double n = acc_count_ ? double(acc_count_) : std::nan("");
    r.critic_loss = acc_.critic_loss / n;
    r.critic_accuracy = acc_.critic_accuracy / n;
    r.actor_loss = acc_.actor_loss / n;
    r.critic_grad_norm = acc_.critic_grad_norm / n;
    r.actor_grad_norm = acc_.actor_grad_norm / n;
    for (std::size_t k = 0; k < learners_.size(); ++k)
      r.learner_eval.push_back(evaluate(cfg_.eval_episodes, eval_seed, int(k)).mean);
    acc_ = {};
    acc_count_ = 0;
    return r;
  }

  template <class F>
  static double last_epochs_mean(const std::vector<MetricsRecord>& recs, F field) {
    if (recs.empty()) return std::nan("");
    const std::size_t n = std::min<std::size_t>(5, recs.size());
    double s = 0;
    for (std::size_t i = recs.size() - n; i < recs.size(); ++i) s += field(recs[i]);
    return s / double(n);
  }

  TrainConfig cfg_;
  std::vector<std::string> warnings_;
  EnvSpec env_;
  VecEnv envs_;
  ReplayBuffer<Real> buffer_;
  std::mt19937_64 rng_;
  Agent<Real> collector_;
  std::vector<Agent<Real>> learners_;
  std::vector<std::int64_t> episode_ids_;
  std::int64_t next_episode_id_ = 0;
  int step_in_episode_ = 0;
  std::int64_t env_steps_ = 0;
  std::optional<std::int64_t> warmup_;
  int epoch_ = 0;
  UpdateStats acc_;
  std::int64_t acc_count_ = 0;
  std::vector<double>* pair_log_ = nullptr;
};

// Runs a full training with the precision named in the config.
inline TrainResult run_training(const TrainConfig& cfg, const RunPaths& paths = {},
                                const std::function<void(const MetricsRecord&)>& on_epoch = {}) {
  if (cfg.precision == "double") return Trainer<double>(cfg).train(paths, on_epoch);
  return Trainer<float>(cfg).train(paths, on_epoch);
}

// ---------------------------------------------------------------- evaluate

// Rebuilds the collector agent stored in a checkpoint.
inline Agent<float> agent_from_checkpoint(const Checkpoint& ck, const std::string& prefix = "") {
  const TrainConfig cfg = TrainConfig::from_text(ck.config_text);
  const EnvSpec env = make_env(cfg);
  int actor_depth = cfg.actor_depth, critic_depth = cfg.critic_depth;
  if (!prefix.empty()) {
    const std::size_t k = std::stoul(prefix.substr(7));
    if (k >= cfg.learner_depths.size()) throw ConfigError("checkpoint has no learner " + std::to_string(k));
    actor_depth = critic_depth = cfg.learner_depths[k];
  }
  Agent<float> a(env, cfg, actor_depth, critic_depth, 0);
  a.check(ck, prefix);
  a.load(ck, prefix);
  return a;
}

inline void check_env_compatible(const Checkpoint& ck, const EnvSpec& env) {
  const TrainConfig cfg = TrainConfig::from_text(ck.config_text);
  const EnvSpec trained = make_env(cfg);
  if (trained.state_dim != env.state_dim || trained.goal_dim != env.goal_dim || trained.action_dim != env.action_dim)
    throw ConfigError("checkpoint was trained on '" + trained.name + "' (state " + std::to_string(trained.state_dim) +
                      ", goal " + std::to_string(trained.goal_dim) + ", action " +
                      std::to_string(trained.action_dim) + "), incompatible with '" + env.name + "'");
}

inline EvalResult evaluate_checkpoint(const std::string& path, const std::string& env_name, int n, std::uint64_t seed,
                                      const std::optional<StartGoalConstraint>& constraint = std::nullopt) {
  if (n <= 0) throw ConfigError("evaluation needs at least one episode");
  const Checkpoint ck = read_checkpoint(path);
  TrainConfig cfg = TrainConfig::from_text(ck.config_text);
  cfg.env = env_name;
  const EnvSpec env = make_env(cfg);
  check_env_compatible(ck, env);
  const Agent<float> a = agent_from_checkpoint(ck);
  return rollout_eval(a.deterministic_policy(), env, n, seed, constraint);
}

}  // namespace dcrl
