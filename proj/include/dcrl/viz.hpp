#pragma once

// Analysis exporters: critic energy grids, PCA of embeddings, residual
// branch norms, rollout traces, and a small SVG plotter for the CSVs.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcrl/csv.hpp"
#include "dcrl/trainer.hpp"

namespace dcrl {

// ---------------------------------------------------------------- q grid

struct QGridOptions {
  std::vector<double> goal;          // 2D position
  int resolution = 32;               // grid points per axis
  std::vector<double> fixed_action;  // empty: zero action
};

// Energy -||phi(s, a) - psi(g)|| on a resolution x resolution lattice of cell
// centres over the maze extent. s is the position with zero velocity. Points
// inside wall cells get NaN.
template <class Real>
CsvTable export_q_grid(const Agent<Real>& agent, const EnvSpec& env, const QGridOptions& opt) {
  if (env.kind != Dynamics::Point || env.state_dim != 4 || env.goal_dim != 2)
    throw ConfigError("q grid is unsupported for '" + env.name + "': needs a 2D positional environment");
  if (opt.resolution < 1) throw ConfigError("grid resolution must be >= 1");
  if (opt.goal.size() != 2) throw DimensionError("q grid goal must have 2 coordinates");
  std::vector<double> action = opt.fixed_action;
  if (action.empty()) action.assign(env.action_dim, 0.0);
  if (int(action.size()) != env.action_dim) throw DimensionError("q grid action has the wrong dimension");

  const double w = env.layout.cols() * env.layout.cell, h = env.layout.rows() * env.layout.cell;
  const int n = opt.resolution;
  std::vector<std::pair<double, double>> pts;
  std::vector<bool> wall;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = (i + 0.5) * w / n, y = (j + 0.5) * h / n;
      const int c = std::min(env.layout.cols() - 1, int(x / env.layout.cell));
      const int r = std::min(env.layout.rows() - 1, int(y / env.layout.cell));
      pts.emplace_back(x, y);
      wall.push_back(env.layout.is_wall(r, c));
    }
  }
  Matrix<Real> s(pts.size(), 4), a(pts.size(), env.action_dim), g(1, 2);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    s(k, 0) = Real(pts[k].first);
    s(k, 1) = Real(pts[k].second);
    for (int d = 0; d < env.action_dim; ++d) a(k, d) = Real(action[d]);
  }
  g(0, 0) = Real(opt.goal[0]);
  g(0, 1) = Real(opt.goal[1]);
  const Matrix<Real> e = energy_matrix(agent.critic.embed_sa(s, a), agent.critic.embed_goal(g));
  CsvTable t{{"x", "y", "energy"}, {}};
  for (std::size_t k = 0; k < pts.size(); ++k)
    t.add({csv_number(pts[k].first), csv_number(pts[k].second), csv_number(wall[k] ? std::nan("") : double(e(k, 0)))});
  return t;
}

// ---------------------------------------------------------------- pca

struct PcaResult {
  Matrix<double> coords;              // N x k
  Matrix<double> components;          // k x d, unit rows
  std::vector<double> explained;      // k fractions of total variance
  std::vector<double> explained_all;  // all d fractions, descending
};

// Symmetric eigen-decomposition by cyclic Jacobi sweeps. Returns eigenvalues
// and eigenvectors (as columns of vecs), unsorted.
inline void jacobi_eigen(Matrix<double> a, std::vector<double>& vals, Matrix<double>& vecs, double tol = 1e-12,
                         int max_sweeps = 100) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("jacobi_eigen needs a square matrix");
  vecs = Matrix<double>(n, n);
  for (std::size_t i = 0; i < n; ++i) vecs(i, i) = 1.0;
  double scale = 0;
  for (double x : a.values()) scale += x * x;
  scale = std::sqrt(scale);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs(k, p), vkq = vecs(k, q);
          vecs(k, p) = c * vkp - s * vkq;
          vecs(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a(i, i);
}

// Projects mean-centred rows onto the top-k principal directions. Each
// component's sign makes its largest-magnitude projected coordinate positive.
inline PcaResult pca_project(const Matrix<double>& x, int k = 2) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw ConfigError("pca needs at least two rows");
  if (k < 1 || std::size_t(k) > d) throw ConfigError("pca needs 1 <= k <= embedding dimension");
  Matrix<double> xc = x;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= double(n);
    for (std::size_t i = 0; i < n; ++i) xc(i, j) -= m;
  }
  Matrix<double> cov(d, d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += xc(i, a) * xc(i, b);
      cov(a, b) = cov(b, a) = s / double(n - 1);
    }
  std::vector<double> vals;
  Matrix<double> vecs;
  jacobi_eigen(cov, vals, vecs);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
  double total = 0;
  for (double& v : vals) {
    if (v < 0) v = 0;  // round-off below a zero eigenvalue
    total += v;
  }
  PcaResult r;
  r.coords = Matrix<double>(n, std::size_t(k));
  r.components = Matrix<double>(std::size_t(k), d);
  for (std::size_t c = 0; c < d; ++c) {
    const double frac = total > 0 ? vals[order[c]] / total : 0.0;
    r.explained_all.push_back(frac < 1e-14 ? 0.0 : frac);
  }
  for (int c = 0; c < k; ++c) {
    const std::size_t col = order[std::size_t(c)];
    std::vector<double> proj(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) proj[i] += xc(i, j) * vecs(j, col);
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(proj[i]) > std::abs(proj[big])) big = i;
    const double sign = proj[big] < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) r.coords(i, std::size_t(c)) = sign * proj[i];
    for (std::size_t j = 0; j < d; ++j) r.components(std::size_t(c), j) = sign * vecs(j, col);
    r.explained.push_back(r.explained_all[std::size_t(c)]);
  }
  return r;
}

inline CsvTable pca_csv(const PcaResult& r, const std::vector<std::string>& labels = {}) {
  CsvTable t;
  t.header = {"index"};
  if (!labels.empty()) t.header.push_back("label");
  for (std::size_t c = 0; c < r.coords.cols(); ++c) t.header.push_back("pc" + std::to_string(c + 1));
  for (std::size_t i = 0; i < r.coords.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    if (!labels.empty()) row.push_back(labels.at(i));
    for (std::size_t c = 0; c < r.coords.cols(); ++c) row.push_back(csv_number(r.coords(i, c)));
    t.add(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------- residual norms

template <class Real>
CsvTable residual_norm_profile(const Agent<Real>& agent, const Matrix<Real>& states, const Matrix<Real>& actions,
                               const Matrix<Real>& goals) {
  if (states.rows() != actions.rows() || states.rows() != goals.rows())
    throw DimensionError("residual norm batch parts have different row counts");
  CsvTable t{{"network", "block_index", "mean_norm"}, {}};
  auto emit = [&](const std::string& name, const std::vector<double>& norms) {
    for (std::size_t b = 0; b < norms.size(); ++b) t.add({name, std::to_string(b), csv_number(norms[b])});
  };
  emit("actor", agent.policy.actor.residual_norms(concat_cols(states, goals)));
  emit("critic_sa", agent.critic.sa_encoder.residual_norms(concat_cols(states, actions)));
  emit("critic_g", agent.critic.g_encoder.residual_norms(goals));
  return t;
}

// Batch of reset states and goals with uniformly random actions.
template <class Real>
void probe_batch(const EnvSpec& env, int n, std::uint64_t seed, Matrix<Real>& states, Matrix<Real>& actions,
                 Matrix<Real>& goals) {
  if (n < 1) throw ConfigError("probe batch needs at least one row");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-env.action_bound, env.action_bound);
  states = Matrix<Real>(std::size_t(n), std::size_t(env.state_dim));
  actions = Matrix<Real>(std::size_t(n), std::size_t(env.action_dim));
  goals = Matrix<Real>(std::size_t(n), std::size_t(env.goal_dim));
  for (int i = 0; i < n; ++i) {
    auto [s, g] = reset(env, rng);
    for (int k = 0; k < env.state_dim; ++k) states(i, k) = Real(s.s[k]);
    for (int k = 0; k < env.goal_dim; ++k) goals(i, k) = Real(g.g[k]);
    for (int k = 0; k < env.action_dim; ++k) actions(i, k) = Real(u(rng));
  }
}

// ---------------------------------------------------------------- rollout trace

inline CsvTable rollout_trace(const PolicyFn& policy, const EnvSpec& env, std::uint64_t seed,
                              const std::optional<StartGoalConstraint>& constraint = std::nullopt) {
  auto [state, goal] = reset(env, seed, constraint);
  CsvTable t;
  t.header = {"t"};
  for (int k = 0; k < env.state_dim; ++k) t.header.push_back("s" + std::to_string(k));
  for (int k = 0; k < env.action_dim; ++k) t.header.push_back("a" + std::to_string(k));
  for (int k = 0; k < env.goal_dim; ++k) t.header.push_back("g" + std::to_string(k));
  t.header.push_back("near_goal");
  Matrix<double> obs(1, env.state_dim), gm(1, env.goal_dim);
  for (int k = 0; k < env.goal_dim; ++k) gm(0, k) = goal.g[k];
  for (int step_i = 0; step_i < env.episode_length; ++step_i) {
    for (int k = 0; k < env.state_dim; ++k) obs(0, k) = state.s[k];
    const Matrix<double> act = policy(obs, gm);
    const auto res = step(env, state, act.row_span(0), goal);
    std::vector<std::string> row{std::to_string(step_i)};
    for (double x : state.s) row.push_back(csv_number(x));
    for (int k = 0; k < env.action_dim; ++k) row.push_back(csv_number(act(0, k)));
    for (double x : goal.g) row.push_back(csv_number(x));
    row.push_back(res.near_goal ? "1" : "0");
    t.add(std::move(row));
    state = res.next;
  }
  return t;
}

// ---------------------------------------------------------------- svg

struct PlotSpec {
  std::string kind = "line";  // line | heatmap
  std::string x, y;           // columns
  std::string group;          // line: one series per value (optional)
  std::string value;          // heatmap: cell colour
  std::string title;
  int width = 640, height = 420;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

inline const char* series_colour(std::size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};
  return kPalette[i % 8];
}

// Viridis-like ramp, t in [0, 1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double r = 68 + t * (253 - 68), g = 1 + t * (231 - 1), b = 84 + t * (37 - 84);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", int(r), int(g), int(b));
  return buf;
}

struct Frame {
  double left = 70, right = 150, top = 40, bottom = 50;
  double w, h;
  double px(double u) const { return left + u * (w - left - right); }       // u in [0, 1]
  double py(double v) const { return h - bottom - v * (h - top - bottom); }  // v in [0, 1]
};

inline void svg_axes(std::ostringstream& o, const Frame& f, const PlotSpec& spec, const std::string& xl,
                     const std::string& yl, const std::vector<std::pair<double, std::string>>& xticks,
                     const std::vector<std::pair<double, std::string>>& yticks) {
  o << "<line class=\"axis\" x1=\"" << f.px(0) << "\" y1=\"" << f.py(0) << "\" x2=\"" << f.px(1) << "\" y2=\""
    << f.py(0) << "\" stroke=\"black\"/>\n";
  o << "<line class=\"axis\" x1=\"" << f.px(0) << "\" y1=\"" << f.py(0) << "\" x2=\"" << f.px(0) << "\" y2=\""
    << f.py(1) << "\" stroke=\"black\"/>\n";
  for (const auto& [u, label] : xticks)
    o << "<text x=\"" << f.px(u) << "\" y=\"" << f.py(0) + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
      << xml_escape(label) << "</text>\n";
  for (const auto& [v, label] : yticks)
    o << "<text x=\"" << f.px(0) - 6 << "\" y=\"" << f.py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
      << xml_escape(label) << "</text>\n";
  o << "<text x=\"" << f.px(0.5) << "\" y=\"" << f.h - 12 << "\" font-size=\"13\" text-anchor=\"middle\">"
    << xml_escape(xl) << "</text>\n";
  o << "<text x=\"16\" y=\"" << f.py(0.5) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << f.py(0.5) << ")\">" << xml_escape(yl) << "</text>\n";
  if (!spec.title.empty())
    o << "<text x=\"" << f.w / 2 << "\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">" << xml_escape(spec.title)
      << "</text>\n";
}

inline std::vector<std::pair<double, std::string>> linear_ticks(double lo, double hi, int n = 5) {
  std::vector<std::pair<double, std::string>> t;
  for (int i = 0; i <= n; ++i) t.push_back({double(i) / n, fmt(lo + (hi - lo) * i / n)});
  return t;
}

// Sorted distinct values of a column; numeric order when every value parses.
inline std::vector<std::string> distinct(const CsvTable& t, std::size_t col) {
  std::vector<std::string> v;
  for (const auto& r : t.rows) v.push_back(r[col]);
  bool numeric = true;
  for (const auto& s : v) {
    try {
      if (std::isnan(parse_csv_number(s))) numeric = false;
    } catch (const FormatError&) {
      numeric = false;
    }
  }
  std::sort(v.begin(), v.end(), [&](const std::string& a, const std::string& b) {
    return numeric ? parse_csv_number(a) < parse_csv_number(b) : a < b;
  });
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::string line_svg(const CsvTable& t, const PlotSpec& spec) {
  const std::size_t xc = t.column(spec.x), yc = t.column(spec.y);
  const std::optional<std::size_t> gc = spec.group.empty() ? std::nullopt : std::optional(t.column(spec.group));
  // series -> x -> (sum, count); NaN y leaves a gap
  std::map<std::string, std::map<double, std::pair<double, int>>> series;
  for (const auto& r : t.rows) {
    const double x = parse_csv_number(r[xc]);
    if (std::isnan(x)) continue;
    auto& cell = series[gc ? r[*gc] : std::string()][x];
    const double y = parse_csv_number(r[yc]);
    if (std::isnan(y) || std::isnan(cell.first)) {
      cell.first = std::nan("");
    } else {
      cell.first += y;
    }
    ++cell.second;
  }
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& [name, pts] : series)
    for (const auto& [x, sc] : pts) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      if (!std::isnan(sc.first)) {
        ylo = std::min(ylo, sc.first / sc.second);
        yhi = std::max(yhi, sc.first / sc.second);
      }
    }
  if (!(xlo <= xhi)) xlo = 0, xhi = 1;
  if (!(ylo <= yhi)) ylo = 0, yhi = 1;
  if (xhi == xlo) xlo -= 0.5, xhi += 0.5;
  if (yhi == ylo) ylo -= 0.5, yhi += 0.5;
  Frame f{};
  f.w = spec.width;
  f.h = spec.height;
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << f.w << "\" height=\"" << f.h
    << "\" viewBox=\"0 0 " << f.w << " " << f.h << "\">\n";
  svg_axes(o, f, spec, spec.x, spec.y, linear_ticks(xlo, xhi), linear_ticks(ylo, yhi));
  std::size_t si = 0;
  for (const auto& [name, pts] : series) {
    const char* colour = series_colour(si);
    std::vector<std::vector<std::pair<double, double>>> runs(1);
    for (const auto& [x, sc] : pts) {
      if (std::isnan(sc.first)) {
        if (!runs.back().empty()) runs.emplace_back();
        continue;
      }
      runs.back().push_back({f.px((x - xlo) / (xhi - xlo)), f.py((sc.first / sc.second - ylo) / (yhi - ylo))});
    }
    for (const auto& run : runs) {
      if (run.empty()) continue;
      o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < run.size(); ++i) o << (i ? " " : "") << run[i].first << "," << run[i].second;
      o << "\"/>\n";
      for (const auto& [px, py] : run)
        o << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
    const double ly = f.top + 18.0 * double(si);
    o << "<line x1=\"" << f.w - f.right + 10 << "\" y1=\"" << ly << "\" x2=\"" << f.w - f.right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << f.w - f.right + 35 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
      << xml_escape(gc ? spec.group + "=" + name : spec.y) << "</text>\n";
    ++si;
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string heatmap_svg(const CsvTable& t, const PlotSpec& spec) {
  const std::size_t xc = t.column(spec.x), yc = t.column(spec.y), vc = t.column(spec.value);
  const auto xs = distinct(t, xc), ys = distinct(t, yc);
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> cells;
  for (const auto& r : t.rows) {
    auto& c = cells[{r[xc], r[yc]}];
    const double v = parse_csv_number(r[vc]);
    c.first = std::isnan(v) || std::isnan(c.first) ? std::nan("") : c.first + v;
    ++c.second;
  }
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [k, c] : cells)
    if (!std::isnan(c.first)) {
      lo = std::min(lo, c.first / c.second);
      hi = std::max(hi, c.first / c.second);
    }
  if (!(lo <= hi)) lo = 0, hi = 1;
  Frame f{};
  f.w = spec.width;
  f.h = spec.height;
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << f.w << "\" height=\"" << f.h
    << "\" viewBox=\"0 0 " << f.w << " " << f.h << "\">\n";
  std::vector<std::pair<double, std::string>> xt, yt;
  for (std::size_t i = 0; i < xs.size(); ++i) xt.push_back({(i + 0.5) / xs.size(), xs[i]});
  for (std::size_t j = 0; j < ys.size(); ++j) yt.push_back({(j + 0.5) / ys.size(), ys[j]});
  svg_axes(o, f, spec, spec.x, spec.y, xt, yt);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const auto it = cells.find({xs[i], ys[j]});
      if (it == cells.end()) continue;
      const double v = it->second.first / it->second.second;
      const double x0 = f.px(double(i) / xs.size()), x1 = f.px(double(i + 1) / xs.size());
      const double y0 = f.py(double(j + 1) / ys.size()), y1 = f.py(double(j) / ys.size());
      const std::string fill = std::isnan(v) ? "#bbbbbb" : ramp(hi > lo ? (v - lo) / (hi - lo) : 0.5);
      o << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << x1 - x0 << "\" height=\"" << y1 - y0
        << "\" fill=\"" << fill << "\"><title>" << xml_escape(spec.value + "=" + (std::isnan(v) ? "nan" : fmt(v)))
        << "</title></rect>\n";
    }
  }
  // colour legend drawn with lines so rect elements stay one per cell
  for (int k = 0; k <= 20; ++k) {
    const double ly = f.py(k / 20.0);
    o << "<line x1=\"" << f.w - f.right + 15 << "\" y1=\"" << ly << "\" x2=\"" << f.w - f.right + 35 << "\" y2=\"" << ly
      << "\" stroke=\"" << ramp(k / 20.0) << "\" stroke-width=\"" << (f.h - f.top - f.bottom) / 20.0 + 1 << "\"/>\n";
  }
  o << "<text x=\"" << f.w - f.right + 40 << "\" y=\"" << f.py(1) + 4 << "\" font-size=\"11\">" << fmt(hi) << "</text>\n";
  o << "<text x=\"" << f.w - f.right + 40 << "\" y=\"" << f.py(0) + 4 << "\" font-size=\"11\">" << fmt(lo) << "</text>\n";
  o << "<text x=\"" << f.w - f.right + 15 << "\" y=\"" << f.top - 8 << "\" font-size=\"11\">"
    << xml_escape(spec.value) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace detail

inline std::string emit_plot(const CsvTable& t, const PlotSpec& spec) {
  if (spec.x.empty() || spec.y.empty()) throw ConfigError("plot needs x and y columns");
  if (spec.kind == "line") return detail::line_svg(t, spec);
  if (spec.kind == "heatmap") {
    if (spec.value.empty()) throw ConfigError("heatmap needs a value column");
    return detail::heatmap_svg(t, spec);
  }
  throw ConfigError("unknown plot kind '" + spec.kind + "'");
}

}  // namespace dcrl
