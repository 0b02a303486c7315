// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/harness.hpp"

#include "dflow/error.hpp"
#include "dflow/metrics.hpp"
#include "dflow/remote_score.hpp"

#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace dflow {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* version_string() noexcept { return DFLOW_VERSION; }

namespace {

// ---------------------------------------------------------------- parsing

/// Reads one JSON object, tracking which keys were consumed so leftovers can
/// be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void read(const std::string& key, T& out) {
    const auto it = node_.find(key);
    if (it == node_.end()) {
      return;
    }
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(key_path(key), std::string("wrong type (") + type_hint<T>() + " expected)");
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_.at(key), key_path(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError(key_path(key), "unknown key");
      }
    }
  }

 private:
  template <class T>
  static const char* type_hint() {
    if constexpr (std::is_same_v<T, bool>) {
      return "boolean";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return "string";
    } else if constexpr (std::is_arithmetic_v<T>) {
      return "number";
    } else {
      return "array";
    }
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& detail) {
  if (!ok) {
    throw ConfigError(key, detail);
  }
}

void parse_target(Section s, TargetSpec& t) {
  s.read("weights", t.weights);
  s.read("means", t.means);
  s.read("variances", t.variances);
  if (s.has("conditions")) {
    Section c = s.child("conditions");
    for (const auto& [label, value] : s.raw("conditions").items()) {
      std::vector<Index> comps;
      c.read(label, comps);
      t.conditions[label] = comps;
    }
    c.finish();
  }
  s.finish();

  const std::size_t k = t.weights.size();
  require(k >= 1, s.key_path("weights"), "need at least one component");
  require(t.means.size() == k, s.key_path("means"), "one mean per weight required");
  require(t.variances.size() == k, s.key_path("variances"), "one variance vector per weight required");
  for (double w : t.weights) {
    require(std::isfinite(w) && w > 0.0, s.key_path("weights"), "weights must be positive");
  }
  const std::size_t d = t.means.front().size();
  require(d >= 1, s.key_path("means"), "means must be non-empty");
  for (std::size_t i = 0; i < k; ++i) {
    require(t.means[i].size() == d, s.key_path("means"), "all means must have the same length");
    require(t.variances[i].size() == d, s.key_path("variances"), "variances must match the means' length");
    for (double v : t.variances[i]) {
      require(std::isfinite(v) && v > 0.0, s.key_path("variances"), "variances must be positive");
    }
  }
  for (const auto& [label, comps] : t.conditions) {
    require(label != "uncond", s.key_path("conditions.uncond"), "'uncond' is reserved for the full mixture");
    require(!comps.empty(), s.key_path("conditions." + label), "needs at least one component");
    for (Index c : comps) {
      require(c >= 0 && static_cast<std::size_t>(c) < k, s.key_path("conditions." + label),
              "component index out of range");
    }
  }
}

void parse_siren(Section s, SirenConfig& c) {
  s.read("height", c.height);
  s.read("width", c.width);
  s.read("channels", c.channels);
  s.read("embed_freqs", c.embed_freqs);
  s.read("max_freq", c.max_freq);
  s.read("hidden", c.hidden);
  s.read("panorama", c.panorama);
  s.read("aspect", c.aspect);
  s.read("embed_seed", c.embed_seed);
  s.finish();
  require(c.height >= 1 && c.width >= 1 && c.channels >= 1, s.key_path("height"), "image dimensions must be >= 1");
  require(c.embed_freqs >= 1, s.key_path("embed_freqs"), "must be >= 1");
  require(c.max_freq >= 1, s.key_path("max_freq"), "must be >= 1");
  for (Index h : c.hidden) {
    require(h >= 1, s.key_path("hidden"), "layer widths must be >= 1");
  }
  if (c.panorama) {
    require(c.width >= 2, s.key_path("width"), "panorama needs width >= 2");
    require(c.aspect >= 2, s.key_path("aspect"), "panorama needs aspect >= 2");
  }
}

void parse_rep(Section s, RepSpec& r) {
  s.read("kind", r.kind);
  s.read("dim", r.dim);
  s.read("matrix", r.matrix);
  s.read("grid", r.grid);
  s.read("modes", r.modes);
  if (s.has("siren")) {
    parse_siren(s.child("siren"), r.siren);
  }
  s.finish();
  static const std::set<std::string> kinds = {"identity", "linear", "lowpass", "siren", "panorama"};
  require(kinds.contains(r.kind), s.key_path("kind"), "expected identity, linear, lowpass, siren or panorama");
  require(r.dim >= 1, s.key_path("dim"), "must be >= 1");
  if (r.kind == "linear") {
    require(!r.matrix.empty() && !r.matrix.front().empty(), s.key_path("matrix"), "linear rep needs a matrix");
    for (const auto& row : r.matrix) {
      require(row.size() == r.matrix.front().size(), s.key_path("matrix"), "rows must have equal length");
    }
  }
  if (r.kind == "lowpass") {
    require(r.grid >= 1 && r.modes >= 1 && r.modes <= r.grid, s.key_path("modes"), "need 1 <= modes <= grid");
  }
  r.siren.panorama = r.kind == "panorama";
}

void parse_schedule(Section s, ScheduleSpec& sc) {
  s.read("steps", sc.steps);
  s.read("sigma_min", sc.sigma_min);
  s.read("sigma_max", sc.sigma_max);
  s.read("rho", sc.rho);
  s.read("levels", sc.levels);
  s.finish();
  if (sc.levels.empty()) {
    require(sc.steps >= 1, s.key_path("steps"), "must be >= 1");
    require(sc.sigma_min > 0.0 && sc.sigma_min < sc.sigma_max, s.key_path("sigma_min"),
            "need 0 < sigma_min < sigma_max");
    require(sc.rho > 0.0, s.key_path("rho"), "must be positive");
  } else {
    try {
      (void)NoiseSchedule::from_levels(sc.levels);
    } catch (const Error& e) {
      throw ConfigError(s.key_path("levels"), e.what());
    }
  }
}

void parse_solver(Section s, SolverConfig& c) {
  std::string kind = to_string(c.kind);
  s.read("kind", kind);
  s.read("iterations", c.iterations);
  s.read("lr", c.lr);
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("tol", c.tol);
  s.finish();
  try {
    c.kind = parse_solver_kind(kind);
  } catch (const Error& e) {
    throw ConfigError(s.key_path("kind"), e.what());
  }
  require(c.iterations >= 1, s.key_path("iterations"), "must be >= 1");
  require(c.lr > 0.0, s.key_path("lr"), "must be positive");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0, s.key_path("beta1"), "must lie in [0, 1)");
  require(c.beta2 >= 0.0 && c.beta2 < 1.0, s.key_path("beta2"), "must lie in [0, 1)");
  require(c.tol >= 0.0, s.key_path("tol"), "must be non-negative");
}

void parse_sampler(Section s, SamplerSpec& c) {
  s.read("eta", c.eta);
  s.read("cfg_scale", c.cfg_scale);
  s.read("conditioning", c.conditioning);
  s.read("views_per_step", c.views_per_step);
  s.read("trajectories", c.trajectories);
  if (s.has("solver")) {
    parse_solver(s.child("solver"), c.solver);
  }
  s.finish();
  require(c.eta >= 0.0 && c.eta <= 1.0, s.key_path("eta"), "must lie in [0, 1]");
  require(std::isfinite(c.cfg_scale), s.key_path("cfg_scale"), "must be finite");
  require(c.views_per_step >= 1, s.key_path("views_per_step"), "must be >= 1");
  require(c.trajectories >= 1, s.key_path("trajectories"), "must be >= 1");
}

void parse_repaint(Section s, RepaintSpec& c) {
  s.read("enabled", c.enabled);
  s.read("jump_interval", c.jump_interval);
  s.read("jump_len", c.jump_len);
  s.read("jump_repeat", c.jump_repeat);
  s.finish();
  require(c.jump_interval >= 1, s.key_path("jump_interval"), "must be >= 1");
  require(c.jump_len >= 1, s.key_path("jump_len"), "must be >= 1");
  require(c.jump_repeat >= 0, s.key_path("jump_repeat"), "must be >= 0");
}

void parse_baseline(Section s, BaselineSpec& b) {
  GAConfig& g = b.ga;
  std::string method = to_string(g.method);
  std::string weighting = to_string(g.weighting);
  std::string rule = to_string(g.sigma_rule);
  s.read("runs", b.runs);
  s.read("method", method);
  s.read("iterations", g.iterations);
  s.read("weighting", weighting);
  s.read("sigma_rule", rule);
  s.read("sigma_start", g.sigma_start);
  s.read("sigma_end", g.sigma_end);
  s.read("lr", g.adam.lr);
  s.read("beta1", g.adam.beta1);
  s.read("beta2", g.adam.beta2);
  s.read("lr_final_fraction", g.lr_final_fraction);
  s.read("views_per_step", g.views_per_step);
  s.read("antithetic", g.antithetic);
  s.read("cfg_scale", g.cfg_scale);
  s.read("conditioning", g.conditioning.label);
  s.finish();
  try {
    g.method = parse_ga_method(method);
  } catch (const Error& e) {
    throw ConfigError(s.key_path("method"), e.what());
  }
  try {
    g.weighting = parse_weighting(weighting);
  } catch (const Error& e) {
    throw ConfigError(s.key_path("weighting"), e.what());
  }
  try {
    g.sigma_rule = parse_sigma_rule(rule);
  } catch (const Error& e) {
    throw ConfigError(s.key_path("sigma_rule"), e.what());
  }
  require(b.runs >= 1, s.key_path("runs"), "must be >= 1");
  require(g.iterations >= 1, s.key_path("iterations"), "must be >= 1");
  require(g.sigma_start > 0.0, s.key_path("sigma_start"), "must be positive");
  require(g.sigma_end > 0.0, s.key_path("sigma_end"), "must be positive");
  require(g.adam.lr > 0.0, s.key_path("lr"), "must be positive");
  require(g.lr_final_fraction > 0.0, s.key_path("lr_final_fraction"), "must be positive");
  require(g.views_per_step >= 1, s.key_path("views_per_step"), "must be >= 1");
}

void parse_metrics(Section s, MetricsSpec& m) {
  s.read("mode_radius", m.mode_radius);
  s.read("permutations", m.permutations);
  s.read("bandwidth", m.bandwidth);
  s.finish();
  require(m.permutations >= 0, s.key_path("permutations"), "must be >= 0");
}

// ---------------------------------------------------------------- output

std::string fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

std::string artifact_header(const RunConfig& cfg) {
  return fmt::format("dflow {} config {}", version_string(), config_hash(cfg));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  return out;
}

void write_render_csv(const std::filesystem::path& path, const Vec& render, const ImageShape& shape,
                      const std::string& header) {
  auto out = open_out(path);
  out << "# " << header << " shape " << shape.height << 'x' << shape.width << 'x' << shape.channels << '\n';
  const Index row = shape.width * shape.channels;
  for (Index i = 0; i < shape.height; ++i) {
    for (Index j = 0; j < row; ++j) {
      out << (j ? "," : "") << fmt::format("{}", render[i * row + j]);
    }
    out << '\n';
  }
}

/// Runs `work(t)` for t in [0, n) on up to `jobs` threads, rethrowing the
/// first failure after all workers have joined.
template <class Work>
void parallel_for(int n, int jobs, Work&& work) {
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int t = 0; t < n; ++t) {
      work(t);
    }
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int t = next++; t < n; t = next++) {
        try {
          work(t);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) {
            failure = std::current_exception();
          }
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

ordered_json batch_metrics(const RunConfig& cfg, const Mat& samples) {
  ordered_json m;
  m["n"] = samples.rows();
  if (samples.rows() >= 2) {
    m["mean_pairwise_distance"] = mean_pairwise_distance(samples);
  }
  const ShellStats shell = shell_stats(samples);
  m["shell_mean_norm"] = shell.mean_norm;
  m["shell_std_norm"] = shell.std_norm;

  const GaussianMixture target = build_target(cfg.target);
  if (target.dim() != samples.cols()) {
    return m;
  }
  if (target.components() >= 2) {
    const double radius = cfg.metrics.mode_radius > 0.0 ? cfg.metrics.mode_radius
                                                        : default_mode_radius(target.means());
    const ModeCoverage cov = mode_coverage(samples, target.means(), radius);
    m["mode_radius"] = radius;
    m["mode_counts"] = cov.counts;
    m["mode_unassigned"] = cov.unassigned;
  }
  if (cfg.metrics.permutations > 0 && samples.rows() >= 2) {
    Rng rng = make_stream(cfg.seed, 0xa11ce);
    const Mat reference = target.sample(samples.rows(), rng).transpose();
    const MmdTest test = mmd_permutation_test(samples, reference, cfg.metrics.bandwidth, cfg.metrics.permutations, rng);
    m["mmd2_vs_target"] = test.mmd2;
    m["mmd_p_value"] = test.p_value;
    m["mmd_bandwidth"] = test.bandwidth;
    m["mmd_permutations"] = cfg.metrics.permutations;
  }
  return m;
}

struct TrajectoryOutput {
  Vec theta;
  std::vector<TraceRecord> trace;
  long nfe = 0;
};

RunOutput write_run(const RunConfig& cfg, const std::string& run_id, const DiffRep& rep,
                    std::vector<TrajectoryOutput>& runs) {
  RunOutput out;
  out.dir = cfg.out;
  std::filesystem::create_directories(out.dir / "renders");
  const std::string header = artifact_header(cfg);

  {
    auto f = open_out(out.dir / "config.snapshot");
    f << config_snapshot(cfg) << '\n';
  }
  {
    auto f = open_out(out.dir / "trace.jsonl");
    ordered_json h;
    h["kind"] = "header";
    h["run"] = run_id;
    h["version"] = version_string();
    h["config_hash"] = config_hash(cfg);
    f << h.dump() << '\n';
    for (const auto& r : runs) {
      for (const auto& rec : r.trace) {
        f << trace_line(rec) << '\n';
      }
    }
  }

  out.samples.resize(static_cast<Index>(runs.size()), rep.output_dim());
  ordered_json ckpt;
  ckpt["version"] = version_string();
  ckpt["config_hash"] = config_hash(cfg);
  ckpt["param_dim"] = rep.param_dim();
  ckpt["theta"] = json::array();
  const View view{};
  for (std::size_t t = 0; t < runs.size(); ++t) {
    const Vec render = rep.render(runs[t].theta, view);
    out.samples.row(static_cast<Index>(t)) = render.transpose();
    out.thetas.push_back(runs[t].theta);
    out.nfe += runs[t].nfe;
    ckpt["theta"].push_back(std::vector<double>(runs[t].theta.data(), runs[t].theta.data() + runs[t].theta.size()));
    write_render_csv(out.dir / "renders" / fmt::format("traj_{:04d}.csv", t), render, rep.shape(),
                     header + fmt::format(" seed {}", cfg.seed + t));
  }
  {
    auto f = open_out(out.dir / "theta.ckpt");
    f << ckpt.dump(2) << '\n';
  }
  write_samples_csv(out.dir / "samples.csv", out.samples, header);

  ordered_json metrics = batch_metrics(cfg, out.samples);
  metrics["nfe_total"] = out.nfe;
  metrics["version"] = version_string();
  metrics["config_hash"] = config_hash(cfg);
  ordered_json doc;
  doc[run_id] = metrics;
  auto f = open_out(out.dir / "metrics.json");
  f << doc.dump(2) << '\n';
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(doc, "");
  root.read("seed", cfg.seed);
  root.read("out", cfg.out);
  root.read("endpoint", cfg.endpoint);
  if (root.has("target")) parse_target(root.child("target"), cfg.target);
  if (root.has("rep")) parse_rep(root.child("rep"), cfg.rep);
  if (root.has("schedule")) parse_schedule(root.child("schedule"), cfg.schedule);
  if (root.has("sampler")) parse_sampler(root.child("sampler"), cfg.sampler);
  if (root.has("repaint")) parse_repaint(root.child("repaint"), cfg.repaint);
  if (root.has("baseline")) parse_baseline(root.child("baseline"), cfg.baseline);
  if (root.has("metrics")) parse_metrics(root.child("metrics"), cfg.metrics);
  root.finish();
  require(!cfg.out.empty(), "out", "output directory must be non-empty");

  // Cross-section consistency.
  const Index target_dim = static_cast<Index>(cfg.target.means.front().size());
  Index render_dim = 0;
  try {
    render_dim = build_rep(cfg.rep)->output_dim();
  } catch (const Error& e) {
    throw ConfigError("rep", e.what());
  }
  require(render_dim == target_dim, "rep",
          "rep renders " + std::to_string(render_dim) + " values but the target has dimension " +
              std::to_string(target_dim));
  const auto& cond = cfg.sampler.conditioning;
  require(cond == "uncond" || cfg.target.conditions.contains(cond), "sampler.conditioning",
          "unknown conditioning label '" + cond + "'");
  const auto& ga_cond = cfg.baseline.ga.conditioning.label;
  require(ga_cond == "uncond" || cfg.target.conditions.contains(ga_cond), "baseline.conditioning",
          "unknown conditioning label '" + ga_cond + "'");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("<file>", "cannot read " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_snapshot(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["endpoint"] = cfg.endpoint;

  ordered_json target;
  target["weights"] = cfg.target.weights;
  target["means"] = cfg.target.means;
  target["variances"] = cfg.target.variances;
  target["conditions"] = ordered_json::object();
  for (const auto& [label, comps] : cfg.target.conditions) {
    target["conditions"][label] = comps;
  }
  j["target"] = target;

  const auto& r = cfg.rep;
  ordered_json rep;
  rep["kind"] = r.kind;
  rep["dim"] = r.dim;
  rep["matrix"] = r.matrix;
  rep["grid"] = r.grid;
  rep["modes"] = r.modes;
  ordered_json siren;
  siren["height"] = r.siren.height;
  siren["width"] = r.siren.width;
  siren["channels"] = r.siren.channels;
  siren["embed_freqs"] = r.siren.embed_freqs;
  siren["max_freq"] = r.siren.max_freq;
  siren["hidden"] = r.siren.hidden;
  siren["panorama"] = r.siren.panorama;
  siren["aspect"] = r.siren.aspect;
  siren["embed_seed"] = r.siren.embed_seed;
  rep["siren"] = siren;
  j["rep"] = rep;

  ordered_json sch;
  sch["steps"] = cfg.schedule.steps;
  sch["sigma_min"] = cfg.schedule.sigma_min;
  sch["sigma_max"] = cfg.schedule.sigma_max;
  sch["rho"] = cfg.schedule.rho;
  sch["levels"] = cfg.schedule.levels;
  j["schedule"] = sch;

  const auto& s = cfg.sampler;
  ordered_json sampler;
  sampler["eta"] = s.eta;
  sampler["cfg_scale"] = s.cfg_scale;
  sampler["conditioning"] = s.conditioning;
  sampler["views_per_step"] = s.views_per_step;
  sampler["trajectories"] = s.trajectories;
  ordered_json solver;
  solver["kind"] = to_string(s.solver.kind);
  solver["iterations"] = s.solver.iterations;
  solver["lr"] = s.solver.lr;
  solver["beta1"] = s.solver.beta1;
  solver["beta2"] = s.solver.beta2;
  solver["tol"] = s.solver.tol;
  sampler["solver"] = solver;
  j["sampler"] = sampler;

  ordered_json rp;
  rp["enabled"] = cfg.repaint.enabled;
  rp["jump_interval"] = cfg.repaint.jump_interval;
  rp["jump_len"] = cfg.repaint.jump_len;
  rp["jump_repeat"] = cfg.repaint.jump_repeat;
  j["repaint"] = rp;

  const auto& g = cfg.baseline.ga;
  ordered_json b;
  b["runs"] = cfg.baseline.runs;
  b["method"] = to_string(g.method);
  b["iterations"] = g.iterations;
  b["weighting"] = to_string(g.weighting);
  b["sigma_rule"] = to_string(g.sigma_rule);
  b["sigma_start"] = g.sigma_start;
  b["sigma_end"] = g.sigma_end;
  b["lr"] = g.adam.lr;
  b["beta1"] = g.adam.beta1;
  b["beta2"] = g.adam.beta2;
  b["lr_final_fraction"] = g.lr_final_fraction;
  b["views_per_step"] = g.views_per_step;
  b["antithetic"] = g.antithetic;
  b["cfg_scale"] = g.cfg_scale;
  b["conditioning"] = g.conditioning.label;
  j["baseline"] = b;

  ordered_json m;
  m["mode_radius"] = cfg.metrics.mode_radius;
  m["permutations"] = cfg.metrics.permutations;
  m["bandwidth"] = cfg.metrics.bandwidth;
  j["metrics"] = m;
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  // The output location does not change any numbers, so reruns into a fresh
  // directory keep the same hash.
  RunConfig keyed = cfg;
  keyed.out = "-";
  return fnv1a64(config_snapshot(keyed));
}

// ---------------------------------------------------------------- builders

GaussianMixture build_target(const TargetSpec& spec) {
  const Index k = static_cast<Index>(spec.weights.size());
  const Index d = static_cast<Index>(spec.means.front().size());
  Vec w(k);
  Mat means(d, k);
  Mat vars(d, k);
  for (Index c = 0; c < k; ++c) {
    w[c] = spec.weights[static_cast<std::size_t>(c)];
    for (Index i = 0; i < d; ++i) {
      means(i, c) = spec.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
      vars(i, c) = spec.variances[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
    }
  }
  return GaussianMixture(w, means, vars);
}

std::shared_ptr<ScoreModel> build_score(const RunConfig& cfg) {
  const GaussianMixture target = build_target(cfg.target);
  if (!cfg.endpoint.empty()) {
    return std::make_shared<RemoteScoreModel>(cfg.endpoint, target.dim());
  }
  auto model = std::make_shared<AnalyticScoreModel>(target);
  for (const auto& [label, comps] : cfg.target.conditions) {
    model->add_condition(label, comps);
  }
  return model;
}

std::unique_ptr<DiffRep> build_rep(const RepSpec& spec) {
  if (spec.kind == "identity") {
    return std::make_unique<IdentityRep>(spec.dim);
  }
  if (spec.kind == "linear") {
    Mat a(static_cast<Index>(spec.matrix.size()), static_cast<Index>(spec.matrix.front().size()));
    for (Index i = 0; i < a.rows(); ++i) {
      for (Index j = 0; j < a.cols(); ++j) {
        a(i, j) = spec.matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
    }
    return std::make_unique<LinearRep>(std::move(a));
  }
  if (spec.kind == "lowpass") {
    return std::make_unique<LowPassRep>(spec.grid, spec.modes);
  }
  if (spec.kind == "siren" || spec.kind == "panorama") {
    SirenConfig c = spec.siren;
    c.panorama = spec.kind == "panorama";
    return std::make_unique<SirenRep>(c);
  }
  throw ParameterError("unknown rep kind '" + spec.kind + "'");
}

NoiseSchedule build_schedule(const ScheduleSpec& spec) {
  if (!spec.levels.empty()) {
    return NoiseSchedule::from_levels(spec.levels);
  }
  return make_schedule(spec.steps, spec.sigma_min, spec.sigma_max, spec.rho);
}

RePaintSchedule build_repaint(const RunConfig& cfg) {
  const std::size_t n = build_schedule(cfg.schedule).steps();
  if (!cfg.repaint.enabled) {
    return reverse_only_schedule(n);
  }
  return build_repaint_schedule(static_cast<int>(n), cfg.repaint.jump_interval, cfg.repaint.jump_len,
                                cfg.repaint.jump_repeat);
}

std::string trace_line(const TraceRecord& rec) {
  ordered_json j;
  j["seed"] = rec.seed;
  j["step"] = rec.step;
  j["sigma"] = rec.sigma;
  j["direction"] = to_string(rec.direction);
  j["residual"] = rec.residual;
  j["nfe"] = rec.nfe;
  return j.dump();
}

// ---------------------------------------------------------------- runs

RunOutput run_sample(const RunConfig& cfg, int jobs) {
  const auto rep = build_rep(cfg.rep);
  const auto score = build_score(cfg);
  const NoiseSchedule schedule = build_schedule(cfg.schedule);
  const RePaintSchedule repaint = build_repaint(cfg);

  SamplerConfig sc;
  sc.eta = cfg.sampler.eta;
  sc.cfg_scale = cfg.sampler.cfg_scale;
  sc.conditioning.label = cfg.sampler.conditioning;
  sc.views_per_step = cfg.sampler.views_per_step;
  sc.solver = cfg.sampler.solver;

  std::vector<TrajectoryOutput> runs(static_cast<std::size_t>(cfg.sampler.trajectories));
  spdlog::info("sample: {} trajectories, {} schedule entries, {} job(s)", runs.size(), repaint.size(), jobs);
  parallel_for(cfg.sampler.trajectories, jobs, [&](int t) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(t);
    Rng rng = make_stream(seed);
    DdrepResult r = ddrep_sample(*rep, *score, schedule, repaint, sc, rng, {}, seed);
    runs[static_cast<std::size_t>(t)] = {std::move(r.theta), std::move(r.trace), r.nfe};
    spdlog::debug("trajectory {} done ({} NFE)", t, r.nfe);
  });
  return write_run(cfg, "sample", *rep, runs);
}

RunOutput run_baseline(const RunConfig& cfg, int jobs) {
  const auto rep = build_rep(cfg.rep);
  const auto score = build_score(cfg);
  const NoiseSchedule schedule = build_schedule(cfg.schedule);

  std::vector<TrajectoryOutput> runs(static_cast<std::size_t>(cfg.baseline.runs));
  spdlog::info("baseline: {} {} runs, {} job(s)", runs.size(), to_string(cfg.baseline.ga.method), jobs);
  parallel_for(cfg.baseline.runs, jobs, [&](int t) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(t);
    Rng rng = make_stream(seed);
    GAResult r = run_gradient_ascent(*rep, *score, schedule, cfg.baseline.ga, rng, std::nullopt, seed);
    runs[static_cast<std::size_t>(t)] = {std::move(r.theta), std::move(r.trace), r.nfe};
  });
  return write_run(cfg, std::string("baseline-") + to_string(cfg.baseline.ga.method), *rep, runs);
}

// ---------------------------------------------------------------- oracle check

std::vector<OracleCheck> run_oracle_check(const RunConfig& cfg) {
  const auto rep = build_rep(cfg.rep);
  Rng rng = make_stream(cfg.seed, 0x0c);
  const Vec theta = rep->random_params(rng);
  const View view = rep->singleton_view() ? View{} : rep->sample_view(rng);
  const Index p = rep->param_dim();
  const Index m = rep->output_dim();
  std::vector<OracleCheck> checks;

  {
    const Vec v = standard_normal(p, rng);
    const double h = 1e-6;
    const Vec fd = (rep->render(theta + h * v, view) - rep->render(theta - h * v, view)) / (2.0 * h);
    const Vec jv = rep->jvp(theta, view, v);
    const double err = (fd - jv).norm() / std::max(1.0, jv.norm());
    checks.push_back({"jvp_vs_central_difference", err < 1e-6, err, 1e-6});
  }
  {
    const Vec v = standard_normal(p, rng);
    const Vec w = standard_normal(m, rng);
    const double lhs = rep->jvp(theta, view, v).dot(w);
    const double rhs = v.dot(rep->vjp(theta, view, w));
    const double err = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
    checks.push_back({"vjp_adjoint_identity", err < 1e-10, err, 1e-10});
  }
  if (p > 512 || m > 512) {
    spdlog::warn("oracle-check: rep too large for explicit Jacobians; pullback checks skipped");
    return checks;
  }

  const Mat jac = materialize_jacobian(*rep, theta, view);
  const Vec v = standard_normal(m, rng);
  const Vec u = exact_pullback(jac, v);
  {
    const double scale = std::max(1.0, jac.norm() * v.norm());
    const double err = (jac.transpose() * (jac * u - v)).cwiseAbs().maxCoeff() / scale;
    checks.push_back({"pullback_residual_orthogonal", err < 1e-8, err, 1e-8});
  }
  {
    Mat mix = Mat::Identity(p, p) + 0.1 * Mat::NullaryExpr(p, p, [&] { return std::normal_distribution<>()(rng); });
    const Vec u_m = exact_pullback(jac * mix, v);
    const double img = (jac * mix * u_m - jac * u).norm() / std::max(1.0, v.norm());
    checks.push_back({"pullback_range_invariance", img < 1e-8, img, 1e-8});
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(jac);
    if (cod.rank() == p) {
      const double err = (mix * u_m - u).norm() / std::max(1.0, u.norm());
      checks.push_back({"pullback_reparam_equivariance", err < 1e-8, err, 1e-8});
    }
  }
  {
    Vec d = standard_normal(m, rng);
    d *= 1e-3 / d.norm();
    PullbackStepProblem problem{theta, {view}, {d}, cfg.sampler.solver};
    const PullbackSolution sol = solve_delta_theta(problem, *rep);
    const Vec want = jac * exact_pullback(jac, d);
    const double err = (jac * sol.delta_theta - want).norm() / std::max(want.norm(), 1e-300);
    checks.push_back({"solver_matches_pullback", err < 1e-3, err, 1e-3});
  }
  return checks;
}

void print_oracle_table(std::ostream& os, const std::vector<OracleCheck>& checks) {
  os << std::left << std::setw(34) << "check" << std::setw(8) << "result" << std::setw(14) << "value"
     << "tolerance\n";
  for (const auto& c : checks) {
    os << std::left << std::setw(34) << c.name << std::setw(8) << (c.passed ? "PASS" : "FAIL") << std::setw(14)
       << fmt::format("{:.3e}", c.value) << fmt::format("{:.0e}", c.tolerance) << '\n';
  }
}

// ---------------------------------------------------------------- batches

Mat read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read " + path.string());
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') {
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(path.string() + ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DimensionError(path.string() + ": ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw Error(path.string() + ": no samples");
  }
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return m;
}

void write_samples_csv(const std::filesystem::path& path, const Mat& samples, const std::string& header) {
  auto out = open_out(path);
  out << "# " << header << '\n';
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < samples.cols(); ++j) {
      out << (j ? "," : "") << fmt::format("{}", samples(i, j));
    }
    out << '\n';
  }
}

std::string compare_batches(const Mat& a, const Mat& b, int permutations, double bandwidth, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0xb0);
  const MmdTest test = mmd_permutation_test(a, b, bandwidth, permutations, rng);
  ordered_json j;
  j["n_a"] = a.rows();
  j["n_b"] = b.rows();
  j["mmd2"] = test.mmd2;
  j["p_value"] = test.p_value;
  j["bandwidth"] = test.bandwidth;
  j["permutations"] = permutations;
  return j.dump(2);
}

}  // namespace dflow
