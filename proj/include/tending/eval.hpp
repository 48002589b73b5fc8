#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "control.hpp"
#include "error.hpp"
#include "rrrl/agent.hpp"
#include "simenv.hpp"

namespace tending {

/// Wilson score interval for k successes out of n, z = 1.96.
struct Interval {
  double lo = 0, hi = 0;
};

inline Interval wilson_interval(int k, int n, double z = 1.959963984540054) {
  if (n <= 0) return {0.0, 1.0};
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double den = 1 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / den;
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / den;
  // The bounds at k = 0 and k = n are exactly 0 and 1; the formula leaves round-off.
  return {k == 0 ? 0.0 : std::max(0.0, center - half), k == n ? 1.0 : std::min(1.0, center + half)};
}

/// Strict ordering with non-overlapping intervals.
inline bool separated_above(const Interval& a, const Interval& b) { return a.lo > b.hi; }

inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// action-set study

/// The three candidate force action sets at amplitude F.
inline std::vector<Wrench> action_set(int which, double f) {
  std::vector<Wrench> out;
  switch (which) {
    case 1:
      for (int axis = 0; axis < 6; ++axis) {
        for (int sign : {+1, -1}) {
          Vec6 v = Vec6::Zero();
          v[axis] = sign * f;
          out.push_back(Wrench::from_vector(v));
        }
      }
      break;
    case 2:
      for (int axis = 0; axis < 2; ++axis) {
        for (int sign : {+1, -1}) {
          Vec6 v = Vec6::Zero();
          v[axis] = sign * f;
          v[2] = f;
          out.push_back(Wrench::from_vector(v));
        }
      }
      break;
    case 3:
      for (int a = 0; a < rrrl::kNumActions; ++a) out.push_back(rrrl::action_to_wrench(a, f));
      break;
    default: raise(Errc::out_of_range, "action set must be 1, 2 or 3");
  }
  return out;
}

struct ActionSetResult {
  int set = 0;
  int actions = 0;
  int successes = 0;
  int trials = 0;
  Interval wilson;
  double rate() const { return trials ? static_cast<double>(successes) / trials : 0.0; }
};

struct ActionStudyOptions {
  int trials = 200;
  int max_steps = 20;
};

/// Uniform-random force policy inside the region, fixed policy outside.
inline std::vector<ActionSetResult> compare_action_sets(const rrrl::TaskSetup& task, const rrrl::RrrlConfig& base,
                                                        std::uint64_t seed, const ActionStudyOptions& opt = {}) {
  rrrl::validate(task);
  rrrl::RrrlConfig cfg = base;
  cfg.k_max = opt.max_steps;
  std::vector<ActionSetResult> out;
  for (int set = 1; set <= 3; ++set) {
    const std::vector<Wrench> actions = action_set(set, cfg.force_amplitude);
    ActionSetResult res{set, static_cast<int>(actions.size()), 0, opt.trials, {}};
    for (int t = 0; t < opt.trials; ++t) {
      std::mt19937_64 rng = trial_rng(seed, static_cast<std::uint64_t>(t));
      const Pose start = rrrl::perturb_target(task.scene, task.dfp, cfg.delta_p_min, cfg.delta_p_max, rng);
      const std::uint64_t env_seed = rng();
      std::uniform_int_distribution<int> pick(0, static_cast<int>(actions.size()) - 1);
      auto choose = [&](const Vec6&) { return pick(rng); };
      const auto r = rrrl::hybrid_rollout(task, cfg, start, start, env_seed, choose, {}, &actions);
      res.successes += r.success;
    }
    res.wilson = wilson_interval(res.successes, res.trials);
    out.push_back(res);
  }
  return out;
}

// ---------------------------------------------------------------------------
// execution benchmark

enum class Method { pure_replay, spiral, rrrl };
enum class Group { perfect, uncertainty };

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::pure_replay: return "pure_replay";
    case Method::spiral: return "spiral";
    case Method::rrrl: return "rrrl";
  }
  return "?";
}

constexpr std::string_view to_string(Group g) { return g == Group::perfect ? "perfect" : "uncertainty"; }

inline Method method_from_string(std::string_view s) {
  if (s == "pure" || s == "pure_replay") return Method::pure_replay;
  if (s == "spiral") return Method::spiral;
  if (s == "rrrl") return Method::rrrl;
  raise(Errc::validation_error, "unknown method '" + std::string(s) + "'");
}

inline Group group_from_string(std::string_view s) {
  if (s == "perfect") return Group::perfect;
  if (s == "uncertainty") return Group::uncertainty;
  raise(Errc::validation_error, "unknown group '" + std::string(s) + "'");
}

struct BenchmarkSpec {
  Method method = Method::rrrl;
  Group group = Group::uncertainty;
  int trials = 100;
  std::uint64_t seed = 0;
};

struct TrialRecord {
  int trial = 0;
  bool success = false;
  int steps = 0;
  double max_force = 0;
  double max_commanded = 0;
  double final_error = 0;
};

struct BenchmarkResult {
  Method method = Method::rrrl;
  Group group = Group::uncertainty;
  int successes = 0;
  int trials = 0;
  double max_force_overall = 0;
  double max_commanded_overall = 0;
  std::vector<TrialRecord> records;

  Interval wilson() const { return wilson_interval(successes, trials); }
};

struct BaselineParams {
  SpiralParams spiral;
  double replay_speed = 0.01;        // m/s along the hole axis
  double replay_overtravel = 0.002;  // commanded depth beyond success_depth
  double protective_stop = 15.0;     // N, pure replay halts above this
};

struct Artifacts {
  rrrl::TaskSetup task;
  rrrl::RrrlConfig rrrl;
  BaselineParams baselines;
  std::optional<rrrl::Policy> policy;
};

namespace detail {

struct PhysicsRun {
  SimState st;
  Vec6 q;
  ConstraintBox box;
  const SceneConfig& scene;
  bool success = false;

  PhysicsRun(const SceneConfig& s, const ConstraintBox& b, const Pose& start, std::uint64_t seed)
      : st(reset(s, start, seed)),
        q(config_from_pose(st.ee_command_pose, s.hole_pose.orientation)),
        box(b.with_delta(s.physics_dt)),
        scene(s) {}

  void tick(const Vec6& qdot) {
    q = clamp_and_integrate(q, qdot, box);
    step_in_place(st, scene, pose_from_config(q, scene.hole_pose.orientation), scene.physics_dt);
    success = success || check_success(st, scene);
  }
};

/// Position-mode descent along the hole axis with a protective force stop.
inline TrialRecord run_pure_replay(const Artifacts& art, const Pose& start, std::uint64_t seed) {
  const auto& sc = art.task.scene;
  PhysicsRun run(sc, art.task.box, start, seed);
  const Mat3 r = sc.hole_pose.rotation_matrix();
  const double horizon = art.rrrl.k_max * art.rrrl.decision_period;
  const int ticks = static_cast<int>(std::lround(horizon / sc.physics_dt));
  const double goal_depth = sc.success_depth + art.baselines.replay_overtravel;
  int i = 0;
  for (; i < ticks && !run.success; ++i) {
    const Wrench w = sensor_read(run.st, sc);
    if (w.force.norm() > art.baselines.protective_stop) break;
    const double depth_cmd = to_hole_frame(sc, run.st.ee_command_pose.position).z();
    const double v = std::clamp((goal_depth - depth_cmd) / sc.physics_dt, 0.0, art.baselines.replay_speed);
    Vec6 qdot = Vec6::Zero();
    qdot.head<3>() = r * Vec3(0, 0, v);
    run.tick(qdot);
  }
  const int period_ticks = std::max(1, static_cast<int>(std::lround(art.rrrl.decision_period / sc.physics_dt)));
  return {0, run.success, (i + period_ticks - 1) / period_ticks, run.st.max_abs_force_seen, 0.0,
          lateral_offset(run.st, sc)};
}

/// Spiral in position mode about the uncertain target, constant push along
/// the hole axis through the admittance law.
inline TrialRecord run_spiral(const Artifacts& art, const Pose& start, std::uint64_t seed) {
  const auto& sc = art.task.scene;
  const auto& sp = art.baselines.spiral;
  PhysicsRun run(sc, art.task.box, start, seed);
  const Mat3 r = sc.hole_pose.rotation_matrix();
  const Vec3 center = to_hole_frame(sc, start.position);
  const double horizon = art.rrrl.k_max * art.rrrl.decision_period;
  const int ticks = static_cast<int>(std::lround(horizon / sc.physics_dt));
  const Wrench push{Vec3(0, 0, sp.push_force), Vec3::Zero(), FrameTag::e};
  int i = 0;
  for (; i < ticks && !run.success; ++i) {
    const double t_next = (i + 1) * sc.physics_dt;
    const Eigen::Vector2d off = spiral_offset(sp, t_next);
    const Vec3 ee_hole = to_hole_frame(sc, run.st.ee_command_pose.position);
    const Vec6 tw = admittance_step(push, sensor_read(run.st, sc), art.task.gains);
    Vec3 v_hole(0, 0, tw[2]);
    v_hole.x() = (center.x() + off.x() - ee_hole.x()) / sc.physics_dt;
    v_hole.y() = (center.y() + off.y() - ee_hole.y()) / sc.physics_dt;
    Vec6 qdot = Vec6::Zero();
    qdot.head<3>() = r * v_hole;
    run.tick(qdot);
  }
  const int period_ticks = std::max(1, static_cast<int>(std::lround(art.rrrl.decision_period / sc.physics_dt)));
  return {0, run.success, (i + period_ticks - 1) / period_ticks, run.st.max_abs_force_seen, sp.push_force,
          lateral_offset(run.st, sc)};
}

}  // namespace detail

/// `on_trial`, when set, sees every trial record as soon as it is done.
inline BenchmarkResult run_execution_benchmark(const BenchmarkSpec& spec, const Artifacts& art,
                                               const std::function<void(const TrialRecord&)>& on_trial = {}) {
  if (spec.trials <= 0) raise(Errc::validation_error, "benchmark trials must be positive");
  rrrl::validate(art.task);
  if (spec.method == Method::rrrl && !art.policy) raise(Errc::missing_artifact, "rrrl benchmark needs a policy");
  validate(art.baselines.spiral);
  BenchmarkResult res;
  res.method = spec.method;
  res.group = spec.group;
  res.trials = spec.trials;
  for (int t = 0; t < spec.trials; ++t) {
    std::mt19937_64 rng = trial_rng(spec.seed, static_cast<std::uint64_t>(t));
    const Pose target = spec.group == Group::perfect
                            ? art.task.dfp
                            : rrrl::perturb_target(art.task.scene, art.task.dfp, art.rrrl.delta_p_min,
                                                   art.rrrl.delta_p_max, rng);
    const std::uint64_t env_seed = rng();
    TrialRecord rec;
    switch (spec.method) {
      case Method::pure_replay: rec = detail::run_pure_replay(art, target, env_seed); break;
      case Method::spiral: rec = detail::run_spiral(art, target, env_seed); break;
      case Method::rrrl: {
        const auto r = rrrl::execute(art.task, *art.policy, target, env_seed);
        rec = {0, r.success, r.steps, r.max_force, r.max_commanded, r.final_error};
        break;
      }
    }
    rec.trial = t;
    res.successes += rec.success;
    res.max_force_overall = std::max(res.max_force_overall, rec.max_force);
    res.max_commanded_overall = std::max(res.max_commanded_overall, rec.max_commanded);
    res.records.push_back(rec);
    if (on_trial) on_trial(rec);
  }
  return res;
}

// ---------------------------------------------------------------------------
// report

struct Report {
  std::vector<ActionSetResult> action_sets;
  std::vector<BenchmarkResult> benchmarks;
};

inline nlohmann::json to_json(const Interval& i) { return nlohmann::json::array({i.lo, i.hi}); }

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json j = {{"action_sets", nlohmann::json::array()}, {"benchmarks", nlohmann::json::array()}};
  for (const auto& a : r.action_sets) {
    j["action_sets"].push_back({{"set", a.set},
                                {"actions", a.actions},
                                {"successes", a.successes},
                                {"trials", a.trials},
                                {"rate", a.rate()},
                                {"wilson", to_json(a.wilson)}});
  }
  for (const auto& b : r.benchmarks) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& t : b.records) {
      recs.push_back({{"trial", t.trial},
                      {"success", t.success},
                      {"steps", t.steps},
                      {"max_force", t.max_force},
                      {"max_commanded", t.max_commanded},
                      {"final_error", t.final_error}});
    }
    j["benchmarks"].push_back({{"method", std::string(to_string(b.method))},
                               {"group", std::string(to_string(b.group))},
                               {"successes", b.successes},
                               {"trials", b.trials},
                               {"wilson", to_json(b.wilson())},
                               {"max_force_overall", b.max_force_overall},
                               {"max_commanded_overall", b.max_commanded_overall},
                               {"records", recs}});
  }
  return j;
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  try {
    for (const auto& a : j.at("action_sets")) {
      ActionSetResult x;
      x.set = a.at("set").get<int>();
      x.actions = a.at("actions").get<int>();
      x.successes = a.at("successes").get<int>();
      x.trials = a.at("trials").get<int>();
      x.wilson = {a.at("wilson").at(0).get<double>(), a.at("wilson").at(1).get<double>()};
      r.action_sets.push_back(x);
    }
    for (const auto& b : j.at("benchmarks")) {
      BenchmarkResult x;
      x.method = method_from_string(b.at("method").get<std::string>());
      x.group = group_from_string(b.at("group").get<std::string>());
      x.successes = b.at("successes").get<int>();
      x.trials = b.at("trials").get<int>();
      x.max_force_overall = b.at("max_force_overall").get<double>();
      x.max_commanded_overall = b.at("max_commanded_overall").get<double>();
      for (const auto& t : b.at("records")) {
        x.records.push_back({t.at("trial").get<int>(), t.at("success").get<bool>(), t.at("steps").get<int>(),
                             t.at("max_force").get<double>(), t.at("max_commanded").get<double>(),
                             t.at("final_error").get<double>()});
      }
      r.benchmarks.push_back(x);
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("report: ") + e.what());
  }
  return r;
}

/// Markdown tables: action sets (set, actions, rate, interval) and the
/// execution table (method × group successes and max force).
inline std::string report_markdown(const Report& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1);
  o << "# Tending benchmark report\n\n";
  if (!r.action_sets.empty()) {
    o << "## Action sets (uniform-random policy)\n\n| set | actions | success | rate % | 95% interval |\n"
         "|---|---|---|---|---|\n";
    for (const auto& a : r.action_sets) {
      o << "| " << a.set << " | " << a.actions << " | " << a.successes << "/" << a.trials << " | "
        << 100 * a.rate() << " | [" << 100 * a.wilson.lo << ", " << 100 * a.wilson.hi << "] |\n";
    }
    o << "\n";
  }
  if (!r.benchmarks.empty()) {
    o << "## Execution phase\n\n| method | group | success | 95% interval | max force N |\n"
         "|---|---|---|---|---|\n";
    for (const auto& b : r.benchmarks) {
      const Interval w = b.wilson();
      o << "| " << to_string(b.method) << " | " << to_string(b.group) << " | " << b.successes << "/" << b.trials
        << " | [" << 100 * w.lo << ", " << 100 * w.hi << "] | " << b.max_force_overall << " |\n";
    }
  }
  return o.str();
}

}  // namespace tending
