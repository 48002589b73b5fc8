#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "rrrl/agent.hpp"
#include "servo.hpp"

namespace tending::bridge {

using nlohmann::json;

enum class Phase { Idle, DgpCaptured, Following, Finished, Training, Executing };

constexpr std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::DgpCaptured: return "DgpCaptured";
    case Phase::Following: return "Following";
    case Phase::Finished: return "Finished";
    case Phase::Training: return "Training";
    case Phase::Executing: return "Executing";
  }
  return "?";
}

/// Live values mirrored into state broadcasts.
struct Telemetry {
  Pose ee_pose;
  Pose peg_pose;
  Wrench wrench = Wrench::zero();
  int alpha = 0;
  double max_force = 0;
};

/// Long-running work handed to a worker context; results come back through
/// complete_job.
struct Job {
  enum class Kind { train, execute } kind = Kind::train;
  WorkbenchConfig config;
  rrrl::TaskSetup task;
  std::uint64_t seed = 0;
  BenchmarkSpec spec;
  std::optional<rrrl::Policy> policy;
};

struct JobOutcome {
  Job::Kind kind = Job::Kind::train;
  bool cancelled = false;
  std::optional<rrrl::Policy> policy;
  std::optional<BenchmarkResult> result;
};

struct BridgeState {
  WorkbenchConfig config;
  Phase phase = Phase::Idle;
  long seq = 0;
  double t = 0;
  TeachSession session;
  TeachRig rig;
  Pose object_pose;
  Telemetry telemetry;
  std::optional<Pose> dfp;
  std::optional<rrrl::Policy> policy;
  std::string policy_path;
  std::string report_path;
  std::string traj_path;
  std::optional<Job> pending_job;
  std::shared_ptr<std::atomic<bool>> cancel = std::make_shared<std::atomic<bool>>(false);
  std::function<double()> wall_clock;  // when set, teaching duration is wall time
  double teach_started = 0;
};

/// Fresh session: object at the scene's default start, EE grasping it.
inline BridgeState make_state(const WorkbenchConfig& cfg, const Pose& object_start) {
  BridgeState s;
  s.config = cfg;
  s.rig.camera = cfg.camera;
  s.rig.noise_px = cfg.teaching.noise_px;
  s.object_pose = object_start;
  s.rig.object = object_start;
  s.rig.ee = object_start;
  s.telemetry.ee_pose = object_start;
  s.telemetry.peg_pose = object_start;
  s.session.lambda = cfg.teaching.lambda;
  s.session.box = cfg.box;
  const std::filesystem::path dir(cfg.paths.artifacts_dir);
  s.policy_path = (dir / "policy.json").string();
  s.report_path = (dir / "report.json").string();
  s.traj_path = (dir / "traj.jsonl").string();
  return s;
}

inline json error_reply(std::string_view code, const std::string& detail) {
  return {{"type", "error"}, {"code", code}, {"detail", detail}};
}

inline json ack(BridgeState& s) { return {{"type", "ack"}, {"seq", ++s.seq}}; }

namespace detail {

struct BadMessage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Allowed fields per tag: name → required.
inline const std::map<std::string, std::map<std::string, bool>>& schemas() {
  static const std::map<std::string, std::map<std::string, bool>> s{
      {"hello", {}},
      {"capture_dgp", {}},
      {"capture_dvsp", {}},
      {"start_follow", {}},
      {"drag_object", {{"pose", true}}},
      {"finish_teaching", {}},
      {"start_training", {{"seed", true}, {"episodes", false}}},
      {"start_execution", {{"method", true}, {"group", true}, {"trials", true}}},
      {"abort", {}},
  };
  return s;
}

inline void check_schema(const json& m) {
  if (!m.is_object()) throw BadMessage("message must be a JSON object");
  if (!m.contains("type") || !m["type"].is_string()) throw BadMessage("message needs a string 'type'");
  const std::string type = m["type"];
  const auto it = schemas().find(type);
  if (it == schemas().end()) throw BadMessage("unknown message type '" + type + "'");
  for (const auto& [k, _] : m.items()) {
    if (k != "type" && !it->second.count(k)) throw BadMessage("unexpected field '" + k + "' in " + type);
  }
  for (const auto& [k, required] : it->second) {
    if (required && !m.contains(k)) throw BadMessage(type + " needs field '" + k + "'");
  }
  if (type == "drag_object") {
    try {
      (void)pose_from_json(m["pose"]);
    } catch (const Error& e) {
      throw BadMessage(std::string("drag_object.pose: ") + e.what());
    }
  }
  if (type == "start_training") {
    if (!m["seed"].is_number_unsigned()) throw BadMessage("start_training.seed must be a non-negative integer");
    if (m.contains("episodes") && !(m["episodes"].is_number_unsigned() && m["episodes"].get<long>() > 0)) {
      throw BadMessage("start_training.episodes must be a positive integer");
    }
  }
  if (type == "start_execution") {
    if (!m["method"].is_string() || !m["group"].is_string()) {
      throw BadMessage("start_execution.method and group must be strings");
    }
    const std::string meth = m["method"], grp = m["group"];
    static const std::set<std::string> methods{"pure", "spiral", "rrrl"}, groups{"perfect", "uncertainty"};
    if (!methods.count(meth)) throw BadMessage("start_execution.method must be pure, spiral or rrrl");
    if (!groups.count(grp)) throw BadMessage("start_execution.group must be perfect or uncertainty");
    if (!(m["trials"].is_number_unsigned() && m["trials"].get<long>() > 0)) {
      throw BadMessage("start_execution.trials must be a positive integer");
    }
  }
}

inline json wrong_phase(const BridgeState& s, const std::string& type) {
  return error_reply("wrong_phase", type + " not allowed in phase " + std::string(to_string(s.phase)));
}

inline void sync_telemetry_from_rig(BridgeState& s) {
  s.telemetry.ee_pose = s.rig.ee;
  s.telemetry.peg_pose = s.rig.object;
}

inline rrrl::TaskSetup task_for(const BridgeState& s) {
  rrrl::TaskSetup t;
  t.scene = s.config.scene;
  t.gains = s.config.gains;
  t.box = s.config.box;
  t.dfp = *s.dfp;
  t.dfp_true = hole_entrance_pose(s.config.scene);
  return t;
}

}  // namespace detail

/// Applies one client message. Every outcome is a list of replies; invalid
/// input yields an error reply, never an exception.
inline std::vector<json> handle_command(BridgeState& s, const std::string& text) {
  json m;
  try {
    m = json::parse(text);
    detail::check_schema(m);
  } catch (const json::exception& e) {
    return {error_reply("bad_message", std::string("invalid JSON: ") + e.what())};
  } catch (const detail::BadMessage& e) {
    return {error_reply("bad_message", e.what())};
  }
  const std::string type = m["type"];
  try {
    if (type == "hello") return {ack(s)};
    if (type == "capture_dgp") {
      if (s.phase != Phase::Idle) return {detail::wrong_phase(s, type)};
      s.session = TeachSession{};
      s.session.lambda = s.config.teaching.lambda;
      s.session.box = s.config.box;
      s.rig.object = s.object_pose;
      s.rig.ee = s.object_pose;
      teach_capture_dgp(s.session, s.rig);
      s.teach_started = s.wall_clock ? s.wall_clock() : 0.0;
      s.phase = Phase::DgpCaptured;
      detail::sync_telemetry_from_rig(s);
      return {ack(s)};
    }
    if (type == "capture_dvsp") {
      if (s.phase != Phase::DgpCaptured) return {detail::wrong_phase(s, type)};
      const Pose before = s.rig.ee;
      s.rig.ee = compose(s.session.b_x_dgp, Pose::translation(0, 0, -s.config.teaching.dvsp_height));
      try {
        teach_capture_dvsp(s.session, s.rig);
      } catch (const Error& e) {
        s.rig.ee = before;
        return {error_reply(to_string(e.code()), e.what())};
      }
      detail::sync_telemetry_from_rig(s);
      return {ack(s)};
    }
    if (type == "start_follow") {
      if (s.phase != Phase::DgpCaptured || !s.session.dvsp_captured) return {detail::wrong_phase(s, type)};
      teach_start_follow(s.session, s.rig);
      s.phase = Phase::Following;
      return {ack(s)};
    }
    if (type == "drag_object") {
      if (s.phase != Phase::Following) return {detail::wrong_phase(s, type)};
      s.object_pose = pose_from_json(m["pose"]);
      s.rig.object = s.object_pose;
      s.telemetry.peg_pose = s.object_pose;
      return {ack(s)};
    }
    if (type == "finish_teaching") {
      if (s.phase != Phase::Following) return {detail::wrong_phase(s, type)};
      try {
        teach_finish(s.session, s.rig);
      } catch (const Error& e) {
        return {error_reply(to_string(e.code()), e.what())};
      }
      if (s.wall_clock) s.session.duration = s.wall_clock() - s.teach_started;
      s.dfp = s.session.dfp;
      s.phase = Phase::Finished;
      {
        std::filesystem::create_directories(s.config.paths.artifacts_dir);
        std::ostringstream traj;
        write_trajectory(traj, s.session);
        tending::detail::write_file(s.traj_path, traj.str());
      }
      return {ack(s), {{"type", "teach_done"}, {"dfp", pose_to_json(*s.dfp)}, {"duration", s.session.duration}}};
    }
    if (type == "start_training") {
      if (s.phase != Phase::Finished) return {detail::wrong_phase(s, type)};
      Job job;
      job.kind = Job::Kind::train;
      job.config = s.config;
      if (m.contains("episodes")) job.config.rrrl.episodes = m["episodes"].get<int>();
      job.task = detail::task_for(s);
      job.seed = m["seed"].get<std::uint64_t>();
      s.cancel = std::make_shared<std::atomic<bool>>(false);
      s.pending_job = std::move(job);
      s.phase = Phase::Training;
      return {ack(s)};
    }
    if (type == "start_execution") {
      if (s.phase != Phase::Finished) return {detail::wrong_phase(s, type)};
      const Method meth = method_from_string(m["method"].get<std::string>());
      if (meth == Method::rrrl && !s.policy) return {error_reply("missing_artifact", "no trained policy yet")};
      Job job;
      job.kind = Job::Kind::execute;
      job.config = s.config;
      job.task = detail::task_for(s);
      job.spec = {meth, group_from_string(m["group"].get<std::string>()), m["trials"].get<int>(), 0};
      job.policy = s.policy;
      s.cancel = std::make_shared<std::atomic<bool>>(false);
      s.pending_job = std::move(job);
      s.phase = Phase::Executing;
      return {ack(s)};
    }
    if (type == "abort") {
      if (s.phase == Phase::Training || s.phase == Phase::Executing) {
        s.cancel->store(true);
        s.pending_job.reset();
        s.phase = Phase::Finished;
      } else if (s.phase == Phase::DgpCaptured || s.phase == Phase::Following) {
        s.session = TeachSession{};
        s.rig.ee = s.object_pose;
        s.phase = Phase::Idle;
        detail::sync_telemetry_from_rig(s);
      }
      return {ack(s)};
    }
  } catch (const Error& e) {
    return {error_reply(to_string(e.code()), e.what())};
  }
  return {error_reply("bad_message", "unhandled message type '" + type + "'")};
}

/// One servo tick while following; no-op in other phases.
inline void tick(BridgeState& s, double dt) {
  s.t += dt;
  if (s.phase != Phase::Following) return;
  teach_follow_step(s.session, s.rig, s.object_pose, dt);
  detail::sync_telemetry_from_rig(s);
}

inline json broadcast_state(const BridgeState& s) {
  return {{"type", "state"},
          {"t", s.t},
          {"ee_pose", pose_to_json(s.telemetry.ee_pose)},
          {"peg_pose", pose_to_json(s.telemetry.peg_pose)},
          {"object_pose", pose_to_json(s.object_pose)},
          {"wrench", wrench_to_json(s.telemetry.wrench)},
          {"phase", std::string(to_string(s.phase))},
          {"alpha", s.telemetry.alpha},
          {"max_force", s.telemetry.max_force}};
}

struct Cancelled : std::runtime_error {
  Cancelled() : std::runtime_error("job cancelled") {}
};

/// Runs a job to completion. `emit` receives progress messages in order.
inline JobOutcome run_job(const Job& job, const std::function<void(const json&)>& emit,
                          const std::atomic<bool>* cancel = nullptr) {
  JobOutcome out;
  out.kind = job.kind;
  try {
    if (job.kind == Job::Kind::train) {
      int successes = 0;
      auto cb = [&](const rrrl::EpisodeLog& e, const rrrl::Policy&) {
        if (cancel && cancel->load()) throw Cancelled();
        successes += e.success;
        if (emit) {
          emit({{"type", "progress"},
                {"episode", e.episode},
                {"return", e.ret},
                {"success_rate", static_cast<double>(successes) / (e.episode + 1)}});
        }
      };
      out.policy = rrrl::train(job.task, job.config.rrrl, job.seed, cb).policy;
    } else {
      Artifacts art;
      art.task = job.task;
      art.rrrl = job.config.rrrl;
      art.baselines = job.config.baselines;
      art.policy = job.policy;
      int successes = 0;
      auto on_trial = [&](const TrialRecord& t) {
        if (cancel && cancel->load()) throw Cancelled();
        successes += t.success;
        if (emit) {
          emit({{"type", "progress"},
                {"trial", t.trial},
                {"success", t.success},
                {"success_rate", static_cast<double>(successes) / (t.trial + 1)}});
        }
      };
      if (cancel && cancel->load()) throw Cancelled();
      out.result = run_execution_benchmark(job.spec, art, on_trial);
    }
  } catch (const Cancelled&) {
    out.cancelled = true;
  }
  return out;
}

/// Folds a finished job back into the session: files written, phase restored.
inline std::vector<json> complete_job(BridgeState& s, JobOutcome&& o) {
  if (o.cancelled) return {};
  const bool expected = (o.kind == Job::Kind::train && s.phase == Phase::Training) ||
                        (o.kind == Job::Kind::execute && s.phase == Phase::Executing);
  if (!expected) return {};  // aborted meanwhile
  s.phase = Phase::Finished;
  std::filesystem::create_directories(s.config.paths.artifacts_dir);
  if (o.kind == Job::Kind::train) {
    s.policy = std::move(o.policy);
    save_policy(s.policy_path, *s.policy);
    return {{{"type", "train_done"}, {"policy_path", s.policy_path}}};
  }
  Report rep;
  rep.benchmarks.push_back(*o.result);
  const json rj = to_json(rep);
  tending::detail::write_file(s.report_path, rj.dump(2) + "\n");
  return {{{"type", "exec_done"}, {"report", rj}}};
}

}  // namespace tending::bridge
