// Command-line front end: teach, train, execute, compare-actions, serve.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <tending/bridge.hpp>
#include <tending/config.hpp>
#include <tending/eval.hpp>
#include <tending/rrrl/agent.hpp>
#include <tending/servo.hpp>

#include "serve.hpp"

namespace {

using namespace tending;

enum Exit { kOk = 0, kConfig = 2, kArtifact = 3, kRuntime = 4 };

/// Errors tagged with the exit code of the stage that raised them.
struct StageError {
  int code;
  std::string message;
};

WorkbenchConfig config_or_exit(const std::string& path) {
  try {
    return load_config(path);
  } catch (const Error& e) {
    throw StageError{kConfig, "config " + path + ": " + e.what()};
  }
}

template <class F>
auto artifact(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw StageError{kArtifact, what + ": " + e.what()};
  }
}

TrajectoryFile read_traj(const std::string& path) {
  return artifact("trajectory " + path, [&] {
    std::ifstream in(path);
    if (!in) raise(Errc::missing_artifact, "cannot open");
    return read_trajectory(in);
  });
}

void write_text(const std::string& path, const std::string& text) {
  artifact("output " + path, [&] {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    detail::write_file(path, text);
    return 0;
  });
}

rrrl::TaskSetup task_from(const WorkbenchConfig& c, const Pose& dfp) {
  rrrl::TaskSetup t;
  t.scene = c.scene;
  t.gains = c.gains;
  t.box = c.box;
  t.dfp = dfp;
  t.dfp_true = hole_entrance_pose(c.scene);
  return t;
}

std::string sibling_markdown(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".md");
  return p.string();
}

void write_report(const std::string& out, const Report& rep) {
  write_text(out, to_json(rep).dump(2) + "\n");
  write_text(sibling_markdown(out), report_markdown(rep));
}

int cmd_teach(const std::string& cfg_path, const std::string& script_path, const std::string& out,
              std::uint64_t seed) {
  const WorkbenchConfig cfg = config_or_exit(cfg_path);
  const auto script = artifact("demo script " + script_path, [&] {
    std::ifstream in(script_path);
    if (!in) raise(Errc::missing_artifact, "cannot open");
    return parse_demo_script(in);
  });
  TeachRig rig;
  rig.camera = cfg.camera;
  rig.noise_px = cfg.teaching.noise_px;
  rig.rng.seed(seed);
  DemoOptions opt{cfg.teaching.dt, cfg.teaching.dvsp_height, cfg.teaching.settle_time, cfg.teaching.settle_error_px,
                  cfg.teaching.lambda};
  const TeachSession s = run_scripted_demo(rig, script, opt, cfg.box);
  std::ostringstream ss;
  write_trajectory(ss, s);
  write_text(out, ss.str());
  std::cout << "dfp " << pose_to_json(*s.dfp).dump() << " after " << s.trajectory.size() << " servo steps\n";
  return kOk;
}

int cmd_train(const std::string& cfg_path, const std::string& traj_path, const std::string& out,
              const std::string& log_path, std::uint64_t seed) {
  const WorkbenchConfig cfg = config_or_exit(cfg_path);
  const TrajectoryFile traj = read_traj(traj_path);
  const std::string log_out = log_path.empty() ? out + ".log.jsonl" : log_path;
  std::ostringstream log;
  auto on_episode = [&](const rrrl::EpisodeLog& e, const rrrl::Policy& p) {
    log << rrrl::to_json(e).dump() << '\n';
    if (cfg.rrrl.snapshot_every > 0 && (e.episode + 1) % cfg.rrrl.snapshot_every == 0) {
      write_text(out, to_json(p).dump() + "\n");
    }
  };
  const auto res = rrrl::train(task_from(cfg, traj.dfp), cfg.rrrl, seed, on_episode);
  write_text(out, to_json(res.policy).dump() + "\n");
  write_text(log_out, log.str());
  int succ = 0;
  for (const auto& e : res.log) succ += e.success;
  std::cout << "trained " << res.log.size() << " episodes, " << succ << " successful\n";
  return kOk;
}

int cmd_execute(const std::string& cfg_path, const std::string& traj_path, const std::string& policy_path,
                const std::string& method, const std::string& group, int trials, const std::string& out,
                std::uint64_t seed) {
  const WorkbenchConfig cfg = config_or_exit(cfg_path);
  BenchmarkSpec spec;
  try {
    spec = {method_from_string(method), group_from_string(group), trials, seed};
  } catch (const Error& e) {
    throw StageError{kConfig, e.what()};
  }
  const TrajectoryFile traj = read_traj(traj_path);
  Artifacts art;
  art.task = task_from(cfg, traj.dfp);
  art.rrrl = cfg.rrrl;
  art.baselines = cfg.baselines;
  if (spec.method == Method::rrrl) {
    if (policy_path.empty()) throw StageError{kArtifact, "rrrl execution needs --policy"};
    art.policy = artifact("policy " + policy_path, [&] { return load_policy(policy_path); });
  }
  Report rep;
  rep.benchmarks.push_back(run_execution_benchmark(spec, art));
  write_report(out, rep);
  const auto& b = rep.benchmarks.front();
  std::cout << to_string(b.method) << "/" << to_string(b.group) << ": " << b.successes << "/" << b.trials
            << " successes, max force " << b.max_force_overall << " N\n";
  return kOk;
}

int cmd_compare(const std::string& cfg_path, const std::string& out, std::uint64_t seed) {
  const WorkbenchConfig cfg = config_or_exit(cfg_path);
  Report rep;
  rep.action_sets = compare_action_sets(task_from(cfg, hole_entrance_pose(cfg.scene)), cfg.rrrl, seed);
  write_report(out, rep);
  for (const auto& a : rep.action_sets) {
    std::cout << "set " << a.set << ": " << a.successes << "/" << a.trials << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robot tending workbench: visual-servoing teaching and region-limited residual RL insertion"};
  app.require_subcommand(1);

  std::string cfg, script, out, traj, policy, method, group, log;
  std::uint64_t seed = 0;
  int trials = 100;
  unsigned short port = 8080;

  auto* teach = app.add_subcommand("teach", "Headless scripted demonstration");
  teach->add_option("--config", cfg)->required();
  teach->add_option("--demo-script", script)->required();
  teach->add_option("--out", out)->required();
  teach->add_option("--seed", seed);

  auto* train = app.add_subcommand("train", "Train the insertion policy");
  train->add_option("--config", cfg)->required();
  train->add_option("--traj", traj)->required();
  train->add_option("--out", out)->required();
  train->add_option("--log", log, "Training log (JSON lines); defaults to <out>.log.jsonl");
  train->add_option("--seed", seed);

  auto* exec = app.add_subcommand("execute", "Execution-phase benchmark");
  exec->add_option("--config", cfg)->required();
  exec->add_option("--traj", traj)->required();
  exec->add_option("--policy", policy);
  exec->add_option("--method", method)->required()->check(CLI::IsMember({"pure", "spiral", "rrrl"}));
  exec->add_option("--group", group)->required()->check(CLI::IsMember({"perfect", "uncertainty"}));
  exec->add_option("--trials", trials)->check(CLI::PositiveNumber);
  exec->add_option("--out", out)->required();
  exec->add_option("--seed", seed);

  auto* cmp = app.add_subcommand("compare-actions", "Random-policy action-set study");
  cmp->add_option("--config", cfg)->required();
  cmp->add_option("--seed", seed);
  cmp->add_option("--out", out)->required();

  auto* serve = app.add_subcommand("serve", "HTTP + WebSocket bridge");
  serve->add_option("--config", cfg)->required();
  serve->add_option("--port", port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*teach) return cmd_teach(cfg, script, out, seed);
    if (*train) return cmd_train(cfg, traj, out, log, seed);
    if (*exec) return cmd_execute(cfg, traj, policy, method, group, trials, out, seed);
    if (*cmp) return cmd_compare(cfg, out, seed);
    if (*serve) return tending_tools::run_server(config_or_exit(cfg), port);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
