#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "../control.hpp"
#include "../error.hpp"
#include "../simenv.hpp"
#include "../transforms.hpp"
#include "../wrench.hpp"
#include "hybrid.hpp"
#include "qnetwork.hpp"
#include "replay.hpp"

namespace tending::rrrl {

struct RrrlConfig {
  double region_radius = 0.012;  // D
  double force_amplitude = 10.0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  int epsilon_anneal_episodes = 100;
  int replay_capacity = 20000;
  int episodes = 200;
  int k_max = 50;
  int batch = 64;
  double discount = 0.5;
  int updates_per_step = 1;    // C1
  int target_sync_steps = 500;  // C2
  int warmup = 500;
  double learn_rate = 1e-3;
  double per_alpha = 0.6;
  double per_beta_start = 0.4;
  double per_beta_end = 1.0;
  double decision_period = 0.1;
  double delta_p_min = 0.002;
  double delta_p_max = 0.004;
  double fixed_policy_step = 0.002;
  int hidden = 64;
  int snapshot_every = 10;
};

inline void validate(const RrrlConfig& c) {
  auto fail = [](const std::string& what) { raise(Errc::validation_error, "rrrl: " + what); };
  if (!(c.discount > 0 && c.discount <= 1)) fail("0 < discount <= 1");
  if (!(c.delta_p_min >= 0 && c.delta_p_min <= c.delta_p_max)) fail("0 <= delta_p_min <= delta_p_max");
  if (!(c.region_radius >= 2 * c.delta_p_max)) fail("region radius D >= 2 * delta_p_max");
  if (!(c.replay_capacity >= c.batch)) fail("replay capacity >= batch");
  if (!(c.batch > 0)) fail("batch > 0");
  if (!(c.force_amplitude > 0)) fail("force_amplitude > 0");
  if (!(c.k_max > 0 && c.episodes >= 0)) fail("k_max > 0 and episodes >= 0");
  if (!(c.epsilon_start >= 0 && c.epsilon_start <= 1 && c.epsilon_end >= 0 && c.epsilon_end <= 1)) {
    fail("epsilon in [0, 1]");
  }
  if (!(c.epsilon_anneal_episodes >= 0)) fail("epsilon_anneal_episodes >= 0");
  if (!(c.updates_per_step >= 0 && c.target_sync_steps > 0)) fail("C1 >= 0 and C2 > 0");
  if (!(c.learn_rate > 0)) fail("learn_rate > 0");
  if (!(c.per_alpha >= 0 && c.per_beta_start >= 0 && c.per_beta_end >= 0)) fail("per exponents >= 0");
  if (!(c.decision_period > 0)) fail("decision_period > 0");
  if (!(c.fixed_policy_step > 0)) fail("fixed_policy_step > 0");
  if (!(c.hidden > 0)) fail("hidden > 0");
  if (!(c.warmup >= 0 && c.snapshot_every >= 0)) fail("warmup >= 0 and snapshot_every >= 0");
}

inline std::vector<int> layer_sizes(const RrrlConfig& c) { return {6, c.hidden, c.hidden, kNumActions}; }

/// Network input: forces over the amplitude, torques over amplitude × peg radius.
inline Vec6 normalize_state(const Wrench& w, double amplitude, double peg_radius) {
  expect_frame(FrameTag::e, w.frame, "state wrench");
  Vec6 s;
  s << w.force / amplitude, w.torque / (amplitude * peg_radius);
  return s;
}

inline double epsilon_at(const RrrlConfig& c, int episode) {
  if (c.epsilon_anneal_episodes <= 0) return c.epsilon_end;
  const double f = std::min(1.0, static_cast<double>(episode) / c.epsilon_anneal_episodes);
  return c.epsilon_start + f * (c.epsilon_end - c.epsilon_start);
}

inline double beta_at(const RrrlConfig& c, int episode) {
  if (c.episodes <= 1) return c.per_beta_end;
  const double f = std::min(1.0, static_cast<double>(episode) / (c.episodes - 1));
  return c.per_beta_start + f * (c.per_beta_end - c.per_beta_start);
}

/// Uncertain target: the nominal pose shifted by |δP| ∈ [lo, hi] at a uniform
/// angle in the hole plane.
inline Pose perturb_target(const SceneConfig& scene, const Pose& nominal, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = lo + (hi - lo) * u(rng);
  const double th = 2 * std::numbers::pi * u(rng);
  const Vec3 d = scene.hole_pose.orientation * Vec3(r * std::cos(th), r * std::sin(th), 0.0);
  return {nominal.position + d, nominal.orientation};
}

struct TdResult {
  double loss = 0;
  std::vector<double> td_errors;
  std::vector<double> priorities;
};

inline constexpr double kPriorityFloor = 1e-3;

/// Double-DQN targets y = r (terminal) or r + λ·Q_t(s′, argmax Q(s′)), one Adam
/// step on the importance-weighted squared TD error, new priorities |δ|+floor.
inline TdResult td_update(QNetwork& net, const QNetwork& target, AdamState& opt, const std::vector<Transition>& batch,
                          const std::vector<double>& weights, double discount) {
  if (batch.empty() || weights.size() != batch.size()) raise(Errc::out_of_range, "td_update batch/weights mismatch");
  Gradients g = Gradients::zeros_like(net);
  TdResult out;
  const double n = static_cast<double>(batch.size());
  ForwardCache cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = batch[i];
    double y = t.r;
    if (!t.terminal) {
      const int a_star = argmax(q_forward(net, t.s_next));
      y += discount * q_forward(target, t.s_next)[a_star];
    }
    const VecX q = q_forward(net, t.s, &cache);
    const double delta = y - q[t.a];
    out.loss += weights[i] * delta * delta / n;
    VecX d_out = VecX::Zero(q.size());
    d_out[t.a] = -2.0 * weights[i] * delta / n;
    q_backward(net, cache, d_out, g);
    out.td_errors.push_back(delta);
    out.priorities.push_back(std::abs(delta) + kPriorityFloor);
  }
  if (!std::isfinite(out.loss)) {
    raise(Errc::non_finite, "td_update: non-finite loss over a batch of " + std::to_string(batch.size()));
  }
  adam_step(net, opt, g);
  return out;
}

struct Policy {
  int version = 1;
  QNetwork net;
  RrrlConfig config;
  std::uint64_t seed = 0;

  int act(const Wrench& w, double peg_radius) const {
    return argmax(q_forward(net, normalize_state(w, config.force_amplitude, peg_radius)));
  }
};

struct EpisodeLog {
  int episode = 0;
  double ret = 0;
  int steps = 0;
  bool success = false;
  double max_force = 0;
};

inline nlohmann::json to_json(const EpisodeLog& e) {
  return {{"episode", e.episode}, {"return", e.ret}, {"steps", e.steps}, {"success", e.success},
          {"max_force", e.max_force}};
}

/// Everything an episode needs from the environment side.
struct TaskSetup {
  SceneConfig scene;
  AdmittanceGains gains;
  ConstraintBox box;
  Pose dfp;       // taught target, before corruption
  Pose dfp_true;  // reward reference
};

inline void validate(const TaskSetup& t) {
  validate(t.scene);
  validate(t.gains);
  validate(t.box);
  validate(t.dfp, "dfp");
  validate(t.dfp_true, "dfp_true");
}

/// Outcome of one hybrid rollout.
struct RolloutResult {
  bool success = false;
  int steps = 0;
  double ret = 0;
  double max_force = 0;
  double max_commanded = 0;  // largest commanded force component
  double final_error = 0;    // lateral peg offset from the hole axis
  bool region_violation = false;  // a force command outside the region
};

using ActionChooser = std::function<int(const Vec6& state)>;
using TransitionSink = std::function<void(const Transition&)>;

/// One episode of the switched policy from `start`; `choose` picks force
/// actions inside the region, `sink` receives the learned-arm transitions.
inline RolloutResult hybrid_rollout(const TaskSetup& task, const RrrlConfig& cfg, const Pose& start,
                                    const Pose& dfp_uncertain, std::uint64_t seed, const ActionChooser& choose,
                                    const TransitionSink& sink = {},
                                    const std::vector<Wrench>* action_set = nullptr) {
  Plant plant(task.scene, task.gains, task.box, cfg.decision_period, start, seed);
  RolloutResult out;
  Vec6 s = normalize_state(plant.observe(), cfg.force_amplitude, task.scene.peg_radius);
  for (int k = 0; k < cfg.k_max; ++k) {
    const Pose cp = plant.current_pose();
    const int alpha = alpha_switch(cp, dfp_uncertain, cfg.region_radius);
    int a = -1;
    Wrench desired = Wrench::zero();
    if (alpha == 1) {
      a = choose(s);
      desired = action_set ? action_set->at(a) : action_to_wrench(a, cfg.force_amplitude);
      out.max_commanded = std::max(out.max_commanded, desired.vector().cwiseAbs().maxCoeff());
      if (!(translation_distance(cp, dfp_uncertain) < cfg.region_radius)) out.region_violation = true;
    }
    const bool ok =
        plant.apply(hybrid_action(alpha, fixed_policy_step(cp, dfp_uncertain, cfg.fixed_policy_step), desired));
    const Vec6 s_next = normalize_state(plant.observe(), cfg.force_amplitude, task.scene.peg_radius);
    const double r = reward(ok, k + 1, cfg.k_max, plant.current_pose(), task.dfp_true);
    out.ret += r;
    out.steps = k + 1;
    if (alpha == 1 && sink) sink({s, a, r, s_next, ok});
    s = s_next;
    if (ok) {
      out.success = true;
      break;
    }
  }
  out.max_force = plant.state().max_abs_force_seen;
  out.final_error = lateral_offset(plant.state(), task.scene);
  return out;
}

struct TrainResult {
  Policy policy;
  std::vector<EpisodeLog> log;
};

using EpisodeCallback = std::function<void(const EpisodeLog&, const Policy&)>;

/// Algorithm: ε-greedy double DQN with proportional replay, trained only on
/// decisions taken inside the region.
inline TrainResult train(const TaskSetup& task, const RrrlConfig& cfg, std::uint64_t seed,
                         const EpisodeCallback& on_episode = {}) {
  validate(task);
  validate(cfg);
  std::mt19937_64 rng(seed);
  TrainResult out;
  out.policy.config = cfg;
  out.policy.seed = seed;
  out.policy.net = QNetwork::random(layer_sizes(cfg), rng);
  QNetwork target = out.policy.net;
  AdamState opt = AdamState::for_network(out.policy.net, cfg.learn_rate);
  ReplayMemory mem(static_cast<std::size_t>(cfg.replay_capacity), cfg.per_alpha);
  long global_step = 0;

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const double eps = epsilon_at(cfg, ep);
    const double beta = beta_at(cfg, ep);
    const Pose dfp_unc = perturb_target(task.scene, task.dfp, cfg.delta_p_min, cfg.delta_p_max, rng);
    const std::uint64_t env_seed = rng();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> ua(0, kNumActions - 1);

    auto choose = [&](const Vec6& s) {
      if (u01(rng) < eps) return ua(rng);
      return argmax(q_forward(out.policy.net, s));
    };
    auto sink = [&](const Transition& t) {
      mem.insert(t);
      if (mem.size() >= static_cast<std::size_t>(std::max(cfg.warmup, cfg.batch))) {
        for (int c = 0; c < cfg.updates_per_step; ++c) {
          const SampledBatch b = mem.sample(static_cast<std::size_t>(cfg.batch), beta, rng);
          const TdResult td = td_update(out.policy.net, target, opt, b.transitions, b.weights, cfg.discount);
          for (std::size_t i = 0; i < b.indices.size(); ++i) mem.update_priority(b.indices[i], td.priorities[i]);
        }
      }
      if (++global_step % cfg.target_sync_steps == 0) target = out.policy.net;
    };
    const RolloutResult r = hybrid_rollout(task, cfg, dfp_unc, dfp_unc, env_seed, choose, sink);
    EpisodeLog e{ep, r.ret, r.steps, r.success, r.max_force};
    out.log.push_back(e);
    if (on_episode) on_episode(e, out.policy);
  }
  return out;
}

/// Greedy switched rollout from the uncertain target.
inline RolloutResult execute(const TaskSetup& task, const Policy& policy, const Pose& dfp_uncertain,
                             std::uint64_t seed) {
  auto greedy = [&](const Vec6& s) { return argmax(q_forward(policy.net, s)); };
  return hybrid_rollout(task, policy.config, dfp_uncertain, dfp_uncertain, seed, greedy);
}

}  // namespace tending::rrrl
