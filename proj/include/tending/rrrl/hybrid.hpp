#pragma once

#include <cmath>
#include <variant>

#include "../control.hpp"
#include "../error.hpp"
#include "../simenv.hpp"
#include "../transforms.hpp"
#include "../wrench.hpp"

namespace tending::rrrl {

inline constexpr int kNumActions = 4;

/// Discrete force actions: +Fz always, the four sign combinations of Fx/Fy,
/// zero torques.
inline Wrench action_to_wrench(int a, double amplitude) {
  static constexpr int sx[kNumActions] = {+1, +1, -1, -1};
  static constexpr int sy[kNumActions] = {+1, -1, +1, -1};
  if (a < 0 || a >= kNumActions) raise(Errc::out_of_range, "action index " + std::to_string(a) + " out of range");
  return {Vec3(sx[a] * amplitude, sy[a] * amplitude, amplitude), Vec3::Zero(), FrameTag::e};
}

/// 1 inside the open ball of radius D around the (uncertain) final pose.
inline int alpha_switch(const Pose& cp, const Pose& dfp, double region_radius) {
  if (!(region_radius > 0)) raise(Errc::out_of_range, "region radius must be positive");
  return translation_distance(cp, dfp) < region_radius ? 1 : 0;
}

struct ForceCommand {
  Wrench desired;
};
struct PositionCommand {
  Pose increment;
};
using PlantCommand = std::variant<PositionCommand, ForceCommand>;

/// The convex blend (1−α)·a_H + α·a_RL with binary α: exactly one arm reaches
/// the plant.
inline PlantCommand hybrid_action(int alpha, const Pose& a_h, const Wrench& a_rl) {
  if (alpha == 1) return ForceCommand{a_rl};
  return PositionCommand{a_h};
}

/// 1 − k/k_max on success, otherwise minus the distance to the true target (m).
inline double reward(bool success, int k_steps, int k_max, const Pose& cp, const Pose& dfp) {
  if (success) return 1.0 - static_cast<double>(k_steps) / k_max;
  return -translation_distance(cp, dfp);
}

/// Drives the simulator at physics rate for one decision period per command.
/// EE motion goes through the admittance law and the constraint box.
class Plant {
 public:
  Plant(SceneConfig scene, AdmittanceGains gains, ConstraintBox box, double decision_period, const Pose& start,
        std::uint64_t seed)
      : scene_(std::move(scene)),
        gains_(gains),
        box_(box.with_delta(scene_.physics_dt)),
        ticks_(std::max(1, static_cast<int>(std::lround(decision_period / scene_.physics_dt)))),
        state_(tending::reset(scene_, start, seed)),
        q_(config_from_pose(state_.ee_command_pose, scene_.hole_pose.orientation)) {}

  const SimState& state() const { return state_; }
  SimState& state() { return state_; }
  const SceneConfig& scene() const { return scene_; }
  Pose current_pose() const { return state_.ee_command_pose; }
  bool success() const { return success_; }
  int ticks_per_decision() const { return ticks_; }

  Wrench observe() { return sensor_read(state_, scene_); }

  /// Runs one decision period; stops early on success. Returns success.
  bool apply(const PlantCommand& cmd) {
    if (const auto* f = std::get_if<ForceCommand>(&cmd)) {
      for (int i = 0; i < ticks_ && !success_; ++i) force_tick(f->desired);
    } else {
      const auto& p = std::get<PositionCommand>(cmd);
      Vec6 goal = q_;
      goal.head<3>() += p.increment.position;
      for (int i = 0; i < ticks_ && !success_; ++i) {
        const double remaining = (ticks_ - i) * scene_.physics_dt;
        position_tick((goal - q_) / remaining);
      }
    }
    return success_;
  }

  /// Force tick with a desired wrench (frame e) through the admittance law.
  void force_tick(const Wrench& desired) {
    const Wrench measured = sensor_read(state_, scene_);
    const Vec6 twist_e = admittance_step(desired, measured, gains_);
    position_tick(twist_to_base(twist_e));
  }

  /// Commands a base-frame configuration rate for one tick.
  void position_tick(const Vec6& qdot) {
    q_ = clamp_and_integrate(q_, qdot, box_);
    step_in_place(state_, scene_, pose_from_config(q_, scene_.hole_pose.orientation), scene_.physics_dt);
    success_ = success_ || check_success(state_, scene_);
  }

  Vec6 twist_to_base(const Vec6& twist_e) const {
    const Mat3 r = scene_.hole_pose.rotation_matrix();
    Vec6 out;
    out << r * twist_e.head<3>(), r * twist_e.tail<3>();
    return out;
  }

  const Vec6& config() const { return q_; }

 private:
  SceneConfig scene_;
  AdmittanceGains gains_;
  ConstraintBox box_;
  int ticks_;
  SimState state_;
  Vec6 q_;
  bool success_ = false;
};

}  // namespace tending::rrrl
