#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "error.hpp"
#include "transforms.hpp"
#include "wrench.hpp"

namespace tending {

/// Box limits on the 6-D task-space configuration q = [x, y, z, rx, ry, rz]
/// (base-frame position and rotation vector relative to a nominal
/// orientation) and on its rate, plus the Euler step q_{k+1} = q_k + δ·q̇_k.
struct ConstraintBox {
  Vec6 q_min = (Vec6() << -1.0, -1.0, -0.5, -std::numbers::pi, -std::numbers::pi, -std::numbers::pi).finished();
  Vec6 q_max = (Vec6() << 1.0, 1.0, 1.5, std::numbers::pi, std::numbers::pi, std::numbers::pi).finished();
  Vec6 qdot_min = (Vec6() << -0.05, -0.05, -0.05, -0.5, -0.5, -0.5).finished();
  Vec6 qdot_max = (Vec6() << 0.05, 0.05, 0.05, 0.5, 0.5, 0.5).finished();
  double delta = 0.01;

  ConstraintBox with_delta(double d) const {
    ConstraintBox b = *this;
    b.delta = d;
    return b;
  }
};

inline void validate(const ConstraintBox& b) {
  if (!((b.q_min.array() < b.q_max.array()).all())) raise(Errc::validation_error, "box: q_min < q_max");
  if (!((b.qdot_min.array() < b.qdot_max.array()).all())) {
    raise(Errc::validation_error, "box: qdot_min < qdot_max");
  }
  if (!(b.delta > 0)) raise(Errc::validation_error, "box: delta > 0");
}

struct AdmittanceGains {
  Vec6 gain = (Vec6() << 0.002, 0.002, 0.002, 0.0, 0.0, 0.0).finished();
};

inline void validate(const AdmittanceGains& g) {
  if (!((g.gain.array() >= 0).all())) raise(Errc::validation_error, "gains: all >= 0");
}

struct SpiralParams {
  double pitch = 0.0005;  // m/rev
  double angular_rate = 4 * std::numbers::pi;
  double push_force = 10.0;
  double max_radius = 0.006;
};

inline void validate(const SpiralParams& p) {
  if (!(p.pitch > 0)) raise(Errc::validation_error, "spiral: pitch > 0");
  if (!(p.max_radius > 0)) raise(Errc::validation_error, "spiral: max_radius > 0");
  if (!(p.angular_rate > 0)) raise(Errc::validation_error, "spiral: angular_rate > 0");
}

/// twist = gain ⊙ (f_desired − f_measured), frame e.
inline Vec6 admittance_step(const Wrench& f_desired, const Wrench& f_measured, const AdmittanceGains& gains) {
  expect_frame(FrameTag::e, f_desired.frame, "admittance desired wrench");
  expect_frame(FrameTag::e, f_measured.frame, "admittance measured wrench");
  return gains.gain.cwiseProduct(f_desired.vector() - f_measured.vector());
}

inline Vec6 clamp_and_integrate(const Vec6& q, const Vec6& qdot, const ConstraintBox& box) {
  const Vec6 rate = qdot.cwiseMax(box.qdot_min).cwiseMin(box.qdot_max);
  return (q + box.delta * rate).cwiseMax(box.q_min).cwiseMin(box.q_max);
}

/// Position step toward `target` of length min(distance, max_step); the
/// orientation is left untouched.
inline Pose fixed_policy_step(const Pose& cp, const Pose& target, double max_step) {
  if (!(max_step > 0)) raise(Errc::out_of_range, "fixed policy: max_step must be positive");
  const Vec3 d = target.position - cp.position;
  const double n = d.norm();
  if (n <= max_step) return Pose::translation(d);
  return Pose::translation(d * (max_step / n));
}

/// Archimedean spiral r = pitch·θ/2π, θ = rate·t, radius capped.
inline Eigen::Vector2d spiral_offset(const SpiralParams& p, double t) {
  if (t < 0) raise(Errc::out_of_range, "spiral: t must be non-negative");
  const double theta = p.angular_rate * t;
  const double r = std::min(p.pitch * theta / (2 * std::numbers::pi), p.max_radius);
  return {r * std::cos(theta), r * std::sin(theta)};
}

// Task-space configuration <-> pose, relative to a nominal orientation.
inline Vec6 config_from_pose(const Pose& p, const Eigen::Quaterniond& nominal) {
  const Eigen::AngleAxisd aa(p.orientation * nominal.conjugate());
  Vec6 q;
  q << p.position, aa.angle() * aa.axis();
  return q;
}

inline Pose pose_from_config(const Vec6& q, const Eigen::Quaterniond& nominal) {
  const Vec3 rv = q.tail<3>();
  const double angle = rv.norm();
  const Eigen::Quaterniond r = angle > 1e-15 ? Eigen::Quaterniond(Eigen::AngleAxisd(angle, rv / angle))
                                             : Eigen::Quaterniond::Identity();
  return {q.head<3>(), (r * nominal).normalized()};
}

}  // namespace tending
