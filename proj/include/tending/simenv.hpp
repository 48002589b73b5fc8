#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "transforms.hpp"
#include "wrench.hpp"

namespace tending {

/// Chamfered round hole, cylindrical peg held by a compliant suction cup, and
/// a low-pass filtered force/torque sensor. All lengths in meters.
///
/// The hole frame has its origin at the center of the hole mouth and its z
/// axis pointing into the hole, so "depth" is a positive z. The EE and peg
/// orientations are frozen to the hole orientation, which makes the EE frame
/// axes coincide with the hole frame axes: a positive Fz always pushes the
/// peg into the hole.
struct SceneConfig {
  Pose hole_pose{Vec3(0.5, 0.0, 0.05), Eigen::Quaterniond(0.0, 1.0, 0.0, 0.0)};
  double hole_radius = 0.0155;
  double peg_radius = 0.015;
  double chamfer_width = 0.001;
  double chamfer_angle = std::numbers::pi / 4;
  double hole_depth = 0.020;
  double success_depth = 0.010;
  double contact_stiffness = 2e4;        // k_n, N/m
  double contact_damping = 20.0;         // d_n, N·s/m
  double friction_mu = 0.3;
  double cup_lateral_stiffness = 5000.0;
  double cup_axial_stiffness = 10000.0;
  double peg_damping = 30.0;             // overdamped peg, N·s/m
  double sensor_noise_sigma = 0.05;      // N (torques use sigma · peg_radius)
  double filter_cutoff_hz = 9.37;
  double physics_dt = 0.001;
  double saturation_force = 200.0;
  double contact_tolerance = 0.001;      // admitted lateral interpenetration for the success test

  double clearance() const { return hole_radius - peg_radius; }
  double chamfer_depth() const { return chamfer_width * std::tan(chamfer_angle); }
};

inline void validate(const SceneConfig& s) {
  auto fail = [](const std::string& invariant) { raise(Errc::validation_error, "scene: " + invariant); };
  validate(s.hole_pose, "scene.hole_pose");
  if (!(s.peg_radius > 0)) fail("peg_radius > 0");
  if (!(s.hole_radius > s.peg_radius)) fail("positive clearance (hole_radius > peg_radius)");
  if (!(s.success_depth <= s.hole_depth)) fail("success_depth <= hole_depth");
  if (!(s.success_depth > 0)) fail("success_depth > 0");
  if (!(s.chamfer_width >= 0)) fail("chamfer_width >= 0");
  if (!(s.chamfer_angle > 0 && s.chamfer_angle < std::numbers::pi / 2)) fail("chamfer_angle in (0, pi/2)");
  if (!(s.contact_stiffness > 0 && s.cup_lateral_stiffness > 0 && s.cup_axial_stiffness > 0)) {
    fail("all stiffnesses > 0");
  }
  if (!(s.contact_damping >= 0)) fail("contact_damping >= 0");
  if (!(s.peg_damping > 0)) fail("peg_damping > 0");
  if (!(s.friction_mu >= 0)) fail("friction_mu >= 0");
  if (!(s.sensor_noise_sigma >= 0)) fail("sensor_noise_sigma >= 0");
  if (!(s.filter_cutoff_hz > 0)) fail("filter_cutoff_hz > 0");
  if (!(s.physics_dt > 0)) fail("physics_dt > 0");
  if (!(s.saturation_force > 0)) fail("saturation_force > 0");
  if (!(s.contact_tolerance >= 0)) fail("contact_tolerance >= 0");
}

struct SimState {
  Pose ee_command_pose;
  Pose peg_pose;
  Vec3 peg_velocity = Vec3::Zero();  // base frame
  Wrench raw_wrench;
  Wrench filtered_wrench;
  double max_abs_force_seen = 0.0;
  long step_count = 0;
  bool saturated = false;
  std::mt19937_64 rng;
};

// ---------------------------------------------------------------------------
// hole-frame helpers

inline Vec3 to_hole_frame(const SceneConfig& s, const Vec3& p_base) {
  return s.hole_pose.orientation.conjugate() * (p_base - s.hole_pose.position);
}

inline Vec3 vector_to_hole_frame(const SceneConfig& s, const Vec3& v_base) {
  return s.hole_pose.orientation.conjugate() * v_base;
}

inline Vec3 vector_to_base_frame(const SceneConfig& s, const Vec3& v_hole) { return s.hole_pose.orientation * v_hole; }

/// Pose whose peg tip sits at `p_hole` (hole frame) with the frozen orientation.
inline Pose pose_in_hole(const SceneConfig& s, const Vec3& p_hole) {
  return {s.hole_pose.transform_point(p_hole), s.hole_pose.orientation};
}

/// Peg tip centered on the hole axis, level with the hole mouth.
inline Pose hole_entrance_pose(const SceneConfig& s) { return pose_in_hole(s, Vec3::Zero()); }

// ---------------------------------------------------------------------------
// contact model

enum class ContactRegime { none, surface, bore };

/// Normal (non-friction) contact resultant acting on the peg, hole frame,
/// torque about the peg tip center.
struct NormalContact {
  ContactRegime regime = ContactRegime::none;
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
  double normal_load = 0.0;          // magnitude feeding Coulomb friction
  Vec3 friction_lever = Vec3::Zero();  // where friction acts, relative to the tip
  double contact_area = 0.0;         // surface regime only, m²
};

namespace detail {

template <int N>
struct GaussLegendre {
  std::array<double, N> x{};
  std::array<double, N> w{};
  GaussLegendre() {
    for (int i = 0; i < N; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
      double dp = 0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1, p1 = z;
        for (int k = 2; k <= N; ++k) {
          const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = N * (z * p1 - p0) / (z * z - 1);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-15) break;
      }
      x[i] = z;
      w[i] = 2 / ((1 - z * z) * dp * dp);
    }
  }
};

inline const GaussLegendre<12>& gauss12() {
  static const GaussLegendre<12> rule;
  return rule;
}

/// Half-angle of the arc of the circle |x| = rho (about the hole axis) that lies
/// inside the peg disc of radius r centered at distance e from the axis.
inline double arc_half_angle(double rho, double e, double r) {
  if (e < 1e-12) return rho < r ? std::numbers::pi : 0.0;
  if (rho <= r - e) return std::numbers::pi;
  if (rho >= r + e || rho <= e - r) return 0.0;
  const double c = (rho * rho + e * e - r * r) / (2 * rho * e);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace detail

/// Elastic normal contact for a peg tip at `tip` (hole frame).
///
/// Surface regime: every point of the bottom disc that lies below the
/// flat/chamfer profile is penalized along the local surface normal; the total
/// stiffness k_n is spread over the contact patch, so a fully supported peg
/// pressed by pen meters carries k_n·pen regardless of how large the patch is.
/// Because the profile is axisymmetric, the disc integral collapses to a 1-D
/// integral over radius with closed-form angular factors.
///
/// Bore regime (tip below the chamfer, entered through the mouth): radial wall
/// penalty k_n·(e + r_p − R_h) toward the axis, and a floor penalty.
inline NormalContact normal_contact(const SceneConfig& s, const Vec3& tip) {
  NormalContact out;
  const double z = tip.z();
  if (z <= 0.0) return out;

  const double rp = s.peg_radius;
  const double rh = s.hole_radius;
  const double ro = rh + s.chamfer_width;
  const double tan_c = std::tan(s.chamfer_angle);
  const double dc = s.chamfer_depth();
  const double k = s.contact_stiffness;
  const double e = std::hypot(tip.x(), tip.y());
  const Vec3 u = e > 1e-12 ? Vec3(tip.x() / e, tip.y() / e, 0.0) : Vec3(1.0, 0.0, 0.0);

  if (z > dc && e < ro - rp) {
    out.regime = ContactRegime::bore;
    const double pen_wall = e + rp - rh;
    if (pen_wall > 0) {
      const double engaged = std::max(std::min(z, s.hole_depth) - dc, 0.0);
      const double n = k * pen_wall;
      const Vec3 lever = rp * u - 0.5 * engaged * Vec3::UnitZ();
      const Vec3 f = -n * u;
      out.force += f;
      out.torque += lever.cross(f);
      out.normal_load = n;
      out.friction_lever = lever;
    }
    if (z > s.hole_depth) {
      out.force += Vec3(0, 0, -k * (z - s.hole_depth));
    }
    return out;
  }

  // Surface regime. Contact band in hole-axis radius.
  const double chamfer_start = tan_c > 0 ? ro - z / tan_c : ro;
  const double lo = std::max({rh, chamfer_start, e - rp});
  const double hi = rp + e;
  if (hi <= lo) return out;

  std::array<double, 5> cuts{lo, hi, ro, std::abs(rp - e), chamfer_start};
  std::sort(cuts.begin(), cuts.end());
  const auto& gl = detail::gauss12();
  const double sin_c = std::sin(s.chamfer_angle);
  const double cos_c = std::cos(s.chamfer_angle);

  double area = 0, fz = 0, flat_radial = 0, moment_fz = 0, first_moment = 0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = std::max(cuts[c], lo);
    const double b = std::min(cuts[c + 1], hi);
    if (b - a <= 1e-15) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double rho = mid + half * gl.x[i];
      const double wq = gl.w[i] * half;
      const double beta = detail::arc_half_angle(rho, e, rp);
      if (beta <= 0) continue;
      const bool on_chamfer = rho < ro;
      const double pen_v = on_chamfer ? z - (ro - rho) * tan_c : z;
      if (pen_v <= 0) continue;
      const double ct = on_chamfer ? cos_c : 1.0;
      const double st = on_chamfer ? sin_c : 0.0;
      const double pn = pen_v * ct;
      const double arc = 2 * beta * rho;                                   // ∫dψ · ρ
      const double arc_moment = 2 * (rho * std::sin(beta) - e * beta) * rho;  // ∫(x − p)·u dψ · ρ
      const double arc_radial = 2 * std::sin(beta) * rho;                  // ∫ r̂·u dψ · ρ
      area += wq * arc;
      fz += wq * pn * ct * arc;
      moment_fz += wq * pn * ct * arc_moment;
      flat_radial += wq * pn * st * arc_radial;
      first_moment += wq * arc_moment;
    }
  }
  if (area <= 0) return out;

  const double kappa = k / area;
  out.regime = ContactRegime::surface;
  out.contact_area = area;
  const double support = kappa * fz;  // upward, i.e. along −z
  out.force = Vec3(0, 0, -support) - kappa * flat_radial * u;
  // τ_xy = f_z·(r_y, −r_x) integrated, with f_z = −κ·pn·cosθ and r along u.
  const Vec3 m = -kappa * moment_fz * u;
  out.torque = Vec3(m.y(), -m.x(), 0.0);
  out.normal_load = support;
  out.friction_lever = (first_moment / area) * u;
  return out;
}

struct ContactResult {
  Wrench wrench;  // on the peg, frame e
  ContactRegime regime = ContactRegime::none;
  bool saturated = false;
};

namespace detail {

inline double damped_scale(double elastic, double into_velocity, double damping) {
  if (elastic <= 0) return 0.0;
  return std::max(0.0, elastic + damping * into_velocity) / elastic;
}

inline bool saturate(Vec3& force, Vec3& torque, double limit) {
  const double n = force.norm();
  if (n <= limit) return false;
  const double f = limit / n;
  force *= f;
  torque *= f;
  return true;
}

}  // namespace detail

/// Contact wrench on the peg (frame e) for a given tip pose and velocity:
/// damped normal penalty plus kinetic Coulomb friction opposing slip.
inline ContactResult contact_wrench(const SceneConfig& scene, const Pose& peg_pose, const Vec3& peg_velocity) {
  const Vec3 tip = to_hole_frame(scene, peg_pose.position);
  const Vec3 v = vector_to_hole_frame(scene, peg_velocity);
  NormalContact nc = normal_contact(scene, tip);
  ContactResult out;
  out.regime = nc.regime;
  out.wrench = Wrench::zero(FrameTag::e);
  if (nc.regime == ContactRegime::none) return out;

  Vec3 force = nc.force, torque = nc.torque;
  double load = nc.normal_load;
  Vec3 friction = Vec3::Zero();
  if (nc.regime == ContactRegime::surface) {
    const double sc = detail::damped_scale(nc.normal_load, v.z(), scene.contact_damping);
    force *= sc;
    torque *= sc;
    load *= sc;
    const Vec3 slip(v.x(), v.y(), 0.0);
    if (slip.norm() > 1e-9) friction = -scene.friction_mu * load * slip.normalized();
  } else {
    const double e = std::hypot(tip.x(), tip.y());
    const Vec3 u = e > 1e-12 ? Vec3(tip.x() / e, tip.y() / e, 0.0) : Vec3(1.0, 0.0, 0.0);
    const double sc = detail::damped_scale(nc.normal_load, v.dot(u), scene.contact_damping);
    const Vec3 wall = nc.force.dot(u) * u;
    force += (sc - 1.0) * wall;
    torque = nc.friction_lever.cross(sc * wall);
    load *= sc;
    if (std::abs(v.z()) > 1e-9) friction = Vec3(0, 0, -scene.friction_mu * load * (v.z() > 0 ? 1.0 : -1.0));
  }
  force += friction;
  torque += nc.friction_lever.cross(friction);
  out.saturated = detail::saturate(force, torque, scene.saturation_force);
  out.wrench = {force, torque, FrameTag::e};
  return out;
}

// ---------------------------------------------------------------------------
// episode dynamics

inline SimState reset(const SceneConfig& scene, const Pose& start_pose, std::uint64_t seed) {
  validate(scene);
  validate(start_pose, "start pose");
  SimState st;
  st.ee_command_pose = {start_pose.position, scene.hole_pose.orientation};
  st.peg_pose = st.ee_command_pose;
  st.raw_wrench = Wrench::zero();
  st.filtered_wrench = Wrench::zero();
  st.rng.seed(seed);
  // Touching within round-off (a pose computed to sit on a surface) is allowed.
  const ContactResult c = contact_wrench(scene, st.peg_pose, Vec3::Zero());
  if (c.wrench.force.norm() > 1e-6) {
    raise(Errc::initial_penetration, "start pose penetrates the environment (contact force " +
                                         std::to_string(c.wrench.force.norm()) + " N)");
  }
  return st;
}

inline double filter_coefficient(double cutoff_hz, double dt) {
  return 1.0 - std::exp(-2.0 * std::numbers::pi * cutoff_hz * dt);
}

/// One physics tick. The cup is a diagonal spring between the commanded EE
/// and the peg; the peg moves quasi-statically (velocity = net force / b) with
/// the cup spring treated implicitly and stick/slip Coulomb friction decided
/// from the applied tangential load.
inline void step_in_place(SimState& st, const SceneConfig& scene, const Pose& ee_target, double dt) {
  st.ee_command_pose = {ee_target.position, scene.hole_pose.orientation};
  const Vec3 ee = to_hole_frame(scene, ee_target.position);
  const Vec3 tip = to_hole_frame(scene, st.peg_pose.position);
  const Vec3 v_prev = vector_to_hole_frame(scene, st.peg_velocity);
  const Vec3 stiffness(scene.cup_lateral_stiffness, scene.cup_lateral_stiffness, scene.cup_axial_stiffness);
  const Vec3 stretch = ee - tip;
  const Vec3 spring = stiffness.cwiseProduct(stretch);
  const double b = scene.peg_damping;
  const double mu = scene.friction_mu;

  NormalContact nc = normal_contact(scene, tip);
  Vec3 normal = nc.force;
  Vec3 ntorque = nc.torque;
  double load = nc.normal_load;
  Vec3 friction = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  const Vec3 denom = Vec3::Constant(b) + stiffness * dt;

  if (nc.regime == ContactRegime::surface) {
    const double sc = detail::damped_scale(load, v_prev.z(), scene.contact_damping);
    normal *= sc;
    ntorque *= sc;
    load *= sc;
  } else if (nc.regime == ContactRegime::bore && load > 0) {
    const double e = std::hypot(tip.x(), tip.y());
    const Vec3 u = e > 1e-12 ? Vec3(tip.x() / e, tip.y() / e, 0.0) : Vec3(1.0, 0.0, 0.0);
    const double sc = detail::damped_scale(load, v_prev.dot(u), scene.contact_damping);
    const Vec3 wall = nc.force.dot(u) * u;
    normal += (sc - 1.0) * wall;
    ntorque = nc.friction_lever.cross(sc * wall);
    load *= sc;
  }
  st.saturated = detail::saturate(normal, ntorque, scene.saturation_force);

  const Vec3 applied = spring + normal;
  if (nc.regime == ContactRegime::surface) {
    const Eigen::Vector2d tangential = applied.head<2>();
    const double limit = mu * load;
    if (tangential.norm() <= limit) {
      friction.head<2>() = -tangential;
    } else {
      friction.head<2>() = -limit * tangential.normalized();
      v.head<2>() = (tangential + friction.head<2>()).cwiseQuotient(denom.head<2>());
    }
    v.z() = applied.z() / denom.z();
  } else if (nc.regime == ContactRegime::bore) {
    v.head<2>() = applied.head<2>().cwiseQuotient(denom.head<2>());
    const double limit = mu * load;
    if (std::abs(applied.z()) <= limit) {
      friction.z() = -applied.z();
    } else {
      friction.z() = applied.z() > 0 ? -limit : limit;
      v.z() = (applied.z() + friction.z()) / denom.z();
    }
  } else {
    v = applied.cwiseQuotient(denom);
  }

  const Vec3 new_tip = tip + v * dt;
  st.peg_pose = pose_in_hole(scene, new_tip);
  st.peg_velocity = vector_to_base_frame(scene, v);

  // The cup carries the spring force; the frozen orientation means it also
  // carries whatever moment the contact exerts about the tip.
  const Vec3 contact_torque = ntorque + nc.friction_lever.cross(friction);
  st.raw_wrench = {spring, -contact_torque, FrameTag::e};

  const double a = filter_coefficient(scene.filter_cutoff_hz, dt);
  st.filtered_wrench.force += a * (st.raw_wrench.force - st.filtered_wrench.force);
  st.filtered_wrench.torque += a * (st.raw_wrench.torque - st.filtered_wrench.torque);
  st.filtered_wrench.frame = FrameTag::e;
  st.max_abs_force_seen = std::max(st.max_abs_force_seen, st.filtered_wrench.force.norm());
  ++st.step_count;
}

inline SimState step(SimState state, const SceneConfig& scene, const Pose& ee_target, double dt) {
  step_in_place(state, scene, ee_target, dt);
  return state;
}

/// Filtered wrench plus zero-mean Gaussian noise drawn from the state's RNG.
inline Wrench sensor_read(SimState& state, const SceneConfig& scene) {
  Wrench w = state.filtered_wrench;
  const double sigma = scene.sensor_noise_sigma;
  if (sigma > 0) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < 3; ++i) w.force[i] += sigma * noise(state.rng);
    for (int i = 0; i < 3; ++i) w.torque[i] += sigma * scene.peg_radius * noise(state.rng);
  }
  w.frame = FrameTag::e;
  return w;
}

inline double insertion_depth(const SimState& state, const SceneConfig& scene) {
  return to_hole_frame(scene, state.peg_pose.position).z();
}

inline double lateral_offset(const SimState& state, const SceneConfig& scene) {
  const Vec3 tip = to_hole_frame(scene, state.peg_pose.position);
  return std::hypot(tip.x(), tip.y());
}

/// Inserted deep enough (inclusive) and laterally inside the bore. The lateral
/// test admits the interpenetration the penalty walls allow.
inline bool check_success(const SimState& state, const SceneConfig& scene) {
  return insertion_depth(state, scene) >= scene.success_depth &&
         lateral_offset(state, scene) <= scene.clearance() + scene.contact_tolerance;
}

}  // namespace tending
