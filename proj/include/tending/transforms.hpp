#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "error.hpp"

namespace tending {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Frames of the tending cell: end effector, camera, robot base, target object.
enum class FrameTag { e, c, b, o };

constexpr std::string_view to_string(FrameTag f) {
  switch (f) {
    case FrameTag::e: return "e";
    case FrameTag::c: return "c";
    case FrameTag::b: return "b";
    case FrameTag::o: return "o";
  }
  return "?";
}

inline void expect_frame(FrameTag expected, FrameTag actual, std::string_view what) {
  if (expected != actual) {
    raise(Errc::frame_mismatch, std::string(what) + ": expected frame " + std::string(to_string(expected)) +
                                    ", got " + std::string(to_string(actual)));
  }
}

/// Rigid transform in parent-from-child convention: a pose `a_x_b` maps points
/// expressed in frame b into frame a, so chains read left to right.
struct Pose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose identity() { return {}; }
  static Pose translation(double x, double y, double z) { return {Vec3(x, y, z), Eigen::Quaterniond::Identity()}; }
  static Pose translation(const Vec3& t) { return {t, Eigen::Quaterniond::Identity()}; }
  static Pose rotation(const Vec3& axis, double angle) {
    return {Vec3::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized()))};
  }

  Vec3 transform_point(const Vec3& p) const { return orientation * p + position; }
  Mat3 rotation_matrix() const { return orientation.toRotationMatrix(); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_matrix();
    m.topRightCorner<3, 1>() = position;
    return m;
  }

  static Pose from_matrix(const Mat4& m) {
    Pose p;
    p.position = m.topRightCorner<3, 1>();
    p.orientation = Eigen::Quaterniond(Mat3(m.topLeftCorner<3, 3>())).normalized();
    return p;
  }

  bool operator==(const Pose& o) const {
    return position == o.position && orientation.coeffs() == o.orientation.coeffs();
  }
};

constexpr double kPoseNormTolerance = 1e-6;

inline void validate(const Pose& p, std::string_view what = "pose") {
  const double n = p.orientation.norm();
  if (!std::isfinite(n) || !p.position.allFinite() || std::abs(n - 1.0) > kPoseNormTolerance) {
    raise(Errc::invalid_pose, std::string(what) + ": quaternion norm " + std::to_string(n) + " is not unit");
  }
}

/// Returns a∘b: applies b, then a. The quaternion is renormalized so long
/// chains do not drift.
inline Pose compose(const Pose& a, const Pose& b) {
  validate(a, "compose lhs");
  validate(b, "compose rhs");
  Pose out;
  out.orientation = (a.orientation * b.orientation).normalized();
  out.position = a.position + a.orientation * b.position;
  return out;
}

inline Pose inverse(const Pose& a) {
  validate(a, "inverse");
  Pose out;
  out.orientation = a.orientation.conjugate().normalized();
  out.position = -(out.orientation * a.position);
  return out;
}

/// Object pose in the camera frame recorded at the visual-servoing pose:
/// c_x_o = c_x_e · (b_x_dvsp)⁻¹ · b_x_dgp.
inline Pose relative_object_pose(const Pose& c_x_e, const Pose& b_x_dvsp, const Pose& b_x_dgp) {
  return compose(compose(c_x_e, inverse(b_x_dvsp)), b_x_dgp);
}

/// Desired final pose from the end-of-trajectory EE pose and the observed
/// object: DFP = b_x_e · e_x_c · c_x_o.
inline Pose compute_dfp(const Pose& b_x_e, const Pose& e_x_c, const Pose& c_x_o) {
  return compose(compose(b_x_e, e_x_c), c_x_o);
}

/// Position-only distance; orientation is ignored.
inline double translation_distance(const Pose& a, const Pose& b) { return (a.position - b.position).norm(); }

/// Geodesic angle between two orientations (radians).
inline double rotation_distance(const Pose& a, const Pose& b) {
  return a.orientation.angularDistance(b.orientation);
}

// Serialized as [px, py, pz, qw, qx, qy, qz].
inline nlohmann::json pose_to_json(const Pose& p) {
  const auto& q = p.orientation;
  return nlohmann::json::array({p.position.x(), p.position.y(), p.position.z(), q.w(), q.x(), q.y(), q.z()});
}

inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 7) raise(Errc::parse_error, "pose must be an array of 7 numbers");
  std::array<double, 7> v{};
  for (std::size_t i = 0; i < 7; ++i) {
    if (!j[i].is_number()) raise(Errc::parse_error, "pose entries must be numbers");
    v[i] = j[i].get<double>();
  }
  Pose p{Vec3(v[0], v[1], v[2]), Eigen::Quaterniond(v[3], v[4], v[5], v[6])};
  validate(p, "serialized pose");
  return p;
}

}  // namespace tending
