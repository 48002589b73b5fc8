#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "control.hpp"
#include "error.hpp"
#include "simenv.hpp"
#include "transforms.hpp"

namespace tending {

/// Pinhole camera with intrinsics in pixels and the EE-from-camera extrinsic.
struct CameraModel {
  double fx = 920.0;
  double fy = 920.0;
  double cx = 640.0;
  double cy = 360.0;
  Pose e_x_c{Vec3(0.0, 0.03, -0.10), Eigen::Quaterniond::Identity()};
};

inline void validate(const CameraModel& c) {
  if (!(c.fx > 0 && c.fy > 0)) raise(Errc::validation_error, "camera: fx, fy > 0");
  validate(c.e_x_c, "camera.e_x_c");
}

inline constexpr int kNumFeatures = 4;
inline constexpr double kMinDepth = 1e-4;

/// Fiducial corners of the object: a 40 mm square 30 mm above the grasp point
/// (object z points down, like the tool).
inline std::array<Vec3, kNumFeatures> default_fiducials() {
  constexpr double h = 0.02, z = -0.03;
  return {Vec3(-h, -h, z), Vec3(h, -h, z), Vec3(h, h, z), Vec3(-h, h, z)};
}

struct FeatureSet {
  std::array<Eigen::Vector2d, kNumFeatures> image{};  // px
  std::array<Vec3, kNumFeatures> model = default_fiducials();
  std::array<double, kNumFeatures> depth{};  // m
};

inline Eigen::Vector2d pixel_to_normalized(const CameraModel& cam, const Eigen::Vector2d& px) {
  return {(px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy};
}

/// u = fx·X/Z + cx, v = fy·Y/Z + cy with (X, Y, Z) in the camera frame.
inline std::vector<Eigen::Vector2d> project(const CameraModel& cam, const Pose& b_x_c,
                                            const std::vector<Vec3>& world_points) {
  const Pose c_x_b = inverse(b_x_c);
  std::vector<Eigen::Vector2d> out;
  out.reserve(world_points.size());
  for (const Vec3& p : world_points) {
    const Vec3 pc = c_x_b.transform_point(p);
    if (!(pc.z() > kMinDepth)) raise(Errc::behind_camera, "point behind camera (Z = " + std::to_string(pc.z()) + ")");
    out.emplace_back(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
  }
  return out;
}

/// Features of an object at `c_x_o`, optionally with pixel noise.
inline FeatureSet render_features(const CameraModel& cam, const Pose& c_x_o, double noise_px = 0.0,
                                  std::mt19937_64* rng = nullptr) {
  FeatureSet fs;
  std::vector<Vec3> pts(fs.model.begin(), fs.model.end());
  for (Vec3& p : pts) p = c_x_o.transform_point(p);
  const auto px = project(cam, Pose::identity(), pts);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int i = 0; i < kNumFeatures; ++i) {
    fs.image[i] = px[i];
    if (noise_px > 0 && rng) fs.image[i] += noise_px * Eigen::Vector2d(n01(*rng), n01(*rng));
    fs.depth[i] = pts[i].z();
  }
  return fs;
}

/// Stacked pixel error norm between two feature sets.
inline double feature_error_px(const FeatureSet& a, const FeatureSet& b) {
  double s = 0;
  for (int i = 0; i < kNumFeatures; ++i) s += (a.image[i] - b.image[i]).squaredNorm();
  return std::sqrt(s);
}

using InteractionMatrix = Eigen::Matrix<double, 2 * kNumFeatures, 6>;

/// Point-feature interaction matrix in normalized coordinates, camera twist
/// ordered (v, ω) and expressed in the camera frame.
inline Eigen::Matrix<double, 2, 6> point_interaction(double x, double y, double z) {
  Eigen::Matrix<double, 2, 6> l;
  l << -1 / z, 0, x / z, x * y, -(1 + x * x), y,  //
      0, -1 / z, y / z, 1 + y * y, -x * y, -x;
  return l;
}

inline InteractionMatrix interaction_matrix(const CameraModel& cam, const FeatureSet& f) {
  InteractionMatrix l;
  for (int i = 0; i < kNumFeatures; ++i) {
    if (!(f.depth[i] > 0)) raise(Errc::degenerate_features, "feature depth must be positive");
    const Eigen::Vector2d s = pixel_to_normalized(cam, f.image[i]);
    l.block<2, 6>(2 * i, 0) = point_interaction(s.x(), s.y(), f.depth[i]);
  }
  return l;
}

namespace detail {

inline bool image_collinear(const FeatureSet& f) {
  double best = 0, scale = 0;
  for (int i = 0; i < kNumFeatures; ++i) {
    for (int j = 0; j < kNumFeatures; ++j) scale = std::max(scale, (f.image[i] - f.image[j]).norm());
  }
  for (int i = 0; i < kNumFeatures; ++i)
    for (int j = i + 1; j < kNumFeatures; ++j)
      for (int k = j + 1; k < kNumFeatures; ++k) {
        const Eigen::Vector2d a = f.image[j] - f.image[i], b = f.image[k] - f.image[i];
        best = std::max(best, std::abs(a.x() * b.y() - a.y() * b.x()));
      }
  return scale <= 0 || best <= 1e-9 * scale * scale;
}

/// First-order retraction of a twist (v, ω) onto a pose increment.
inline Pose twist_increment(const Vec6& xi) {
  const Vec3 w = xi.tail<3>();
  const double a = w.norm();
  Pose p;
  p.position = xi.head<3>();
  p.orientation = a > 1e-15 ? Eigen::Quaterniond(Eigen::AngleAxisd(a, w / a)) : Eigen::Quaterniond::Identity();
  return p;
}

}  // namespace detail

/// Classic IBVS law v = −λ·L⁺·(s − s*), depths from `current`.
inline Vec6 ibvs_twist(const CameraModel& cam, const FeatureSet& current, const FeatureSet& reference, double lambda) {
  if (detail::image_collinear(current)) raise(Errc::degenerate_features, "features are collinear");
  const InteractionMatrix l = interaction_matrix(cam, current);
  Eigen::JacobiSVD<InteractionMatrix> svd(l, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(5) <= 1e-9 * sv(0)) raise(Errc::degenerate_features, "interaction matrix is rank deficient");
  Eigen::Matrix<double, 2 * kNumFeatures, 1> err;
  for (int i = 0; i < kNumFeatures; ++i) {
    err.segment<2>(2 * i) = pixel_to_normalized(cam, current.image[i]) - pixel_to_normalized(cam, reference.image[i]);
  }
  return -lambda * svd.solve(err);
}

inline constexpr int kGaussNewtonIterations = 1000;
inline constexpr double kGaussNewtonStep = 1e-9;

/// c_x_o minimizing the squared reprojection error, Gauss–Newton on a left
/// perturbation of the pose.
inline Pose estimate_object_pose(const CameraModel& cam, const FeatureSet& observed, const Pose& init) {
  validate(init, "pose estimate init");
  Pose est = init;
  for (int it = 0; it < kGaussNewtonIterations; ++it) {
    Eigen::Matrix<double, 2 * kNumFeatures, 6> j;
    Eigen::Matrix<double, 2 * kNumFeatures, 1> r;
    for (int i = 0; i < kNumFeatures; ++i) {
      const Vec3 p = est.transform_point(observed.model[i]);
      if (!(p.z() > kMinDepth)) raise(Errc::non_convergence, "pose estimate moved a feature behind the camera");
      const double iz = 1.0 / p.z();
      r.segment<2>(2 * i) =
          Eigen::Vector2d(cam.fx * p.x() * iz + cam.cx, cam.fy * p.y() * iz + cam.cy) - observed.image[i];
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << cam.fx * iz, 0, -cam.fx * p.x() * iz * iz, 0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dp;
      dp.leftCols<3>().setIdentity();
      dp.rightCols<3>() << 0, p.z(), -p.y(), -p.z(), 0, p.x(), p.y(), -p.x(), 0;
      j.block<2, 6>(2 * i, 0) = dpi * dp;
    }
    const Vec6 xi = (j.transpose() * j).ldlt().solve(-j.transpose() * r);
    if (!xi.allFinite()) raise(Errc::non_convergence, "pose estimate diverged");
    const Pose inc = detail::twist_increment(xi);
    est = {inc.orientation * est.position + inc.position, (inc.orientation * est.orientation).normalized()};
    if (xi.norm() < kGaussNewtonStep) return est;
  }
  raise(Errc::non_convergence, "pose estimate did not converge in " + std::to_string(kGaussNewtonIterations) +
                                   " iterations");
}

/// Depths of the model points under an estimated c_x_o.
inline void set_depths_from(FeatureSet& f, const Pose& c_x_o) {
  for (int i = 0; i < kNumFeatures; ++i) f.depth[i] = c_x_o.transform_point(f.model[i]).z();
}

/// Camera twist (camera frame) → EE twist in the base frame, for a camera
/// rigidly mounted at e_x_c on an EE at b_x_e.
inline Vec6 camera_twist_to_base(const Vec6& twist_c, const Pose& e_x_c, const Pose& b_x_e) {
  const Mat3 r_ec = e_x_c.rotation_matrix();
  const Vec3 w_e = r_ec * twist_c.tail<3>();
  const Vec3 v_e = r_ec * twist_c.head<3>() - w_e.cross(e_x_c.position);
  const Mat3 r_be = b_x_e.rotation_matrix();
  Vec6 out;
  out << r_be * v_e, r_be * w_e;
  return out;
}

// ---------------------------------------------------------------------------
// teaching session

enum class TeachPhase { Idle, DgpCaptured, Following, Finished };

constexpr std::string_view to_string(TeachPhase p) {
  switch (p) {
    case TeachPhase::Idle: return "Idle";
    case TeachPhase::DgpCaptured: return "DgpCaptured";
    case TeachPhase::Following: return "Following";
    case TeachPhase::Finished: return "Finished";
  }
  return "?";
}

struct TrajectoryPoint {
  double t = 0;
  Pose ee_pose;
};

/// The simulated teaching cell: EE pose, true object pose and the camera.
struct TeachRig {
  CameraModel camera;
  Pose ee;
  Pose object;
  double noise_px = 0.0;
  std::mt19937_64 rng{0};

  Pose camera_pose() const { return compose(ee, camera.e_x_c); }
  Pose true_c_x_o() const { return compose(inverse(camera_pose()), object); }
  FeatureSet observe() { return render_features(camera, true_c_x_o(), noise_px, &rng); }
};

struct TeachSession {
  TeachPhase phase = TeachPhase::Idle;
  Pose b_x_dgp;
  Pose b_x_dvsp;
  bool dvsp_captured = false;
  FeatureSet rf1;
  Pose c_x_o;          // relative pose from the DVSP capture
  Pose tracked_c_x_o;  // latest estimate while following
  std::vector<TrajectoryPoint> trajectory;
  FeatureSet rf2;
  std::optional<Pose> dfp;
  double duration = 0.0;
  double t = 0.0;
  double lambda = 2.0;
  ConstraintBox box;
  Vec6 q = Vec6::Zero();  // EE configuration relative to the DGP orientation
  double last_feature_error = 0.0;
};

namespace detail {

inline void require_phase(const TeachSession& s, TeachPhase want, const char* op) {
  if (s.phase != want) {
    raise(Errc::wrong_phase, std::string(op) + " needs phase " + std::string(to_string(want)) + ", session is " +
                                 std::string(to_string(s.phase)));
  }
}

inline FeatureSet observe_visible(TeachRig& rig) {
  try {
    return rig.observe();
  } catch (const Error& e) {
    if (e.code() == Errc::behind_camera) raise(Errc::object_not_visible, e.what());
    throw;
  }
}

}  // namespace detail

inline void teach_capture_dgp(TeachSession& s, const TeachRig& rig) {
  detail::require_phase(s, TeachPhase::Idle, "capture_dgp");
  validate(rig.ee, "EE pose");
  s.b_x_dgp = rig.ee;
  s.phase = TeachPhase::DgpCaptured;
}

inline void teach_capture_dvsp(TeachSession& s, TeachRig& rig) {
  detail::require_phase(s, TeachPhase::DgpCaptured, "capture_dvsp");
  s.rf1 = detail::observe_visible(rig);
  s.b_x_dvsp = rig.ee;
  s.c_x_o = relative_object_pose(inverse(rig.camera.e_x_c), s.b_x_dvsp, s.b_x_dgp);
  s.tracked_c_x_o = s.c_x_o;
  set_depths_from(s.rf1, s.c_x_o);
  s.dvsp_captured = true;
}

inline void teach_start_follow(TeachSession& s, const TeachRig& rig) {
  detail::require_phase(s, TeachPhase::DgpCaptured, "start_follow");
  if (!s.dvsp_captured) raise(Errc::wrong_phase, "start_follow needs a captured DVSP");
  s.q = config_from_pose(rig.ee, s.b_x_dgp.orientation);
  s.t = 0.0;
  s.trajectory.clear();
  s.phase = TeachPhase::Following;
}

/// One servo tick: observe, estimate depths, IBVS, clamp and integrate, record.
/// Returns the new EE command (also written to the rig).
inline Pose teach_follow_step(TeachSession& s, TeachRig& rig, const Pose& object_pose_truth, double dt) {
  detail::require_phase(s, TeachPhase::Following, "follow_step");
  validate(object_pose_truth, "object pose");
  rig.object = object_pose_truth;
  s.t += dt;
  FeatureSet cur;
  try {
    cur = detail::observe_visible(rig);
  } catch (const Error& e) {
    if (e.code() == Errc::object_not_visible) return rig.ee;  // paused, nothing recorded
    throw;
  }
  s.tracked_c_x_o = estimate_object_pose(rig.camera, cur, s.tracked_c_x_o);
  set_depths_from(cur, s.tracked_c_x_o);
  s.last_feature_error = feature_error_px(cur, s.rf1);
  const Vec6 twist_c = ibvs_twist(rig.camera, cur, s.rf1, s.lambda);
  const Vec6 qdot = camera_twist_to_base(twist_c, rig.camera.e_x_c, rig.ee);
  s.q = clamp_and_integrate(s.q, qdot, s.box.with_delta(dt));
  rig.ee = pose_from_config(s.q, s.b_x_dgp.orientation);
  s.trajectory.push_back({s.t, rig.ee});
  return rig.ee;
}

/// RF2, re-estimated c_x_o, and DFP = b_x_e · e_x_c · c_x_o.
inline void teach_finish(TeachSession& s, TeachRig& rig) {
  detail::require_phase(s, TeachPhase::Following, "finish");
  s.rf2 = detail::observe_visible(rig);
  const Pose c_x_o = estimate_object_pose(rig.camera, s.rf2, s.tracked_c_x_o);
  set_depths_from(s.rf2, c_x_o);
  s.tracked_c_x_o = c_x_o;
  s.dfp = compute_dfp(rig.ee, rig.camera.e_x_c, c_x_o);
  s.duration = s.t;
  s.phase = TeachPhase::Finished;
}

// ---------------------------------------------------------------------------
// scripted demonstrator

struct DemoWaypoint {
  double t = 0;
  Pose object_pose;
};

/// Object pose at time t: linear position, slerped orientation, held at the ends.
inline Pose demo_object_at(const std::vector<DemoWaypoint>& script, double t) {
  if (script.empty()) raise(Errc::validation_error, "demonstration script is empty");
  if (t <= script.front().t) return script.front().object_pose;
  for (std::size_t i = 1; i < script.size(); ++i) {
    if (t <= script[i].t) {
      const auto& a = script[i - 1];
      const auto& b = script[i];
      const double s = (t - a.t) / (b.t - a.t);
      return {a.object_pose.position + s * (b.object_pose.position - a.object_pose.position),
              a.object_pose.orientation.slerp(s, b.object_pose.orientation).normalized()};
    }
  }
  return script.back().object_pose;
}

inline std::vector<DemoWaypoint> parse_demo_script(std::istream& in) {
  std::vector<DemoWaypoint> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      raise(Errc::parse_error, "demo script line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.contains("t") || !j["t"].is_number() || !j.contains("object_pose")) {
      raise(Errc::parse_error, "demo script line " + std::to_string(n) + ": needs t and object_pose");
    }
    DemoWaypoint w{j["t"].get<double>(), pose_from_json(j["object_pose"])};
    if (!out.empty() && !(w.t > out.back().t)) {
      raise(Errc::parse_error, "demo script line " + std::to_string(n) + ": timestamps must increase");
    }
    out.push_back(w);
  }
  if (out.empty()) raise(Errc::parse_error, "demo script has no waypoints");
  return out;
}

struct DemoOptions {
  double dt = 0.01;
  double dvsp_height = 0.15;       // EE retreat along its own −z for the DVSP
  double settle_time = 3.0;        // servo time after the script ends
  double settle_error_px = 0.05;   // early stop once the features are this close
  double lambda = 2.0;
};

/// Headless teaching run: grasp at the object's start pose, retreat to the
/// DVSP, follow the scripted object, settle, finish.
inline TeachSession run_scripted_demo(TeachRig& rig, const std::vector<DemoWaypoint>& script, const DemoOptions& opt,
                                      const ConstraintBox& box = {}) {
  TeachSession s;
  s.box = box;
  s.lambda = opt.lambda;
  rig.object = script.front().object_pose;
  rig.ee = rig.object;
  teach_capture_dgp(s, rig);
  rig.ee = compose(rig.ee, Pose::translation(0, 0, -opt.dvsp_height));
  teach_capture_dvsp(s, rig);
  teach_start_follow(s, rig);
  const double t_end = script.back().t + opt.settle_time;
  const int steps = static_cast<int>(std::ceil(t_end / opt.dt - 1e-9));
  for (int k = 0; k < steps; ++k) {
    teach_follow_step(s, rig, demo_object_at(script, s.t + opt.dt), opt.dt);
    if (s.t > script.back().t && s.last_feature_error < opt.settle_error_px) break;
  }
  teach_finish(s, rig);
  return s;
}

inline void write_trajectory(std::ostream& out, const TeachSession& s) {
  if (s.phase != TeachPhase::Finished || !s.dfp) raise(Errc::wrong_phase, "trajectory needs a finished session");
  for (const auto& p : s.trajectory) {
    out << nlohmann::json{{"t", p.t}, {"ee_pose", pose_to_json(p.ee_pose)}}.dump() << '\n';
  }
  out << nlohmann::json{{"dgp", pose_to_json(s.b_x_dgp)},
                        {"dvsp", pose_to_json(s.b_x_dvsp)},
                        {"dfp", pose_to_json(*s.dfp)},
                        {"duration", s.duration}}
             .dump()
      << '\n';
}

struct TrajectoryFile {
  std::vector<TrajectoryPoint> points;
  Pose dgp, dvsp, dfp;
  double duration = 0;
};

inline TrajectoryFile read_trajectory(std::istream& in) {
  TrajectoryFile f;
  bool footer = false;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      raise(Errc::parse_error, "trajectory line " + std::to_string(n) + ": " + e.what());
    }
    if (j.contains("dfp")) {
      f.dgp = pose_from_json(j.at("dgp"));
      f.dvsp = pose_from_json(j.at("dvsp"));
      f.dfp = pose_from_json(j.at("dfp"));
      f.duration = j.at("duration").get<double>();
      footer = true;
    } else {
      if (!j.contains("t") || !j.contains("ee_pose")) raise(Errc::parse_error, "trajectory line needs t and ee_pose");
      f.points.push_back({j["t"].get<double>(), pose_from_json(j["ee_pose"])});
    }
  }
  if (!footer) raise(Errc::parse_error, "trajectory file has no footer record");
  return f;
}

// ---------------------------------------------------------------------------
// teaching by contact

struct ContactTeachResult {
  Pose recorded_target;  // EE command at the end of the teaching
  Pose object_pose;      // where the held object actually is
  Wrench terminal_force;  // sensed, frame e
};

/// Kinesthetic variant: the held peg is seated in the bore and the teacher
/// presses it sideways with `press` (frame e) through the admittance loop
/// until it settles. The cup deflects, so the recorded EE pose differs from
/// the object pose.
inline ContactTeachResult contact_teach(const SceneConfig& scene, const AdmittanceGains& gains, const Vec3& press,
                                        double seat_depth, double duration) {
  SceneConfig quiet = scene;
  quiet.sensor_noise_sigma = 0.0;
  SimState st = reset(quiet, pose_in_hole(quiet, Vec3(0, 0, seat_depth)), 0);
  const ConstraintBox box = ConstraintBox{}.with_delta(quiet.physics_dt);
  Vec6 q = config_from_pose(st.ee_command_pose, quiet.hole_pose.orientation);
  const Mat3 r = quiet.hole_pose.rotation_matrix();
  const Wrench desired{press, Vec3::Zero(), FrameTag::e};
  const int ticks = static_cast<int>(std::lround(duration / quiet.physics_dt));
  for (int i = 0; i < ticks; ++i) {
    const Vec6 tw = admittance_step(desired, sensor_read(st, quiet), gains);
    Vec6 qdot;
    qdot << r * tw.head<3>(), r * tw.tail<3>();
    q = clamp_and_integrate(q, qdot, box);
    step_in_place(st, quiet, pose_from_config(q, quiet.hole_pose.orientation), quiet.physics_dt);
  }
  return {st.ee_command_pose, st.peg_pose, st.filtered_wrench};
}

}  // namespace tending
