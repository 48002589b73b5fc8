#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "control.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "rrrl/agent.hpp"
#include "servo.hpp"
#include "simenv.hpp"

namespace tending {

struct TeachingConfig {
  double noise_px = 0.0;
  double dt = 0.01;
  double dvsp_height = 0.15;
  double settle_time = 3.0;
  double settle_error_px = 0.05;
  double lambda = 2.0;
  // Where the object rests before the demonstration (base frame).
  Pose object_start{Vec3(0.4, 0.15, 0.05), Eigen::Quaterniond(0.0, 1.0, 0.0, 0.0)};
};

struct PathsConfig {
  std::string artifacts_dir = "artifacts";
};

struct WorkbenchConfig {
  SceneConfig scene;
  AdmittanceGains gains;
  ConstraintBox box;
  SpiralParams spiral;
  CameraModel camera;
  rrrl::RrrlConfig rrrl;
  BaselineParams baselines;  // its spiral member mirrors `spiral`
  TeachingConfig teaching;
  PathsConfig paths;
};

inline void validate(const TeachingConfig& t) {
  if (!(t.noise_px >= 0)) raise(Errc::validation_error, "teaching: noise_px >= 0");
  if (!(t.dt > 0)) raise(Errc::validation_error, "teaching: dt > 0");
  if (!(t.settle_time >= 0)) raise(Errc::validation_error, "teaching: settle_time >= 0");
  if (!(t.lambda > 0)) raise(Errc::validation_error, "teaching: lambda > 0");
  validate(t.object_start, "teaching.object_start");
}

inline void validate(const WorkbenchConfig& c) {
  validate(c.scene);
  validate(c.gains);
  validate(c.box);
  validate(c.spiral);
  validate(c.camera);
  rrrl::validate(c.rrrl);
  validate(c.teaching);
  if (!(c.baselines.replay_speed > 0)) raise(Errc::validation_error, "baselines: replay_speed > 0");
  if (!(c.baselines.protective_stop > 0)) raise(Errc::validation_error, "baselines: protective_stop > 0");
  if (c.paths.artifacts_dir.empty() || c.paths.artifacts_dir.find('\0') != std::string::npos) {
    raise(Errc::validation_error, "paths: artifacts_dir must be a non-empty path");
  }
}

namespace detail {

/// Two-way field binding: the same field list drives reading and writing.
struct JsonWriter {
  nlohmann::json j = nlohmann::json::object();
  template <class T>
  void field(const char* key, const T& v) {
    j[key] = v;
  }
  void field(const char* key, const Vec6& v) { j[key] = std::vector<double>(v.data(), v.data() + 6); }
  void field(const char* key, const Pose& p) { j[key] = pose_to_json(p); }
};

struct JsonReader {
  const nlohmann::json& j;
  std::string where;
  std::set<std::string> seen;

  template <class T>
  void field(const char* key, T& v) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      v = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      raise(Errc::validation_error, where + "." + key + " has the wrong type");
    }
  }
  void field(const char* key, Vec6& v) {
    seen.insert(key);
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 6) raise(Errc::validation_error, where + "." + key + " must be 6 numbers");
    for (int i = 0; i < 6; ++i) {
      if (!a[i].is_number()) raise(Errc::validation_error, where + "." + key + " must be 6 numbers");
      v[i] = a[i].get<double>();
    }
  }
  void field(const char* key, Pose& p) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      p = pose_from_json(j.at(key));
    } catch (const Error& e) {
      raise(Errc::validation_error, where + "." + key + ": " + e.what());
    }
  }
  void finish() const {
    for (const auto& [k, _] : j.items()) {
      if (!seen.count(k)) raise(Errc::validation_error, "unknown key " + where + "." + k);
    }
  }
};

template <class V>
void fields(V& v, SceneConfig& s) {
  v.field("hole_pose", s.hole_pose);
  v.field("hole_radius", s.hole_radius);
  v.field("peg_radius", s.peg_radius);
  v.field("chamfer_width", s.chamfer_width);
  v.field("chamfer_angle", s.chamfer_angle);
  v.field("hole_depth", s.hole_depth);
  v.field("success_depth", s.success_depth);
  v.field("contact_stiffness", s.contact_stiffness);
  v.field("contact_damping", s.contact_damping);
  v.field("friction_mu", s.friction_mu);
  v.field("cup_lateral_stiffness", s.cup_lateral_stiffness);
  v.field("cup_axial_stiffness", s.cup_axial_stiffness);
  v.field("peg_damping", s.peg_damping);
  v.field("sensor_noise_sigma", s.sensor_noise_sigma);
  v.field("filter_cutoff_hz", s.filter_cutoff_hz);
  v.field("physics_dt", s.physics_dt);
  v.field("saturation_force", s.saturation_force);
  v.field("contact_tolerance", s.contact_tolerance);
}

template <class V>
void fields(V& v, AdmittanceGains& g) {
  v.field("gain", g.gain);
}

template <class V>
void fields(V& v, ConstraintBox& b) {
  v.field("q_min", b.q_min);
  v.field("q_max", b.q_max);
  v.field("qdot_min", b.qdot_min);
  v.field("qdot_max", b.qdot_max);
  v.field("delta", b.delta);
}

template <class V>
void fields(V& v, SpiralParams& s) {
  v.field("pitch", s.pitch);
  v.field("angular_rate", s.angular_rate);
  v.field("push_force", s.push_force);
  v.field("max_radius", s.max_radius);
}

template <class V>
void fields(V& v, CameraModel& c) {
  v.field("fx", c.fx);
  v.field("fy", c.fy);
  v.field("cx", c.cx);
  v.field("cy", c.cy);
  v.field("e_x_c", c.e_x_c);
}

template <class V>
void fields(V& v, rrrl::RrrlConfig& r) {
  v.field("region_radius", r.region_radius);
  v.field("force_amplitude", r.force_amplitude);
  v.field("epsilon_start", r.epsilon_start);
  v.field("epsilon_end", r.epsilon_end);
  v.field("epsilon_anneal_episodes", r.epsilon_anneal_episodes);
  v.field("replay_capacity", r.replay_capacity);
  v.field("episodes", r.episodes);
  v.field("k_max", r.k_max);
  v.field("batch", r.batch);
  v.field("discount", r.discount);
  v.field("updates_per_step", r.updates_per_step);
  v.field("target_sync_steps", r.target_sync_steps);
  v.field("warmup", r.warmup);
  v.field("learn_rate", r.learn_rate);
  v.field("per_alpha", r.per_alpha);
  v.field("per_beta_start", r.per_beta_start);
  v.field("per_beta_end", r.per_beta_end);
  v.field("decision_period", r.decision_period);
  v.field("delta_p_min", r.delta_p_min);
  v.field("delta_p_max", r.delta_p_max);
  v.field("fixed_policy_step", r.fixed_policy_step);
  v.field("hidden", r.hidden);
  v.field("snapshot_every", r.snapshot_every);
}

template <class V>
void fields(V& v, BaselineParams& b) {
  v.field("replay_speed", b.replay_speed);
  v.field("replay_overtravel", b.replay_overtravel);
  v.field("protective_stop", b.protective_stop);
}

template <class V>
void fields(V& v, TeachingConfig& t) {
  v.field("noise_px", t.noise_px);
  v.field("dt", t.dt);
  v.field("dvsp_height", t.dvsp_height);
  v.field("settle_time", t.settle_time);
  v.field("settle_error_px", t.settle_error_px);
  v.field("lambda", t.lambda);
  v.field("object_start", t.object_start);
}

template <class V>
void fields(V& v, PathsConfig& p) {
  v.field("artifacts_dir", p.artifacts_dir);
}

template <class T>
nlohmann::json write_section(const T& x) {
  JsonWriter w;
  T copy = x;
  fields(w, copy);
  return w.j;
}

template <class T>
void read_section(const nlohmann::json& root, const char* key, T& x) {
  if (!root.contains(key)) return;
  const auto& j = root.at(key);
  if (!j.is_object()) raise(Errc::validation_error, std::string(key) + " must be an object");
  JsonReader r{j, key, {}};
  fields(r, x);
  r.finish();
}

/// 1-based line and column of a byte offset.
inline std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline nlohmann::json parse_text(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // The parser reports the offset one past the offending byte.
    raise(Errc::parse_error, what + ": " + line_column(text, e.byte > 0 ? e.byte - 1 : 0) + ": " + e.what());
  }
}

inline std::string read_file(const std::string& path, Errc missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(missing, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::missing_artifact, "cannot write " + path);
  out << text;
  if (!out) raise(Errc::missing_artifact, "write failed for " + path);
}

}  // namespace detail

inline nlohmann::json to_json(const WorkbenchConfig& c) {
  return {{"scene", detail::write_section(c.scene)},       {"gains", detail::write_section(c.gains)},
          {"box", detail::write_section(c.box)},           {"spiral", detail::write_section(c.spiral)},
          {"camera", detail::write_section(c.camera)},     {"rrrl", detail::write_section(c.rrrl)},
          {"baselines", detail::write_section(c.baselines)}, {"teaching", detail::write_section(c.teaching)},
          {"paths", detail::write_section(c.paths)}};
}

/// Defaults for absent keys, unknown keys rejected, then full validation.
inline WorkbenchConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) raise(Errc::validation_error, "config root must be an object");
  static const std::set<std::string> known{"scene",  "gains",     "box",      "spiral", "camera",
                                           "rrrl",   "baselines", "teaching", "paths"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) raise(Errc::validation_error, "unknown config section '" + k + "'");
  }
  WorkbenchConfig c;
  detail::read_section(j, "scene", c.scene);
  detail::read_section(j, "gains", c.gains);
  detail::read_section(j, "box", c.box);
  detail::read_section(j, "spiral", c.spiral);
  detail::read_section(j, "camera", c.camera);
  detail::read_section(j, "rrrl", c.rrrl);
  detail::read_section(j, "baselines", c.baselines);
  detail::read_section(j, "teaching", c.teaching);
  detail::read_section(j, "paths", c.paths);
  c.baselines.spiral = c.spiral;
  validate(c);
  return c;
}

inline WorkbenchConfig parse_config(const std::string& text) {
  return config_from_json(detail::parse_text(text, "config"));
}

inline WorkbenchConfig load_config(const std::string& path) {
  return parse_config(detail::read_file(path, Errc::parse_error));
}

inline void save_config(const std::string& path, const WorkbenchConfig& c) {
  detail::write_file(path, to_json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// policy files

inline constexpr int kPolicyVersion = 1;

inline nlohmann::json to_json(const rrrl::Policy& p) {
  nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
  for (int l = 0; l < p.net.layers(); ++l) {
    const auto& w = p.net.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    weights.push_back(flat);
    biases.push_back(std::vector<double>(p.net.biases[l].data(), p.net.biases[l].data() + p.net.biases[l].size()));
  }
  return {{"version", p.version},
          {"layer_sizes", p.net.sizes},
          {"weights", weights},
          {"biases", biases},
          {"config", detail::write_section(p.config)},
          {"seed", p.seed}};
}

inline rrrl::Policy policy_from_json(const nlohmann::json& j) {
  rrrl::Policy p;
  try {
    p.version = j.at("version").get<int>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("policy: ") + e.what());
  }
  if (p.version != kPolicyVersion) {
    raise(Errc::version_mismatch, "policy version " + std::to_string(p.version) + ", expected " +
                                      std::to_string(kPolicyVersion));
  }
  try {
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    rrrl::QNetwork net = rrrl::QNetwork::zeros(sizes);
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    if (w.size() != static_cast<std::size_t>(net.layers()) || b.size() != w.size()) {
      raise(Errc::parse_error, "policy: layer count mismatch");
    }
    for (int l = 0; l < net.layers(); ++l) {
      const auto flat = w.at(l).get<std::vector<double>>();
      const auto bias = b.at(l).get<std::vector<double>>();
      auto& wl = net.weights[l];
      if (flat.size() != static_cast<std::size_t>(wl.size()) || bias.size() != static_cast<std::size_t>(net.biases[l].size())) {
        raise(Errc::parse_error, "policy: parameter count mismatch in layer " + std::to_string(l));
      }
      for (Eigen::Index r = 0; r < wl.rows(); ++r)
        for (Eigen::Index c = 0; c < wl.cols(); ++c) wl(r, c) = flat[static_cast<std::size_t>(r * wl.cols() + c)];
      for (std::size_t i = 0; i < bias.size(); ++i) net.biases[l][static_cast<Eigen::Index>(i)] = bias[i];
    }
    if (!net.finite()) raise(Errc::parse_error, "policy: non-finite parameters");
    p.net = std::move(net);
    const auto& cfg = j.at("config");
    detail::JsonReader r{cfg, "config", {}};
    detail::fields(r, p.config);
    r.finish();
    rrrl::validate(p.config);
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("policy: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::validation_error) raise(Errc::parse_error, std::string("policy: ") + e.what());
    throw;
  }
  if (p.net.input_size() != 6 || p.net.output_size() != rrrl::kNumActions) {
    raise(Errc::parse_error, "policy: network must map 6 inputs to 4 action values");
  }
  return p;
}

inline void save_policy(const std::string& path, const rrrl::Policy& p) {
  if (!p.net.finite()) raise(Errc::non_finite, "refusing to save a policy with non-finite parameters");
  detail::write_file(path, to_json(p).dump() + "\n");
}

inline rrrl::Policy load_policy(const std::string& path) {
  return policy_from_json(detail::parse_text(detail::read_file(path, Errc::missing_artifact), "policy"));
}

}  // namespace tending
