#pragma once

#include <json.hpp>

#include "transforms.hpp"

namespace tending {

struct Wrench {
  Vec3 force = Vec3::Zero();   // N
  Vec3 torque = Vec3::Zero();  // N·m
  FrameTag frame = FrameTag::e;

  static Wrench zero(FrameTag f = FrameTag::e) { return {Vec3::Zero(), Vec3::Zero(), f}; }

  Vec6 vector() const {
    Vec6 v;
    v << force, torque;
    return v;
  }

  static Wrench from_vector(const Vec6& v, FrameTag f = FrameTag::e) {
    return {v.head<3>(), v.tail<3>(), f};
  }

  bool finite() const { return force.allFinite() && torque.allFinite(); }
};

inline nlohmann::json wrench_to_json(const Wrench& w) {
  return nlohmann::json::array(
      {w.force.x(), w.force.y(), w.force.z(), w.torque.x(), w.torque.y(), w.torque.z()});
}

}  // namespace tending
