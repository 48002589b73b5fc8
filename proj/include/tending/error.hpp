#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tending {

enum class Errc {
  invalid_pose,
  frame_mismatch,
  initial_penetration,
  behind_camera,
  degenerate_features,
  non_convergence,
  wrong_phase,
  object_not_visible,
  out_of_range,
  non_finite,
  underfull_memory,
  version_mismatch,
  parse_error,
  validation_error,
  missing_artifact,
  bad_message,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_pose: return "invalid_pose";
    case Errc::frame_mismatch: return "frame_mismatch";
    case Errc::initial_penetration: return "initial_penetration";
    case Errc::behind_camera: return "behind_camera";
    case Errc::degenerate_features: return "degenerate_features";
    case Errc::non_convergence: return "non_convergence";
    case Errc::wrong_phase: return "wrong_phase";
    case Errc::object_not_visible: return "object_not_visible";
    case Errc::out_of_range: return "out_of_range";
    case Errc::non_finite: return "non_finite";
    case Errc::underfull_memory: return "underfull_memory";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::parse_error: return "parse_error";
    case Errc::validation_error: return "validation_error";
    case Errc::missing_artifact: return "missing_artifact";
    case Errc::bad_message: return "bad_message";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (CLI exit codes, bridge error replies) can dispatch without parsing
/// message text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace tending
