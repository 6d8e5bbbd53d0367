#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avsim {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

enum class ErrorCode {
  InvalidArgument,
  MalformedFile,
  VertexCountMismatch,
  UnknownAction,
  NonContiguousFrames,
  SequenceTooShort,
  DegenerateMesh,
  OutOfRange,
  MaskMismatch,
  ShapeMismatch,
  NonFinite,
  NotFound,
  Expired,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure the engine reports is an Error carrying a machine-checkable
// code; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

// The discrete action space. Values double as on-disk ASCII tokens.
enum class ActionLabel : std::uint8_t {
  Forward = 'W',
  Left = 'A',
  Backward = 'S',
  Right = 'D',
  Idle = '0',
};

inline constexpr std::array<ActionLabel, 5> kAllActions = {
    ActionLabel::Forward, ActionLabel::Left, ActionLabel::Backward,
    ActionLabel::Right, ActionLabel::Idle};

bool is_valid_action(ActionLabel action);

// Accepts the on-disk tokens W/A/S/D/0 plus "I" as an alias for Idle.
std::optional<ActionLabel> parse_action(char token);
ActionLabel action_from_token(char token);  // throws UnknownAction
char action_token(ActionLabel action);

// Dense index 0..4 in kAllActions order; used as the conditioning token.
int action_index(ActionLabel action);

}  // namespace avsim
