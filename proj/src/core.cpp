#include "avsim/core.hpp"

namespace avsim {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::MalformedFile: return "malformed-file";
    case ErrorCode::VertexCountMismatch: return "vertex-count-mismatch";
    case ErrorCode::UnknownAction: return "unknown-action";
    case ErrorCode::NonContiguousFrames: return "non-contiguous-frames";
    case ErrorCode::SequenceTooShort: return "sequence-too-short";
    case ErrorCode::DegenerateMesh: return "degenerate-mesh";
    case ErrorCode::OutOfRange: return "out-of-range";
    case ErrorCode::MaskMismatch: return "mask-mismatch";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::Expired: return "expired";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + ": " + message);
}

bool is_valid_action(ActionLabel action) {
  switch (action) {
    case ActionLabel::Forward:
    case ActionLabel::Left:
    case ActionLabel::Backward:
    case ActionLabel::Right:
    case ActionLabel::Idle:
      return true;
  }
  return false;
}

std::optional<ActionLabel> parse_action(char token) {
  switch (token) {
    case 'W': case 'w': return ActionLabel::Forward;
    case 'A': case 'a': return ActionLabel::Left;
    case 'S': case 's': return ActionLabel::Backward;
    case 'D': case 'd': return ActionLabel::Right;
    case '0': case 'I': case 'i': return ActionLabel::Idle;
    default: return std::nullopt;
  }
}

ActionLabel action_from_token(char token) {
  auto action = parse_action(token);
  if (!action) fail(ErrorCode::UnknownAction, std::string("action token '") + token + "'");
  return *action;
}

char action_token(ActionLabel action) {
  if (!is_valid_action(action)) {
    fail(ErrorCode::UnknownAction, "action code " + std::to_string(static_cast<int>(action)));
  }
  return static_cast<char>(action);
}

int action_index(ActionLabel action) {
  for (std::size_t i = 0; i < kAllActions.size(); ++i) {
    if (kAllActions[i] == action) return static_cast<int>(i);
  }
  fail(ErrorCode::UnknownAction, "action code " + std::to_string(static_cast<int>(action)));
}

}  // namespace avsim
