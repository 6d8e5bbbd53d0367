#include "avsim/kinematic.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace avsim::predictor {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kAngleEps = 1e-9;

// (-pi, pi]
double wrap_angle(double a) {
  double w = std::remainder(a, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

Vec3 swing_about_x(const Vec3& v, const Vec3& pivot, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dy = v.y() - pivot.y(), dz = v.z() - pivot.z();
  return {v.x(), pivot.y() + dy * c - dz * s, pivot.z() + dy * s + dz * c};
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 json_vec(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) fail(ErrorCode::MalformedFile, std::string("rig: ") + key);
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace

Rig Rig::rigid(std::size_t vertex_count) {
  Rig r;
  r.segments.assign(vertex_count, Segment::Body);
  return r;
}

void Rig::validate(std::size_t vertex_count) const {
  if (segments.size() != vertex_count) {
    fail(ErrorCode::VertexCountMismatch, "rig covers " + std::to_string(segments.size()) +
                                             " vertices, mesh has " + std::to_string(vertex_count));
  }
  const bool has_loose = std::find(segments.begin(), segments.end(), Segment::Loose) != segments.end();
  if (has_loose && !(loose_top > loose_bottom)) {
    fail(ErrorCode::InvalidArgument, "rig: loose_top must exceed loose_bottom");
  }
}

Rig load_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
    Rig rig;
    for (int s : j.at("segments").get<std::vector<int>>()) {
      if (s < 0 || s > 5) fail(ErrorCode::MalformedFile, "rig: segment id " + std::to_string(s));
      rig.segments.push_back(static_cast<Segment>(s));
    }
    rig.left_shoulder = json_vec(j, "left_shoulder");
    rig.right_shoulder = json_vec(j, "right_shoulder");
    rig.left_hip = json_vec(j, "left_hip");
    rig.right_hip = json_vec(j, "right_hip");
    rig.loose_top = j.at("loose_top").get<double>();
    rig.loose_bottom = j.at("loose_bottom").get<double>();
    return rig;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, "rig " + path + ": " + e.what());
  }
}

void save_rig(const Rig& rig, const std::string& path) {
  nlohmann::json j;
  std::vector<int> seg;
  seg.reserve(rig.segments.size());
  for (auto s : rig.segments) seg.push_back(static_cast<int>(s));
  j["segments"] = seg;
  j["left_shoulder"] = vec_json(rig.left_shoulder);
  j["right_shoulder"] = vec_json(rig.right_shoulder);
  j["left_hip"] = vec_json(rig.left_hip);
  j["right_hip"] = vec_json(rig.right_hip);
  j["loose_top"] = rig.loose_top;
  j["loose_bottom"] = rig.loose_bottom;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot create " + path);
  out << j.dump() << '\n';
}

void KinematicParams::validate() const {
  if (!(speed > 0.0) || !(stride_length > 0.0) || gait_amplitude < 0.0 || garment_amplitude < 0.0) {
    fail(ErrorCode::InvalidArgument, "kinematic parameters must be positive");
  }
  if (turn_frames_180 < 1 || turn_frames_90 < 1 || accel_frames < 1) {
    fail(ErrorCode::InvalidArgument, "frame counts must be >= 1");
  }
}

Vec2 KinematicState::heading() const { return {std::sin(heading_angle), std::cos(heading_angle)}; }

double action_heading(ActionLabel action) {
  switch (action) {
    case ActionLabel::Forward: return 0.0;
    case ActionLabel::Left: return kPi / 2;
    case ActionLabel::Backward: return kPi;
    case ActionLabel::Right: return -kPi / 2;
    case ActionLabel::Idle: break;
  }
  fail(ErrorCode::InvalidArgument, "action has no heading");
}

int turn_frames(double abs_delta, const KinematicParams& params) {
  const double half = kPi / 2;
  double frames;
  if (abs_delta <= half) {
    frames = params.turn_frames_90 * abs_delta / half;
  } else {
    frames = params.turn_frames_90 +
             (params.turn_frames_180 - params.turn_frames_90) * (abs_delta - half) / half;
  }
  return std::max(1, static_cast<int>(std::lround(frames)));
}

KinematicState kinematic_advance(const KinematicState& state, ActionLabel action,
                                 const KinematicParams& params) {
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "kinematic oracle");
  KinematicState next = state;

  if (action != ActionLabel::Idle) {
    const double target = action_heading(action);
    const bool new_target = std::abs(wrap_angle(target - state.target_angle)) > kAngleEps;
    const double delta = wrap_angle(target - state.heading_angle);
    if (state.speed == 0.0) {
      next.heading_angle = target;
      next.turn_rate = 0.0;
    } else if (new_target && std::abs(delta) > kAngleEps) {
      const double d = std::abs(delta) > kPi - kAngleEps ? kPi : delta;
      next.turn_rate = d / turn_frames(std::abs(d), params);
    }
    next.target_angle = target;
  }

  const double remaining = wrap_angle(next.target_angle - next.heading_angle);
  if (std::abs(remaining) <= std::abs(next.turn_rate) + kAngleEps) {
    next.heading_angle = next.target_angle;
    next.turn_rate = 0.0;
  } else {
    next.heading_angle = wrap_angle(next.heading_angle + next.turn_rate);
  }

  const double target_speed = action == ActionLabel::Idle ? 0.0 : params.speed;
  const double accel = params.speed / params.accel_frames;
  if (next.speed < target_speed) {
    next.speed = std::min(target_speed, next.speed + accel);
  } else {
    next.speed = std::max(target_speed, next.speed - accel);
  }

  if (next.speed > 0.0) {
    next.phase = std::fmod(next.phase + kTwoPi * next.speed / params.stride_length, kTwoPi);
    const Vec2 h = next.heading();
    next.root_position += next.speed * Vec3(h.x(), 0.0, h.y());
  }
  return next;
}

std::vector<Vec3> kinematic_pose(const KinematicState& state, const ingest::ReferenceMesh& reference,
                                 const Rig& rig, const KinematicParams& params, const Vec3& pivot) {
  rig.validate(reference.vertex_count());
  const double k = std::clamp(state.speed / params.speed, 0.0, 1.0);
  const double swing = params.gait_amplitude * k * std::sin(state.phase);
  const double sway = params.garment_amplitude * k;
  const Vec2 h = state.heading();

  std::vector<Vec3> posed(reference.vertex_count());
  for (std::size_t i = 0; i < posed.size(); ++i) {
    const Vec3& v = reference.vertices[i];
    Vec3 local = v;
    switch (rig.segments[i]) {
      case Segment::Body: break;
      case Segment::LeftArm: local = swing_about_x(v, rig.left_shoulder, swing); break;
      case Segment::RightArm: local = swing_about_x(v, rig.right_shoulder, -swing); break;
      case Segment::LeftLeg: local = swing_about_x(v, rig.left_hip, -swing); break;
      case Segment::RightLeg: local = swing_about_x(v, rig.right_hip, swing); break;
      case Segment::Loose: {
        if (sway == 0.0) break;
        const double w = std::clamp((rig.loose_top - v.y()) / (rig.loose_top - rig.loose_bottom), 0.0, 1.0);
        local += sway * w * Vec3(0.3 * std::sin(2.0 * state.phase + 4.0 * v.x()), 0.0,
                                 std::sin(state.phase + 2.0 * v.x()));
        break;
      }
    }
    const Vec3 d = local - pivot;
    posed[i] = Vec3(h.y() * d.x() + h.x() * d.z(), d.y(), -h.x() * d.x() + h.y() * d.z()) + pivot +
               state.root_position;
  }
  return posed;
}

OracleStep kinematic_oracle_step(const KinematicState& state, ActionLabel action,
                                 const KinematicParams& params,
                                 const ingest::ReferenceMesh& reference, const Rig& rig,
                                 const Vec3& pivot) {
  OracleStep out;
  out.state = kinematic_advance(state, action, params);
  out.posed_vertices = kinematic_pose(out.state, reference, rig, params, pivot);
  return out;
}

}  // namespace avsim::predictor
