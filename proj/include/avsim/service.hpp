#pragma once

// Session lifecycle and stepping, independent of any transport. Steps on a
// session are serialized by a per-session mutex; distinct sessions step
// concurrently. ActionStream adds latest-action coalescing for streams.

#include "avsim/assets.hpp"
#include "avsim/protocol.hpp"
#include "avsim/rollout.hpp"

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace avsim::service {

using Clock = std::chrono::steady_clock;
using ClockFn = std::function<Clock::time_point()>;

struct SessionHandle {
  std::string id;
  std::chrono::system_clock::time_point created_at;
  std::string avatar_id;
  assets::PredictorConfig config;  // snapshot taken at creation
};

struct SessionInfo {
  SessionHandle handle;
  std::uint64_t round = 0;
  Vec3 world_root = Vec3::Zero();
  std::size_t point_count = 0;
};

std::string to_json(const SessionInfo& info);

class SessionManager {
 public:
  explicit SessionManager(assets::EngineConfig config, ClockFn clock = {});
  ~SessionManager();

  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  // NotFound for an unknown avatar; Io/MalformedFile when its assets fail to load.
  SessionHandle create_session(const std::string& avatar_id,
                               std::optional<assets::PredictorConfig> config = std::nullopt,
                               const Vec3& world_origin = Vec3::Zero());

  // One rollout step. NotFound for unknown ids, Expired for closed or timed
  // out ones. A failing step leaves the session at its previous round.
  protocol::FrameMessage step_session(const std::string& id, ActionLabel action,
                                      protocol::PayloadKind kind = protocol::PayloadKind::Points,
                                      std::uint32_t dropped = 0);

  // Same step, returning the full world frame (used by tests and the CLI).
  rollout::WorldFrame step_frame(const std::string& id, ActionLabel action);

  SessionInfo describe(const std::string& id);
  void close_session(const std::string& id);

  // Closes sessions idle for longer than the configured timeout.
  std::size_t reap_expired();
  std::size_t session_count() const;

  std::shared_ptr<const assets::AvatarAssets> avatar(const std::string& avatar_id);
  std::vector<std::string> avatar_ids() const;
  const assets::EngineConfig& config() const { return config_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  std::string next_id();

  assets::EngineConfig config_;
  ClockFn clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::string> closed_;  // id -> reason, for Expired vs NotFound
  std::map<std::string, std::shared_ptr<const assets::AvatarAssets>> avatars_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_ = 0;
};

// Inbound actions on one stream. At most one action is pending and one step
// is in flight; a push while an action is pending replaces it and counts a
// drop. Frames are delivered on the stream's worker thread.
class ActionStream {
 public:
  using FrameFn = std::function<void(const protocol::FrameMessage&)>;
  using ErrorFn = std::function<void(const Error&)>;

  ActionStream(SessionManager& manager, std::string session_id, FrameFn on_frame,
               ErrorFn on_error = {}, protocol::PayloadKind kind = protocol::PayloadKind::Points);
  ~ActionStream();

  ActionStream(const ActionStream&) = delete;
  ActionStream& operator=(const ActionStream&) = delete;

  void push(ActionLabel action);
  // Blocks until nothing is pending or in flight.
  void drain();
  // Stops the worker; a pending action is discarded and counted as dropped.
  void close();

  struct Counters {
    std::uint64_t sends = 0;
    std::uint64_t steps = 0;
    std::uint64_t dropped = 0;
    std::uint64_t errors = 0;
  };
  Counters counters() const;

 private:
  void run();

  SessionManager& manager_;
  std::string id_;
  FrameFn on_frame_;
  ErrorFn on_error_;
  protocol::PayloadKind kind_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<ActionLabel> pending_;
  bool in_flight_ = false;
  bool stopping_ = false;
  Counters counters_;
  std::thread worker_;
};

}  // namespace avsim::service
