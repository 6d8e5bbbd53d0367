#include "avsim/service.hpp"

#include "avsim/predictor.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <random>

namespace avsim::service {

struct SessionManager::Session {
  SessionHandle handle;
  std::shared_ptr<const assets::AvatarAssets> avatar;
  rollout::Pipeline pipeline;

  std::mutex step_mutex;  // serializes steps; guards state and closed
  rollout::SessionState state;
  bool closed = false;

  std::atomic<Clock::rep> last_used{0};
};

namespace {

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string to_json(const SessionInfo& info) {
  nlohmann::json j;
  j["id"] = info.handle.id;
  j["avatar"] = info.handle.avatar_id;
  j["created_at"] = iso_time(info.handle.created_at);
  j["config"] = nlohmann::json::parse(assets::to_json(info.handle.config));
  j["round"] = info.round;
  j["world_root"] = {info.world_root.x(), info.world_root.y(), info.world_root.z()};
  j["point_count"] = info.point_count;
  return j.dump();
}

SessionManager::SessionManager(assets::EngineConfig config, ClockFn clock)
    : config_(std::move(config)), clock_(clock ? std::move(clock) : ClockFn([] { return Clock::now(); })) {
  std::random_device rd;
  salt_ = (std::uint64_t(rd()) << 32) ^ rd();
}

SessionManager::~SessionManager() = default;

std::string SessionManager::next_id() {
  // Counter keeps ids unique per server lifetime; the salted hash keeps
  // them unguessable across restarts.
  const std::uint64_t n = ++counter_;
  char buf[40];
  std::snprintf(buf, sizeof buf, "s%llu-%016llx", static_cast<unsigned long long>(n),
                static_cast<unsigned long long>(predictor::mix_seed(salt_, n)));
  return buf;
}

std::shared_ptr<const assets::AvatarAssets> SessionManager::avatar(const std::string& avatar_id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = avatars_.find(avatar_id); it != avatars_.end()) return it->second;
  }
  const auto dir = assets::resolve_avatar(config_, avatar_id);
  if (!dir) fail(ErrorCode::NotFound, "unknown avatar '" + avatar_id + "'");
  auto loaded = std::make_shared<const assets::AvatarAssets>(assets::load_avatar(*dir, avatar_id));
  std::lock_guard lock(mutex_);
  return avatars_.try_emplace(avatar_id, std::move(loaded)).first->second;
}

std::vector<std::string> SessionManager::avatar_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, dir] : config_.avatars) ids.push_back(id);
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!config_.assets_dir.empty() && fs::is_directory(config_.assets_dir, ec)) {
    for (const auto& e : fs::directory_iterator(config_.assets_dir, ec)) {
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) {
        const auto id = e.path().filename().string();
        if (!config_.avatars.count(id)) ids.push_back(id);
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

SessionHandle SessionManager::create_session(const std::string& avatar_id,
                                             std::optional<assets::PredictorConfig> config,
                                             const Vec3& world_origin) {
  reap_expired();
  {
    std::lock_guard lock(mutex_);
    if (sessions_.size() >= config_.limits.max_sessions) {
      fail(ErrorCode::OutOfRange, "session limit reached");
    }
  }
  auto session = std::make_shared<Session>();
  session->avatar = avatar(avatar_id);
  session->handle.avatar_id = avatar_id;
  session->handle.config = config.value_or(config_.predictor);
  session->handle.config.validate();
  session->handle.created_at = std::chrono::system_clock::now();
  session->pipeline = assets::make_pipeline(*session->avatar, session->handle.config);
  session->state = rollout::init_session(session->avatar->standing, world_origin, session->pipeline);
  session->last_used = clock_().time_since_epoch().count();

  std::lock_guard lock(mutex_);
  session->handle.id = next_id();
  sessions_[session->handle.id] = session;
  return session->handle;
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (closed_.count(id)) fail(ErrorCode::Expired, "session " + id + " " + closed_[id]);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::NotFound, "unknown session " + id);
  const auto idle = clock_().time_since_epoch().count() - it->second->last_used.load();
  const auto limit = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(config_.limits.idle_timeout_seconds));
  if (idle > limit.count()) {
    closed_[id] = "expired";
    sessions_.erase(it);
    fail(ErrorCode::Expired, "session " + id + " expired");
  }
  it->second->last_used = clock_().time_since_epoch().count();
  return it->second;
}

rollout::WorldFrame SessionManager::step_frame(const std::string& id, ActionLabel action) {
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "invalid action");
  const auto session = find(id);
  std::lock_guard lock(session->step_mutex);
  if (session->closed) fail(ErrorCode::Expired, "session " + id + " closed");
  auto result = rollout::step(session->state, action, session->pipeline);
  session->state = std::move(result.state);
  session->last_used = clock_().time_since_epoch().count();
  return std::move(result.frame);
}

protocol::FrameMessage SessionManager::step_session(const std::string& id, ActionLabel action,
                                                    protocol::PayloadKind kind,
                                                    std::uint32_t dropped) {
  if (kind == protocol::PayloadKind::Points) {
    return protocol::points_message(step_frame(id, action), dropped);
  }
  const auto session = find(id);
  if (!session->avatar->base) fail(ErrorCode::NotFound, "avatar has no base attributes for splats");
  const auto frame = step_frame(id, action);
  const auto composed = splat::compose_frame(frame.local, *frame.world_positions, *session->avatar->base,
                                             session->avatar->upscale);
  auto m = protocol::splats_message(frame, composed.splats, dropped);
  if (m.point_count > config_.limits.max_points_per_frame) {
    fail(ErrorCode::OutOfRange, "frame exceeds max_points_per_frame");
  }
  return m;
}

SessionInfo SessionManager::describe(const std::string& id) {
  const auto session = find(id);
  std::lock_guard lock(session->step_mutex);
  SessionInfo info;
  info.handle = session->handle;
  info.round = session->state.round;
  info.world_root = session->state.world_root;
  info.point_count = session->state.world_positions ? session->state.world_positions->size() : 0;
  return info;
}

void SessionManager::close_session(const std::string& id) {
  std::shared_ptr<Session> session;
  {
    std::lock_guard lock(mutex_);
    if (closed_.count(id)) fail(ErrorCode::Expired, "session " + id + " " + closed_[id]);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorCode::NotFound, "unknown session " + id);
    session = it->second;
    sessions_.erase(it);
    closed_[id] = "closed";
  }
  std::lock_guard lock(session->step_mutex);  // wait out an in-flight step
  session->closed = true;
}

std::size_t SessionManager::reap_expired() {
  std::vector<std::shared_ptr<Session>> reaped;
  {
    std::lock_guard lock(mutex_);
    const auto now = clock_().time_since_epoch().count();
    const auto limit = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(config_.limits.idle_timeout_seconds));
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_used.load() > limit.count()) {
        closed_[it->first] = "expired";
        reaped.push_back(it->second);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (const auto& s : reaped) {
    std::lock_guard lock(s->step_mutex);
    s->closed = true;
  }
  return reaped.size();
}

std::size_t SessionManager::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

// ---- ActionStream ----

ActionStream::ActionStream(SessionManager& manager, std::string session_id, FrameFn on_frame,
                           ErrorFn on_error, protocol::PayloadKind kind)
    : manager_(manager),
      id_(std::move(session_id)),
      on_frame_(std::move(on_frame)),
      on_error_(std::move(on_error)),
      kind_(kind),
      worker_([this] { run(); }) {}

ActionStream::~ActionStream() { close(); }

void ActionStream::push(ActionLabel action) {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    ++counters_.sends;
    if (pending_) ++counters_.dropped;
    pending_ = action;
  }
  cv_.notify_all();
}

void ActionStream::drain() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return stopping_ || (!pending_ && !in_flight_); });
}

void ActionStream::close() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && !worker_.joinable()) return;
    stopping_ = true;
    if (pending_) {
      ++counters_.dropped;
      pending_.reset();
    }
  }
  cv_.notify_all();
  if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) worker_.join();
}

ActionStream::Counters ActionStream::counters() const {
  std::lock_guard lock(mutex_);
  return counters_;
}

void ActionStream::run() {
  for (;;) {
    ActionLabel action;
    std::uint32_t dropped;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || pending_.has_value(); });
      if (stopping_) return;
      action = *pending_;
      pending_.reset();
      in_flight_ = true;
      dropped = static_cast<std::uint32_t>(counters_.dropped);
    }
    std::optional<protocol::FrameMessage> message;
    std::optional<Error> error;
    try {
      message = manager_.step_session(id_, action, kind_, dropped);
    } catch (const Error& e) {
      error = e;
    } catch (const std::exception& e) {
      error = Error(ErrorCode::InvalidArgument, e.what());
    }
    {
      std::lock_guard lock(mutex_);
      if (message) {
        ++counters_.steps;
        message->dropped = static_cast<std::uint32_t>(counters_.dropped);
      } else {
        ++counters_.errors;
      }
    }
    if (message && on_frame_) on_frame_(*message);
    if (error && on_error_) on_error_(*error);
    {
      std::lock_guard lock(mutex_);
      in_flight_ = false;
    }
    cv_.notify_all();
  }
}

}  // namespace avsim::service
