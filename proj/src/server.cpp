#include "avsim/server.hpp"

#include "httplib.h"
#include "json.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <list>
#include <sstream>

namespace avsim::service {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Expired: return 410;
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownAction:
    case ErrorCode::MalformedFile: return 400;
    case ErrorCode::OutOfRange: return 422;
    default: return 500;
  }
}

namespace {

std::string error_json(const Error& e) {
  return json{{"error", e.what()}, {"code", std::string(to_string(e.code()))}}.dump();
}

template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    res.status = http_status(e.code());
    res.set_content(error_json(e), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(json{{"error", e.what()}, {"code", "internal"}}.dump(), "application/json");
  }
}

protocol::PayloadKind kind_param(const httplib::Request& req) {
  if (!req.has_param("kind")) return protocol::PayloadKind::Points;
  const auto kind = protocol::parse_kind(req.get_param_value("kind"));
  if (!kind) fail(ErrorCode::InvalidArgument, "kind must be points or splats");
  return *kind;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool send_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool send_all(int fd, const std::string& s) {
  return send_all(fd, reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

}  // namespace

struct Server::Impl {
  SessionManager& manager;
  ServerOptions options;
  httplib::Server http;
  std::thread http_thread;
  std::thread accept_thread;
  std::thread reaper_thread;
  int listen_fd = -1;
  int http_port = 0;
  int ws_port = 0;
  std::atomic<bool> running{false};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;

  struct Connection {
    int fd = -1;
    std::thread thread;
    std::atomic<bool> done{false};
  };
  std::mutex conn_mutex;
  std::list<Connection> connections;

  Impl(SessionManager& m, ServerOptions o) : manager(m), options(std::move(o)) { routes(); }

  void routes();
  void bind_stream();
  void accept_loop();
  void serve_stream(int fd);
  void reap_connections(bool all);
};

void Server::Impl::routes() {
  http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = req.body.empty() ? json::object() : json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) fail(ErrorCode::InvalidArgument, "body must be a JSON object");
      if (!body.contains("avatar") || !body["avatar"].is_string()) {
        fail(ErrorCode::InvalidArgument, "missing \"avatar\"");
      }
      std::optional<assets::PredictorConfig> config;
      if (body.contains("config")) config = assets::parse_predictor_config(body["config"].dump());
      const auto handle = manager.create_session(body["avatar"].get<std::string>(), config);
      auto info = json::parse(to_json(manager.describe(handle.id)));
      info["stream"] = "/sessions/" + handle.id + "/stream";
      info["stream_port"] = ws_port;
      res.status = 201;
      res.set_content(info.dump(), "application/json");
    });
  });
  http.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(to_json(manager.describe(req.matches[1])), "application/json"); });
  });
  http.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      manager.close_session(req.matches[1]);
      res.status = 204;
    });
  });
  http.Post(R"(/sessions/([^/]+)/step)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto action = protocol::parse_control(req.body);
      const auto message = manager.step_session(req.matches[1], action, kind_param(req));
      const auto bytes = protocol::encode_frame(message);
      res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    });
  });
  http.Get("/avatars", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(json(manager.avatar_ids()).dump(), "application/json"); });
  });
  http.Get(R"(/avatars/([^/]+)/manifest.json)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(manager.avatar(req.matches[1])->manifest, "application/json"); });
  });
  http.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"sessions", manager.session_count()}, {"stream_port", ws_port}}.dump(),
                    "application/json");
  });
  const auto& static_dir = manager.config().static_dir;
  if (!static_dir.empty() && !http.set_mount_point("/", static_dir)) {
    fail(ErrorCode::Io, "static directory " + static_dir + " not found");
  }
}

void Server::Impl::bind_stream() {
  listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd < 0) fail(ErrorCode::Io, "socket() failed");
  int yes = 1;
  ::setsockopt(listen_fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(
      options.stream_port < 0 ? http_port + 1 : options.stream_port));
  if (::inet_pton(AF_INET, options.host.c_str(), &addr.sin_addr) != 1) {
    fail(ErrorCode::InvalidArgument, "host must be an IPv4 address");
  }
  if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd, 16) != 0) {
    ::close(listen_fd);
    listen_fd = -1;
    fail(ErrorCode::Io, "cannot bind stream port");
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ws_port = ntohs(addr.sin_port);
}

void Server::Impl::accept_loop() {
  while (running) {
    pollfd p{listen_fd, POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) {
      reap_connections(false);
      continue;
    }
    const int fd = ::accept(listen_fd, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard lock(conn_mutex);
    auto& c = connections.emplace_back();
    c.fd = fd;
    c.thread = std::thread([this, &c] {
      serve_stream(c.fd);
      c.done = true;
    });
  }
}

void Server::Impl::reap_connections(bool all) {
  std::lock_guard lock(conn_mutex);
  for (auto it = connections.begin(); it != connections.end();) {
    if (all) ::shutdown(it->fd, SHUT_RDWR);
    if (all || it->done) {
      if (it->thread.joinable()) it->thread.join();
      ::close(it->fd);
      it = connections.erase(it);
    } else {
      ++it;
    }
  }
}

void Server::Impl::serve_stream(int fd) {
  // Handshake.
  std::string request;
  char buf[4096];
  while (request.find("\r\n\r\n") == std::string::npos) {
    const ssize_t k = ::recv(fd, buf, sizeof buf, 0);
    if (k <= 0 || request.size() > 16384) return;
    request.append(buf, static_cast<std::size_t>(k));
  }
  const std::size_t header_end = request.find("\r\n\r\n") + 4;
  std::istringstream in(request.substr(0, header_end));
  std::string method, target, version, line;
  in >> method >> target >> version;
  std::getline(in, line);
  std::map<std::string, std::string> headers;
  while (std::getline(in, line) && line != "\r") {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    auto value = line.substr(colon + 1);
    value.erase(0, value.find_first_not_of(' '));
    while (!value.empty() && (value.back() == '\r' || value.back() == ' ')) value.pop_back();
    headers[lower(line.substr(0, colon))] = value;
  }
  auto reject = [&](int status, const std::string& body) {
    send_all(fd, "HTTP/1.1 " + std::to_string(status) + " Error\r\nContent-Type: application/json\r\n"
                 "Content-Length: " + std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" + body);
  };
  std::string path = target, query;
  if (const auto q = target.find('?'); q != std::string::npos) {
    path = target.substr(0, q);
    query = target.substr(q + 1);
  }
  const std::string prefix = "/sessions/", suffix = "/stream";
  if (method != "GET" || lower(headers["upgrade"]) != "websocket" || !headers.count("sec-websocket-key") ||
      path.size() <= prefix.size() + suffix.size() || path.rfind(prefix, 0) != 0 ||
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) != 0) {
    reject(400, json{{"error", "expected a websocket upgrade on /sessions/{id}/stream"}}.dump());
    return;
  }
  const std::string id = path.substr(prefix.size(), path.size() - prefix.size() - suffix.size());
  protocol::PayloadKind kind = protocol::PayloadKind::Points;
  if (query == "kind=splats") kind = protocol::PayloadKind::Splats;
  try {
    manager.describe(id);
  } catch (const Error& e) {
    reject(http_status(e.code()), error_json(e));
    return;
  }
  if (!send_all(fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                    "Sec-WebSocket-Accept: " + protocol::ws::accept_key(headers["sec-websocket-key"]) +
                    "\r\n\r\n")) {
    return;
  }

  std::mutex send_mutex;
  auto send_frame = [&](protocol::ws::Opcode op, std::vector<std::uint8_t> payload) {
    const auto bytes = protocol::ws::encode({true, op, std::move(payload)});
    std::lock_guard lock(send_mutex);
    return send_all(fd, bytes.data(), bytes.size());
  };
  auto send_text = [&](const std::string& s) {
    return send_frame(protocol::ws::Opcode::Text, std::vector<std::uint8_t>(s.begin(), s.end()));
  };

  ActionStream stream(
      manager, id, [&](const protocol::FrameMessage& m) { send_frame(protocol::ws::Opcode::Binary, protocol::encode_frame(m)); },
      [&](const Error& e) { send_text(error_json(e)); }, kind);

  std::vector<std::uint8_t> pending(request.begin() + static_cast<std::ptrdiff_t>(header_end), request.end());
  std::vector<std::uint8_t> message;
  bool open = true;
  while (open) {
    try {
      while (auto parsed = protocol::ws::decode(pending, 1 << 16)) {
        pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(parsed->consumed));
        auto& f = parsed->frame;
        using protocol::ws::Opcode;
        if (!parsed->masked) fail(ErrorCode::InvalidArgument, "client frames must be masked");
        if (f.opcode == Opcode::Close) {
          send_frame(Opcode::Close, {});
          open = false;
          break;
        }
        if (f.opcode == Opcode::Ping) {
          send_frame(Opcode::Pong, f.payload);
          continue;
        }
        if (f.opcode == Opcode::Pong) continue;
        message.insert(message.end(), f.payload.begin(), f.payload.end());
        if (!f.fin) continue;
        try {
          stream.push(protocol::parse_control(std::string(message.begin(), message.end())));
        } catch (const Error& e) {
          send_text(error_json(e));
        }
        message.clear();
      }
    } catch (const Error&) {
      break;  // protocol violation: drop the connection, the session survives
    }
    if (!open) break;
    const ssize_t k = ::recv(fd, buf, sizeof buf, 0);
    if (k <= 0) break;
    pending.insert(pending.end(), buf, buf + k);
  }
  stream.close();
}

Server::Server(SessionManager& manager, ServerOptions options)
    : impl_(std::make_unique<Impl>(manager, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& d = *impl_;
  if (d.running) return;
  if (d.options.port == 0) {
    d.http_port = d.http.bind_to_any_port(d.options.host);
    if (d.http_port <= 0) fail(ErrorCode::Io, "cannot bind http port");
  } else {
    if (!d.http.bind_to_port(d.options.host, d.options.port)) {
      fail(ErrorCode::Io, "cannot bind http port " + std::to_string(d.options.port));
    }
    d.http_port = d.options.port;
  }
  d.bind_stream();
  d.running = true;
  d.http_thread = std::thread([&d] { d.http.listen_after_bind(); });
  d.accept_thread = std::thread([&d] { d.accept_loop(); });
  d.reaper_thread = std::thread([&d] {
    std::unique_lock lock(d.stop_mutex);
    while (d.running) {
      d.stop_cv.wait_for(lock, std::chrono::duration<double>(d.options.reap_interval_seconds));
      if (d.running) d.manager.reap_expired();
    }
  });
  d.http.wait_until_ready();
}

void Server::stop() {
  auto& d = *impl_;
  {
    std::lock_guard lock(d.stop_mutex);
    if (!d.running) return;
    d.running = false;
  }
  d.stop_cv.notify_all();
  d.http.stop();
  if (d.http_thread.joinable()) d.http_thread.join();
  if (d.accept_thread.joinable()) d.accept_thread.join();
  if (d.reaper_thread.joinable()) d.reaper_thread.join();
  d.reap_connections(true);
  if (d.listen_fd >= 0) ::close(d.listen_fd);
  d.listen_fd = -1;
}

void Server::wait() {
  auto& d = *impl_;
  std::unique_lock lock(d.stop_mutex);
  d.stop_cv.wait(lock, [&] { return !d.running.load(); });
}

int Server::port() const { return impl_->http_port; }
int Server::stream_port() const { return impl_->ws_port; }

}  // namespace avsim::service
