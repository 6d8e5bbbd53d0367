#pragma once

// Network front end over a SessionManager.
//
// HTTP (port):
//   POST   /sessions               {"avatar":"id","config":{...}} -> 201 session JSON
//   GET    /sessions/{id}          -> session JSON
//   DELETE /sessions/{id}          -> 204
//   POST   /sessions/{id}/step     {"a":"W"} [?kind=points|splats] -> binary FrameMessage
//   GET    /avatars                -> ["id", ...]
//   GET    /avatars/{id}/manifest.json
//   GET    /*                      static viewer bundle when configured
// WebSocket (stream_port):
//   GET /sessions/{id}/stream[?kind=points|splats]
//   text {"a":"W"} in, binary FrameMessage out, text {"error":...} on failure.

#include "avsim/service.hpp"

#include <memory>
#include <string>

namespace avsim::service {

struct ServerOptions {
  std::string host = "0.0.0.0";
  int port = 8080;         // 0 picks a free port
  int stream_port = -1;    // -1: port + 1; 0 picks a free port
  double reap_interval_seconds = 30.0;
};

// HTTP status for an engine error code.
int http_status(ErrorCode code);

class Server {
 public:
  Server(SessionManager& manager, ServerOptions options);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds both listeners and starts serving on background threads.
  void start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

  int port() const;
  int stream_port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace avsim::service
