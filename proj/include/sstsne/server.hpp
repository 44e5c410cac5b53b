#pragma once

#include <memory>
#include <string>

#include "sstsne/service.hpp"

namespace sstsne::service {

/// HTTP/1.1 + WebSocket front end for a ServiceCore. GET
/// /sessions/{id}/stream upgrades to a WebSocket carrying binary frames;
/// text messages sent by the client are treated as action requests and
/// answered with the same JSON as POST /sessions/{id}/actions.
class Server {
 public:
  Server(ServiceCore& core, const std::string& address, unsigned short port, int threads = 2);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving in background threads. Throws
  /// std::system_error when the address cannot be bound.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  unsigned short port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sstsne::service
