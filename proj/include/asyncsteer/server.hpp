#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "asyncsteer/session.hpp"

namespace asyncsteer {

/// Outbound snapshots a client may have queued before the oldest is dropped.
inline constexpr std::size_t kClientQueueDepth = 8;

/// Serves one Session on a TCP port. Each connection is either a raw stream
/// of length-prefixed JSON frames or, when it opens with an HTTP GET, a
/// WebSocket carrying one JSON frame per text message. Clients get HELLO on
/// connect, then every broadcast SNAPSHOT; they send COMMAND frames and get
/// ACK or REJECT back. A malformed frame closes that connection only.
class Server {
 public:
  /// Binds immediately; port 0 picks a free port. Throws std::system_error
  /// when the address cannot be bound.
  Server(Session& session, const std::string& address, std::uint16_t port);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const;
  void start();
  void stop();

  std::size_t client_count() const;
  /// Snapshots discarded from slow clients' queues so far.
  std::size_t dropped_snapshots() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace asyncsteer
