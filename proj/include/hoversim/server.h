#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <hoversim/protocol.h>
#include <hoversim/session.h>

namespace hoversim
{

/// Port used when neither a flag nor HOVERSIM_PORT is given.
constexpr std::uint16_t kDefaultPort = 7450;

/// Upper bound on n_steps in one step request.
constexpr std::uint64_t kMaxStepsPerRequest = 1000000;

/// HOVERSIM_PORT if set and valid, kDefaultPort otherwise.
std::uint16_t default_port();

/**
 * @brief Session registry plus request dispatch.
 *
 * handle() answers every request with exactly one reply. Safe to call from
 * several threads; requests to one session are serialized on its mutex.
 */
class SimServer {
public:
  SimServer();
  ~SimServer();

  SimServer(const SimServer&)            = delete;
  SimServer& operator=(const SimServer&) = delete;

  wire::Message handle(const wire::Message& request);

  std::size_t sessionCount() const;

private:
  struct Entry;

  std::shared_ptr<Entry> find(std::uint32_t id) const;

  wire::Message dispatch(const wire::Message& request);

  mutable std::mutex                               mutex_;
  std::map<std::uint32_t, std::shared_ptr<Entry>> sessions_;
  std::uint32_t                                    next_id_ = 1;
};

/**
 * @brief Blocking TCP transport for a SimServer, one thread per client.
 *
 * Each connection carries a stream of frames. A frame that cannot be parsed
 * gets a final "malformed-frame" error reply, then the connection is closed.
 */
class TcpServer {
public:
  /// Binds and listens immediately; port 0 picks an ephemeral port.
  TcpServer(SimServer& server, std::uint16_t port, const std::string& bind_address = "127.0.0.1");
  ~TcpServer();

  TcpServer(const TcpServer&)            = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const {
    return port_;
  }

  /// Accept loop on the calling thread until stop().
  void serve();

  /// Accept loop on a background thread.
  void start();

  void stop();

private:
  void client(int fd);

  SimServer&               server_;
  int                      listen_fd_ = -1;
  std::uint16_t            port_      = 0;
  std::atomic<bool>        stopping_{false};
  std::mutex               clients_mutex_;
  std::vector<int>         client_fds_;
  std::vector<std::thread> client_threads_;
  std::thread              accept_thread_;
};

/// Minimal blocking client, used by tests and tooling.
class TcpClient {
public:
  TcpClient(const std::string& host, std::uint16_t port);
  ~TcpClient();

  TcpClient(const TcpClient&)            = delete;
  TcpClient& operator=(const TcpClient&) = delete;

  void sendRaw(std::string_view bytes);

  /// Reads one frame; throws std::runtime_error on a closed connection.
  wire::Message receive();

  wire::Message request(const wire::Message& m);

  /// True once the peer has closed the connection (reads return EOF).
  bool peerClosed();

private:
  int fd_ = -1;
};

}  // namespace hoversim
