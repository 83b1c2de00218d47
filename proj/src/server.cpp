#include <hoversim/server.h>

#include <arpa/inet.h>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <hoversim/scenario.h>

namespace hoversim
{

using wire::Message;
using wire::MsgType;

std::uint16_t default_port() {
  if (const char* env = std::getenv("HOVERSIM_PORT")) {
    char*      end = nullptr;
    const long v   = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v < 65536) {
      return static_cast<std::uint16_t>(v);
    }
  }
  return kDefaultPort;
}

/* SimServer //{ */

struct SimServer::Entry
{
  std::mutex                      mutex;
  std::unique_ptr<Session>        session;
  std::unique_ptr<RealtimeRunner> runner;  // realtime sessions only; destroyed before the session
};

namespace
{

Message reply(MsgType type, std::uint32_t session, std::string payload = {}) {
  Message m;
  m.type    = type;
  m.session = session;
  m.payload = std::move(payload);
  return m;
}

Message errorReply(std::uint32_t session, std::string_view code, std::string_view message) {
  return reply(MsgType::Error, session, wire::errorPayload(code, message));
}

bool knownRequest(std::uint16_t t) {
  return t >= static_cast<std::uint16_t>(MsgType::CreateSession) && t <= static_cast<std::uint16_t>(MsgType::CloseSession);
}

std::string framesPayload(const std::vector<TaggedFrame>& frames) {
  wire::Writer w;
  w.u32(static_cast<std::uint32_t>(frames.size()));
  for (const TaggedFrame& f : frames) {
    wire::writeFrame(w, f);
  }
  return w.take();
}

}  // namespace

SimServer::SimServer() = default;

SimServer::~SimServer() = default;

std::size_t SimServer::sessionCount() const {
  std::scoped_lock lock(mutex_);
  return sessions_.size();
}

std::shared_ptr<SimServer::Entry> SimServer::find(std::uint32_t id) const {
  std::scoped_lock lock(mutex_);
  auto             it = sessions_.find(id);
  if (it == sessions_.end()) {
    throw SessionError("unknown-session", "no session with id " + std::to_string(id));
  }
  return it->second;
}

Message SimServer::handle(const Message& request) {
  try {
    Message out = dispatch(request);
    if (out.payload.size() > wire::kMaxPayload) {
      return errorReply(request.session, "reply-too-large", "reply exceeds the frame size limit; request fewer steps");
    }
    return out;
  }
  catch (const SessionError& e) {
    return errorReply(request.session, e.code(), e.what());
  }
  catch (const ConfigError& e) {
    return errorReply(request.session, "invalid-config", e.what());
  }
  catch (const wire::PayloadError& e) {
    return errorReply(request.session, "malformed-payload", e.what());
  }
  catch (const nlohmann::json::exception& e) {
    return errorReply(request.session, "invalid-config", e.what());
  }
  catch (const std::exception& e) {
    return errorReply(request.session, "internal", e.what());
  }
}

Message SimServer::dispatch(const Message& request) {

  const std::uint32_t id = request.session;

  if (!knownRequest(static_cast<std::uint16_t>(request.type))) {
    return errorReply(id, "unknown-type", "unknown message type " + std::to_string(static_cast<unsigned>(request.type)));
  }

  wire::Reader r(request.payload);

  if (request.type == MsgType::CreateSession) {
    const std::string text = r.str();
    r.end();
    const Scenario scenario = parse_scenario(nlohmann::json::parse(text));

    auto entry     = std::make_shared<Entry>();
    entry->session = std::make_unique<Session>(scenario.session);
    if (scenario.session.mode == RunMode::Realtime) {
      entry->runner = std::make_unique<RealtimeRunner>(*entry->session, entry->mutex);
    }

    std::uint32_t new_id = 0;
    {
      std::scoped_lock lock(mutex_);
      new_id = next_id_++;
      sessions_.emplace(new_id, entry);
    }
    if (entry->runner) {
      entry->runner->start();
    }

    wire::Writer w;
    w.u32(new_id);
    w.u32(static_cast<std::uint32_t>(entry->session->uavCount()));
    w.u32(static_cast<std::uint32_t>(entry->session->world().activeCells().size()));
    return reply(MsgType::SessionCreated, new_id, w.take());
  }

  if (request.type == MsgType::CloseSession) {
    r.end();
    std::shared_ptr<Entry> entry;
    {
      std::scoped_lock lock(mutex_);
      auto             it = sessions_.find(id);
      if (it == sessions_.end()) {
        throw SessionError("unknown-session", "no session with id " + std::to_string(id));
      }
      entry = it->second;
      sessions_.erase(it);
    }
    if (entry->runner) {
      entry->runner->stop();
    }
    return reply(MsgType::Ack, id);
  }

  const std::shared_ptr<Entry> entry = find(id);
  Session&                     s     = *entry->session;

  switch (request.type) {

    case MsgType::SetControl: {
      const auto [uav, input] = wire::readControl(r);
      r.end();
      std::scoped_lock lock(entry->mutex);
      s.set_control(uav, input);
      return reply(MsgType::Ack, id);
    }

    case MsgType::Step: {
      const std::uint64_t n = r.u64();
      r.end();
      if (n > kMaxStepsPerRequest) {
        throw SessionError("too-many-steps", "at most " + std::to_string(kMaxStepsPerRequest) + " steps per request");
      }
      std::scoped_lock lock(entry->mutex);
      wire::Writer     w;
      wire::writeStepResult(w, s.step(n));
      return reply(MsgType::StepResult, id, w.take());
    }

    case MsgType::SetHitlPose: {
      const std::uint32_t   uav      = r.u32();
      const Eigen::Vector3d position = r.vec3();
      Eigen::Matrix3d       R;
      for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) {
          R(i, j) = r.f64();
        }
      }
      const double timestamp = r.f64();
      r.end();
      std::scoped_lock lock(entry->mutex);
      s.set_hitl_pose(uav, position, R, timestamp);
      return reply(MsgType::Ack, id);
    }

    case MsgType::SensorRequest: {
      const std::uint32_t uav    = r.u32();
      const std::uint8_t  kind   = r.u8();
      const std::uint32_t sensor = r.u32();
      r.end();
      if (kind > static_cast<std::uint8_t>(SensorKind::Label)) {
        throw wire::PayloadError("unknown sensor kind " + std::to_string(kind));
      }
      std::scoped_lock lock(entry->mutex);
      return reply(MsgType::SensorFrames, id, framesPayload(s.request_sensor(uav, static_cast<SensorKind>(kind), sensor)));
    }

    case MsgType::Status: {
      r.end();
      SessionStatus st;
      {
        std::scoped_lock lock(entry->mutex);
        st = s.status();
      }
      if (entry->runner) {
        st.lag     = entry->runner->lag();
        st.running = entry->runner->running();
        if (const auto err = entry->runner->error()) {
          throw SessionError("diverged", *err);
        }
      }
      wire::Writer w;
      wire::writeStatus(w, st);
      return reply(MsgType::StatusReply, id, w.take());
    }

    case MsgType::PollFrames: {
      r.end();
      std::vector<TaggedFrame> frames;
      if (entry->runner) {
        frames = entry->runner->poll();
      }
      return reply(MsgType::SensorFrames, id, framesPayload(frames));
    }

    default:
      return errorReply(id, "unknown-type", "unknown message type");
  }
}

//}

/* socket helpers //{ */

namespace
{

/// Reads exactly n bytes; returns the count read before EOF.
std::size_t readFully(int fd, char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, buf + got, n - got, 0);
    if (k == 0) {
      break;
    }
    if (k < 0) {
      if (errno == EINTR) {
        continue;
      }
      break;
    }
    got += static_cast<std::size_t>(k);
  }
  return got;
}

bool writeFully(int fd, std::string_view data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t k = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) {
        continue;
      }
      return false;
    }
    sent += static_cast<std::size_t>(k);
  }
  return true;
}

[[noreturn]] void sysFail(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

}  // namespace

//}

/* TcpServer //{ */

TcpServer::TcpServer(SimServer& server, std::uint16_t port, const std::string& bind_address) : server_(server) {

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) {
    sysFail("socket");
  }
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port   = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw std::invalid_argument("bad bind address " + bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int err = errno;
    ::close(listen_fd_);
    errno = err;
    sysFail("bind port " + std::to_string(port));
  }
  if (::listen(listen_fd_, 16) < 0) {
    sysFail("listen");
  }

  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
  stop();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
  }
}

void TcpServer::serve() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, 100);
    if (ready <= 0) {
      continue;
    }
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::scoped_lock lock(clients_mutex_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    client_fds_.push_back(fd);
    client_threads_.emplace_back([this, fd] { client(fd); });
  }
}

void TcpServer::start() {
  accept_thread_ = std::thread([this] { serve(); });
}

void TcpServer::stop() {
  stopping_ = true;
  if (accept_thread_.joinable()) {
    accept_thread_.join();
  }
  std::vector<std::thread> threads;
  {
    std::scoped_lock lock(clients_mutex_);
    for (int fd : client_fds_) {
      ::shutdown(fd, SHUT_RDWR);
    }
    threads.swap(client_threads_);
  }
  for (auto& t : threads) {
    t.join();
  }
}

void TcpServer::client(int fd) {

  std::string header(wire::kHeaderSize, '\0');

  while (!stopping_) {

    const std::size_t got = readFully(fd, header.data(), header.size());
    if (got == 0) {
      break;  // orderly close between frames
    }

    Message request;
    try {
      if (got != header.size()) {
        throw wire::FrameError("connection closed inside a frame header");
      }
      const wire::Header h = wire::decodeHeader(header);
      request.type         = static_cast<MsgType>(h.type);
      request.session      = h.session;
      request.payload.resize(h.payload_len);
      if (readFully(fd, request.payload.data(), h.payload_len) != h.payload_len) {
        throw wire::FrameError("connection closed inside a frame payload");
      }
    }
    catch (const wire::FrameError& e) {
      writeFully(fd, wire::encode(errorReply(0, "malformed-frame", e.what())));
      break;
    }

    if (!writeFully(fd, wire::encode(server_.handle(request)))) {
      break;
    }
  }

  ::shutdown(fd, SHUT_RDWR);
  std::scoped_lock lock(clients_mutex_);
  std::erase(client_fds_, fd);
  ::close(fd);
}

//}

/* TcpClient //{ */

TcpClient::TcpClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) {
    sysFail("socket");
  }
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port   = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw std::invalid_argument("bad host address " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    sysFail("connect");
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpClient::~TcpClient() {
  if (fd_ >= 0) {
    ::close(fd_);
  }
}

void TcpClient::sendRaw(std::string_view bytes) {
  if (!writeFully(fd_, bytes)) {
    sysFail("send");
  }
}

Message TcpClient::receive() {
  std::string header(wire::kHeaderSize, '\0');
  if (readFully(fd_, header.data(), header.size()) != header.size()) {
    throw std::runtime_error("connection closed");
  }
  const wire::Header h = wire::decodeHeader(header);
  Message            m;
  m.type    = static_cast<MsgType>(h.type);
  m.session = h.session;
  m.payload.resize(h.payload_len);
  if (readFully(fd_, m.payload.data(), h.payload_len) != h.payload_len) {
    throw std::runtime_error("connection closed");
  }
  return m;
}

Message TcpClient::request(const Message& m) {
  sendRaw(wire::encode(m));
  return receive();
}

bool TcpClient::peerClosed() {
  char c;
  return readFully(fd_, &c, 1) == 0;
}

//}

}  // namespace hoversim
