#include "fedsim/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace fedsim::net {

using proto::Status;

namespace {

using Clock = std::chrono::steady_clock;

std::string sys_error(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  auto port = std::to_string(ep.port);
  const char* host = ep.host.empty() || ep.host == "*" ? nullptr : ep.host.c_str();
  if (!host) hints.ai_flags = AI_PASSIVE;
  int rc = ::getaddrinfo(host, port.c_str(), &hints, &res);
  if (rc != 0 || !res) throw Error(ErrorCode::kConnectionFailed, "cannot resolve " + ep.str() + ": " + gai_strerror(rc));
  sockaddr_in out{};
  std::memcpy(&out, res->ai_addr, sizeof out);
  ::freeaddrinfo(res);
  return out;
}

Status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kMalformedPayload:
    case ErrorCode::kLayoutMismatch:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kOrphanRecord:
      return proto::Status::kBadRequest;
    case ErrorCode::kUnknownClient:
    case ErrorCode::kTaskNotFound:
      return proto::Status::kNotFound;
    case ErrorCode::kTruncatedFrame:
    case ErrorCode::kBadMagic:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kOversizePayload:
    case ErrorCode::kUnknownMessageType:
      return proto::Status::kProtocol;
    default:
      return proto::Status::kInternal;
  }
}

}  // namespace

Endpoint parse_endpoint(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0) throw Error(ErrorCode::kInvalidArgument, "address must be host:port, got '" + addr + "'");
  Endpoint ep;
  ep.host = addr.substr(0, colon);
  auto port = std::string_view(addr).substr(colon + 1);
  unsigned value = 0;
  auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (port.empty() || ec != std::errc{} || p != port.data() + port.size() || value > 65535) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in '" + addr + "'");
  }
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

Stream& Stream::operator=(Stream&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

Stream::~Stream() {
  if (fd_ >= 0) ::close(fd_);
}

Stream Stream::connect(const std::string& addr, Millis timeout) {
  auto ep = parse_endpoint(addr);
  auto sa = resolve(ep);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::kConnectionFailed, sys_error("socket"));
  Stream s(fd);
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
  if (rc < 0 && errno != EINPROGRESS) throw Error(ErrorCode::kConnectionFailed, "connect " + addr + ": " + std::strerror(errno));
  if (rc < 0) {
    pollfd p{fd, POLLOUT, 0};
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc == 0) throw Error(ErrorCode::kTimeout, "connect " + addr + " timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc < 0 || err != 0) {
      throw Error(ErrorCode::kConnectionFailed, "connect " + addr + ": " + std::strerror(err ? err : errno));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void Stream::send(const proto::Message& m) {
  auto bytes = proto::encode(m);
  std::size_t off = 0;
  while (off < bytes.size()) {
    auto n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kConnectionFailed, sys_error("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool Stream::read_exact(std::uint8_t* dst, std::size_t n, Clock::time_point deadline, bool allow_eof) {
  std::size_t got = 0;
  while (got < n) {
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kConnectionFailed, sys_error("poll"));
    }
    if (rc == 0) throw Error(ErrorCode::kTimeout, "no data within deadline");
    auto r = ::recv(fd_, dst + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(ErrorCode::kConnectionFailed, sys_error("recv"));
    }
    if (r == 0) {
      if (got == 0 && allow_eof) return false;
      throw Error(ErrorCode::kConnectionFailed, "peer closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::optional<proto::Message> Stream::recv(Millis timeout) {
  auto deadline = Clock::now() + timeout;
  std::array<std::uint8_t, proto::kHeaderSize> header{};
  if (!read_exact(header.data(), header.size(), deadline, true)) return std::nullopt;
  auto h = proto::parse_header(header);
  Bytes payload(h.payload_len);
  if (h.payload_len > 0) read_exact(payload.data(), payload.size(), deadline, false);
  return proto::decode_payload(h.type, payload);
}

void Stream::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

proto::Message call(const std::string& addr, const proto::Message& request, Millis timeout) {
  auto s = Stream::connect(addr, timeout);
  s.send(request);
  auto reply = s.recv(timeout);
  if (!reply) throw Error(ErrorCode::kConnectionFailed, addr + " closed without replying");
  return std::move(*reply);
}

Server::Server(const std::string& addr, Handler handler) : handler_(std::move(handler)) {
  auto ep = parse_endpoint(addr);
  sockaddr_in sa;
  try {
    sa = resolve(ep);
  } catch (const Error& e) {
    throw Error(ErrorCode::kBindFailure, e.what());
  }
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kBindFailure, sys_error("socket"));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) < 0 || ::listen(listen_fd_, 64) < 0) {
    auto msg = "bind " + addr + ": " + std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::kBindFailure, msg);
  }
  socklen_t len = sizeof sa;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  endpoint_.host = ep.host.empty() || ep.host == "*" || ep.host == "0.0.0.0" ? "127.0.0.1" : ep.host;
  endpoint_.port = ntohs(sa.sin_port);
  acceptor_ = std::jthread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

void Server::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mu_);
    for (int fd : open_) ::shutdown(fd, SHUT_RDWR);
  }
  std::vector<Worker> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  workers.clear();  // joins
  ::close(listen_fd_);
}

void Server::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    open_.insert(fd);
    std::erase_if(workers_, [](const Worker& w) { return w.done->load(); });
    auto done = std::make_shared<std::atomic<bool>>(false);
    workers_.push_back({done, std::jthread([this, fd, done] {
                          serve(fd);
                          *done = true;
                        })});
  }
}

void Server::serve(int fd) {
  Stream s(fd);
  try {
    while (!stopping_) {
      std::optional<proto::Message> req;
      try {
        req = s.recv(idle_timeout);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kTimeout || e.code() == ErrorCode::kConnectionFailed) break;
        s.send(proto::error_reply(status_for(e.code()), e.what()));
        break;
      }
      if (!req) break;
      std::optional<proto::Message> reply;
      try {
        reply = handler_(*req);
      } catch (const Error& e) {
        reply = proto::error_reply(status_for(e.code()), e.what());
      } catch (const std::exception& e) {
        reply = proto::error_reply(Status::kInternal, e.what());
      }
      if (!reply) break;
      s.send(*reply);
    }
  } catch (const std::exception&) {
    // Peer went away while we were replying.
  }
  std::lock_guard lock(mu_);
  open_.erase(fd);
  // Stream closes fd on scope exit.
}

}  // namespace fedsim::net
