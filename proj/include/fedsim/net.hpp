#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/protocol.hpp"

namespace fedsim::net {

using Millis = std::chrono::milliseconds;

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

// "host:port"; throws kInvalidArgument.
Endpoint parse_endpoint(const std::string& addr);

// Owning TCP socket carrying protocol frames.
class Stream {
 public:
  Stream() = default;
  explicit Stream(int fd) : fd_(fd) {}
  Stream(Stream&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Stream& operator=(Stream&& o) noexcept;
  Stream(const Stream&) = delete;
  Stream& operator=(const Stream&) = delete;
  ~Stream();

  // Throws kConnectionFailed or kTimeout.
  static Stream connect(const std::string& addr, Millis timeout);

  void send(const proto::Message& m);
  // Throws kTimeout, kConnectionFailed (peer closed or reset) and the
  // protocol decoding errors. std::nullopt on a clean close between frames.
  std::optional<proto::Message> recv(Millis timeout);

  // Wakes a thread blocked in recv on this socket.
  void shutdown();
  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  // False on EOF before any byte when allow_eof.
  bool read_exact(std::uint8_t* dst, std::size_t n, std::chrono::steady_clock::time_point deadline, bool allow_eof);

  int fd_ = -1;
};

// One request, one reply, fresh connection.
proto::Message call(const std::string& addr, const proto::Message& request, Millis timeout);

// Accept loop dispatching each connection to its own thread. The handler
// maps a request to a reply; a std::nullopt reply closes the connection.
// Errors thrown by the handler are answered with an ERROR frame.
class Server {
 public:
  using Handler = std::function<std::optional<proto::Message>(const proto::Message&)>;

  // Binds immediately; port 0 picks a free port. Throws kBindFailure.
  Server(const std::string& addr, Handler handler);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  Endpoint endpoint() const { return endpoint_; }
  std::string address() const { return endpoint_.str(); }

  // Stops accepting and closes every open connection. Idempotent.
  void stop();
  bool running() const { return !stopping_; }

  Millis idle_timeout{30000};

 private:
  void accept_loop();
  void serve(int fd);

  Endpoint endpoint_;
  Handler handler_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::set<int> open_;
  struct Worker {
    std::shared_ptr<std::atomic<bool>> done;
    std::jthread thread;
  };
  std::vector<Worker> workers_;
  std::jthread acceptor_;
};

}  // namespace fedsim::net
