#pragma once

// TCP plumbing for the ops-message protocol. The harvester binds the
// server; the monitor and extractor connect as clients.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "lims/format.hpp"
#include "lims/framing.hpp"

namespace lims::net {

enum class EndpointRole { server, client };

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 5801;
  EndpointRole role = EndpointRole::client;
};

/// Owning TCP socket.
class Socket : public ByteSource {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept;
  ~Socket() override;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void send_all(std::string_view bytes, Deadline deadline);
  std::size_t read_some(std::span<char> buf, Deadline deadline) override;
  /// Wakes any thread blocked on this socket.
  void shutdown();
  void close();

 private:
  int fd_ = -1;
};

Socket connect(const Endpoint& endpoint, std::chrono::milliseconds timeout);

class Listener {
 public:
  /// Port 0 picks an ephemeral port. Throws BindFailure.
  explicit Listener(const Endpoint& endpoint);
  std::uint16_t port() const { return port_; }
  /// Returns an invalid socket on timeout or after shutdown().
  Socket accept(std::chrono::milliseconds timeout);
  void shutdown();

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
  std::atomic<bool> closed_{false};
};

struct Timeouts {
  std::chrono::milliseconds connect{5'000};
  FrameLimits frame;
};

/// A reply plus an optional trailing payload frame (the readback document).
struct Reply {
  OpsMessage message;
  std::optional<std::string> attachment;

  Reply(OpsMessage m) : message(std::move(m)) {}  // NOLINT: implicit by design of handlers
  Reply(OpsMessage m, std::string a) : message(std::move(m)), attachment(std::move(a)) {}
};

/// Framed ops-message exchange over one socket. Either side may issue
/// requests; replies are checked to be ack or error.
class Connection {
 public:
  explicit Connection(Socket sock, Timeouts timeouts = {}) : sock_(std::move(sock)), timeouts_(timeouts) {}

  void send(const OpsMessage& msg);
  void send_raw(std::string_view payload);
  /// Decodes and schema-validates; MalformedXml/SchemaViolation surface as FormatError.
  OpsMessage receive(std::optional<std::chrono::milliseconds> header_timeout = std::nullopt);
  std::string receive_raw(std::optional<std::chrono::milliseconds> header_timeout = std::nullopt);
  /// Sends `msg` and waits for its ack/error. With `expect_attachment`, an
  /// ack is followed by one more frame that is returned as the attachment.
  Reply request(const OpsMessage& msg, bool expect_attachment = false);

  Socket& socket() { return sock_; }

 private:
  Socket sock_;
  Timeouts timeouts_;
};

/// One-shot request: connect, exchange, close.
OpsMessage request(const Endpoint& endpoint, const OpsMessage& msg, const Timeouts& timeouts = {});
Reply request_with_attachment(const Endpoint& endpoint, const OpsMessage& msg, const Timeouts& timeouts = {});

using Handler = std::function<Reply(const OpsMessage&)>;

/// Concurrent framed server. Each connection reads a frame, validates it,
/// calls the handler and writes the reply; schema failures answer with an
/// E_SCHEMA error and the connection stays open.
class Server {
 public:
  Server(const Endpoint& endpoint, Handler handler, Timeouts timeouts = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const { return listener_.port(); }
  void stop();

 private:
  void accept_loop();
  void serve_connection(std::shared_ptr<Socket> sock, std::shared_ptr<std::atomic<bool>> done);

  Listener listener_;
  Handler handler_;
  Timeouts timeouts_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  void reap_finished();

  std::list<std::shared_ptr<Socket>> live_;
  std::list<Worker> workers_;
  std::thread acceptor_;
};

std::unique_ptr<Server> serve(const Endpoint& endpoint, Handler handler, Timeouts timeouts = {});

}  // namespace lims::net
