#include "lims/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <spdlog/spdlog.h>

namespace lims::net {

namespace {

int remaining_ms(Deadline deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  if (left.count() <= 0) return 0;
  return static_cast<int>(std::min<long long>(left.count(), 1'000'000));
}

[[noreturn]] void io_error(const char* what) { throw TransportError(Errc::Io, std::string(what) + ": " + std::strerror(errno)); }

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (ep.host.empty() || ep.host == "0.0.0.0" || ep.host == "*") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw TransportError(Errc::ConnectionRefused, "cannot resolve " + ep.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::send_all(std::string_view bytes, Deadline deadline) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    pollfd p{fd_, POLLOUT, 0};
    int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) throw TransportError(Errc::Timeout, "send timed out");
    if (r < 0) {
      if (errno == EINTR) continue;
      io_error("poll");
    }
    auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(Errc::Closed, std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::size_t Socket::read_some(std::span<char> buf, Deadline deadline) {
  for (;;) {
    pollfd p{fd_, POLLIN, 0};
    int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) throw TransportError(Errc::Timeout, "no data before deadline");
    if (r < 0) {
      if (errno == EINTR) continue;
      io_error("poll");
    }
    auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) return 0;
      io_error("recv");
    }
    return static_cast<std::size_t>(n);
  }
}

Socket connect(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
  auto addr = resolve(endpoint);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid()) io_error("socket");
  int r = ::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  if (r < 0 && errno != EINPROGRESS) {
    throw TransportError(Errc::ConnectionRefused, endpoint.host + ":" + std::to_string(endpoint.port) + ": " +
                                                      std::strerror(errno));
  }
  if (r < 0) {
    pollfd p{s.fd(), POLLOUT, 0};
    int pr = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (pr == 0) throw TransportError(Errc::Timeout, "connect timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0)
      throw TransportError(Errc::ConnectionRefused,
                           endpoint.host + ":" + std::to_string(endpoint.port) + ": " + std::strerror(err));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

Listener::Listener(const Endpoint& endpoint) {
  auto addr = resolve(endpoint);
  sock_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!sock_.valid()) io_error("socket");
  int one = 1;
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(sock_.fd(), 64) < 0)
    throw TransportError(Errc::BindFailure,
                         endpoint.host + ":" + std::to_string(endpoint.port) + ": " + std::strerror(errno));
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

Socket Listener::accept(std::chrono::milliseconds timeout) {
  if (closed_) return {};
  pollfd p{sock_.fd(), POLLIN, 0};
  int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r <= 0 || closed_) return {};
  int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
  if (fd < 0) return {};
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Socket(fd);
}

void Listener::shutdown() {
  closed_ = true;
  sock_.shutdown();
}

// ---- Connection ------------------------------------------------------------

void Connection::send_raw(std::string_view payload) {
  auto bytes = frame(payload, timeouts_.frame.max_frame_size);
  sock_.send_all(bytes, std::chrono::steady_clock::now() + timeouts_.frame.body_timeout);
}

void Connection::send(const OpsMessage& msg) { send_raw(encode_ops_message(msg)); }

std::string Connection::receive_raw(std::optional<std::chrono::milliseconds> header_timeout) {
  auto limits = timeouts_.frame;
  if (header_timeout) limits.header_timeout = *header_timeout;
  return read_frame(sock_, limits);
}

OpsMessage Connection::receive(std::optional<std::chrono::milliseconds> header_timeout) {
  return decode_ops_message(receive_raw(header_timeout));
}

Reply Connection::request(const OpsMessage& msg, bool expect_attachment) {
  send(msg);
  OpsMessage reply;
  try {
    reply = decode_ops_message(receive_raw(timeouts_.frame.body_timeout));
  } catch (const FormatError& e) {
    throw TransportError(Errc::ProtocolError, std::string("invalid reply: ") + e.what());
  }
  if (reply.role != OpsRole::ack && reply.role != OpsRole::error)
    throw TransportError(Errc::ProtocolError, "reply role is " + std::string(to_string(reply.role)));
  if (expect_attachment && reply.role == OpsRole::ack) return Reply(std::move(reply), receive_raw());
  return Reply(std::move(reply));
}

OpsMessage request(const Endpoint& endpoint, const OpsMessage& msg, const Timeouts& timeouts) {
  Connection conn(connect(endpoint, timeouts.connect), timeouts);
  return conn.request(msg).message;
}

Reply request_with_attachment(const Endpoint& endpoint, const OpsMessage& msg, const Timeouts& timeouts) {
  Connection conn(connect(endpoint, timeouts.connect), timeouts);
  return conn.request(msg, true);
}

// ---- Server ----------------------------------------------------------------

Server::Server(const Endpoint& endpoint, Handler handler, Timeouts timeouts)
    : listener_(endpoint), handler_(std::move(handler)), timeouts_(timeouts) {
  acceptor_ = std::thread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

void Server::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::list<Worker> workers;
  {
    std::lock_guard lock(mu_);
    for (auto& s : live_) s->shutdown();
    workers.swap(workers_);
  }
  for (auto& w : workers)
    if (w.thread.joinable()) w.thread.join();
}

void Server::reap_finished() {
  std::list<Worker> finished;
  {
    std::lock_guard lock(mu_);
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (it->done->load()) {
        finished.splice(finished.end(), workers_, it++);
      } else {
        ++it;
      }
    }
  }
  for (auto& w : finished) w.thread.join();
}

void Server::accept_loop() {
  while (!stopping_) {
    auto sock = listener_.accept(std::chrono::milliseconds(200));
    reap_finished();
    if (!sock.valid()) continue;
    auto shared = std::make_shared<Socket>(std::move(sock));
    auto done = std::make_shared<std::atomic<bool>>(false);
    std::lock_guard lock(mu_);
    if (stopping_) break;
    live_.push_back(shared);
    workers_.push_back(Worker{std::thread([this, shared, done] { serve_connection(shared, done); }), done});
  }
}

void Server::serve_connection(std::shared_ptr<Socket> sock, std::shared_ptr<std::atomic<bool>> done) {
  auto send_frame = [&](std::string_view payload) {
    sock->send_all(frame(payload, timeouts_.frame.max_frame_size),
                   std::chrono::steady_clock::now() + timeouts_.frame.body_timeout);
  };
  try {
    while (!stopping_) {
      std::string payload;
      try {
        payload = read_frame(*sock, timeouts_.frame);
      } catch (const TransportError& e) {
        if (e.code() != Errc::Closed && e.code() != Errc::Timeout) spdlog::debug("connection dropped: {}", e.what());
        break;
      }
      std::optional<Reply> reply;
      try {
        auto msg = decode_ops_message(payload);
        reply = handler_(msg);
      } catch (const FormatError& e) {
        reply = Reply(OpsMessage::error("E_SCHEMA", e.what()));
      } catch (const std::exception& e) {
        reply = Reply(OpsMessage::error("E_INTERNAL", e.what()));
      }
      send_frame(encode_ops_message(reply->message));
      if (reply->attachment) send_frame(*reply->attachment);
    }
  } catch (const std::exception& e) {
    spdlog::debug("connection closed: {}", e.what());
  }
  std::lock_guard lock(mu_);
  live_.remove(sock);
  done->store(true);
}

std::unique_ptr<Server> serve(const Endpoint& endpoint, Handler handler, Timeouts timeouts) {
  return std::make_unique<Server>(endpoint, std::move(handler), timeouts);
}

}  // namespace lims::net
