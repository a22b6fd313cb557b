#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/net/wire.hpp"

namespace elastic::net {

// Transport failure (peer gone, reset, refused). Distinct from ProtocolError,
// which means the peer sent something malformed.
class ConnectionError : public Error {
 public:
  using Error::Error;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

inline std::string to_string(const Endpoint& e) { return e.host + ":" + std::to_string(e.port); }

// "host:port"; port 0 asks for an ephemeral port when binding.
inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw ConfigError("address '" + s + "': expected host:port");
  Endpoint e;
  e.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (*end != '\0' || v < 0 || v > 65535) throw ConfigError("address '" + s + "': bad port");
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

namespace detail {

inline sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(e.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr)
    throw ConnectionError("cannot resolve '" + e.host + "': " + ::gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(e.port);
  return addr;
}

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace detail

struct Listener {
  Fd fd;
  std::uint16_t port = 0;
};

inline Listener listen_tcp(const Endpoint& e, int backlog = 64) {
  const sockaddr_in addr = detail::resolve(e);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw ConnectionError(detail::errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw ConnectionError(detail::errno_text(("bind " + to_string(e)).c_str()));
  if (::listen(fd.get(), backlog) != 0) throw ConnectionError(detail::errno_text("listen"));
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
  return {std::move(fd), ntohs(bound.sin_port)};
}

inline void set_nodelay(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

inline Fd connect_tcp(const Endpoint& e) {
  const sockaddr_in addr = detail::resolve(e);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw ConnectionError(detail::errno_text("socket"));
  int rc;
  do {
    rc = ::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
  } while (rc != 0 && errno == EINTR);
  if (rc != 0) throw ConnectionError(detail::errno_text(("connect " + to_string(e)).c_str()));
  set_nodelay(fd.get());
  return fd;
}

inline void send_all(int fd, const std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectionError(detail::errno_text("send"));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

// false on clean EOF before the first byte; throws on EOF mid-buffer.
inline bool recv_all(int fd, std::uint8_t* data, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectionError(detail::errno_text("recv"));
    }
    if (n == 0) {
      if (got == 0) return false;
      throw ProtocolError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

inline void send_message(int fd, const WireMessage& m) {
  const auto bytes = encode(m);
  send_all(fd, bytes.data(), bytes.size());
}

// nullopt on clean EOF at a frame boundary.
inline std::optional<WireMessage> recv_message(int fd) {
  std::uint8_t header[kHeaderSize];
  if (!recv_all(fd, header, kHeaderSize)) return std::nullopt;
  const FrameHeader h = decode_header(header);
  std::vector<std::uint8_t> payload(h.length);
  if (h.length > 0 && !recv_all(fd, payload.data(), h.length))
    throw ProtocolError("connection closed mid-frame");
  return decode_payload(h.type, payload.data(), payload.size());
}

}  // namespace elastic::net
