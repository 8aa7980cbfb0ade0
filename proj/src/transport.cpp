#include "dmest/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace dmest {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

void write_all(int fd, const char* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

// Returns false on clean EOF at the first byte; throws on mid-frame EOF.
bool read_exact(int fd, char* data, std::size_t len, bool eof_ok_at_start) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    if (n == 0) {
      if (got == 0 && eof_ok_at_start) return false;
      throw TransportError("recv: connection closed mid-frame");
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

// Reads one full frame (prefix included) or returns empty on clean EOF.
std::string read_frame(int fd) {
  char header[4];
  if (!read_exact(fd, header, 4, true)) return {};
  const auto* u = reinterpret_cast<const unsigned char*>(header);
  const std::size_t frame_len = (static_cast<std::size_t>(u[0]) << 24) |
                                (static_cast<std::size_t>(u[1]) << 16) |
                                (static_cast<std::size_t>(u[2]) << 8) |
                                static_cast<std::size_t>(u[3]);
  if (frame_len > kMaxFrameBytes)
    throw FrameTooLarge("recv: frame exceeds 64 MiB");
  std::string frame(4 + frame_len, '\0');
  std::memcpy(frame.data(), header, 4);
  if (frame_len > 0) read_exact(fd, frame.data() + 4, frame_len, false);
  return frame;
}

void send_message(int fd, const Message& msg) {
  const std::string frame = encode_message(msg);
  write_all(fd, frame.data(), frame.size());
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw TransportError("bad IPv4 address: " + host);
  return addr;
}

}  // namespace

TcpCoordinatorLink::TcpCoordinatorLink(const std::string& host, std::uint16_t port,
                                       int expected)
    : expected_(expected) {
  if (expected < 1) throw TransportError("coordinator expects at least one worker");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw_errno("socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr(host, port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw_errno("bind");
  if (::listen(listen_fd_, expected) != 0) throw_errno("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len) != 0)
    throw_errno("getsockname");
  port_ = ntohs(bound.sin_port);
}

TcpCoordinatorLink::~TcpCoordinatorLink() {
  for (int fd : conn_fds_)
    if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
  for (auto& t : readers_)
    if (t.joinable()) t.join();
  for (int fd : conn_fds_)
    if (fd >= 0) ::close(fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpCoordinatorLink::accept_all() {
  if (accepted_) return;
  for (int i = 0; i < expected_; ++i) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) throw_errno("accept");
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    conn_fds_.push_back(fd);
  }
  accepted_ = true;
  live_readers_ = expected_;
  for (std::size_t i = 0; i < conn_fds_.size(); ++i)
    readers_.emplace_back([this, i] { reader_loop(i); });
}

void TcpCoordinatorLink::reader_loop(std::size_t conn_index) {
  const int fd = conn_fds_[conn_index];
  try {
    for (;;) {
      const std::string frame = read_frame(fd);
      if (frame.empty()) break;  // worker hung up
      Message msg = decode_message(frame);
      std::lock_guard lock(mu_);
      if (msg.kind() == MessageKind::AssignShard) {
        const std::size_t id = static_cast<std::size_t>(msg.machine_id);
        if (machine_fd_.size() <= id) machine_fd_.resize(id + 1, -1);
        machine_fd_[id] = fd;
      }
      inbox_.push_back(std::move(msg));
      cv_.notify_all();
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    if (reader_error_.empty())
      reader_error_ = "worker connection " + std::to_string(conn_index) + ": " + e.what();
  }
  std::lock_guard lock(mu_);
  --live_readers_;
  cv_.notify_all();
}

void TcpCoordinatorLink::send(int machine_id, const Message& msg) {
  accept_all();
  int fd = -1;
  {
    std::lock_guard lock(mu_);
    if (machine_id >= 0 && static_cast<std::size_t>(machine_id) < machine_fd_.size())
      fd = machine_fd_[static_cast<std::size_t>(machine_id)];
  }
  if (fd < 0)
    throw TransportError("send: machine " + std::to_string(machine_id) +
                         " never registered");
  send_message(fd, msg);
}

Message TcpCoordinatorLink::recv() {
  accept_all();
  std::unique_lock lock(mu_);
  // Workers hold their connection until Done, so a dead reader while the
  // coordinator still expects messages is a failed machine, not a shutdown.
  cv_.wait(lock, [this] {
    return !inbox_.empty() || live_readers_ < expected_ || !reader_error_.empty();
  });
  if (!inbox_.empty()) {
    Message msg = std::move(inbox_.front());
    inbox_.pop_front();
    return msg;
  }
  if (!reader_error_.empty()) throw TransportError("recv: " + reader_error_);
  throw TransportError("recv: a worker disconnected mid-protocol");
}

void TcpCoordinatorLink::close_connections() {
  for (int fd : conn_fds_)
    if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
}

TcpWorkerLink::TcpWorkerLink(const std::string& host, std::uint16_t port,
                             int max_retries) {
  sockaddr_in addr = make_addr(host, port);
  for (int attempt = 0;; ++attempt) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw_errno("socket");
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) break;
    ::close(fd_);
    fd_ = -1;
    if (attempt >= max_retries) throw_errno("connect");
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpWorkerLink::~TcpWorkerLink() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpWorkerLink::send(const Message& msg) { send_message(fd_, msg); }

Message TcpWorkerLink::recv() {
  const std::string frame = read_frame(fd_);
  if (frame.empty()) throw TransportError("recv: coordinator closed the connection");
  return decode_message(frame);
}

}  // namespace dmest
