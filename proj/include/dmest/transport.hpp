#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dmest/message.hpp"

namespace dmest {

// Coordinator-side view of a transport: address a machine, pull the next
// inbound message. Both implementations push every message through the wire
// codec, so the arithmetic the coordinator sees is identical either way.
class CoordinatorLink {
 public:
  virtual ~CoordinatorLink() = default;
  virtual void send(int machine_id, const Message& msg) = 0;
  virtual Message recv() = 0;
};

// Worker-side view.
class WorkerLink {
 public:
  virtual ~WorkerLink() = default;
  virtual void send(const Message& msg) = 0;
  virtual Message recv() = 0;
};

// ---------------------------------------------------------------------------
// TCP transport: frames from message.hpp over a listening coordinator socket;
// workers connect and register themselves with an AssignShard message.

class TcpCoordinatorLink final : public CoordinatorLink {
 public:
  // Binds host:port (port 0 picks an ephemeral port) and accepts `expected`
  // worker connections lazily on first use.
  TcpCoordinatorLink(const std::string& host, std::uint16_t port, int expected);
  ~TcpCoordinatorLink() override;

  std::uint16_t port() const { return port_; }

  void send(int machine_id, const Message& msg) override;
  Message recv() override;

  // Shuts down all worker connections; used to unblock workers when the
  // coordinator aborts mid-protocol.
  void close_connections();

 private:
  void accept_all();
  void reader_loop(std::size_t conn_index);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  int expected_ = 0;
  bool accepted_ = false;

  std::vector<int> conn_fds_;
  std::vector<std::thread> readers_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Message> inbox_;
  std::vector<int> machine_fd_;  // machine_id -> fd, built from registrations
  int live_readers_ = 0;
  std::string reader_error_;
};

class TcpWorkerLink final : public WorkerLink {
 public:
  // Connects with bounded retries so workers may start before the coordinator.
  TcpWorkerLink(const std::string& host, std::uint16_t port, int max_retries = 50);
  ~TcpWorkerLink() override;

  void send(const Message& msg) override;
  Message recv() override;

 private:
  int fd_ = -1;
};

}  // namespace dmest
