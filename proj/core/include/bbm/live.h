// Copyright 2026 The Billboard Manager Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include "bbm/common.h"
#include "bbm/node_registry.h"
#include "bbm/orchestrator.h"
#include "bbm/origin_client.h"
#include "bbm/origin_protocol.h"

namespace bbm {

// Wall-clock executor: one loop thread runs every task in time order. post_at
// may be called from any thread. Time is milliseconds since construction.
class RealtimeExecutor final : public Executor {
 public:
  RealtimeExecutor();
  ~RealtimeExecutor() override;
  TimeMs now() const override;
  void post_at(TimeMs when, Task task) override;
  // Runs the loop until stop(). Call from exactly one thread.
  void run();
  void stop();
  // Runs `task` on the loop thread and waits for it.
  void run_sync(Task task);

 private:
  struct Item {
    TimeMs when;
    std::uint64_t seq;
    Task task;
  };
  struct Later {
    bool operator()(const Item& a, const Item& b) const {
      return a.when != b.when ? a.when > b.when : a.seq > b.seq;
    }
  };
  std::chrono::steady_clock::time_point epoch_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::priority_queue<Item, std::vector<Item>, Later> queue_;
  std::uint64_t seq_ = 0;
  bool stopped_ = false;
};

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
  // "host:port" or ":port" (all interfaces).
  static HostPort parse(std::string_view text);
  std::string to_string() const { return host + ":" + std::to_string(port); }
};

// Owns a socket file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { reset(); }
  int fd() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset();
  void shutdown_both();

  // Throws Error(kIo); kProbeTimeout if the connect does not finish in time.
  static Socket connect(const HostPort& to, TimeMs timeout_ms);
  // Bound, listening socket. Port 0 picks a free port.
  static Socket listen(const HostPort& at);
  std::uint16_t local_port() const;
  Socket accept() const;
  void set_io_timeout(TimeMs ms);

  void write_all(std::span<const std::uint8_t> bytes);
  void write_all(std::string_view text);
  // Line without its newline; nullopt at EOF. Throws Error(kIo).
  std::optional<std::string> read_line(std::size_t max = 1 << 20);
  // Exactly `n` bytes; throws Error(kShortRead) at early EOF.
  Bytes read_exact(std::size_t n);
  // Up to `max` bytes; empty at EOF.
  Bytes read_some(std::size_t max);

 private:
  int fd_ = -1;
  std::string buffer_;  // bytes read past the last line
};

// Origin requests over TCP, one connection per request, each on its own
// thread. Results are posted to the executor.
class TcpOriginTransport final : public OriginTransport {
 public:
  TcpOriginTransport(Executor& executor, TimeMs io_timeout_ms);
  ~TcpOriginTransport() override;
  void send(const NodeRecord& node, const OriginRequest& request, Callback done) override;

 private:
  Executor& executor_;
  TimeMs io_timeout_ms_;
  std::mutex mu_;
  std::condition_variable idle_;
  std::size_t in_flight_ = 0;
};

// Route time = TCP connect round trip to the node address.
class LiveRouteProber final : public RouteProber {
 public:
  explicit LiveRouteProber(TimeMs timeout_ms) : timeout_ms_(timeout_ms) {}
  std::int64_t probe_rtt_ms(const NodeRecord& node) override;

 private:
  TimeMs timeout_ms_;
};

// Serves an OriginStore over the origin wire protocol.
class OriginServer {
 public:
  OriginServer(const OriginStore& store, const HostPort& at);
  ~OriginServer();
  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  const OriginStore& store_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
};

// key=value service configuration.
struct ServiceConfig {
  std::uint64_t cache_budget_bytes = 1ull << 30;
  std::uint64_t segment_size_bytes = 256 * 1024;
  std::int64_t prefetch_seconds = 2;
  std::int64_t telemetry_staleness_s = 15;
  std::int64_t fetch_timeout_s = 5;
  std::uint64_t rng_seed = 1;
  std::string listen = "127.0.0.1:8554";
  std::string node_roster;
  std::string profile_roster;
  std::string cache_dir;
  std::int64_t tick_ms = 10;
  std::int64_t client_link_kbps = 100000;
  bool burst = false;

  static ServiceConfig parse(std::string_view text);
  static ServiceConfig load(const std::filesystem::path& path);
};

// The manager service: client protocol on one listening socket.
class ManagerService {
 public:
  explicit ManagerService(ServiceConfig config);
  ~ManagerService();
  // Binds and starts serving; returns the bound port.
  std::uint16_t start();
  // Blocks until stop() from another thread (or a signal handler thread).
  void wait();
  void stop();
  BillboardManager& manager() { return *manager_; }
  NodeRegistry& registry() { return *registry_; }

 private:
  void accept_loop();
  void serve(Socket sock);

  ServiceConfig config_;
  RealtimeExecutor executor_;
  std::thread loop_;
  ProfileRegistry profiles_;
  std::unique_ptr<NodeRegistry> registry_;
  std::unique_ptr<CacheStore> cache_;
  std::unique_ptr<TcpOriginTransport> transport_;
  std::unique_ptr<OriginClient> origin_;
  std::unique_ptr<BillboardManager> manager_;
  LiveRouteProber prober_{2000};
  Socket listener_;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::condition_variable stopped_cv_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
  std::vector<std::weak_ptr<ClientSink>> sinks_;
};

}  // namespace bbm
