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

#include "bbm/live.h"

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
#include <deque>
#include <fstream>
#include <future>
#include <sstream>

#include <spdlog/spdlog.h>

#include "bbm/client_protocol.h"

namespace bbm {

// ---- RealtimeExecutor ----

RealtimeExecutor::RealtimeExecutor() : epoch_(std::chrono::steady_clock::now()) {}

RealtimeExecutor::~RealtimeExecutor() { stop(); }

TimeMs RealtimeExecutor::now() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               epoch_)
      .count();
}

void RealtimeExecutor::post_at(TimeMs when, Task task) {
  std::lock_guard lock(mu_);
  if (stopped_) return;
  queue_.push({when, seq_++, std::move(task)});
  cv_.notify_one();
}

void RealtimeExecutor::run() {
  std::unique_lock lock(mu_);
  while (!stopped_) {
    if (queue_.empty()) {
      cv_.wait(lock);
      continue;
    }
    const TimeMs when = queue_.top().when;
    if (when > now()) {
      cv_.wait_until(lock, epoch_ + std::chrono::milliseconds(when));
      continue;
    }
    Item item = queue_.top();
    queue_.pop();
    lock.unlock();
    try {
      item.task();
    } catch (const std::exception& e) {
      spdlog::error("executor task failed: {}", e.what());
    }
    lock.lock();
  }
}

void RealtimeExecutor::stop() {
  std::lock_guard lock(mu_);
  stopped_ = true;
  cv_.notify_all();
}

void RealtimeExecutor::run_sync(Task task) {
  std::promise<void> done;
  auto fut = done.get_future();
  post([&] {
    task();
    done.set_value();
  });
  fut.wait();
}

// ---- sockets ----

HostPort HostPort::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error(Errc::kConfigInvalid, "expected host:port, got " + std::string(text));
  }
  HostPort hp;
  hp.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  unsigned value = 0;
  auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || p != port.data() + port.size() || value > 65535) {
    throw Error(Errc::kConfigInvalid, "bad port in " + std::string(text));
  }
  hp.port = static_cast<std::uint16_t>(value);
  return hp;
}

namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(Errc::kIo, what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const HostPort& hp, bool passive) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (hp.host.empty()) {
    addr.sin_addr.s_addr = passive ? htonl(INADDR_ANY) : htonl(INADDR_LOOPBACK);
    return addr;
  }
  if (inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(hp.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw Error(Errc::kIo, "cannot resolve " + hp.host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

}  // namespace

void Socket::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  buffer_.clear();
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket Socket::connect(const HostPort& to, TimeMs timeout_ms) {
  const sockaddr_in addr = resolve(to, false);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s) io_error("socket");
  const int flags = fcntl(s.fd_, F_GETFL, 0);
  fcntl(s.fd_, F_SETFL, flags | O_NONBLOCK);
  if (::connect(s.fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    if (errno != EINPROGRESS) io_error("connect " + to.to_string());
    pollfd p{s.fd_, POLLOUT, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout_ms));
    if (r == 0) throw Error(Errc::kProbeTimeout, "connect " + to.to_string() + " timed out");
    if (r < 0) io_error("poll");
    int err = 0;
    socklen_t len = sizeof err;
    getsockopt(s.fd_, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      errno = err;
      io_error("connect " + to.to_string());
    }
  }
  fcntl(s.fd_, F_SETFL, flags);
  const int one = 1;
  setsockopt(s.fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

Socket Socket::listen(const HostPort& at) {
  const sockaddr_in addr = resolve(at, true);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s) io_error("socket");
  const int one = 1;
  setsockopt(s.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(s.fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    io_error("bind " + at.to_string());
  }
  if (::listen(s.fd_, 64) != 0) io_error("listen");
  return s;
}

std::uint16_t Socket::local_port() const {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

Socket Socket::accept() const {
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) io_error("accept");
  return Socket(fd);
}

void Socket::set_io_timeout(TimeMs ms) {
  timeval tv{static_cast<time_t>(ms / 1000), static_cast<suseconds_t>((ms % 1000) * 1000)};
  setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

void Socket::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("send");
    }
    done += static_cast<std::size_t>(n);
  }
}

void Socket::write_all(std::string_view text) {
  write_all({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::optional<std::string> Socket::read_line(std::size_t max) {
  char chunk[4096];
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (buffer_.size() > max) throw Error(Errc::kProtocol, "line too long");
    const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("recv");
    }
    if (n == 0) {
      if (buffer_.empty()) return std::nullopt;
      return std::exchange(buffer_, {});
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

Bytes Socket::read_exact(std::size_t n) {
  Bytes out;
  out.reserve(n);
  const auto from_buffer = std::min(n, buffer_.size());
  out.insert(out.end(), buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(from_buffer));
  buffer_.erase(0, from_buffer);
  out.resize(n);
  std::size_t have = from_buffer;
  while (have < n) {
    const auto r = ::recv(fd_, out.data() + have, n - have, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      io_error("recv");
    }
    if (r == 0) throw Error(Errc::kShortRead, "connection closed mid-body");
    have += static_cast<std::size_t>(r);
  }
  return out;
}

Bytes Socket::read_some(std::size_t max) {
  if (!buffer_.empty()) {
    const auto n = std::min(max, buffer_.size());
    Bytes out(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
    buffer_.erase(0, n);
    return out;
  }
  Bytes out(max);
  for (;;) {
    const auto r = ::recv(fd_, out.data(), max, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      io_error("recv");
    }
    out.resize(static_cast<std::size_t>(r));
    return out;
  }
}

// ---- origin transport ----

TcpOriginTransport::TcpOriginTransport(Executor& executor, TimeMs io_timeout_ms)
    : executor_(executor), io_timeout_ms_(io_timeout_ms) {}

TcpOriginTransport::~TcpOriginTransport() {
  std::unique_lock lock(mu_);
  idle_.wait(lock, [this] { return in_flight_ == 0; });
}

void TcpOriginTransport::send(const NodeRecord& node, const OriginRequest& request, Callback done) {
  {
    std::lock_guard lock(mu_);
    ++in_flight_;
  }
  std::thread([this, address = node.address, line = request.to_line(), done = std::move(done)] {
    std::optional<OriginResponse> resp;
    try {
      auto sock = Socket::connect(HostPort::parse(address), io_timeout_ms_);
      sock.set_io_timeout(io_timeout_ms_);
      sock.write_all(line);
      if (auto status = sock.read_line()) {
        OriginResponse r;
        const std::string head = *status + "\n";
        OriginResponse::parse_status_line(
            {reinterpret_cast<const std::uint8_t*>(head.data()), head.size()}, r);
        if (r.status == 206) r.body = sock.read_exact(r.value);
        resp = std::move(r);
      }
    } catch (const std::exception& e) {
      spdlog::debug("origin request to {} failed: {}", address, e.what());
    }
    executor_.post([done, resp = std::move(resp)]() mutable { done(std::move(resp)); });
    std::lock_guard lock(mu_);
    if (--in_flight_ == 0) idle_.notify_all();
  }).detach();
}

std::int64_t LiveRouteProber::probe_rtt_ms(const NodeRecord& node) {
  const auto start = std::chrono::steady_clock::now();
  try {
    Socket::connect(HostPort::parse(node.address), timeout_ms_);
  } catch (const Error& e) {
    throw Error(Errc::kProbeTimeout, node.node_id + ": " + e.what());
  }
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               start)
      .count();
}

// ---- origin server ----

OriginServer::OriginServer(const OriginStore& store, const HostPort& at)
    : store_(store), listener_(Socket::listen(at)) {
  port_ = listener_.local_port();
  acceptor_ = std::thread([this] { accept_loop(); });
}

OriginServer::~OriginServer() { stop(); }

void OriginServer::accept_loop() {
  while (!stopping_) {
    Socket conn;
    try {
      conn = listener_.accept();
    } catch (const Error&) {
      if (stopping_) return;
      continue;
    }
    std::lock_guard lock(mu_);
    open_fds_.push_back(conn.fd());
    workers_.emplace_back([this, conn = std::move(conn)]() mutable {
      try {
        while (auto line = conn.read_line(4096)) {
          conn.write_all(store_.handle_line(*line).encode());
        }
      } catch (const std::exception& e) {
        spdlog::debug("origin connection closed: {}", e.what());
      }
      std::lock_guard lock(mu_);
      std::erase(open_fds_, conn.fd());
    });
  }
}

void OriginServer::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown_both();
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

// ---- service config ----

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
void parse_number(std::string_view key, std::string_view value, T& out) {
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw Error(Errc::kConfigInvalid, std::string(key) + ": expected an integer");
  }
}

}  // namespace

ServiceConfig ServiceConfig::parse(std::string_view text) {
  ServiceConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kConfigInvalid, "expected key=value: " + std::string(line));
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "cache_budget_bytes") parse_number(key, value, c.cache_budget_bytes);
    else if (key == "segment_size_bytes") parse_number(key, value, c.segment_size_bytes);
    else if (key == "prefetch_seconds") parse_number(key, value, c.prefetch_seconds);
    else if (key == "telemetry_staleness_s") parse_number(key, value, c.telemetry_staleness_s);
    else if (key == "fetch_timeout_s") parse_number(key, value, c.fetch_timeout_s);
    else if (key == "rng_seed") parse_number(key, value, c.rng_seed);
    else if (key == "tick_ms") parse_number(key, value, c.tick_ms);
    else if (key == "client_link_kbps") parse_number(key, value, c.client_link_kbps);
    else if (key == "listen") c.listen = value;
    else if (key == "node_roster") c.node_roster = value;
    else if (key == "profile_roster") c.profile_roster = value;
    else if (key == "cache_dir") c.cache_dir = value;
    else if (key == "burst") {
      if (value == "true" || value == "1") c.burst = true;
      else if (value == "false" || value == "0") c.burst = false;
      else throw Error(Errc::kConfigInvalid, "burst: expected true or false");
    } else {
      throw Error(Errc::kConfigInvalid, "unknown key " + std::string(key));
    }
  }
  if (c.segment_size_bytes < kContainerHeaderBytes) {
    throw Error(Errc::kConfigInvalid, "segment_size_bytes: must be >= 15");
  }
  if (c.cache_budget_bytes == 0) throw Error(Errc::kConfigInvalid, "cache_budget_bytes: must be positive");
  if (c.prefetch_seconds < 0) throw Error(Errc::kConfigInvalid, "prefetch_seconds: must not be negative");
  if (c.fetch_timeout_s <= 0) throw Error(Errc::kConfigInvalid, "fetch_timeout_s: must be positive");
  if (c.telemetry_staleness_s < 0) {
    throw Error(Errc::kConfigInvalid, "telemetry_staleness_s: must not be negative");
  }
  if (c.tick_ms <= 0) throw Error(Errc::kConfigInvalid, "tick_ms: must be positive");
  if (c.client_link_kbps <= 0) throw Error(Errc::kConfigInvalid, "client_link_kbps: must be positive");
  HostPort::parse(c.listen);
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfigInvalid, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

// ---- manager service ----

namespace {

// Queues response bytes from the executor thread; the connection thread
// drains them to the socket.
class TcpClientSink final : public ClientSink {
 public:
  bool connected() const override { return !disconnected_; }
  void write(std::span<const std::uint8_t> bytes) override {
    if (disconnected_) return;
    std::lock_guard lock(mu_);
    queue_.emplace_back(bytes.begin(), bytes.end());
    cv_.notify_one();
  }
  void close() override {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_one();
  }
  void pump(Socket& sock) {
    for (;;) {
      Bytes chunk;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return !queue_.empty() || closed_; });
        if (queue_.empty()) return;
        chunk = std::move(queue_.front());
        queue_.pop_front();
      }
      try {
        sock.write_all(chunk);
      } catch (const Error&) {
        disconnected_ = true;
        return;
      }
    }
  }

 private:
  std::atomic<bool> disconnected_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Bytes> queue_;
  bool closed_ = false;
};

}  // namespace

ManagerService::ManagerService(ServiceConfig config) : config_(std::move(config)) {}

ManagerService::~ManagerService() { stop(); }

std::uint16_t ManagerService::start() {
  if (!config_.profile_roster.empty()) profiles_ = ProfileRegistry::load_roster(config_.profile_roster);
  registry_ = std::make_unique<NodeRegistry>(executor_, config_.telemetry_staleness_s * 1000);
  if (!config_.node_roster.empty()) {
    for (const auto& n : load_node_roster(config_.node_roster)) registry_->register_node(n);
  }
  CacheConfig cc;
  cc.segment_size = config_.segment_size_bytes;
  cc.byte_budget = config_.cache_budget_bytes;
  cc.dir = config_.cache_dir;
  cache_ = std::make_unique<CacheStore>(cc, executor_);
  if (!cc.dir.empty()) {
    const auto loaded = cache_->load_manifest();
    spdlog::info("cache: {} entries restored from {}", loaded.entries, cc.dir.string());
  }
  const TimeMs timeout = config_.fetch_timeout_s * 1000;
  transport_ = std::make_unique<TcpOriginTransport>(executor_, timeout);
  FetchConfig fc;
  fc.timeout_ms = timeout;
  fc.segment_size = config_.segment_size_bytes;
  origin_ = std::make_unique<OriginClient>(executor_, *transport_, cache_.get(), fc);
  ManagerConfig mc;
  mc.stream.prefetch_ms = config_.prefetch_seconds * 1000;
  mc.stream.burst = config_.burst;
  mc.stream.tick_ms = config_.tick_ms;
  mc.client_link_kbps = config_.client_link_kbps;
  mc.rng_seed = config_.rng_seed;
  mc.keep_history = false;
  manager_ = std::make_unique<BillboardManager>(executor_, cache_.get(), *registry_, *origin_,
                                                profiles_, mc);
  loop_ = std::thread([this] { executor_.run(); });
  listener_ = Socket::listen(HostPort::parse(config_.listen));
  const auto port = listener_.local_port();
  acceptor_ = std::thread([this] { accept_loop(); });
  spdlog::info("manager listening on port {}", port);
  return port;
}

void ManagerService::accept_loop() {
  while (!stopping_) {
    Socket conn;
    try {
      conn = listener_.accept();
    } catch (const Error&) {
      if (stopping_) return;
      continue;
    }
    std::lock_guard lock(mu_);
    open_fds_.push_back(conn.fd());
    workers_.emplace_back([this, conn = std::move(conn)]() mutable {
      const int fd = conn.fd();
      try {
        serve(std::move(conn));
      } catch (const std::exception& e) {
        spdlog::debug("client connection ended: {}", e.what());
      }
      std::lock_guard lock(mu_);
      std::erase(open_fds_, fd);
    });
  }
}

void ManagerService::serve(Socket sock) {
  const auto line = sock.read_line(1 << 16);
  if (!line) return;
  const auto cmd = ClientCommand::parse(*line);
  if (!cmd) {
    sock.write_all(std::string_view("400 BAD_REQUEST\n"));
    return;
  }
  switch (cmd->kind) {
    case ClientCommand::Kind::kStats:
      sock.write_all(manager_->stats_json().dump() + "\n");
      return;
    case ClientCommand::Kind::kTelemetry: {
      try {
        auto msg = parse_telemetry_line(cmd->payload);
        // Freshness is judged on the manager's clock.
        msg.timestamp = executor_.now();
        registry_->apply_telemetry(msg);
        try {
          registry_->measure_route(msg.node_id, prober_);
        } catch (const Error& e) {
          spdlog::warn("route probe to {} failed: {}", msg.node_id, e.what());
        }
        sock.write_all(std::string_view("200 OK\n"));
      } catch (const Error& e) {
        sock.write_all("400 " + std::string(errc_name(e.code())) + "\n");
      }
      return;
    }
    case ClientCommand::Kind::kPlay: {
      auto sink = std::make_shared<TcpClientSink>();
      {
        std::lock_guard lock(mu_);
        if (stopping_) return;
        std::erase_if(sinks_, [](const auto& w) { return w.expired(); });
        sinks_.push_back(sink);
      }
      executor_.post([this, cmd = *cmd, sink] {
        try {
          manager_->handle_request({cmd.video_id, cmd.profile_id, 0, 0}, sink);
        } catch (const Error& e) {
          sink->write_text(status_line(ClientStatus::kFormatUnsupported));
          sink->close();
        }
      });
      sink->pump(sock);
      return;
    }
  }
}

void ManagerService::wait() {
  std::unique_lock lock(mu_);
  stopped_cv_.wait(lock, [this] { return stopping_.load(); });
}

void ManagerService::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_.exchange(true)) return;
    stopped_cv_.notify_all();
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  listener_.shutdown_both();
  if (acceptor_.joinable()) acceptor_.join();
  executor_.stop();
  if (loop_.joinable()) loop_.join();
  {
    std::lock_guard lock(mu_);
    for (auto& w : sinks_) {
      if (auto sink = w.lock()) sink->close();
    }
  }
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

}  // namespace bbm
