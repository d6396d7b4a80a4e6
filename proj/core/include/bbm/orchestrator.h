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

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbm/cache_store.h"
#include "bbm/client_protocol.h"
#include "bbm/common.h"
#include "bbm/event_log.h"
#include "bbm/media_model.h"
#include "bbm/node_registry.h"
#include "bbm/origin_client.h"
#include "bbm/streamer.h"

namespace bbm {

enum class SessionState {
  kReceived,
  kIndexLookup,
  kCacheHit,
  kCacheMiss,
  kHostLookup,
  kNotFound,
  kNodeSelected,
  kFetching,
  kFormatCheck,
  kTranscoding,
  kReady,
  kStreaming,
  kDone,
  kFailed,
};

std::string_view session_state_name(SessionState s);
std::optional<SessionState> parse_session_state(std::string_view name);
bool is_terminal(SessionState s);
bool is_allowed_transition(SessionState from, SessionState to);
// Starts at Received, follows allowed edges, ends in a terminal state.
bool is_valid_path(std::span<const SessionState> path);

// Online check of session traces: every session's state events form a valid
// path with monotone ticks, and exactly one notification precedes its
// terminal state. Feed stamped events (with `tick` and `kind`).
class SessionTraceChecker {
 public:
  void observe(const nlohmann::json& event);
  // Violations so far; with `include_open`, sessions not yet terminal too.
  std::vector<std::string> problems(bool include_open = true) const;
  std::uint64_t sessions_closed() const { return closed_; }

 private:
  struct Trace {
    SessionState last = SessionState::kReceived;
    std::int64_t tick = 0;
    int notifications = 0;
    std::string path;
  };
  std::map<std::uint64_t, Trace> open_;
  std::vector<std::string> problems_;
  std::uint64_t closed_ = 0;
};

// Same check over a recorded log. Returns one message per violation.
std::vector<std::string> check_session_trace(const std::vector<nlohmann::json>& events);

// Feeds a SessionTraceChecker as events are emitted.
class TraceCheckingLog final : public EventLog {
 public:
  TraceCheckingLog(const Clock& clock, TimeMs tick_ms, SessionTraceChecker& checker)
      : clock_(clock), tick_ms_(tick_ms), checker_(checker) {}
  void emit(std::string_view kind, nlohmann::json fields) override;

 private:
  const Clock& clock_;
  TimeMs tick_ms_;
  SessionTraceChecker& checker_;
};

struct ClientRequest {
  std::string video_id;
  std::string profile_id;
  std::uint64_t session_id = 0;  // 0: assigned by the manager
  TimeMs arrival = 0;
};

struct SessionRecord {
  ClientRequest request;
  std::vector<std::pair<SessionState, TimeMs>> transitions;
  std::string node_id;
  bool cache_hit = false;
  bool coalesced = false;
  bool transcoded = false;
  std::optional<ClientStatus> status;  // empty when a stream was sent
  std::optional<Errc> error;
  StreamProgress progress;
  FormatVariantKey served_variant;

  SessionState final_state() const { return transitions.back().first; }
};

struct Histogram {
  std::vector<TimeMs> samples;

  void add(TimeMs v) { samples.push_back(v); }
  std::size_t count() const { return samples.size(); }
  TimeMs sum() const;
  double mean() const;
  // Mean of the two middle samples for even counts; 0 when empty.
  double median() const;
  TimeMs max() const;
  nlohmann::json summary() const;
};

struct Metrics {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t not_found = 0;
  std::uint64_t failed = 0;
  std::uint64_t origin_bytes = 0;
  std::uint64_t client_bytes = 0;
  std::uint64_t transcode_count = 0;
  std::uint64_t coalesced = 0;
  std::uint64_t below_playback = 0;
  Histogram startup_delay;
  Histogram startup_delay_hit;
  Histogram startup_delay_miss;
  Histogram stall_time;

  nlohmann::json to_json() const;
};

struct ManagerConfig {
  StreamConfig stream;
  std::int64_t client_link_kbps = 2000;
  // Simulated transcode throughput; 0 transcodes without delay.
  std::uint64_t transcode_bytes_per_ms = 0;
  std::uint64_t rng_seed = 1;
  // Keep finished SessionRecords (the simulator reads them).
  bool keep_history = true;
};

// The request state machine. Single-threaded: handle_request and every
// callback run on the executor thread. snapshot_metrics() may be called from
// any thread.
class BillboardManager {
 public:
  // `cache` may be null (caching disabled).
  BillboardManager(Executor& executor, CacheStore* cache, NodeRegistry& registry,
                   OriginClient& origin, const ProfileRegistry& profiles, ManagerConfig config,
                   EventLog* log = nullptr);
  ~BillboardManager();

  // Starts a session; the outcome is delivered through `sink`.
  // Throws Error(kInvalidProfile) for an unknown profile, before any session
  // exists.
  std::uint64_t handle_request(ClientRequest request, std::shared_ptr<ClientSink> sink);

  Metrics snapshot_metrics() const;
  nlohmann::json stats_json() const;
  std::size_t active_sessions() const { return active_.size(); }
  const std::vector<SessionRecord>& history() const { return history_; }
  const ManagerConfig& config() const { return config_; }

  std::function<void(const SessionRecord&)> on_session_done;

 private:
  class Session;
  friend class Session;
  void session_finished(Session& s);

  Executor& executor_;
  CacheStore* cache_;
  NodeRegistry& registry_;
  OriginClient& origin_;
  const ProfileRegistry& profiles_;
  ManagerConfig config_;
  EventLog* log_;
  NullEventLog null_log_;
  std::mt19937_64 rng_;
  std::uint64_t next_session_ = 1;
  std::map<std::uint64_t, std::shared_ptr<Session>> active_;
  std::vector<SessionRecord> history_;
  mutable std::mutex metrics_mu_;
  Metrics metrics_;
};

}  // namespace bbm
