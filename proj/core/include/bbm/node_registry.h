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

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bbm/common.h"

namespace bbm {

struct NodeRecord {
  std::string node_id;
  std::string address;
  std::int64_t route_time_ms = 0;
  std::int64_t channel_capacity_kbps = 1;
  std::int32_t signal_strength_db = 0;  // higher is better
  std::uint64_t available_storage_bytes = 0;
  TimeMs last_telemetry = 0;
  bool probe_failed = false;
  std::set<std::string, std::less<>> hosted_videos;
};

// Selection key for a node: shorter route first, then larger channel
// capacity, then stronger signal. Lexicographic; a smaller score is better.
struct IndexScore {
  std::int64_t route_time_ms = 0;
  std::int64_t channel_capacity_kbps = 0;
  std::int32_t signal_strength_db = 0;

  static IndexScore of(const NodeRecord& n) {
    return {n.route_time_ms, n.channel_capacity_kbps, n.signal_strength_db};
  }

  friend std::strong_ordering operator<=>(const IndexScore& a, const IndexScore& b) {
    if (auto c = a.route_time_ms <=> b.route_time_ms; c != 0) return c;
    if (auto c = b.channel_capacity_kbps <=> a.channel_capacity_kbps; c != 0) return c;
    return b.signal_strength_db <=> a.signal_strength_db;
  }
  friend bool operator==(const IndexScore&, const IndexScore&) = default;
};

struct TelemetryMsg {
  std::string node_id;
  TimeMs timestamp = 0;
  std::int64_t channel_capacity_kbps = 0;
  std::uint64_t available_storage_bytes = 0;
  std::vector<std::string> add_videos;
  std::vector<std::string> remove_videos;
};

// One JSON object per line: node_id, ts, capacity_kbps, storage_bytes,
// add_videos, remove_videos.
TelemetryMsg parse_telemetry_line(std::string_view line);
std::string format_telemetry_line(const TelemetryMsg& msg);

// Static per-node configuration used to bootstrap the registry.
struct NodeConfig {
  std::string node_id;
  std::string address;
  std::int64_t latency_ms = 0;  // one-way, simulation only
  std::int32_t signal_db = 0;
  std::int64_t capacity_kbps = 1;
};

// One node per line: "<node_id> <address> <latency_ms> <signal_db>
// [capacity_kbps]". Blank lines and '#' comments are skipped.
std::vector<NodeConfig> load_node_roster(const std::string& path);

// Measures the round-trip route time to a node.
class RouteProber {
 public:
  virtual ~RouteProber() = default;
  // Throws Error(kProbeTimeout) when the node does not answer.
  virtual std::int64_t probe_rtt_ms(const NodeRecord& node) = 0;
};

// Returns 2 x configured one-way latency.
class SimRouteProber : public RouteProber {
 public:
  void set_latency(const std::string& node_id, std::int64_t one_way_ms) {
    latency_[node_id] = one_way_ms;
  }
  void set_unreachable(const std::string& node_id, bool unreachable) {
    if (unreachable) down_.insert(node_id); else down_.erase(node_id);
  }
  std::int64_t probe_rtt_ms(const NodeRecord& node) override;

 private:
  std::map<std::string, std::int64_t> latency_;
  std::set<std::string> down_;
};

// Picks the best node: unique minimum IndexScore, or a uniformly random
// member of the tied minimal set. The tied set is ordered by node_id before
// drawing, so the result does not depend on candidate order.
// Precondition: candidates is nonempty.
const NodeRecord& select_best_node(std::span<const NodeRecord> candidates,
                                   std::mt19937_64& rng);

struct RegistryStats {
  std::uint64_t telemetry_applied = 0;
  std::uint64_t telemetry_stale = 0;
  std::uint64_t probe_timeouts = 0;
};

// Fleet table of registered origin nodes.
//
// Thread-safe. Every read returns a copy taken under the lock, so a selection
// never sees a half-applied telemetry message.
class NodeRegistry {
 public:
  NodeRegistry(const Clock& clock, TimeMs staleness_window_ms);

  void register_node(const NodeConfig& config);
  void apply_telemetry(const TelemetryMsg& msg);
  std::int64_t measure_route(const std::string& node_id, RouteProber& prober);

  bool is_fresh(const NodeRecord& n) const;
  std::vector<NodeRecord> find_hosts(std::string_view video_id) const;
  std::optional<NodeRecord> get(std::string_view node_id) const;
  std::vector<NodeRecord> snapshot() const;
  RegistryStats stats() const;
  TimeMs staleness_window_ms() const { return staleness_window_ms_; }

 private:
  const Clock& clock_;
  TimeMs staleness_window_ms_;
  mutable std::mutex mu_;
  std::map<std::string, NodeRecord, std::less<>> nodes_;
  RegistryStats stats_;
};

}  // namespace bbm
