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

#include "bbm/node_registry.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bbm {

using nlohmann::json;

TelemetryMsg parse_telemetry_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::kProtocol, std::string("telemetry: ") + e.what());
  }
  try {
    TelemetryMsg m;
    m.node_id = j.at("node_id").get<std::string>();
    m.timestamp = j.at("ts").get<TimeMs>();
    m.channel_capacity_kbps = j.at("capacity_kbps").get<std::int64_t>();
    m.available_storage_bytes = j.at("storage_bytes").get<std::uint64_t>();
    if (j.contains("add_videos")) m.add_videos = j["add_videos"].get<std::vector<std::string>>();
    if (j.contains("remove_videos")) {
      m.remove_videos = j["remove_videos"].get<std::vector<std::string>>();
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::kProtocol, std::string("telemetry: ") + e.what());
  }
}

std::string format_telemetry_line(const TelemetryMsg& m) {
  json j = {{"node_id", m.node_id},
            {"ts", m.timestamp},
            {"capacity_kbps", m.channel_capacity_kbps},
            {"storage_bytes", m.available_storage_bytes},
            {"add_videos", m.add_videos},
            {"remove_videos", m.remove_videos}};
  return j.dump();
}

std::vector<NodeConfig> load_node_roster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfigInvalid, "cannot open node roster " + path);
  std::vector<NodeConfig> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    NodeConfig c;
    if (!(ls >> c.node_id >> c.address >> c.latency_ms >> c.signal_db)) {
      throw Error(Errc::kConfigInvalid,
                  path + ":" + std::to_string(lineno) + ": malformed node entry");
    }
    if (!(ls >> c.capacity_kbps)) c.capacity_kbps = 1;
    out.push_back(std::move(c));
  }
  return out;
}

std::int64_t SimRouteProber::probe_rtt_ms(const NodeRecord& node) {
  if (down_.contains(node.node_id)) {
    throw Error(Errc::kProbeTimeout, node.node_id);
  }
  auto it = latency_.find(node.node_id);
  return it == latency_.end() ? 0 : 2 * it->second;
}

const NodeRecord& select_best_node(std::span<const NodeRecord> candidates,
                                   std::mt19937_64& rng) {
  std::vector<const NodeRecord*> best;
  IndexScore best_score{};
  for (const auto& n : candidates) {
    const IndexScore s = IndexScore::of(n);
    if (best.empty() || s < best_score) {
      best.assign(1, &n);
      best_score = s;
    } else if (s == best_score) {
      best.push_back(&n);
    }
  }
  if (best.size() == 1) return *best.front();
  std::sort(best.begin(), best.end(),
            [](const NodeRecord* a, const NodeRecord* b) { return a->node_id < b->node_id; });
  std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
  return *best[pick(rng)];
}

NodeRegistry::NodeRegistry(const Clock& clock, TimeMs staleness_window_ms)
    : clock_(clock), staleness_window_ms_(staleness_window_ms) {}

void NodeRegistry::register_node(const NodeConfig& config) {
  std::lock_guard lock(mu_);
  NodeRecord& n = nodes_[config.node_id];
  n.node_id = config.node_id;
  n.address = config.address;
  n.route_time_ms = 2 * config.latency_ms;
  n.channel_capacity_kbps = config.capacity_kbps;
  n.signal_strength_db = config.signal_db;
  n.last_telemetry = clock_.now();
}

void NodeRegistry::apply_telemetry(const TelemetryMsg& msg) {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(msg.node_id);
  if (it == nodes_.end()) throw Error(Errc::kUnknownNode, msg.node_id);
  NodeRecord& n = it->second;
  if (msg.timestamp < n.last_telemetry) {
    ++stats_.telemetry_stale;
    throw Error(Errc::kStaleMessage, msg.node_id + " ts " + std::to_string(msg.timestamp) +
                                         " < " + std::to_string(n.last_telemetry));
  }
  n.channel_capacity_kbps = msg.channel_capacity_kbps;
  n.available_storage_bytes = msg.available_storage_bytes;
  n.last_telemetry = msg.timestamp;
  n.probe_failed = false;
  for (const auto& v : msg.add_videos) n.hosted_videos.insert(v);
  for (const auto& v : msg.remove_videos) n.hosted_videos.erase(v);
  ++stats_.telemetry_applied;
}

std::int64_t NodeRegistry::measure_route(const std::string& node_id, RouteProber& prober) {
  NodeRecord copy;
  {
    std::lock_guard lock(mu_);
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) throw Error(Errc::kUnknownNode, node_id);
    copy = it->second;
  }
  // Probe without holding the lock; live probes block on the network.
  std::int64_t rtt = 0;
  try {
    rtt = prober.probe_rtt_ms(copy);
  } catch (const Error& e) {
    std::lock_guard lock(mu_);
    if (auto it = nodes_.find(node_id); it != nodes_.end()) it->second.probe_failed = true;
    ++stats_.probe_timeouts;
    throw;
  }
  std::lock_guard lock(mu_);
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) throw Error(Errc::kUnknownNode, node_id);
  it->second.route_time_ms = rtt;
  it->second.probe_failed = false;
  return rtt;
}

bool NodeRegistry::is_fresh(const NodeRecord& n) const {
  return !n.probe_failed && clock_.now() - n.last_telemetry <= staleness_window_ms_;
}

std::vector<NodeRecord> NodeRegistry::find_hosts(std::string_view video_id) const {
  std::lock_guard lock(mu_);
  std::vector<NodeRecord> out;
  for (const auto& [_, n] : nodes_) {
    if (is_fresh(n) && n.hosted_videos.contains(video_id)) out.push_back(n);
  }
  return out;
}

std::optional<NodeRecord> NodeRegistry::get(std::string_view node_id) const {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

std::vector<NodeRecord> NodeRegistry::snapshot() const {
  std::lock_guard lock(mu_);
  std::vector<NodeRecord> out;
  for (const auto& [_, n] : nodes_) out.push_back(n);
  return out;
}

RegistryStats NodeRegistry::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

}  // namespace bbm
