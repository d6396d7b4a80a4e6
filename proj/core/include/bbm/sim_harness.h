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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbm/common.h"
#include "bbm/media_model.h"
#include "bbm/node_registry.h"
#include "bbm/orchestrator.h"
#include "bbm/origin_client.h"
#include "bbm/origin_protocol.h"

namespace bbm {

// Virtual-time executor. Tasks run in (time, post order); post times are
// rounded up to the next tick boundary, so everything happens on ticks.
class SimExecutor final : public Executor {
 public:
  explicit SimExecutor(TimeMs tick_ms);
  TimeMs now() const override { return now_; }
  void post_at(TimeMs when, Task task) override;

  // Runs the earliest task. Returns false when the queue is empty.
  bool run_one();
  bool empty() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }
  TimeMs next_time() const;
  TimeMs tick_ms() const { return tick_ms_; }

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
  TimeMs tick_ms_;
  TimeMs now_ = 0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Item, std::vector<Item>, Later> queue_;
};

struct SimNodeSpec {
  std::string id;
  std::int64_t latency_ms = 10;  // one way
  std::int64_t capacity_kbps = 10000;
  std::int32_t signal_db = -70;
  std::vector<std::string> videos;  // empty with all_videos: the whole catalog
  bool all_videos = false;
  // After this many range responses the node stops answering; -1 never.
  std::int64_t fail_after_segments = -1;
};

struct SimVideoSpec {
  std::string id;
  std::uint8_t codec = kSourceCodec;
  std::uint16_t width = kCifWidth;
  std::uint16_t height = kCifHeight;
  std::uint8_t fps = 30;
  std::uint32_t frame_count = 30;
};

struct TraceRequest {
  std::int64_t tick = 0;
  std::string video_id;
  std::string profile_id;
  // Client hangs up once this many payload bytes arrived; -1 never.
  std::int64_t disconnect_after_bytes = -1;
  bool operator==(const TraceRequest&) const = default;
};

struct WorkloadSpec {
  enum class Model { kFixed, kZipf };
  Model model = Model::kFixed;
  std::vector<TraceRequest> trace;  // kFixed
  double exponent = 1.0;            // kZipf, > 0
  std::uint64_t catalog_size = 0;   // ranks map onto the first catalog entries
  std::uint64_t requests = 0;
  std::int64_t inter_arrival_ticks = 1;
  std::map<std::string, std::uint32_t> profile_mix = {{"cif", 1}};
};

struct SimConfig {
  std::uint64_t seed = 1;
  TimeMs tick_ms = 10;
  std::uint64_t segment_size = 256 * 1024;
  std::optional<std::uint64_t> cache_budget;  // empty: unbounded
  bool cache_enabled = true;
  std::filesystem::path cache_dir;
  TimeMs prefetch_ms = 2000;
  std::int64_t client_link_kbps = 2000;
  std::int64_t pace_cap_kbps = 0;
  bool burst = false;
  TimeMs telemetry_interval_ms = 5000;
  TimeMs staleness_ms = 15000;
  TimeMs fetch_timeout_ms = 5000;
  std::uint32_t max_retries = 1;
  std::uint32_t pipeline_depth = 1;
  std::uint64_t transcode_bytes_per_ms = 0;
  bool verify_streams = true;
  std::vector<SimNodeSpec> nodes;
  std::vector<SimVideoSpec> catalog;
  // Added to the built-in cif and qcif profiles.
  std::vector<DeviceProfile> profiles;
  WorkloadSpec workload;
  std::int64_t max_ticks = 100'000'000;

  // Throws Error(kConfigInvalid) naming the offending field.
  void validate() const;
  static SimConfig from_json(const nlohmann::json& j);
  static SimConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // Hash of everything that defines the workload and catalog.
  std::string workload_fingerprint() const;
  ProfileRegistry profile_registry() const;
};

// Rank weights r^-exponent for r = 1..n, normalized to sum 1.
std::vector<double> zipf_weights(std::uint64_t n, double exponent);
// Uniform double in [0, 1) from the top 53 bits.
double uniform01(std::mt19937_64& rng);

// Deterministic request trace; fixed traces pass through unchanged.
std::vector<TraceRequest> generate_workload(const WorkloadSpec& spec,
                                            const std::vector<SimVideoSpec>& catalog,
                                            std::uint64_t seed);

// Catalog of `count` synthetic CIF source videos with ids v0001...
std::vector<SimVideoSpec> generate_catalog(std::uint64_t count, std::uint64_t seed);
nlohmann::json catalog_to_json(const std::vector<SimVideoSpec>& catalog);

// Container bytes of a catalog video, as the origin stores it.
Bytes make_catalog_container(const SimVideoSpec& video, std::uint64_t seed);

// Origin nodes on a simulated network. Each node serves requests FIFO over a
// link of capacity_kbps; a request and its response each take latency_ms.
class SimOriginNetwork final : public OriginTransport {
 public:
  explicit SimOriginNetwork(Executor& executor) : executor_(executor) {}

  struct Node {
    SimNodeSpec spec;
    OriginStore store;
    TimeMs busy_until = 0;
    std::uint64_t range_responses = 0;
    std::uint64_t range_requests = 0;
    std::uint64_t requests = 0;
    bool hung = false;
  };
  Node& add_node(const SimNodeSpec& spec);
  Node* node(const std::string& id);
  void send(const NodeRecord& node, const OriginRequest& request, Callback done) override;
  // Transfer time of `bytes` over a kbps link, rounded up to whole ms.
  static TimeMs transfer_ms(std::uint64_t bytes, std::int64_t kbps);

 private:
  Executor& executor_;
  std::map<std::string, std::unique_ptr<Node>> nodes_;
};

struct SimReport {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t not_found = 0;
  std::uint64_t failed = 0;
  std::uint64_t completed = 0;
  double hit_rate = 0;
  std::uint64_t origin_bytes = 0;
  std::uint64_t client_bytes = 0;
  std::uint64_t origin_equivalent_bytes = 0;
  double bandwidth_saved_ratio = 0;
  double startup_mean_hit_ms = 0;
  double startup_median_hit_ms = 0;
  double startup_mean_miss_ms = 0;
  double startup_median_miss_ms = 0;
  TimeMs total_stall_ms = 0;
  std::uint64_t stalled_sessions = 0;
  std::uint64_t transcode_count = 0;
  std::uint64_t coalesced = 0;
  std::uint64_t distinct_videos = 0;
  std::uint64_t integrity_failures = 0;
  std::uint64_t trace_violations = 0;
  std::map<std::string, std::uint64_t> node_jobs;
  std::map<std::string, std::uint64_t> node_range_requests;
  std::int64_t end_tick = 0;
  bool truncated = false;
  bool cache_enabled = true;
  std::string fingerprint;

  nlohmann::json to_json() const;
  static SimReport from_json(const nlohmann::json& j);
};

struct SimResult {
  SimReport report;
  std::vector<SessionRecord> sessions;
  std::vector<std::string> trace_problems;
};

struct SimOptions {
  std::ostream* event_stream = nullptr;  // NDJSON event log
  EventLog* extra_log = nullptr;
};

// Runs the whole workload to completion (or max_ticks).
SimResult run_simulation(const SimConfig& config, const SimOptions& options = {});

// Per-metric deltas (b - a). Throws Error(kMismatchedConfigs) when the runs
// used different workloads or catalogs.
nlohmann::json compare_runs(const SimReport& a, const SimReport& b);

}  // namespace bbm
