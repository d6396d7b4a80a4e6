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
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bbm/cache_store.h"
#include "bbm/common.h"
#include "bbm/event_log.h"
#include "bbm/media_model.h"
#include "bbm/node_registry.h"
#include "bbm/origin_protocol.h"
#include "bbm/segment_source.h"

namespace bbm {

// Carries origin requests to nodes. Responses are delivered on the executor
// thread. A node that hangs may never call back; the caller owns timeouts.
class OriginTransport {
 public:
  using Callback = std::function<void(std::optional<OriginResponse>)>;
  virtual ~OriginTransport() = default;
  virtual void send(const NodeRecord& node, const OriginRequest& request, Callback done) = 0;
};

struct FetchConfig {
  TimeMs timeout_ms = 5000;          // per request
  std::uint32_t pipeline_depth = 1;  // outstanding range requests per job
  std::uint32_t max_retries = 1;     // reselections after a node failure
  bool coalesce = true;
  // Segment size used when fetching without a cache.
  std::uint64_t segment_size = 256 * 1024;
};

enum class JobState { kRunning, kDone, kFailed };
std::string_view job_state_name(JobState s);

struct FetchFailure {
  Errc code = Errc::kNodeTimeout;
  std::string message;
};

class FetchJob;

// Receives progress of a fetch job. Calls arrive on the executor thread, in
// segment order for on_segment when pipeline_depth is 1.
class FetchObserver {
 public:
  virtual ~FetchObserver() = default;
  // The container header is known and source() is readable.
  virtual void on_fill_started(FetchJob&) {}
  virtual void on_segment(FetchJob&, std::uint64_t /*index*/) {}
  virtual void on_finished(FetchJob&) {}
};

class OriginClient;

// One origin transfer of one video, segment by segment, into the cache (or
// into memory when caching is off).
class FetchJob : public std::enable_shared_from_this<FetchJob> {
 public:
  const std::string& video_id() const { return video_id_; }
  const std::string& node_id() const { return node_.node_id; }
  std::uint64_t total_bytes() const { return total_bytes_; }
  std::optional<FormatVariantKey> variant() const { return variant_; }
  JobState state() const { return state_; }
  const FetchFailure& failure() const { return failure_; }
  std::uint32_t waiter_count() const { return waiter_count_; }
  // First segment index not yet stored.
  std::uint64_t next_segment() const;
  std::uint64_t total_segments() const;
  std::uint64_t range_requests() const { return range_requests_; }
  std::uint64_t origin_bytes() const { return origin_bytes_; }
  bool cached() const { return static_cast<bool>(reader_); }
  std::uint64_t id() const { return id_; }
  // A new pinned reader over the stored segments. Valid after fill start.
  std::shared_ptr<SegmentSource> source() const;

 private:
  friend class OriginClient;
  FetchJob(OriginClient& client, std::uint64_t id, std::string video_id,
           std::vector<NodeRecord> candidates);

  void add_observer(std::weak_ptr<FetchObserver> observer);
  void start(const NodeRecord& node);
  void on_size(std::uint64_t attempt, std::optional<OriginResponse> resp);
  void on_header_segment(std::uint64_t attempt, std::optional<OriginResponse> resp);
  void on_range(std::uint64_t attempt, std::uint64_t index, std::optional<OriginResponse> resp);
  void on_timeout(std::uint64_t attempt, std::uint64_t request_seq);
  std::uint64_t track(std::uint64_t segment);
  bool untrack(std::uint64_t attempt, std::uint64_t request_seq);
  void open_storage(const FormatVariantKey& variant);
  void issue_more();
  void send_range(std::uint64_t index);
  bool store_segment(std::uint64_t index, const OriginResponse& resp);
  bool has_segment(std::uint64_t index) const;
  bool complete() const;
  void fail(Errc code, std::string message);
  void finish_done();
  template <typename F>
  void notify(F&& f);
  void node_failed(Errc code, std::string message);

  OriginClient& client_;
  std::uint64_t id_;
  std::string video_id_;
  std::vector<NodeRecord> candidates_;
  std::set<std::string> tried_;
  NodeRecord node_;
  std::uint32_t retries_used_ = 0;
  std::uint64_t attempt_ = 0;
  std::uint64_t request_seq_ = 0;
  std::map<std::uint64_t, std::uint64_t> pending_;  // request seq -> segment
  std::mt19937_64* rng_ = nullptr;
  std::uint64_t cursor_ = 0;
  std::uint64_t total_bytes_ = 0;
  std::optional<FormatVariantKey> variant_;
  JobState state_ = JobState::kRunning;
  FetchFailure failure_;
  std::uint32_t waiter_count_ = 0;
  std::uint64_t range_requests_ = 0;
  std::uint64_t origin_bytes_ = 0;
  CacheStore::FillHandle fill_;
  CacheStore::EntryHandle reader_;
  std::shared_ptr<MemorySegments> memory_;
  std::vector<std::weak_ptr<FetchObserver>> observers_;
};

struct OriginClientStats {
  std::uint64_t origin_bytes = 0;
  std::uint64_t range_requests = 0;
  std::uint64_t jobs_started = 0;
  std::uint64_t jobs_done = 0;
  std::uint64_t jobs_failed = 0;
  std::uint64_t joins = 0;
  std::uint64_t retries = 0;
  std::map<std::string, std::uint64_t> per_node_jobs;
  std::map<std::string, std::uint64_t> per_node_bytes;
};

// Origin retrieval with request coalescing: at most one running job per video.
// Single-threaded: call from the executor thread only.
class OriginClient {
 public:
  OriginClient(Executor& executor, OriginTransport& transport, CacheStore* cache,
               FetchConfig config, EventLog* log = nullptr);

  // Joins the running job for `video_id`, or selects the best candidate and
  // starts a new one. `candidates` must be nonempty.
  std::shared_ptr<FetchJob> fetch_or_join(const std::string& video_id,
                                          std::vector<NodeRecord> candidates,
                                          std::mt19937_64& rng,
                                          std::weak_ptr<FetchObserver> observer = {});
  std::shared_ptr<FetchJob> running_job(const std::string& video_id) const;
  std::size_t running_count() const { return running_.size(); }
  const OriginClientStats& stats() const { return stats_; }
  const FetchConfig& config() const { return config_; }

  std::function<void(const std::string& node_id, std::uint64_t bytes)> on_origin_bytes;

 private:
  friend class FetchJob;
  void job_finished(FetchJob& job);

  Executor& executor_;
  OriginTransport& transport_;
  CacheStore* cache_;
  FetchConfig config_;
  EventLog* log_;
  NullEventLog null_log_;
  std::uint64_t next_job_id_ = 1;
  std::map<std::string, std::shared_ptr<FetchJob>> running_;
  OriginClientStats stats_;
};

}  // namespace bbm
