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

#include "bbm/origin_client.h"

#include <algorithm>
#include <limits>

namespace bbm {
namespace {
constexpr std::uint64_t kControl = std::numeric_limits<std::uint64_t>::max();
}  // namespace

std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::kRunning: return "Running";
    case JobState::kDone: return "Done";
    case JobState::kFailed: return "Failed";
  }
  return "?";
}

FetchJob::FetchJob(OriginClient& client, std::uint64_t id, std::string video_id,
                   std::vector<NodeRecord> candidates)
    : client_(client), id_(id), video_id_(std::move(video_id)),
      candidates_(std::move(candidates)) {}

std::uint64_t FetchJob::total_segments() const {
  if (!variant_ && total_bytes_ == 0) return 0;
  const auto seg = client_.cache_ ? client_.cache_->segment_size() : client_.config_.segment_size;
  return ceil_div(total_bytes_, seg);
}

std::uint64_t FetchJob::next_segment() const {
  const auto n = total_segments();
  std::uint64_t i = 0;
  while (i < n && has_segment(i)) ++i;
  return i;
}

bool FetchJob::has_segment(std::uint64_t index) const {
  if (fill_) return fill_.has_segment(index);
  if (memory_) return memory_->has_segment(index);
  return false;
}

bool FetchJob::complete() const {
  if (fill_) return fill_.complete();
  if (memory_) return memory_->complete();
  return false;
}

std::shared_ptr<SegmentSource> FetchJob::source() const {
  if (reader_) return std::make_shared<CacheEntrySource>(reader_.clone());
  return memory_;
}

void FetchJob::add_observer(std::weak_ptr<FetchObserver> observer) {
  if (!observer.expired()) observers_.push_back(std::move(observer));
}

template <typename F>
void FetchJob::notify(F&& f) {
  auto observers = observers_;
  for (auto& weak : observers) {
    if (auto obs = weak.lock()) f(*obs);
  }
  std::erase_if(observers_, [](const auto& w) { return w.expired(); });
}

std::uint64_t FetchJob::track(std::uint64_t segment) {
  const std::uint64_t seq = ++request_seq_;
  pending_[seq] = segment;
  client_.executor_.post_after(
      client_.config_.timeout_ms,
      [weak = weak_from_this(), attempt = attempt_, seq] {
        if (auto job = weak.lock()) job->on_timeout(attempt, seq);
      });
  return seq;
}

bool FetchJob::untrack(std::uint64_t attempt, std::uint64_t request_seq) {
  if (state_ != JobState::kRunning || attempt != attempt_) return false;
  return pending_.erase(request_seq) > 0;
}

void FetchJob::on_timeout(std::uint64_t attempt, std::uint64_t request_seq) {
  if (state_ != JobState::kRunning || attempt != attempt_) return;
  if (!pending_.contains(request_seq)) return;
  node_failed(Errc::kNodeTimeout, node_.node_id + " did not answer within " +
                                      std::to_string(client_.config_.timeout_ms) + " ms");
}

void FetchJob::start(const NodeRecord& node) {
  node_ = node;
  tried_.insert(node.node_id);
  ++attempt_;
  pending_.clear();
  cursor_ = 0;
  ++client_.stats_.per_node_jobs[node_.node_id];
  client_.log_->emit("fetch_start", {{"job", id_}, {"video", video_id_},
                                     {"node", node_.node_id}, {"attempt", attempt_}});
  const auto attempt = attempt_;
  const auto seq = track(kControl);
  client_.transport_.send(node_, OriginRequest::size(video_id_),
                          [weak = weak_from_this(), attempt, seq](auto resp) {
                            auto job = weak.lock();
                            if (job && job->untrack(attempt, seq)) {
                              job->on_size(attempt, std::move(resp));
                            }
                          });
}

void FetchJob::on_size(std::uint64_t attempt, std::optional<OriginResponse> resp) {
  if (!resp) return node_failed(Errc::kNodeTimeout, node_.node_id + ": connection failed");
  if (resp->status != 200) {
    return node_failed(Errc::kRangeRejected,
                       node_.node_id + ": SIZE answered " + std::to_string(resp->status));
  }
  if (variant_) {
    // Retry on another node: storage is already open.
    if (resp->value != total_bytes_) {
      return node_failed(Errc::kRangeRejected, node_.node_id + ": size differs from first node");
    }
    return issue_more();
  }
  total_bytes_ = resp->value;
  if (total_bytes_ < kContainerHeaderBytes) {
    return fail(Errc::kTruncatedPayload, video_id_ + ": origin object smaller than a header");
  }

  // A previous failed fill of this video can be resumed.
  if (client_.cache_) {
    for (const auto& info : client_.cache_->variants_of(video_id_)) {
      if (info.state == FillState::kFilling && info.pin_count == 0 &&
          info.total_bytes == total_bytes_ && !info.present.empty() && info.present[0]) {
        open_storage(info.key.variant);
        if (state_ != JobState::kRunning) return;
        client_.log_->emit("fetch_resume", {{"job", id_}, {"video", video_id_},
                                            {"present", std::count(info.present.begin(),
                                                                   info.present.end(), true)}});
        notify([this](FetchObserver& o) { o.on_fill_started(*this); });
        return issue_more();
      }
    }
  }

  const auto seg = client_.cache_ ? client_.cache_->segment_size() : client_.config_.segment_size;
  const std::uint64_t end = std::min(seg, total_bytes_) - 1;
  const auto seq = track(0);
  ++range_requests_;
  ++client_.stats_.range_requests;
  client_.log_->emit("range_request", {{"job", id_}, {"video", video_id_},
                                       {"node", node_.node_id}, {"start", 0}, {"end", end}});
  client_.transport_.send(node_, OriginRequest::get(video_id_, 0, end),
                          [weak = weak_from_this(), attempt, seq](auto r) {
                            auto job = weak.lock();
                            if (job && job->untrack(attempt, seq)) {
                              job->on_header_segment(attempt, std::move(r));
                            }
                          });
}

void FetchJob::on_header_segment(std::uint64_t, std::optional<OriginResponse> resp) {
  if (!resp) return node_failed(Errc::kNodeTimeout, node_.node_id + ": connection failed");
  if (resp->status != 206) {
    return node_failed(Errc::kRangeRejected,
                       node_.node_id + ": range answered " + std::to_string(resp->status));
  }
  VideoAsset header;
  try {
    header = decode_header(resp->body);
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  }
  open_storage(header.variant());
  if (state_ != JobState::kRunning) return;
  if (!store_segment(0, *resp)) return;
  cursor_ = 1;
  notify([this](FetchObserver& o) { o.on_fill_started(*this); });
  notify([this](FetchObserver& o) { o.on_segment(*this, 0); });
  if (complete()) return finish_done();
  issue_more();
}

void FetchJob::open_storage(const FormatVariantKey& variant) {
  variant_ = variant;
  if (client_.cache_) {
    try {
      fill_ = client_.cache_->begin_fill(video_id_, variant, total_bytes_);
      reader_ = fill_.reader();
      return;
    } catch (const Error& e) {
      // Serve this transfer uncached; the session still streams.
      client_.log_->emit("cache_bypass", {{"job", id_}, {"video", video_id_},
                                          {"reason", errc_name(e.code())}});
    }
  }
  memory_ = std::make_shared<MemorySegments>(total_bytes_, client_.config_.segment_size);
}

void FetchJob::issue_more() {
  const auto n = total_segments();
  while (state_ == JobState::kRunning && pending_.size() < client_.config_.pipeline_depth &&
         cursor_ < n) {
    const auto index = cursor_++;
    if (has_segment(index)) continue;
    send_range(index);
  }
  if (state_ == JobState::kRunning && pending_.empty() && complete()) finish_done();
}

void FetchJob::send_range(std::uint64_t index) {
  const auto seg = fill_ ? fill_.segment_size() : memory_->segment_size();
  const std::uint64_t start = index * seg;
  const std::uint64_t end = std::min(start + seg, total_bytes_) - 1;
  const auto attempt = attempt_;
  const auto seq = track(index);
  ++range_requests_;
  ++client_.stats_.range_requests;
  client_.log_->emit("range_request", {{"job", id_}, {"video", video_id_},
                                       {"node", node_.node_id}, {"start", start}, {"end", end}});
  client_.transport_.send(node_, OriginRequest::get(video_id_, start, end),
                          [weak = weak_from_this(), attempt, seq, index](auto r) {
                            auto job = weak.lock();
                            if (job && job->untrack(attempt, seq)) {
                              job->on_range(attempt, index, std::move(r));
                            }
                          });
}

void FetchJob::on_range(std::uint64_t, std::uint64_t index, std::optional<OriginResponse> resp) {
  if (!resp) return node_failed(Errc::kNodeTimeout, node_.node_id + ": connection failed");
  if (!store_segment(index, *resp)) return;
  notify([this, index](FetchObserver& o) { o.on_segment(*this, index); });
  if (state_ != JobState::kRunning) return;
  if (complete()) return finish_done();
  issue_more();
}

bool FetchJob::store_segment(std::uint64_t index, const OriginResponse& resp) {
  if (resp.status != 206) {
    node_failed(Errc::kRangeRejected,
                node_.node_id + ": range answered " + std::to_string(resp.status));
    return false;
  }
  const auto seg = fill_ ? fill_.segment_size() : memory_->segment_size();
  const std::uint64_t start = index * seg;
  const std::uint64_t expected = std::min(start + seg, total_bytes_) - start;
  if (resp.body.size() != expected) {
    node_failed(Errc::kShortRead, node_.node_id + ": got " + std::to_string(resp.body.size()) +
                                      " of " + std::to_string(expected) + " bytes");
    return false;
  }
  try {
    if (fill_) {
      fill_.write_segment(index, resp.body);
    } else {
      memory_->write_segment(index, resp.body);
    }
  } catch (const Error& e) {
    fail(e.code(), e.what());
    return false;
  }
  origin_bytes_ += resp.body.size();
  client_.stats_.origin_bytes += resp.body.size();
  client_.stats_.per_node_bytes[node_.node_id] += resp.body.size();
  client_.log_->emit("range_response",
                     {{"job", id_}, {"video", video_id_}, {"node", node_.node_id},
                      {"start", start}, {"end", start + expected - 1}, {"bytes", expected}});
  if (client_.on_origin_bytes) client_.on_origin_bytes(node_.node_id, resp.body.size());
  return true;
}

void FetchJob::node_failed(Errc code, std::string message) {
  client_.log_->emit("node_failed", {{"job", id_}, {"video", video_id_},
                                     {"node", node_.node_id}, {"reason", errc_name(code)}});
  if (retries_used_ < client_.config_.max_retries) {
    std::vector<NodeRecord> remaining;
    for (const auto& c : candidates_) {
      if (!tried_.contains(c.node_id)) remaining.push_back(c);
    }
    if (!remaining.empty()) {
      ++retries_used_;
      ++client_.stats_.retries;
      const NodeRecord next = select_best_node(remaining, *rng_);
      client_.log_->emit("fetch_retry", {{"job", id_}, {"video", video_id_},
                                         {"node", next.node_id}});
      start(next);
      return;
    }
  }
  fail(code, std::move(message));
}

void FetchJob::fail(Errc code, std::string message) {
  auto self = shared_from_this();
  state_ = JobState::kFailed;
  failure_ = {code, std::move(message)};
  pending_.clear();
  // The entry stays Filling with whatever arrived, ready for a restart.
  reader_ = CacheStore::EntryHandle();
  fill_.release();
  client_.log_->emit("fetch_failed", {{"job", id_}, {"video", video_id_},
                                      {"reason", errc_name(code)}});
  client_.job_finished(*this);
  notify([this](FetchObserver& o) { o.on_finished(*this); });
}

void FetchJob::finish_done() {
  auto self = shared_from_this();
  state_ = JobState::kDone;
  pending_.clear();
  fill_.release();
  client_.log_->emit("fetch_done", {{"job", id_}, {"video", video_id_},
                                    {"node", node_.node_id}, {"bytes", origin_bytes_}});
  client_.job_finished(*this);
  notify([this](FetchObserver& o) { o.on_finished(*this); });
}

OriginClient::OriginClient(Executor& executor, OriginTransport& transport, CacheStore* cache,
                           FetchConfig config, EventLog* log)
    : executor_(executor), transport_(transport), cache_(cache), config_(config),
      log_(log ? log : &null_log_) {
  if (config_.pipeline_depth == 0) config_.pipeline_depth = 1;
  if (cache_) config_.segment_size = cache_->segment_size();
}

std::shared_ptr<FetchJob> OriginClient::fetch_or_join(const std::string& video_id,
                                                      std::vector<NodeRecord> candidates,
                                                      std::mt19937_64& rng,
                                                      std::weak_ptr<FetchObserver> observer) {
  if (config_.coalesce) {
    if (auto it = running_.find(video_id); it != running_.end()) {
      auto job = it->second;
      ++job->waiter_count_;
      ++stats_.joins;
      log_->emit("fetch_join", {{"job", job->id_}, {"video", video_id},
                                {"waiters", job->waiter_count_}});
      job->add_observer(observer);
      if (job->variant_) {
        executor_.post([weak_job = std::weak_ptr<FetchJob>(job), observer] {
          auto j = weak_job.lock();
          auto o = observer.lock();
          if (j && o && j->state_ != JobState::kFailed) o->on_fill_started(*j);
        });
      }
      return job;
    }
  }
  if (candidates.empty()) throw Error(Errc::kNotFound, video_id + ": no candidate nodes");
  auto job = std::shared_ptr<FetchJob>(new FetchJob(*this, next_job_id_++, video_id, candidates));
  job->rng_ = &rng;
  job->waiter_count_ = 1;
  job->add_observer(std::move(observer));
  if (config_.coalesce) running_[video_id] = job;
  ++stats_.jobs_started;
  const NodeRecord best = select_best_node(candidates, rng);
  job->start(best);
  return job;
}

std::shared_ptr<FetchJob> OriginClient::running_job(const std::string& video_id) const {
  auto it = running_.find(video_id);
  return it == running_.end() ? nullptr : it->second;
}

void OriginClient::job_finished(FetchJob& job) {
  if (job.state_ == JobState::kDone) ++stats_.jobs_done; else ++stats_.jobs_failed;
  auto it = running_.find(job.video_id_);
  if (it != running_.end() && it->second.get() == &job) running_.erase(it);
}

}  // namespace bbm
