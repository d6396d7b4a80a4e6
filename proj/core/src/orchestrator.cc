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

#include "bbm/orchestrator.h"

#include <algorithm>
#include <array>
#include <numeric>

namespace bbm {
namespace {

using S = SessionState;

constexpr std::array<std::string_view, 14> kStateNames = {
    "Received",    "IndexLookup", "CacheHit",  "CacheMiss", "HostLookup",
    "NotFound",    "NodeSelected", "Fetching", "FormatCheck", "Transcoding",
    "Ready",       "Streaming",   "Done",      "Failed"};

}  // namespace

std::string_view session_state_name(SessionState s) {
  return kStateNames[static_cast<std::size_t>(s)];
}

std::optional<SessionState> parse_session_state(std::string_view name) {
  for (std::size_t i = 0; i < kStateNames.size(); ++i) {
    if (kStateNames[i] == name) return static_cast<SessionState>(i);
  }
  return std::nullopt;
}

bool is_terminal(SessionState s) {
  return s == S::kDone || s == S::kFailed || s == S::kNotFound;
}

bool is_allowed_transition(SessionState from, SessionState to) {
  switch (from) {
    case S::kReceived: return to == S::kIndexLookup;
    case S::kIndexLookup: return to == S::kCacheHit || to == S::kCacheMiss;
    case S::kCacheHit: return to == S::kFormatCheck;
    case S::kCacheMiss: return to == S::kHostLookup;
    case S::kHostLookup: return to == S::kNotFound || to == S::kNodeSelected;
    case S::kNodeSelected: return to == S::kFetching;
    case S::kFetching: return to == S::kFormatCheck || to == S::kFailed;
    case S::kFormatCheck: return to == S::kTranscoding || to == S::kReady;
    case S::kTranscoding: return to == S::kStreaming || to == S::kFailed;
    case S::kReady: return to == S::kStreaming;
    case S::kStreaming: return to == S::kDone || to == S::kFailed;
    case S::kNotFound:
    case S::kDone:
    case S::kFailed: return false;
  }
  return false;
}

bool is_valid_path(std::span<const SessionState> path) {
  if (path.empty() || path.front() != S::kReceived || !is_terminal(path.back())) return false;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!is_allowed_transition(path[i - 1], path[i])) return false;
  }
  return true;
}

void SessionTraceChecker::observe(const nlohmann::json& e) {
  const auto kind = e.value("kind", std::string());
  if (kind != "session_state" && kind != "notify") return;
  const auto id = e.at("session").get<std::uint64_t>();
  const std::string name = "session " + std::to_string(id);
  if (kind == "notify") {
    auto it = open_.find(id);
    if (it == open_.end()) {
      problems_.push_back(name + ": notification outside a session");
    } else {
      ++it->second.notifications;
    }
    return;
  }
  const auto state = parse_session_state(e.value("state", std::string()));
  const auto tick = e.at("tick").get<std::int64_t>();
  if (!state) {
    problems_.push_back(name + ": unknown state " + e.dump());
    return;
  }
  auto it = open_.find(id);
  if (it == open_.end()) {
    if (*state != SessionState::kReceived) {
      problems_.push_back(name + ": starts in " + std::string(session_state_name(*state)));
      return;
    }
    open_[id] = {*state, tick, 0, "Received"};
    return;
  }
  Trace& t = it->second;
  t.path += ">" + std::string(session_state_name(*state));
  if (!is_allowed_transition(t.last, *state)) {
    problems_.push_back(name + ": invalid path " + t.path);
  }
  if (tick < t.tick) problems_.push_back(name + ": ticks not monotone");
  t.last = *state;
  t.tick = tick;
  if (is_terminal(*state)) {
    if (t.notifications != 1) {
      problems_.push_back(name + ": " + std::to_string(t.notifications) + " notifications");
    }
    ++closed_;
    open_.erase(it);
  }
}

std::vector<std::string> SessionTraceChecker::problems(bool include_open) const {
  auto out = problems_;
  if (include_open) {
    for (const auto& [id, t] : open_) {
      out.push_back("session " + std::to_string(id) + ": not terminal after " + t.path);
    }
  }
  return out;
}

std::vector<std::string> check_session_trace(const std::vector<nlohmann::json>& events) {
  SessionTraceChecker checker;
  for (const auto& e : events) checker.observe(e);
  return checker.problems();
}

void TraceCheckingLog::emit(std::string_view kind, nlohmann::json fields) {
  if (kind != "session_state" && kind != "notify") return;
  fields["kind"] = kind;
  fields["tick"] = tick_ms_ > 0 ? clock_.now() / tick_ms_ : clock_.now();
  checker_.observe(fields);
}

TimeMs Histogram::sum() const { return std::accumulate(samples.begin(), samples.end(), TimeMs{0}); }

double Histogram::mean() const {
  return samples.empty() ? 0.0 : static_cast<double>(sum()) / static_cast<double>(samples.size());
}

double Histogram::median() const {
  if (samples.empty()) return 0.0;
  auto v = samples;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  if (n % 2 == 1) return static_cast<double>(v[n / 2]);
  return (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
}

TimeMs Histogram::max() const {
  return samples.empty() ? 0 : *std::max_element(samples.begin(), samples.end());
}

nlohmann::json Histogram::summary() const {
  return {{"count", count()}, {"sum_ms", sum()}, {"mean_ms", mean()},
          {"median_ms", median()}, {"max_ms", max()}};
}

nlohmann::json Metrics::to_json() const {
  return {{"requests", requests},
          {"cache_hits", cache_hits},
          {"cache_misses", cache_misses},
          {"not_found", not_found},
          {"failed", failed},
          {"origin_bytes", origin_bytes},
          {"client_bytes", client_bytes},
          {"transcode_count", transcode_count},
          {"coalesced", coalesced},
          {"below_playback", below_playback},
          {"startup_delay", startup_delay.summary()},
          {"startup_delay_hit", startup_delay_hit.summary()},
          {"startup_delay_miss", startup_delay_miss.summary()},
          {"stall_time", stall_time.summary()}};
}

class BillboardManager::Session : public FetchObserver,
                                  public std::enable_shared_from_this<Session> {
 public:
  Session(BillboardManager& m, ClientRequest request, DeviceProfile profile,
          std::shared_ptr<ClientSink> sink)
      : m_(m), profile_(std::move(profile)), sink_(std::move(sink)) {
    record.request = std::move(request);
  }

  void run();
  void on_fill_started(FetchJob& job) override;
  void on_finished(FetchJob& job) override;

  SessionRecord record;

 private:
  SessionState state() const { return record.transitions.back().first; }
  void to(SessionState s);
  void notify(std::string_view what);
  void fail_with(ClientStatus status, Errc code, const std::string& why);
  void format_and_stream(std::shared_ptr<SegmentSource> source, const VideoAsset& header);
  void finish_transcode(std::shared_ptr<SegmentSource> source);
  void stream(std::shared_ptr<SegmentSource> source, const VideoAsset& header);
  void on_stream_done(const StreamProgress& progress, std::optional<Errc> error);
  void finish(SessionState terminal);
  nlohmann::json tag() const {
    return {{"session", record.request.session_id}, {"video", record.request.video_id}};
  }

  BillboardManager& m_;
  DeviceProfile profile_;
  std::shared_ptr<ClientSink> sink_;
  std::shared_ptr<FetchJob> job_;
  std::shared_ptr<StreamRunner> runner_;
  bool finished_ = false;
};

void BillboardManager::Session::to(SessionState s) {
  record.transitions.emplace_back(s, m_.executor_.now());
  auto fields = tag();
  fields["state"] = session_state_name(s);
  m_.log_->emit("session_state", std::move(fields));
}

void BillboardManager::Session::notify(std::string_view what) {
  auto fields = tag();
  fields["status"] = what;
  m_.log_->emit("notify", std::move(fields));
}

void BillboardManager::Session::run() {
  const auto& video = record.request.video_id;
  to(S::kReceived);
  to(S::kIndexLookup);

  if (m_.cache_) {
    // Device-matched variant first, then the original for transcoding.
    std::optional<FormatVariantKey> pick;
    const auto variants = m_.cache_->variants_of(video);
    for (const auto& v : variants) {
      if (v.state == FillState::kComplete && matches_profile(v.key.variant, profile_) &&
          (!pick || v.key.variant.fps > pick->fps)) {
        pick = v.key.variant;
      }
    }
    if (!pick) {
      auto area = [](const FormatVariantKey& k) { return std::uint64_t{k.width} * k.height; };
      for (const auto& v : variants) {
        if (v.state != FillState::kComplete) continue;
        if (!pick || std::pair(area(v.key.variant), v.key.variant.fps) >
                         std::pair(area(*pick), pick->fps)) {
          pick = v.key.variant;
        }
      }
    }
    if (pick) {
      if (auto handle = m_.cache_->lookup(video, *pick)) {
        to(S::kCacheHit);
        record.cache_hit = true;
        {
          std::lock_guard lock(m_.metrics_mu_);
          ++m_.metrics_.cache_hits;
        }
        auto source = std::make_shared<CacheEntrySource>(std::move(*handle));
        VideoAsset header;
        try {
          header = decode_header(*source->read_segment(0));
        } catch (const Error& e) {
          // A CacheHit cannot fail before FormatCheck; report it as a format error there.
          to(S::kFormatCheck);
          to(S::kTranscoding);
          return fail_with(ClientStatus::kFormatUnsupported, e.code(), e.what());
        }
        return format_and_stream(std::move(source), header);
      }
    }
  }

  to(S::kCacheMiss);
  to(S::kHostLookup);
  auto hosts = m_.registry_.find_hosts(video);
  if (hosts.empty()) {
    {
      std::lock_guard lock(m_.metrics_mu_);
      ++m_.metrics_.not_found;
    }
    sink_->write_text(status_line(ClientStatus::kNotAvailable));
    notify("404");
    record.status = ClientStatus::kNotAvailable;
    return finish(S::kNotFound);
  }

  const auto joins_before = m_.origin_.stats().joins;
  job_ = m_.origin_.fetch_or_join(video, std::move(hosts), m_.rng_, weak_from_this());
  record.coalesced = m_.origin_.stats().joins > joins_before;
  record.node_id = job_->node_id();
  {
    std::lock_guard lock(m_.metrics_mu_);
    ++m_.metrics_.cache_misses;
    if (record.coalesced) ++m_.metrics_.coalesced;
  }
  to(S::kNodeSelected);
  auto fields = tag();
  fields["node"] = record.node_id;
  fields["job"] = job_->id();
  fields["coalesced"] = record.coalesced;
  m_.log_->emit("node_selected", std::move(fields));
  to(S::kFetching);
}

void BillboardManager::Session::on_fill_started(FetchJob& job) {
  if (finished_ || state() != S::kFetching) return;
  auto source = job.source();
  const auto header = decode_header(*source->read_segment(0));
  // Stream while the fill runs; other formats need the whole asset first.
  if (matches_profile(header.variant(), profile_)) format_and_stream(std::move(source), header);
}

void BillboardManager::Session::on_finished(FetchJob& job) {
  auto self = shared_from_this();
  if (finished_) return;
  if (job.state() == JobState::kFailed) {
    if (state() == S::kFetching) {
      fail_with(ClientStatus::kFetchFailed, job.failure().code, job.failure().message);
    } else if (runner_) {
      runner_->fail(Errc::kSourceFailed);
    }
  } else if (state() == S::kFetching) {
    auto source = job.source();
    const auto header = decode_header(*source->read_segment(0));
    format_and_stream(std::move(source), header);
  }
  job_.reset();
}

void BillboardManager::Session::format_and_stream(std::shared_ptr<SegmentSource> source,
                                                  const VideoAsset& header) {
  to(S::kFormatCheck);
  if (matches_profile(header.variant(), profile_)) {
    to(S::kReady);
    return stream(std::move(source), header);
  }
  to(S::kTranscoding);
  record.transcoded = true;
  {
    std::lock_guard lock(m_.metrics_mu_);
    ++m_.metrics_.transcode_count;
  }
  const auto rate = m_.config_.transcode_bytes_per_ms;
  const TimeMs delay = rate ? static_cast<TimeMs>(ceil_div(source->total_bytes(), rate)) : 0;
  m_.executor_.post_after(delay, [self = shared_from_this(), source = std::move(source)]() mutable {
    self->finish_transcode(std::move(source));
  });
}

void BillboardManager::Session::finish_transcode(std::shared_ptr<SegmentSource> source) {
  if (finished_) return;
  const auto& video = record.request.video_id;
  VideoAsset out;
  try {
    out = transcode(decode_container(read_all(*source), video), profile_);
  } catch (const Error& e) {
    return fail_with(ClientStatus::kFormatUnsupported, e.code(), e.what());
  }
  const auto from = source->total_bytes();
  source.reset();
  const Bytes bytes = encode_container(out);

  std::shared_ptr<SegmentSource> result;
  if (m_.cache_) {
    try {
      auto fill = m_.cache_->begin_fill(video, out.variant(), bytes.size());
      const auto seg = fill.segment_size();
      for (std::uint64_t i = 0; i < fill.total_segments(); ++i) {
        const auto begin = i * seg;
        const auto end = std::min<std::uint64_t>(begin + seg, bytes.size());
        fill.write_segment(i, std::span(bytes).subspan(begin, end - begin));
      }
      result = std::make_shared<CacheEntrySource>(fill.reader());
    } catch (const Error& e) {
      if (e.code() == Errc::kAlreadyComplete) {
        if (auto h = m_.cache_->lookup(video, out.variant())) {
          result = std::make_shared<CacheEntrySource>(std::move(*h));
        }
      }
      if (!result) {
        auto fields = tag();
        fields["reason"] = errc_name(e.code());
        m_.log_->emit("cache_bypass", std::move(fields));
      }
    }
  }
  if (!result) {
    const auto seg = m_.cache_ ? m_.cache_->segment_size() : m_.origin_.config().segment_size;
    result = MemorySegments::from_bytes(bytes, seg);
  }
  auto fields = tag();
  fields["variant"] = out.variant().to_string();
  fields["in_bytes"] = from;
  fields["out_bytes"] = bytes.size();
  m_.log_->emit("transcoded", std::move(fields));
  stream(std::move(result), out);
}

void BillboardManager::Session::stream(std::shared_ptr<SegmentSource> source,
                                       const VideoAsset& header) {
  to(S::kStreaming);
  auto cfg = m_.config_.stream;
  cfg.allow_below_playback = true;
  StreamPlan plan = plan_stream(source, header.fps, header.frame_count,
                                m_.config_.client_link_kbps, cfg);
  if (plan.below_playback) {
    {
      std::lock_guard lock(m_.metrics_mu_);
      ++m_.metrics_.below_playback;
    }
    auto fields = tag();
    fields["playback_kbps"] = plan.playback_bitrate_kbps;
    fields["link_kbps"] = m_.config_.client_link_kbps;
    m_.log_->emit("below_playback", std::move(fields));
  }
  record.served_variant = header.variant();
  sink_->write_text(stream_header_line(record.request.video_id, header.variant(),
                                       plan.total_bytes, plan.segment_size));
  notify("STREAM");
  auto fields = tag();
  fields["variant"] = header.variant().to_string();
  fields["segments"] = plan.segment_count;
  fields["prefetch_threshold"] = plan.prefetch_threshold;
  fields["bytes_per_tick"] = plan.bytes_per_tick;
  m_.log_->emit("stream_start", std::move(fields));
  runner_ = std::make_shared<StreamRunner>(
      m_.executor_, std::move(plan), sink_, record.request.arrival,
      [weak = weak_from_this()](const StreamProgress& p, std::optional<Errc> error) {
        if (auto self = weak.lock()) self->on_stream_done(p, error);
      },
      m_.log_, record.request.session_id);
  runner_->start();
}

void BillboardManager::Session::on_stream_done(const StreamProgress& progress,
                                               std::optional<Errc> error) {
  record.progress = progress;
  record.error = error;
  finish(error ? S::kFailed : S::kDone);
}

void BillboardManager::Session::fail_with(ClientStatus status, Errc code,
                                          const std::string& why) {
  record.status = status;
  record.error = code;
  sink_->write_text(status_line(status));
  auto fields = tag();
  fields["status"] = status_line(status).substr(0, 3);
  fields["reason"] = errc_name(code);
  fields["detail"] = why;
  m_.log_->emit("notify", std::move(fields));
  finish(S::kFailed);
}

void BillboardManager::Session::finish(SessionState terminal) {
  auto self = shared_from_this();
  finished_ = true;
  to(terminal);
  sink_->close();
  runner_.reset();
  job_.reset();
  m_.session_finished(*this);
}

BillboardManager::BillboardManager(Executor& executor, CacheStore* cache, NodeRegistry& registry,
                                   OriginClient& origin, const ProfileRegistry& profiles,
                                   ManagerConfig config, EventLog* log)
    : executor_(executor), cache_(cache), registry_(registry), origin_(origin),
      profiles_(profiles), config_(std::move(config)), log_(log ? log : &null_log_),
      rng_(config_.rng_seed) {
  origin_.on_origin_bytes = [this](const std::string&, std::uint64_t bytes) {
    std::lock_guard lock(metrics_mu_);
    metrics_.origin_bytes += bytes;
  };
}

BillboardManager::~BillboardManager() { origin_.on_origin_bytes = nullptr; }

std::uint64_t BillboardManager::handle_request(ClientRequest request,
                                               std::shared_ptr<ClientSink> sink) {
  const DeviceProfile* profile = profiles_.find(request.profile_id);
  if (!profile) throw Error(Errc::kInvalidProfile, "unknown profile " + request.profile_id);
  if (request.session_id == 0) {
    request.session_id = next_session_++;
  } else {
    next_session_ = std::max(next_session_, request.session_id + 1);
  }
  request.arrival = executor_.now();
  {
    std::lock_guard lock(metrics_mu_);
    ++metrics_.requests;
  }
  const auto id = request.session_id;
  log_->emit("request", {{"session", id}, {"video", request.video_id},
                         {"profile", request.profile_id}});
  auto session = std::make_shared<Session>(*this, std::move(request), *profile, std::move(sink));
  active_[id] = session;
  session->run();
  return id;
}

void BillboardManager::session_finished(Session& s) {
  const auto& r = s.record;
  {
    std::lock_guard lock(metrics_mu_);
    metrics_.client_bytes += r.progress.bytes_sent;
    if (r.final_state() == S::kFailed) ++metrics_.failed;
    if (r.final_state() == S::kDone) {
      if (auto d = r.progress.startup_delay()) {
        metrics_.startup_delay.add(*d);
        (r.cache_hit ? metrics_.startup_delay_hit : metrics_.startup_delay_miss).add(*d);
      }
      metrics_.stall_time.add(r.progress.stall_time());
    }
  }
  nlohmann::json fields = {{"session", r.request.session_id},
                           {"video", r.request.video_id},
                           {"state", session_state_name(r.final_state())},
                           {"hit", r.cache_hit},
                           {"bytes", r.progress.bytes_sent},
                           {"stalls", r.progress.stall_events.size()},
                           {"stall_ms", r.progress.stall_time()}};
  if (auto d = r.progress.startup_delay()) fields["startup_ms"] = *d;
  if (r.error) fields["error"] = errc_name(*r.error);
  log_->emit("session_end", std::move(fields));
  if (on_session_done) on_session_done(r);
  if (config_.keep_history) history_.push_back(r);
  active_.erase(r.request.session_id);
}

Metrics BillboardManager::snapshot_metrics() const {
  std::lock_guard lock(metrics_mu_);
  return metrics_;
}

nlohmann::json BillboardManager::stats_json() const {
  auto j = snapshot_metrics().to_json();
  if (cache_) {
    j["cache"] = {{"bytes_used", cache_->bytes_used()},
                  {"reserved_bytes", cache_->reserved_bytes()},
                  {"entries", cache_->entry_count()}};
  }
  const auto rs = registry_.stats();
  j["registry"] = {{"nodes", registry_.snapshot().size()},
                   {"telemetry_applied", rs.telemetry_applied},
                   {"telemetry_stale", rs.telemetry_stale},
                   {"probe_timeouts", rs.probe_timeouts}};
  return j;
}

}  // namespace bbm
