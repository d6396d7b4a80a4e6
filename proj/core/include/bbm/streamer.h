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
#include <memory>
#include <optional>
#include <vector>

#include "bbm/client_protocol.h"
#include "bbm/common.h"
#include "bbm/event_log.h"
#include "bbm/segment_source.h"

namespace bbm {

struct StreamConfig {
  TimeMs prefetch_ms = 2000;
  // Pacing ceiling; 0 paces at the playback bitrate.
  std::int64_t pace_cap_kbps = 0;
  // Send at the full device bandwidth instead of pacing.
  bool burst = false;
  TimeMs tick_ms = 10;
  // Stream anyway (and stall) when the device link is slower than playback.
  bool allow_below_playback = false;
};

struct StreamPlan {
  std::shared_ptr<SegmentSource> source;
  std::uint64_t total_bytes = 0;
  std::uint64_t segment_size = 0;
  std::uint64_t segment_count = 0;
  double playback_bitrate_kbps = 0;
  std::uint64_t prefetch_threshold = 1;
  std::int64_t pace_kbps = 0;
  std::uint64_t bytes_per_tick = 0;
  TimeMs tick_ms = 10;
  bool below_playback = false;
};

// Segments to buffer before the first client byte:
// max(1, ceil(prefetch bytes / segment_size)), at most the segment count.
std::uint64_t prefetch_threshold(std::uint64_t total_bytes, std::uint64_t segment_size,
                                 std::uint32_t fps, std::uint32_t frame_count,
                                 TimeMs prefetch_ms);

// `fps` and `frame_count` describe the container `source` holds.
// Throws Error(kBandwidthBelowPlayback) unless config.allow_below_playback.
StreamPlan plan_stream(std::shared_ptr<SegmentSource> source, std::uint32_t fps,
                       std::uint32_t frame_count, std::int64_t device_kbps,
                       const StreamConfig& config);

struct Stall {
  TimeMs at = 0;
  TimeMs duration = 0;
  bool operator==(const Stall&) const = default;
};

struct StreamProgress {
  std::uint64_t segments_sent = 0;
  std::uint64_t bytes_sent = 0;  // frame payload only
  TimeMs started_at = 0;
  std::optional<TimeMs> first_byte_at;
  std::optional<TimeMs> finished_at;
  std::vector<Stall> stall_events;

  std::optional<TimeMs> startup_delay() const {
    if (!first_byte_at) return std::nullopt;
    return *first_byte_at - started_at;
  }
  TimeMs stall_time() const {
    TimeMs t = 0;
    for (const auto& s : stall_events) t += s.duration;
    return t;
  }
};

// The delivery state machine, one step per tick. Waits until
// prefetch_threshold leading segments are present, then sends up to
// bytes_per_tick of contiguous payload each tick. A tick after start that
// sends nothing is a stall; consecutive stall ticks merge into one event.
// Bytes sent in the step at `now` reach the client at now + tick_ms.
class StreamDrain {
 public:
  StreamDrain(StreamPlan plan, TimeMs started_at);

  // Appends wire bytes (frame lengths + payload, and the terminating empty
  // frame) to `out`. Returns the payload bytes sent.
  std::uint64_t step(TimeMs now, Bytes& out);
  bool started() const { return started_; }
  bool finished() const { return finished_; }
  const StreamProgress& progress() const { return progress_; }
  const StreamPlan& plan() const { return plan_; }
  // Drops the source (and its pin). No further steps are allowed.
  void release_source() { plan_.source.reset(); }

 private:
  StreamPlan plan_;
  StreamProgress progress_;
  bool started_ = false;
  bool finished_ = false;
  std::uint64_t contiguous_ = 0;
  std::uint64_t next_segment_ = 0;
  std::uint64_t offset_ = 0;
};

// Drives a StreamDrain on an executor until done, failure or disconnect.
class StreamRunner : public std::enable_shared_from_this<StreamRunner> {
 public:
  // `error` is empty on success.
  using Done = std::function<void(const StreamProgress&, std::optional<Errc> error)>;

  StreamRunner(Executor& executor, StreamPlan plan, std::shared_ptr<ClientSink> sink,
               TimeMs started_at, Done done, EventLog* log = nullptr, std::uint64_t session = 0);

  // First step runs at the current time.
  void start();
  // The source will not complete; stop with `code`.
  void fail(Errc code);
  bool running() const { return !stopped_; }
  const StreamProgress& progress() const { return drain_.progress(); }
  const StreamPlan& plan() const { return drain_.plan(); }

 private:
  void tick();
  void stop(std::optional<Errc> error);

  Executor& executor_;
  StreamDrain drain_;
  std::shared_ptr<ClientSink> sink_;
  Done done_;
  EventLog* log_;
  std::uint64_t session_;
  bool stopped_ = false;
};

}  // namespace bbm
