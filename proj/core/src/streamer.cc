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

#include "bbm/streamer.h"

#include <algorithm>

namespace bbm {

std::uint64_t prefetch_threshold(std::uint64_t total_bytes, std::uint64_t segment_size,
                                 std::uint32_t fps, std::uint32_t frame_count,
                                 TimeMs prefetch_ms) {
  const std::uint64_t segments = ceil_div(total_bytes, segment_size);
  if (segments == 0) return 0;
  std::uint64_t threshold = 1;
  if (frame_count > 0 && prefetch_ms > 0) {
    // prefetch bytes = prefetch_s * total_bytes / duration_s
    const std::uint64_t num = total_bytes * static_cast<std::uint64_t>(prefetch_ms) * fps;
    const std::uint64_t den = std::uint64_t{frame_count} * 1000;
    const std::uint64_t prefetch_bytes = ceil_div(num, den);
    threshold = std::max<std::uint64_t>(1, ceil_div(prefetch_bytes, segment_size));
  }
  return std::min(threshold, segments);
}

StreamPlan plan_stream(std::shared_ptr<SegmentSource> source, std::uint32_t fps,
                       std::uint32_t frame_count, std::int64_t device_kbps,
                       const StreamConfig& config) {
  if (config.tick_ms <= 0) throw Error(Errc::kConfigInvalid, "tick_ms must be positive");
  StreamPlan plan;
  plan.total_bytes = source->total_bytes();
  plan.segment_size = source->segment_size();
  plan.segment_count = source->total_segments();
  plan.tick_ms = config.tick_ms;
  plan.prefetch_threshold = prefetch_threshold(plan.total_bytes, plan.segment_size, fps,
                                               frame_count, config.prefetch_ms);

  // Bits per second = bytes * 8 * fps / frames.
  const std::uint64_t bits_num = plan.total_bytes * 8 * fps;
  const std::uint64_t bits_den = frame_count;
  std::int64_t playback_kbps = 0;
  if (bits_den > 0) {
    plan.playback_bitrate_kbps =
        static_cast<double>(bits_num) / static_cast<double>(bits_den) / 1000.0;
    playback_kbps = static_cast<std::int64_t>(ceil_div(bits_num, bits_den * 1000));
  }
  const bool below = device_kbps < 0 || (bits_den > 0 && static_cast<std::uint64_t>(device_kbps) *
                                                              1000 * bits_den < bits_num);
  if (below) {
    if (!config.allow_below_playback) {
      throw Error(Errc::kBandwidthBelowPlayback,
                  std::to_string(device_kbps) + " kbps device link under " +
                      std::to_string(playback_kbps) + " kbps playback");
    }
    plan.below_playback = true;
  }

  if (config.burst) {
    plan.pace_kbps = device_kbps;
  } else {
    const std::int64_t cap = config.pace_cap_kbps > 0 ? config.pace_cap_kbps : playback_kbps;
    plan.pace_kbps = std::max(std::min(device_kbps, cap), std::min(device_kbps, playback_kbps));
  }
  plan.pace_kbps = std::max<std::int64_t>(plan.pace_kbps, 1);
  // kbps * ms = bits.
  plan.bytes_per_tick =
      ceil_div(static_cast<std::uint64_t>(plan.pace_kbps) * static_cast<std::uint64_t>(config.tick_ms), 8);
  plan.source = std::move(source);
  return plan;
}

StreamDrain::StreamDrain(StreamPlan plan, TimeMs started_at) : plan_(std::move(plan)) {
  progress_.started_at = started_at;
}

std::uint64_t StreamDrain::step(TimeMs now, Bytes& out) {
  if (finished_) return 0;
  const auto& source = *plan_.source;
  while (contiguous_ < plan_.segment_count && source.has_segment(contiguous_)) ++contiguous_;
  if (!started_) {
    if (contiguous_ < plan_.prefetch_threshold) return 0;
    started_ = true;
  }

  std::uint64_t budget = plan_.bytes_per_tick;
  std::uint64_t sent = 0;
  while (budget > 0 && next_segment_ < contiguous_) {
    const auto seg = source.read_segment(next_segment_);
    if (offset_ == 0) append_frame_length(out, static_cast<std::uint32_t>(seg->size()));
    const std::uint64_t n = std::min<std::uint64_t>(budget, seg->size() - offset_);
    out.insert(out.end(), seg->begin() + static_cast<std::ptrdiff_t>(offset_),
               seg->begin() + static_cast<std::ptrdiff_t>(offset_ + n));
    offset_ += n;
    budget -= n;
    sent += n;
    if (offset_ == seg->size()) {
      ++next_segment_;
      ++progress_.segments_sent;
      offset_ = 0;
    }
  }
  progress_.bytes_sent += sent;

  if (sent > 0) {
    if (!progress_.first_byte_at) progress_.first_byte_at = now + plan_.tick_ms;
  } else if (next_segment_ < plan_.segment_count) {
    auto& stalls = progress_.stall_events;
    if (!stalls.empty() && stalls.back().at + stalls.back().duration == now) {
      stalls.back().duration += plan_.tick_ms;
    } else {
      stalls.push_back({now, plan_.tick_ms});
    }
  }

  if (next_segment_ == plan_.segment_count) {
    append_frame_length(out, 0);
    finished_ = true;
    progress_.finished_at = now + plan_.tick_ms;
    if (!progress_.first_byte_at) progress_.first_byte_at = now + plan_.tick_ms;
  }
  return sent;
}

StreamRunner::StreamRunner(Executor& executor, StreamPlan plan, std::shared_ptr<ClientSink> sink,
                           TimeMs started_at, Done done, EventLog* log, std::uint64_t session)
    : executor_(executor), drain_(std::move(plan), started_at), sink_(std::move(sink)),
      done_(std::move(done)), log_(log), session_(session) {}

void StreamRunner::start() {
  executor_.post([self = shared_from_this()] { self->tick(); });
}

void StreamRunner::fail(Errc code) {
  if (!stopped_) stop(code);
}

void StreamRunner::tick() {
  if (stopped_) return;
  if (!sink_->connected()) return stop(Errc::kClientDisconnected);
  const auto before = drain_.progress().segments_sent;
  Bytes out;
  drain_.step(executor_.now(), out);
  if (!out.empty()) sink_->write(out);
  if (log_) {
    const auto& plan = drain_.plan();
    for (auto i = before; i < drain_.progress().segments_sent; ++i) {
      log_->emit("segment_delivered",
                 {{"session", session_}, {"segment", i}, {"bytes", plan.source->segment_bytes(i)}});
    }
  }
  if (drain_.finished()) return stop(std::nullopt);
  executor_.post_after(drain_.plan().tick_ms, [self = shared_from_this()] { self->tick(); });
}

void StreamRunner::stop(std::optional<Errc> error) {
  stopped_ = true;
  // Drop the source pin now; the entry itself stays cached.
  drain_.release_source();
  auto done = std::move(done_);
  if (done) done(drain_.progress(), error);
}

}  // namespace bbm
