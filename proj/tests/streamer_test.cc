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

#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "bbm/sim_harness.h"
#include "bbm/streamer.h"
#include "test_support.h"

namespace bbm {
namespace {

Bytes bytes_of(std::uint64_t n, std::uint64_t seed = 1) {
  Bytes b(n);
  for (std::uint64_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>((i * 131 + seed) >> 3);
  return b;
}

Bytes slice(const Bytes& all, std::uint64_t seg, std::uint64_t i) {
  const auto begin = i * seg;
  const auto end = std::min<std::uint64_t>(all.size(), begin + seg);
  return Bytes(all.begin() + static_cast<std::ptrdiff_t>(begin),
               all.begin() + static_cast<std::ptrdiff_t>(end));
}

StreamPlan make_plan(std::shared_ptr<SegmentSource> src, std::uint64_t threshold,
                     std::uint64_t bytes_per_tick, TimeMs tick = 10) {
  StreamPlan p;
  p.total_bytes = src->total_bytes();
  p.segment_size = src->segment_size();
  p.segment_count = src->total_segments();
  p.prefetch_threshold = std::min(threshold, p.segment_count);
  p.bytes_per_tick = bytes_per_tick;
  p.tick_ms = tick;
  p.source = std::move(src);
  return p;
}

// Payload bytes of a framed stream (lengths stripped).
Bytes unframe(const Bytes& wire) {
  ResponseParser parser;
  std::string header = "STREAM v 1:1x1@1 0 1\n";
  parser.feed({reinterpret_cast<const std::uint8_t*>(header.data()), header.size()});
  parser.feed(wire);
  EXPECT_TRUE(parser.done());
  return parser.payload();
}

// Fill in ticks: fill[t] bytes arrive during tick t; a segment becomes
// readable at the first tick whose cumulative fill covers it.
struct FillDriver {
  FillDriver(const Bytes& all, std::uint64_t seg) : all(all), seg(seg) {
    mem = std::make_shared<MemorySegments>(all.size(), seg);
  }
  void advance(std::uint64_t bytes) {
    filled = std::min<std::uint64_t>(all.size(), filled + bytes);
    while (next < mem->total_segments() &&
           std::min<std::uint64_t>((next + 1) * seg, all.size()) <= filled) {
      mem->write_segment(next, slice(all, seg, next));
      ++next;
    }
  }
  std::uint64_t avail() const { return std::min<std::uint64_t>(next * seg, all.size()); }
  const Bytes& all;
  std::uint64_t seg;
  std::shared_ptr<MemorySegments> mem;
  std::uint64_t filled = 0;
  std::uint64_t next = 0;
};

TEST(PrefetchThreshold, CifTenSecondClip) {
  // 15 + 300 * 152064 bytes over 10 s; 2 s prefetch = ceil(total / 5) bytes.
  const std::uint64_t total = 45619215;
  EXPECT_EQ(prefetch_threshold(total, 262144, 30, 300, 2000), 35u);
  EXPECT_EQ(prefetch_threshold(total, 262144, 30, 300, 0), 1u);
  EXPECT_EQ(prefetch_threshold(total, 262144, 30, 300, 60000), 175u);  // capped
  EXPECT_EQ(prefetch_threshold(0, 262144, 30, 0, 2000), 0u);
  EXPECT_EQ(prefetch_threshold(100, 10, 1, 10, 1000), 1u);  // 10 bytes of 100
  EXPECT_EQ(prefetch_threshold(100, 10, 1, 10, 2500), 3u);  // 25 bytes
}

TEST(PlanStream, PlaybackAndPacingArithmetic) {
  auto src = std::make_shared<MemorySegments>(45619215, 262144);
  StreamConfig cfg;
  auto plan = plan_stream(src, 30, 300, 50000, cfg);
  EXPECT_EQ(plan.segment_count, 175u);
  EXPECT_NEAR(plan.playback_bitrate_kbps, 36495.372, 1e-9);
  EXPECT_EQ(plan.pace_kbps, 36496);
  EXPECT_EQ(plan.bytes_per_tick, 45620u);
  EXPECT_EQ(plan.prefetch_threshold, 35u);
  EXPECT_FALSE(plan.below_playback);

  cfg.pace_cap_kbps = 40000;
  EXPECT_EQ(plan_stream(src, 30, 300, 50000, cfg).bytes_per_tick, 50000u);
  cfg.burst = true;
  EXPECT_EQ(plan_stream(src, 30, 300, 50000, cfg).bytes_per_tick, 62500u);

  StreamConfig slow;
  try {
    plan_stream(src, 30, 300, 2000, slow);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kBandwidthBelowPlayback);
  }
  slow.allow_below_playback = true;
  auto best_effort = plan_stream(src, 30, 300, 2000, slow);
  EXPECT_TRUE(best_effort.below_playback);
  EXPECT_EQ(best_effort.pace_kbps, 2000);
  EXPECT_EQ(best_effort.bytes_per_tick, 2500u);

  StreamConfig bad;
  bad.tick_ms = 0;
  EXPECT_THROW(plan_stream(src, 30, 300, 50000, bad), Error);
}

TEST(StreamDrain, CompleteEntryStartsAfterOneTick) {
  const Bytes all = bytes_of(1000);
  auto src = MemorySegments::from_bytes(all, 100);
  StreamDrain drain(make_plan(src, 3, 250), 500);
  Bytes wire;
  TimeMs t = 500;
  while (!drain.finished()) {
    drain.step(t, wire);
    t += 10;
  }
  EXPECT_EQ(drain.progress().startup_delay(), 10);
  EXPECT_TRUE(drain.progress().stall_events.empty());
  EXPECT_EQ(drain.progress().segments_sent, 10u);
  EXPECT_EQ(drain.progress().bytes_sent, 1000u);
  EXPECT_EQ(unframe(wire), all);
  EXPECT_EQ(drain.progress().finished_at, 500 + 4 * 10);
}

TEST(StreamDrain, FramesAreSegmentsInOrder) {
  const Bytes all = bytes_of(950);
  auto src = MemorySegments::from_bytes(all, 100);
  StreamDrain drain(make_plan(src, 1, 1 << 20), 0);
  Bytes wire;
  drain.step(0, wire);
  ASSERT_TRUE(drain.finished());
  std::size_t pos = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const std::uint32_t len = (std::uint32_t{wire[pos]} << 24) | (wire[pos + 1] << 16) |
                              (wire[pos + 2] << 8) | wire[pos + 3];
    ASSERT_EQ(len, i < 9 ? 100u : 50u);
    ASSERT_TRUE(std::equal(wire.begin() + pos + 4, wire.begin() + pos + 4 + len,
                           all.begin() + i * 100));
    pos += 4 + len;
  }
  EXPECT_EQ(wire.size(), pos + 4);  // zero-length terminator
}

TEST(StreamDrain, ThresholdThreeOneSegmentPerTick) {
  // Segment k lands at tick k; one segment drains per tick.
  const Bytes all = bytes_of(1000);
  FillDriver fill(all, 100);
  StreamDrain drain(make_plan(fill.mem, 3, 100), 0);
  Bytes wire;
  for (TimeMs tick = 0; !drain.finished(); ++tick) {
    fill.advance(100);
    drain.step(tick * 10, wire);
    if (tick < 2) {
      EXPECT_FALSE(drain.started());
    }
  }
  EXPECT_EQ(drain.progress().first_byte_at, 3 * 10);
  EXPECT_TRUE(drain.progress().stall_events.empty());
  EXPECT_EQ(unframe(wire), all);
}

// Runs a fill/drain scenario with per-tick fill amounts from `fill_at`.
template <typename FillFn>
StreamProgress run_scenario(const Bytes& all, std::uint64_t seg, std::uint64_t threshold,
                            std::uint64_t drain_rate, std::int64_t delay, FillFn fill_at,
                            std::vector<std::uint64_t>* avail_log = nullptr) {
  FillDriver fill(all, seg);
  StreamDrain drain(make_plan(fill.mem, threshold, drain_rate, 1), 0);
  Bytes wire;
  for (std::int64_t t = 0; !drain.finished(); ++t) {
    if (t >= delay) fill.advance(fill_at(t));
    if (avail_log) avail_log->push_back(fill.avail());
    drain.step(t, wire);
    if (t > 1'000'000) ADD_FAILURE() << "runaway scenario";
  }
  EXPECT_EQ(unframe(wire), all);
  return drain.progress();
}

TEST(StreamProperty, FillAtLeastDrainNeverStalls) {
  std::mt19937_64 rng(17);
  for (int s = 0; s < 500; ++s) {
    const std::uint64_t seg = 1 + rng() % 400;
    const Bytes all = bytes_of(1 + rng() % 20000, s);
    const std::uint64_t drain = 1 + rng() % 300;
    const std::uint64_t threshold = 1 + rng() % 6;
    const std::int64_t delay = static_cast<std::int64_t>(rng() % 50);
    const std::uint64_t jitter = rng() % 200;
    std::mt19937_64 fill_rng(rng());
    auto progress = run_scenario(all, seg, threshold, drain, delay, [&](std::int64_t) {
      return drain + (jitter ? fill_rng() % jitter : 0);  // never below the drain rate
    });
    ASSERT_TRUE(progress.stall_events.empty())
        << "scenario " << s << " seg " << seg << " drain " << drain << " first stall at "
        << progress.stall_events.front().at;
    ASSERT_TRUE(progress.first_byte_at.has_value());
  }
}

TEST(StreamProperty, SlowFillStallsMatchMinPlusOracle) {
  std::mt19937_64 rng(23);
  int with_stalls = 0;
  for (int s = 0; s < 300; ++s) {
    const std::uint64_t seg = 1 + rng() % 300;
    const Bytes all = bytes_of(500 + rng() % 20000, s);
    const std::uint64_t drain = 2 + rng() % 300;
    const std::uint64_t fill_rate = 1 + rng() % (drain - 1);  // strictly slower
    const std::uint64_t threshold = 1 + rng() % 4;
    const std::int64_t delay = static_cast<std::int64_t>(rng() % 20);
    std::vector<std::uint64_t> avail;
    auto progress = run_scenario(all, seg, threshold, drain, delay,
                                 [&](std::int64_t) { return fill_rate; }, &avail);

    // sent(t) = min(b (t - t0 + 1), min_{t0 <= u <= t} avail(u) + b (t - u)).
    const std::uint64_t need = std::min<std::uint64_t>(threshold, ceil_div(all.size(), seg)) * seg;
    std::int64_t t0 = 0;
    while (avail[t0] < std::min<std::uint64_t>(need, all.size())) ++t0;
    std::vector<Stall> expect;
    const auto b = static_cast<std::int64_t>(drain);
    std::int64_t prev = 0;
    std::int64_t best = INT64_MAX;  // min over u of avail(u) - b (u - t0)
    for (std::int64_t t = t0; prev < static_cast<std::int64_t>(all.size()); ++t) {
      best = std::min(best, static_cast<std::int64_t>(avail[t]) - b * (t - t0));
      const std::int64_t sent = std::min(b * (t - t0 + 1), best + b * (t - t0));
      if (sent == prev) {
        if (!expect.empty() && expect.back().at + expect.back().duration == t) {
          ++expect.back().duration;
        } else {
          expect.push_back({t, 1});
        }
      }
      prev = sent;
    }
    ASSERT_EQ(progress.stall_events, expect) << "scenario " << s;
    ASSERT_EQ(progress.first_byte_at, t0 + 1);
    if (!expect.empty()) ++with_stalls;
  }
  EXPECT_GT(with_stalls, 150);  // the generator really exercises stalls
}

TEST(StreamProperty, HalfRateOriginStalls) {
  // Origin at half the playback rate against a paced drain.
  const Bytes all = bytes_of(40000);
  auto progress = run_scenario(all, 1000, 1, 200, 0, [](std::int64_t) { return 100; });
  EXPECT_FALSE(progress.stall_events.empty());
  EXPECT_GT(progress.stall_time(), 0);
}

TEST(StreamRunner, DisconnectAtSegmentFourLeavesEntryCompletable) {
  SimExecutor exec(10);
  CacheStore cache({.segment_size = 100}, exec);
  const Bytes all = bytes_of(1000);
  auto fill = cache.begin_fill("v", {1, 8, 8, 10}, all.size());
  for (std::uint64_t i = 0; i < 6; ++i) fill.write_segment(i, slice(all, 100, i));
  auto src = std::make_shared<CacheEntrySource>(fill.reader());
  auto sink = std::make_shared<test::RecordingSink>(400);
  sink->write_text("STREAM v 1:8x8@10 1000 100\n");
  std::optional<Errc> error;
  StreamProgress final;
  auto runner = std::make_shared<StreamRunner>(
      exec, make_plan(src, 1, 100), sink, 0,
      [&](const StreamProgress& p, std::optional<Errc> e) {
        final = p;
        error = e;
      });
  src.reset();
  runner->start();
  while (exec.run_one()) {
  }
  EXPECT_EQ(error, Errc::kClientDisconnected);
  EXPECT_EQ(final.segments_sent, 4u);
  EXPECT_EQ(sink->parser.payload_bytes(), 400u);
  EXPECT_EQ(cache.variants_of("v").at(0).pin_count, 1u);  // only the filler
  for (std::uint64_t i = 6; i < 10; ++i) fill.write_segment(i, slice(all, 100, i));
  EXPECT_TRUE(fill.complete());
}

TEST(StreamRunner, FailStopsWithCode) {
  SimExecutor exec(10);
  auto mem = std::make_shared<MemorySegments>(300, 100);
  auto sink = std::make_shared<test::RecordingSink>();
  std::optional<Errc> error;
  bool called = false;
  auto runner = std::make_shared<StreamRunner>(exec, make_plan(mem, 1, 100), sink, 0,
                                               [&](const StreamProgress&, std::optional<Errc> e) {
                                                 called = true;
                                                 error = e;
                                               });
  runner->start();
  exec.run_one();
  exec.run_one();
  runner->fail(Errc::kSourceFailed);
  EXPECT_TRUE(called);
  EXPECT_EQ(error, Errc::kSourceFailed);
  EXPECT_FALSE(runner->running());
  while (exec.run_one()) {
  }
}

}  // namespace
}  // namespace bbm
