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

#include "bbm/origin_client.h"
#include "bbm/sim_harness.h"

namespace bbm {
namespace {

// Records every request on its way to the simulated network.
class RecordingTransport final : public OriginTransport {
 public:
  explicit RecordingTransport(SimOriginNetwork& net) : net_(net) {}
  void send(const NodeRecord& node, const OriginRequest& req, Callback done) override {
    sent.emplace_back(node.node_id, req);
    net_.send(node, req, std::move(done));
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges(const std::string& node = {}) const {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
    for (const auto& [n, r] : sent) {
      if (r.kind == OriginRequest::Kind::kGet && (node.empty() || n == node)) {
        out.emplace_back(r.start, r.end_inclusive);
      }
    }
    return out;
  }
  std::vector<std::pair<std::string, OriginRequest>> sent;

 private:
  SimOriginNetwork& net_;
};

class Observer final : public FetchObserver {
 public:
  void on_fill_started(FetchJob&) override { ++started; }
  void on_segment(FetchJob&, std::uint64_t index) override { segments.push_back(index); }
  void on_finished(FetchJob& job) override {
    ++finished;
    final_state = job.state();
    failure = job.failure().code;
  }
  int started = 0;
  int finished = 0;
  std::vector<std::uint64_t> segments;
  JobState final_state = JobState::kRunning;
  Errc failure = Errc::kIo;
};

NodeRecord record(const std::string& id, std::int64_t route) {
  NodeRecord n;
  n.node_id = id;
  n.route_time_ms = route;
  return n;
}

struct Rig {
  explicit Rig(std::uint64_t segment_size, FetchConfig fc = {})
      : exec(10), net(exec), transport(net),
        cache(CacheConfig{.segment_size = segment_size}, exec),
        client(exec, transport, &cache, fc) {}

  SharedBytes add(const std::string& node_id, const std::string& video, std::uint32_t frames,
                  std::int64_t fail_after = -1) {
    SimNodeSpec spec;
    spec.id = node_id;
    spec.fail_after_segments = fail_after;
    auto* n = net.node(node_id);
    if (!n) n = &net.add_node(spec);
    auto bytes = std::make_shared<const Bytes>(
        encode_container(make_synthetic_asset(video, 1, 8, 8, 10, frames, 5)));
    n->store.put(video, bytes);
    return bytes;
  }

  void run() {
    while (exec.run_one()) {
    }
  }

  Bytes cached(const std::string& video) {
    auto v = cache.variants_of(video).at(0);
    auto h = cache.lookup(video, v.key.variant);
    return read_all(CacheEntrySource(std::move(*h)));
  }

  SimExecutor exec;
  SimOriginNetwork net;
  RecordingTransport transport;
  CacheStore cache;
  OriginClient client;
  std::mt19937_64 rng{1};
};

TEST(OriginProtocol, LinesRoundTrip) {
  auto get = OriginRequest::get("v1", 10, 19);
  EXPECT_EQ(get.to_line(), "GET v1 RANGE 10-19\n");
  auto back = OriginRequest::parse(get.to_line());
  ASSERT_TRUE(back);
  EXPECT_EQ(back->start, 10u);
  EXPECT_EQ(back->end_inclusive, 19u);
  EXPECT_EQ(OriginRequest::size("v1").to_line(), "SIZE v1\n");
  EXPECT_FALSE(OriginRequest::parse("GET v1 RANGE 10"));
  EXPECT_FALSE(OriginRequest::parse("FETCH v1"));
}

TEST(OriginProtocol, StoreResponses) {
  OriginStore store;
  store.put("v", std::make_shared<const Bytes>(Bytes{1, 2, 3, 4, 5}));
  EXPECT_EQ(store.handle(OriginRequest::size("v")).value, 5u);
  auto r = store.handle(OriginRequest::get("v", 1, 3));
  EXPECT_EQ(r.status, 206);
  EXPECT_EQ(r.body, (Bytes{2, 3, 4}));
  EXPECT_EQ(store.handle(OriginRequest::get("v", 3, 5)).status, 416);
  EXPECT_EQ(store.handle(OriginRequest::get("v", 3, 2)).status, 416);
  EXPECT_EQ(store.handle(OriginRequest::size("w")).status, 404);
  EXPECT_EQ(store.handle_line("junk").status, 400);

  Bytes wire = r.encode();
  EXPECT_EQ(std::string(wire.begin(), wire.begin() + 6), "206 3\n");
  auto decoded = OriginResponse::decode(wire);
  EXPECT_EQ(decoded.status, 206);
  EXPECT_EQ(decoded.body, r.body);
  Bytes notfound = store.handle(OriginRequest::size("w")).encode();
  EXPECT_EQ(std::string(notfound.begin(), notfound.end()), "404\n");
}

TEST(OriginClient, SingleSegmentVideoIsOneRange) {
  Rig rig(4096);
  auto bytes = rig.add("n1", "v", 3);  // 15 + 3 * 96 bytes
  auto obs = std::make_shared<Observer>();
  auto job = rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, obs);
  rig.run();
  EXPECT_EQ(job->state(), JobState::kDone);
  EXPECT_EQ(rig.transport.ranges(),
            (std::vector<std::pair<std::uint64_t, std::uint64_t>>{{0, bytes->size() - 1}}));
  EXPECT_EQ(rig.cache.variants_of("v").at(0).state, FillState::kComplete);
  EXPECT_EQ(rig.cached("v"), *bytes);
  EXPECT_EQ(obs->started, 1);
  EXPECT_EQ(obs->finished, 1);
  EXPECT_EQ(rig.client.stats().origin_bytes, bytes->size());
}

TEST(OriginClient, RangeBoundariesFollowCeilingDivision) {
  Rig rig(198);
  auto bytes = rig.add("n1", "v", 5);  // 15 + 5 * 96 = 495 = 2.5 * 198
  ASSERT_EQ(bytes->size(), 495u);
  auto obs = std::make_shared<Observer>();
  auto job = rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, obs);
  rig.run();
  ASSERT_EQ(job->state(), JobState::kDone);
  EXPECT_EQ(rig.transport.ranges(), (std::vector<std::pair<std::uint64_t, std::uint64_t>>{
                                        {0, 197}, {198, 395}, {396, 494}}));
  EXPECT_EQ(obs->segments, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(job->range_requests(), 3u);
  EXPECT_EQ(rig.cached("v"), *bytes);
}

TEST(OriginClient, RangesPartitionTheObjectForAnySize) {
  for (std::uint32_t frames = 0; frames < 40; frames += 3) {
    for (std::uint64_t seg : {16u, 50u, 96u, 200u, 1000u}) {
      Rig rig(seg);
      auto bytes = rig.add("n1", "v", frames);
      auto job = rig.client.fetch_or_join("v", {record("n1", 2)}, rig.rng);
      rig.run();
      ASSERT_EQ(job->state(), JobState::kDone) << frames << "/" << seg;
      std::uint64_t next = 0;
      for (auto [s, e] : rig.transport.ranges()) {
        ASSERT_EQ(s, next);
        ASSERT_LE(e - s + 1, seg);
        next = e + 1;
      }
      ASSERT_EQ(next, bytes->size());
      ASSERT_EQ(rig.cached("v"), *bytes);
    }
  }
}

TEST(OriginClient, NodeHangAfterFirstSegmentLeavesRestartableEntry) {
  FetchConfig fc;
  fc.max_retries = 0;
  Rig rig(198, fc);
  auto bytes = rig.add("n1", "v", 5, /*fail_after=*/1);
  auto obs = std::make_shared<Observer>();
  auto job = rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, obs);
  rig.run();
  EXPECT_EQ(job->state(), JobState::kFailed);
  EXPECT_EQ(obs->failure, Errc::kNodeTimeout);
  auto info = rig.cache.variants_of("v").at(0);
  EXPECT_EQ(info.state, FillState::kFilling);
  EXPECT_EQ(info.present, (std::vector<bool>{true, false, false}));
  EXPECT_EQ(info.pin_count, 0u);
  EXPECT_EQ(rig.client.running_count(), 0u);

  // A restart against a healthy node fetches only the missing segments.
  rig.add("n2", "v", 5);
  rig.transport.sent.clear();
  auto again = rig.client.fetch_or_join("v", {record("n2", 20)}, rig.rng);
  rig.run();
  EXPECT_EQ(again->state(), JobState::kDone);
  EXPECT_EQ(rig.transport.ranges(),
            (std::vector<std::pair<std::uint64_t, std::uint64_t>>{{198, 395}, {396, 494}}));
  EXPECT_EQ(rig.cached("v"), *bytes);
}

TEST(OriginClient, RetriesOnNextBestCandidate) {
  Rig rig(198);
  auto bytes = rig.add("fast", "v", 5, /*fail_after=*/2);
  rig.add("slow", "v", 5);
  auto obs = std::make_shared<Observer>();
  auto job = rig.client.fetch_or_join("v", {record("slow", 40), record("fast", 10)}, rig.rng, obs);
  rig.run();
  EXPECT_EQ(job->state(), JobState::kDone);
  EXPECT_EQ(job->node_id(), "slow");
  EXPECT_EQ(rig.client.stats().retries, 1u);
  EXPECT_EQ(rig.transport.ranges("slow"),
            (std::vector<std::pair<std::uint64_t, std::uint64_t>>{{396, 494}}));
  EXPECT_EQ(rig.cached("v"), *bytes);
  EXPECT_EQ(obs->finished, 1);
}

TEST(OriginClient, ConcurrentMissesShareOneTransfer) {
  Rig rig(100);
  auto bytes = rig.add("n1", "v", 20);
  auto a = std::make_shared<Observer>();
  auto b = std::make_shared<Observer>();
  auto j1 = rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, a);
  rig.exec.run_one();  // let the first request go out
  auto j2 = rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, b);
  EXPECT_EQ(j1, j2);
  EXPECT_EQ(j1->waiter_count(), 2u);
  rig.run();
  EXPECT_EQ(j1->state(), JobState::kDone);
  EXPECT_EQ(rig.transport.ranges().size(), ceil_div(bytes->size(), 100));
  EXPECT_EQ(rig.client.stats().origin_bytes, bytes->size());
  EXPECT_EQ(a->finished, 1);
  EXPECT_EQ(b->finished, 1);
  EXPECT_EQ(b->started, 1);

  // After Done, nothing is running; a new call would start a new job.
  EXPECT_EQ(rig.client.running_job("v"), nullptr);
  EXPECT_EQ(rig.client.stats().jobs_started, 1u);
}

TEST(OriginClient, FailureIsBroadcastToAllWaiters) {
  FetchConfig fc;
  fc.max_retries = 0;
  Rig rig(100, fc);
  rig.add("n1", "v", 20, /*fail_after=*/3);
  auto a = std::make_shared<Observer>();
  auto b = std::make_shared<Observer>();
  rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, a);
  rig.client.fetch_or_join("v", {record("n1", 20)}, rig.rng, b);
  rig.run();
  EXPECT_EQ(a->finished, 1);
  EXPECT_EQ(b->finished, 1);
  EXPECT_EQ(a->final_state, JobState::kFailed);
  EXPECT_EQ(b->final_state, JobState::kFailed);
  EXPECT_EQ(a->failure, b->failure);
}

TEST(OriginClient, UnknownVideoAndShortResponsesFail) {
  FetchConfig fc;
  fc.max_retries = 0;
  Rig rig(100, fc);
  SimNodeSpec spec;
  spec.id = "n1";
  auto& node = rig.net.add_node(spec);
  node.store.put("bad", std::make_shared<const Bytes>(Bytes{'B', 'B', 'M', 'V'}));
  auto obs = std::make_shared<Observer>();
  rig.client.fetch_or_join("bad", {record("n1", 1)}, rig.rng, obs);
  rig.run();
  EXPECT_EQ(obs->final_state, JobState::kFailed);
  EXPECT_EQ(obs->failure, Errc::kTruncatedPayload);

  auto obs2 = std::make_shared<Observer>();
  rig.client.fetch_or_join("missing", {record("n1", 1)}, rig.rng, obs2);
  rig.run();
  EXPECT_EQ(obs2->final_state, JobState::kFailed);
}

TEST(OriginClient, WithoutCacheSegmentsStayInMemory) {
  SimExecutor exec(10);
  SimOriginNetwork net(exec);
  SimNodeSpec spec;
  spec.id = "n1";
  auto& n = net.add_node(spec);
  auto bytes = std::make_shared<const Bytes>(
      encode_container(make_synthetic_asset("v", 1, 8, 8, 10, 9, 1)));
  n.store.put("v", bytes);
  FetchConfig fc;
  fc.segment_size = 64;
  OriginClient client(exec, net, nullptr, fc);
  std::mt19937_64 rng(1);
  auto job = client.fetch_or_join("v", {record("n1", 1)}, rng);
  while (exec.run_one()) {
  }
  ASSERT_EQ(job->state(), JobState::kDone);
  EXPECT_FALSE(job->cached());
  EXPECT_EQ(read_all(*job->source()), *bytes);
}

TEST(OriginClient, PipelinedFetchIsComplete) {
  FetchConfig fc;
  fc.pipeline_depth = 4;
  Rig rig(64, fc);
  auto bytes = rig.add("n1", "v", 30);
  auto job = rig.client.fetch_or_join("v", {record("n1", 1)}, rig.rng);
  rig.run();
  ASSERT_EQ(job->state(), JobState::kDone);
  EXPECT_EQ(rig.transport.ranges().size(), ceil_div(bytes->size(), 64));
  EXPECT_EQ(rig.cached("v"), *bytes);
}

}  // namespace
}  // namespace bbm
