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

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "bbm/client_protocol.h"
#include "bbm/live.h"
#include "bbm/sim_harness.h"

namespace bbm {
namespace {

namespace fs = std::filesystem;

struct PlayResult {
  ResponseParser parser;
  bool eof_clean = false;
};

PlayResult play(std::uint16_t port, const std::string& video, const std::string& profile) {
  auto sock = Socket::connect({"127.0.0.1", port}, 2000);
  sock.set_io_timeout(20000);
  sock.write_all("PLAY " + video + " PROFILE " + profile + "\n");
  PlayResult r;
  while (!r.parser.done()) {
    const auto chunk = sock.read_some(1 << 16);
    if (chunk.empty()) break;
    r.parser.feed(chunk);
  }
  r.eof_clean = r.parser.done();
  return r;
}

std::string command(std::uint16_t port, const std::string& line) {
  auto sock = Socket::connect({"127.0.0.1", port}, 2000);
  sock.set_io_timeout(10000);
  sock.write_all(line + "\n");
  return sock.read_line().value_or("");
}

class LiveTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("bbm_live_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    SimVideoSpec spec;
    spec.id = "clip";
    spec.frame_count = 20;
    source_ = make_catalog_container(spec, 3);
    store_.put("clip", std::make_shared<const Bytes>(source_));
    origin_ = std::make_unique<OriginServer>(store_, HostPort{"127.0.0.1", 0});
    std::ofstream(dir_ / "nodes.txt") << "# test fleet\nn1 127.0.0.1:" << origin_->port()
                                      << " 1 -60 100000\n";
    ServiceConfig cfg;
    cfg.listen = "127.0.0.1:0";
    cfg.node_roster = (dir_ / "nodes.txt").string();
    cfg.segment_size_bytes = 64 * 1024;
    cfg.tick_ms = 5;
    cfg.burst = true;
    cfg.client_link_kbps = 1'000'000;
    service_ = std::make_unique<ManagerService>(cfg);
    port_ = service_->start();
  }
  void TearDown() override {
    service_.reset();
    origin_.reset();
    fs::remove_all(dir_);
  }

  void announce() {
    TelemetryMsg msg;
    msg.node_id = "n1";
    msg.channel_capacity_kbps = 100000;
    msg.available_storage_bytes = 1 << 30;
    msg.add_videos = {"clip"};
    EXPECT_EQ(command(port_, "TELEMETRY " + format_telemetry_line(msg)), "200 OK");
  }

  fs::path dir_;
  Bytes source_;
  OriginStore store_;
  std::unique_ptr<OriginServer> origin_;
  std::unique_ptr<ManagerService> service_;
  std::uint16_t port_ = 0;
};

TEST_F(LiveTest, UnknownVideoIsNotAvailable) {
  const auto r = play(port_, "clip", "qcif");
  ASSERT_TRUE(r.eof_clean);
  EXPECT_EQ(r.parser.status(), ClientStatus::kNotAvailable);
}

TEST_F(LiveTest, PlayFetchesTranscodesThenHits) {
  announce();
  const auto expected = encode_container(transcode(decode_container(source_, "clip"),
                                                   *ProfileRegistry().find("qcif")));
  const auto first = play(port_, "clip", "qcif");
  ASSERT_TRUE(first.eof_clean);
  ASSERT_FALSE(first.parser.status().has_value());
  EXPECT_EQ(first.parser.video_id(), "clip");
  EXPECT_EQ(first.parser.total_bytes(), expected.size());
  EXPECT_EQ(first.parser.payload(), expected);

  const auto second = play(port_, "clip", "qcif");
  ASSERT_TRUE(second.eof_clean);
  EXPECT_EQ(second.parser.payload(), expected);

  const auto stats = nlohmann::json::parse(command(port_, "STATS"));
  EXPECT_EQ(stats["requests"], 2);
  EXPECT_EQ(stats["cache_hits"], 1);
  EXPECT_EQ(stats["cache_misses"], 1);
  EXPECT_EQ(stats["origin_bytes"], source_.size());
}

TEST_F(LiveTest, CifProfileStreamsMobileCodecCopy) {
  announce();
  const auto r = play(port_, "clip", "cif");
  ASSERT_TRUE(r.eof_clean);
  EXPECT_EQ(r.parser.payload(), encode_container(transcode(decode_container(source_, "clip"),
                                                           *ProfileRegistry().find("cif"))));
}

TEST_F(LiveTest, BadCommandsAreRejected) {
  EXPECT_EQ(command(port_, "DANCE"), "400 BAD_REQUEST");
  EXPECT_EQ(command(port_, "TELEMETRY {\"node_id\":\"ghost\"}").substr(0, 4), "400 ");
}

TEST(HostPort, Parse) {
  const auto a = HostPort::parse("10.0.0.1:80");
  EXPECT_EQ(a.host, "10.0.0.1");
  EXPECT_EQ(a.port, 80);
  EXPECT_EQ(HostPort::parse(":9").port, 9);
  EXPECT_THROW(HostPort::parse("nohost"), Error);
}

TEST(ServiceConfig, ParsesKeyValues) {
  const auto c = ServiceConfig::parse(
      "# comment\ncache_budget_bytes = 1000\nburst = true\nlisten = :9000\n");
  EXPECT_EQ(c.cache_budget_bytes, 1000u);
  EXPECT_TRUE(c.burst);
  EXPECT_EQ(c.listen, ":9000");
  EXPECT_THROW(ServiceConfig::parse("bogus = 1\n"), Error);
}

TEST(RealtimeExecutor, RunsInTimeOrder) {
  RealtimeExecutor exec;
  std::thread loop([&] { exec.run(); });
  std::vector<int> order;
  std::mutex mu;
  exec.post_at(exec.now() + 30, [&] { std::lock_guard l(mu); order.push_back(2); });
  exec.post_at(exec.now(), [&] { std::lock_guard l(mu); order.push_back(1); });
  std::this_thread::sleep_for(std::chrono::milliseconds(80));
  exec.run_sync([] {});
  exec.stop();
  loop.join();
  EXPECT_EQ(order, (std::vector<int>{1, 2}));
}

}  // namespace
}  // namespace bbm
