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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <tuple>

#include <unistd.h>

#include <gtest/gtest.h>

#include "bbm/node_registry.h"
#include "test_support.h"

namespace bbm {
namespace {

NodeRecord node(std::string id, std::int64_t route, std::int64_t cap, std::int32_t sig) {
  NodeRecord n;
  n.node_id = std::move(id);
  n.route_time_ms = route;
  n.channel_capacity_kbps = cap;
  n.signal_strength_db = sig;
  return n;
}

// Brute force: sort by (route asc, capacity desc, signal desc) and return the
// ids sharing the first triple.
std::vector<std::string> oracle_best(std::vector<NodeRecord> fleet) {
  auto key = [](const NodeRecord& n) {
    return std::make_tuple(n.route_time_ms, -n.channel_capacity_kbps, -n.signal_strength_db);
  };
  std::sort(fleet.begin(), fleet.end(),
            [&](const NodeRecord& a, const NodeRecord& b) { return key(a) < key(b); });
  std::vector<std::string> ids;
  for (const auto& n : fleet) {
    if (key(n) == key(fleet.front())) ids.push_back(n.node_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<NodeRecord> random_fleet(std::mt19937_64& rng) {
  const int size = 1 + static_cast<int>(rng() % 20);
  std::vector<NodeRecord> fleet;
  for (int i = 0; i < size; ++i) {
    if (i > 0 && rng() % 3 == 0) {
      // Tie cluster: copy another node's triple, maybe perturbing one field.
      NodeRecord n = fleet[rng() % fleet.size()];
      n.node_id = "n" + std::to_string(i);
      switch (rng() % 4) {
        case 1: n.channel_capacity_kbps += static_cast<std::int64_t>(rng() % 3) - 1; break;
        case 2: n.signal_strength_db += static_cast<std::int32_t>(rng() % 3) - 1; break;
        default: break;
      }
      fleet.push_back(n);
    } else {
      fleet.push_back(node("n" + std::to_string(i), static_cast<std::int64_t>(rng() % 1000),
                           1 + static_cast<std::int64_t>(rng() % 100000),
                           -static_cast<std::int32_t>(rng() % 120)));
    }
  }
  return fleet;
}

TEST(IndexScore, ComparatorExamples) {
  std::mt19937_64 rng(1);
  {
    std::vector<NodeRecord> c{node("A", 10, 5000, -70)};
    EXPECT_EQ(select_best_node(c, rng).node_id, "A");
  }
  {
    std::vector<NodeRecord> c{node("A", 10, 5000, -70), node("B", 20, 9000, -50)};
    EXPECT_EQ(select_best_node(c, rng).node_id, "A");
  }
  {
    std::vector<NodeRecord> c{node("A", 10, 5000, -70), node("B", 10, 8000, -80)};
    EXPECT_EQ(select_best_node(c, rng).node_id, "B");
  }
  {
    std::vector<NodeRecord> c{node("A", 10, 5000, -70), node("B", 10, 5000, -60)};
    EXPECT_EQ(select_best_node(c, rng).node_id, "B");
  }
}

TEST(IndexScore, TiedPairIsUniform) {
  std::vector<NodeRecord> c{node("A", 10, 5000, -70), node("B", 10, 5000, -70)};
  std::mt19937_64 rng(2024);
  std::vector<std::uint64_t> counts(2);
  for (int i = 0; i < 10000; ++i) ++counts[select_best_node(c, rng).node_id == "B"];
  const double stat = test::chi_square_statistic(counts, 5000.0);
  EXPECT_GT(test::chi_square_p_value(stat, 1), 0.01) << counts[0] << "/" << counts[1];
}

TEST(SelectBestNode, MatchesBruteForceOracle) {
  std::mt19937_64 gen(7);
  int tied = 0;
  for (int f = 0; f < 1000; ++f) {
    auto fleet = random_fleet(gen);
    const auto expect = oracle_best(fleet);
    std::mt19937_64 rng(f);
    const auto& got = select_best_node(fleet, rng);
    if (expect.size() == 1) {
      ASSERT_EQ(got.node_id, expect[0]) << "fleet " << f;
    } else {
      ++tied;
      ASSERT_TRUE(std::binary_search(expect.begin(), expect.end(), got.node_id)) << "fleet " << f;
    }
  }
  EXPECT_GT(tied, 50);  // the generator really produces tie clusters
}

TEST(SelectBestNode, PermutationInvariantAndDeterministic) {
  std::mt19937_64 gen(8);
  for (int f = 0; f < 300; ++f) {
    auto fleet = random_fleet(gen);
    std::mt19937_64 r1(99);
    const std::string first = select_best_node(fleet, r1).node_id;
    std::shuffle(fleet.begin(), fleet.end(), gen);
    std::mt19937_64 r2(99);
    ASSERT_EQ(select_best_node(fleet, r2).node_id, first);
  }
}

TEST(SelectBestNode, StrictlyShortestRouteWins) {
  std::mt19937_64 gen(9);
  for (int f = 0; f < 300; ++f) {
    auto fleet = random_fleet(gen);
    auto& chosen = fleet[gen() % fleet.size()];
    std::int64_t min_route = INT64_MAX;
    for (const auto& n : fleet) min_route = std::min(min_route, n.route_time_ms);
    chosen.route_time_ms = min_route - 1;
    chosen.channel_capacity_kbps = 1;
    chosen.signal_strength_db = -200;
    std::mt19937_64 rng(f);
    ASSERT_EQ(select_best_node(fleet, rng).node_id, chosen.node_id);
  }
}

TEST(NodeRegistry, TelemetryUpdatesAndRejectsStale) {
  ManualClock clock(0);
  NodeRegistry reg(clock, 15000);
  reg.register_node({"n1", "sim", 10, -70, 100});
  TelemetryMsg m{"n1", 5, 4000, 1 << 20, {"v1", "v2"}, {}};
  reg.apply_telemetry(m);
  auto rec = reg.get("n1");
  EXPECT_EQ(rec->channel_capacity_kbps, 4000);
  EXPECT_EQ(rec->last_telemetry, 5);
  EXPECT_EQ(rec->hosted_videos.size(), 2u);

  TelemetryMsg later{"n1", 9, 6000, 7, {}, {"v1"}};
  reg.apply_telemetry(later);
  rec = reg.get("n1");
  EXPECT_EQ(rec->channel_capacity_kbps, 6000);
  EXPECT_EQ(rec->available_storage_bytes, 7u);
  EXPECT_EQ(rec->last_telemetry, 9);
  EXPECT_EQ(rec->hosted_videos, (std::set<std::string, std::less<>>{"v2"}));

  TelemetryMsg old{"n1", 8, 1, 1, {"v9"}, {}};
  try {
    reg.apply_telemetry(old);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kStaleMessage);
  }
  EXPECT_EQ(reg.get("n1")->channel_capacity_kbps, 6000);
  EXPECT_EQ(reg.get("n1")->hosted_videos.count("v9"), 0u);
  EXPECT_EQ(reg.stats().telemetry_stale, 1u);

  TelemetryMsg ghost{"zz", 1, 1, 1, {}, {}};
  EXPECT_THROW(reg.apply_telemetry(ghost), Error);
}

TEST(NodeRegistry, FindHostsFiltersByHostingAndFreshness) {
  ManualClock clock(0);
  NodeRegistry reg(clock, 100);
  EXPECT_TRUE(reg.find_hosts("v").empty());
  for (int i = 1; i <= 5; ++i) reg.register_node({"n" + std::to_string(i), "", 1, 0, 1});
  clock.set(50);
  reg.apply_telemetry({"n1", 10, 1, 0, {"v"}, {}});
  reg.apply_telemetry({"n2", 50, 1, 0, {"v"}, {}});
  reg.apply_telemetry({"n3", 50, 1, 0, {"v"}, {}});
  reg.apply_telemetry({"n4", 50, 1, 0, {"w"}, {}});
  clock.set(120);  // n1 is now 110 ms old
  auto hosts = reg.find_hosts("v");
  ASSERT_EQ(hosts.size(), 2u);
  EXPECT_EQ(hosts[0].node_id, "n2");
  EXPECT_EQ(hosts[1].node_id, "n3");
  ASSERT_EQ(reg.find_hosts("w").size(), 1u);
}

TEST(NodeRegistry, FindHostsOracleOverRandomFleets) {
  std::mt19937_64 rng(3);
  for (int round = 0; round < 200; ++round) {
    ManualClock clock(0);
    const TimeMs window = 1 + static_cast<TimeMs>(rng() % 500);
    NodeRegistry reg(clock, window);
    const int n = 1 + static_cast<int>(rng() % 12);
    std::map<std::string, std::pair<TimeMs, bool>> model;  // ts, hosts v
    clock.set(1000);
    for (int i = 0; i < n; ++i) {
      const std::string id = "n" + std::to_string(i);
      reg.register_node({id, "", 1, 0, 1});
      const TimeMs ts = 1000 + static_cast<TimeMs>(rng() % 1000);
      const bool hosts = rng() % 2;
      TelemetryMsg m{id, ts, 1, 0, {}, {}};
      if (hosts) m.add_videos.push_back("v");
      reg.apply_telemetry(m);
      model[id] = {ts, hosts};
    }
    clock.set(2000 + static_cast<TimeMs>(rng() % 600));
    std::vector<std::string> expect;
    for (const auto& [id, m] : model) {
      if (m.second && clock.now() - m.first <= window) expect.push_back(id);
    }
    std::vector<std::string> got;
    for (const auto& h : reg.find_hosts("v")) got.push_back(h.node_id);
    ASSERT_EQ(got, expect) << "round " << round;
  }
}

TEST(NodeRegistry, RouteProbe) {
  ManualClock clock(0);
  NodeRegistry reg(clock, 1000);
  reg.register_node({"a", "", 10, 0, 1});
  reg.apply_telemetry({"a", 0, 1, 0, {"v"}, {}});
  EXPECT_EQ(reg.get("a")->route_time_ms, 20);
  SimRouteProber prober;
  prober.set_latency("a", 35);
  EXPECT_EQ(reg.measure_route("a", prober), 70);
  EXPECT_EQ(reg.get("a")->route_time_ms, 70);
  prober.set_unreachable("a", true);
  EXPECT_THROW(reg.measure_route("a", prober), Error);
  EXPECT_TRUE(reg.find_hosts("v").empty());
  EXPECT_EQ(reg.stats().probe_timeouts, 1u);
  prober.set_unreachable("a", false);
  reg.measure_route("a", prober);
  EXPECT_EQ(reg.find_hosts("v").size(), 1u);
}

TEST(Telemetry, LineRoundTrip) {
  TelemetryMsg m{"node-1", 12345, 777, 1ull << 40, {"a", "b"}, {"c"}};
  const std::string line = format_telemetry_line(m);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  TelemetryMsg back = parse_telemetry_line(line);
  EXPECT_EQ(back.node_id, m.node_id);
  EXPECT_EQ(back.timestamp, m.timestamp);
  EXPECT_EQ(back.channel_capacity_kbps, m.channel_capacity_kbps);
  EXPECT_EQ(back.available_storage_bytes, m.available_storage_bytes);
  EXPECT_EQ(back.add_videos, m.add_videos);
  EXPECT_EQ(back.remove_videos, m.remove_videos);
  EXPECT_THROW(parse_telemetry_line("{not json"), Error);
  EXPECT_THROW(parse_telemetry_line(R"({"ts":1})"), Error);
}

TEST(NodeRoster, ParsesLinesAndComments) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("bbm_roster_" + std::to_string(::getpid()));
  {
    std::ofstream out(path);
    out << "# id address latency signal [capacity]\n\n"
        << "n1 10.0.0.1:9000 12 -60\n"
        << "n2 10.0.0.2:9000 30 -75 8000\n";
  }
  auto roster = load_node_roster(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(roster.size(), 2u);
  EXPECT_EQ(roster[0].node_id, "n1");
  EXPECT_EQ(roster[0].latency_ms, 12);
  EXPECT_EQ(roster[0].signal_db, -60);
  EXPECT_EQ(roster[1].address, "10.0.0.2:9000");
  EXPECT_EQ(roster[1].capacity_kbps, 8000);
}

}  // namespace
}  // namespace bbm
