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

#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <spdlog/spdlog.h>

#include "bbm/cache_store.h"
#include "bbm/media_model.h"
#include "bbm/node_registry.h"
#include "bbm/sim_harness.h"

namespace bbm {
namespace {

void BM_TranscodeCifToQcif(benchmark::State& state) {
  const auto frames = static_cast<std::uint32_t>(state.range(0));
  const auto src = make_synthetic_asset("b", kSourceCodec, kCifWidth, kCifHeight, 30, frames, 1);
  const DeviceProfile qcif{"qcif", kMobileCodec, kQcifWidth, kQcifHeight, 15};
  for (auto _ : state) benchmark::DoNotOptimize(transcode(src, qcif));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * src.payload.size()));
}
BENCHMARK(BM_TranscodeCifToQcif)->Arg(30)->Arg(300);

void BM_EncodeDecodeContainer(benchmark::State& state) {
  const auto src = make_synthetic_asset("b", kSourceCodec, kQcifWidth, kQcifHeight, 15, 150, 1);
  for (auto _ : state) {
    const auto bytes = encode_container(src);
    benchmark::DoNotOptimize(decode_container(bytes));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * src.container_size()));
}
BENCHMARK(BM_EncodeDecodeContainer);

// Fill-and-lookup churn under a budget that forces steady eviction.
void BM_CacheFillEvict(benchmark::State& state) {
  constexpr std::uint64_t kSeg = 4096;
  ManualClock clock;
  CacheStore cache({.segment_size = kSeg, .byte_budget = 64 * kSeg, .dir = {}}, clock);
  const Bytes seg(kSeg, 7);
  const FormatVariantKey variant{2, 176, 144, 15};
  std::uint64_t n = 0;
  for (auto _ : state) {
    clock.advance(1);
    const std::string id = "v" + std::to_string(n++ % 256);
    if (auto hit = cache.lookup(id, variant)) {
      benchmark::DoNotOptimize(hit->read_segment(0));
      continue;
    }
    auto fill = cache.begin_fill(id, variant, 4 * kSeg);
    for (std::uint64_t i = 0; i < 4; ++i) fill.write_segment(i, seg);
  }
}
BENCHMARK(BM_CacheFillEvict);

void BM_SelectBestNode(benchmark::State& state) {
  std::mt19937_64 gen(1);
  std::vector<NodeRecord> fleet(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    fleet[i].node_id = "n" + std::to_string(i);
    fleet[i].route_time_ms = 10 + static_cast<std::int64_t>(gen() % 4);
    fleet[i].channel_capacity_kbps = 1000 * (1 + static_cast<std::int64_t>(gen() % 3));
    fleet[i].signal_strength_db = -60 - static_cast<std::int32_t>(gen() % 3);
  }
  std::mt19937_64 rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(&select_best_node(fleet, rng));
}
BENCHMARK(BM_SelectBestNode)->Arg(8)->Arg(128);

void BM_SimulateZipf(benchmark::State& state) {
  spdlog::set_level(spdlog::level::warn);
  SimConfig c;
  c.segment_size = 64 * 1024;
  c.verify_streams = false;
  c.catalog = generate_catalog(20, 1);
  for (auto& v : c.catalog) v.frame_count = v.fps;
  SimNodeSpec n;
  n.id = "n1";
  n.all_videos = true;
  n.capacity_kbps = 100000;
  c.nodes.push_back(n);
  c.client_link_kbps = 100000;
  c.workload.model = WorkloadSpec::Model::kZipf;
  c.workload.catalog_size = 20;
  c.workload.requests = static_cast<std::uint64_t>(state.range(0));
  c.workload.inter_arrival_ticks = 20;
  c.workload.profile_mix = {{"qcif", 1}};
  for (auto _ : state) benchmark::DoNotOptimize(run_simulation(c).report.hit_rate);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_SimulateZipf)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace bbm

BENCHMARK_MAIN();
