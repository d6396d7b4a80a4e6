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

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "bbm/client_protocol.h"
#include "bbm/live.h"
#include "bbm/node_registry.h"
#include "bbm/sim_harness.h"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bbm::Error(bbm::Errc::kIo, "cannot open " + path);
  return nlohmann::json::parse(in);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw bbm::Error(bbm::Errc::kIo, "cannot write " + path);
  out << text;
}

// Blocks SIGINT/SIGTERM for all threads; returns once one arrives.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("signal {}; shutting down", sig);
}

int cmd_simulate(const std::string& config_path, const std::string& out, const std::string& log,
                 bool no_cache) {
  auto config = bbm::SimConfig::load(config_path);
  if (no_cache) config.cache_enabled = false;
  std::ofstream log_stream;
  bbm::SimOptions options;
  if (!log.empty()) {
    log_stream.open(log, std::ios::binary);
    if (!log_stream) throw bbm::Error(bbm::Errc::kIo, "cannot write " + log);
    options.event_stream = &log_stream;
  }
  const auto result = bbm::run_simulation(config, options);
  for (const auto& p : result.trace_problems) spdlog::error("trace: {}", p);
  write_text(out, result.report.to_json().dump(2) + "\n");
  return result.report.trace_violations == 0 ? 0 : 3;
}

int cmd_origin(const std::string& listen, const std::string& catalog_path, std::uint64_t seed,
               const std::string& manager, const std::string& node_id, int interval_s,
               std::int64_t capacity_kbps) {
  const auto catalog = bbm::SimConfig::from_json({{"catalog", read_json(catalog_path)}}).catalog;
  bbm::OriginStore store;
  std::vector<std::string> ids;
  for (const auto& v : catalog) {
    store.put(v.id, std::make_shared<const bbm::Bytes>(bbm::make_catalog_container(v, seed)));
    ids.push_back(v.id);
  }
  const auto signals = block_stop_signals();
  bbm::OriginServer server(store, bbm::HostPort::parse(listen));
  spdlog::info("origin {} serving {} videos on port {}", node_id, ids.size(), server.port());

  std::atomic<bool> running{true};
  std::thread reporter;
  if (!manager.empty()) {
    reporter = std::thread([&] {
      const auto to = bbm::HostPort::parse(manager);
      while (running) {
        bbm::TelemetryMsg msg;
        msg.node_id = node_id;
        msg.timestamp = 0;  // the manager stamps on receipt
        msg.channel_capacity_kbps = capacity_kbps;
        msg.add_videos = ids;
        try {
          auto sock = bbm::Socket::connect(to, 2000);
          sock.write_all("TELEMETRY " + bbm::format_telemetry_line(msg) + "\n");
          if (auto reply = sock.read_line()) spdlog::debug("telemetry: {}", *reply);
        } catch (const std::exception& e) {
          spdlog::warn("telemetry to {} failed: {}", manager, e.what());
        }
        for (int i = 0; i < interval_s * 10 && running; ++i) {
          std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
      }
    });
  }
  wait_for_signal(signals);
  running = false;
  if (reporter.joinable()) reporter.join();
  server.stop();
  return 0;
}

int cmd_serve(const std::string& config_path) {
  const auto signals = block_stop_signals();
  bbm::ManagerService service(bbm::ServiceConfig::load(config_path));
  service.start();
  wait_for_signal(signals);
  service.stop();
  return 0;
}

int cmd_play(const std::string& server, const std::string& video, const std::string& profile,
             const std::string& out) {
  auto sock = bbm::Socket::connect(bbm::HostPort::parse(server), 5000);
  bbm::ClientCommand cmd{bbm::ClientCommand::Kind::kPlay, video, profile, {}};
  sock.write_all(cmd.to_line());
  bbm::ResponseParser parser;
  while (!parser.done()) {
    const auto chunk = sock.read_some(64 * 1024);
    if (chunk.empty()) break;
    parser.feed(chunk);
  }
  if (parser.status()) {
    std::cerr << bbm::status_line(*parser.status());
    return 2;
  }
  if (!parser.done()) {
    std::cerr << "stream ended early after " << parser.payload_bytes() << " bytes\n";
    return 1;
  }
  std::cerr << "STREAM " << parser.video_id() << ' ' << parser.variant().to_string() << ' '
            << parser.payload_bytes() << " bytes in " << parser.frames() << " frames\n";
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    f.write(reinterpret_cast<const char*>(parser.payload().data()),
            static_cast<std::streamsize>(parser.payload().size()));
  }
  return 0;
}

int cmd_stats(const std::string& server) {
  auto sock = bbm::Socket::connect(bbm::HostPort::parse(server), 5000);
  sock.write_all(std::string_view("STATS\n"));
  if (auto line = sock.read_line()) std::cout << nlohmann::json::parse(*line).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Billboard Manager: caching and transcoding video gateway"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string config, out, log, a_path, b_path, listen, catalog, manager, node_id, server, video,
      profile;
  bool no_cache = false;
  std::uint64_t seed = 1, videos = 10;
  int interval_s = 5;
  std::int64_t capacity = 10000;

  auto* serve = app.add_subcommand("serve", "Run the manager service");
  serve->add_option("--config", config, "key=value service config")->required();

  auto* simulate = app.add_subcommand("simulate", "Run a deterministic simulation");
  simulate->add_option("--config", config, "JSON simulation config")->required();
  simulate->add_option("--out", out, "Report path (default stdout)");
  simulate->add_option("--log", log, "NDJSON event log path");
  simulate->add_flag("--no-cache", no_cache, "Disable caching (baseline run)");

  auto* compare = app.add_subcommand("compare", "Compare two simulation reports");
  compare->add_option("a", a_path, "First report")->required();
  compare->add_option("b", b_path, "Second report")->required();
  compare->add_option("--out", out, "Output path (default stdout)");

  auto* gen = app.add_subcommand("gen-catalog", "Print a synthetic catalog as JSON");
  gen->add_option("--videos", videos, "Number of videos")->required();
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--out", out, "Output path (default stdout)");

  auto* origin = app.add_subcommand("origin", "Serve a catalog over the origin protocol");
  origin->add_option("--listen", listen, "host:port")->required();
  origin->add_option("--catalog", catalog, "Catalog JSON (gen-catalog output)")->required();
  origin->add_option("--seed", seed, "Payload seed");
  origin->add_option("--manager", manager, "Manager host:port for telemetry");
  origin->add_option("--node-id", node_id, "Node id used in telemetry")->default_val("origin");
  origin->add_option("--telemetry-interval", interval_s, "Seconds between telemetry");
  origin->add_option("--capacity-kbps", capacity, "Advertised channel capacity");

  auto* play = app.add_subcommand("play", "Request a video from a running manager");
  play->add_option("--server", server, "Manager host:port")->required();
  play->add_option("--video", video, "Video id")->required();
  play->add_option("--profile", profile, "Device profile")->default_val("cif");
  play->add_option("--out", out, "Write the received container here");

  auto* stats = app.add_subcommand("stats", "Print a running manager's metrics");
  stats->add_option("--server", server, "Manager host:port")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::default_logger()->clone("bbm"));

  try {
    if (*serve) return cmd_serve(config);
    if (*simulate) return cmd_simulate(config, out, log, no_cache);
    if (*compare) {
      const auto delta = bbm::compare_runs(bbm::SimReport::from_json(read_json(a_path)),
                                           bbm::SimReport::from_json(read_json(b_path)));
      write_text(out, delta.dump(2) + "\n");
      return 0;
    }
    if (*gen) {
      write_text(out, bbm::catalog_to_json(bbm::generate_catalog(videos, seed)).dump(2) + "\n");
      return 0;
    }
    if (*origin) return cmd_origin(listen, catalog, seed, manager, node_id, interval_s, capacity);
    if (*play) return cmd_play(server, video, profile, out);
    if (*stats) return cmd_stats(server);
  } catch (const bbm::Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
