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

#include "bbm/sim_harness.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "bbm/cache_store.h"
#include "bbm/client_protocol.h"
#include "bbm/event_log.h"
#include "bbm/streamer.h"

namespace bbm {

// ---- SimExecutor ----

SimExecutor::SimExecutor(TimeMs tick_ms) : tick_ms_(tick_ms) {
  if (tick_ms_ <= 0) throw Error(Errc::kConfigInvalid, "tick_ms must be positive");
}

void SimExecutor::post_at(TimeMs when, Task task) {
  when = std::max(when, now_);
  when = (when + tick_ms_ - 1) / tick_ms_ * tick_ms_;
  queue_.push({when, seq_++, std::move(task)});
}

bool SimExecutor::run_one() {
  if (queue_.empty()) return false;
  // priority_queue::top is const; the task is moved out via a copy of the item.
  Item item = queue_.top();
  queue_.pop();
  now_ = item.when;
  item.task();
  return true;
}

TimeMs SimExecutor::next_time() const { return queue_.empty() ? now_ : queue_.top().when; }

// ---- config ----

namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(Errc::kConfigInvalid, field + ": " + why);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  const std::string field = path + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) invalid(field, "expected a boolean");
    out = it->get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) invalid(field, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (it->is_number_unsigned()) {
        const auto v = it->get<std::uint64_t>();
        if (v > std::numeric_limits<T>::max()) invalid(field, "out of range");
        out = static_cast<T>(v);
      } else {
        invalid(field, "must not be negative");
      }
    } else {
      const auto v = it->get<std::int64_t>();
      if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) {
        invalid(field, "out of range");
      }
      out = static_cast<T>(v);
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) invalid(field, "expected a number");
    out = it->get<T>();
  } else {
    if (!it->is_string()) invalid(field, "expected a string");
    out = it->get<std::string>();
  }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                    const std::string& path) {
  for (const auto& [k, _] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) invalid(path + k, "unknown field");
  }
}

SimVideoSpec video_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) invalid(path, "expected an object");
  reject_unknown(j, {"id", "codec", "width", "height", "fps", "frame_count"}, path);
  SimVideoSpec v;
  read(j, "id", v.id, path);
  read(j, "codec", v.codec, path);
  read(j, "width", v.width, path);
  read(j, "height", v.height, path);
  read(j, "fps", v.fps, path);
  read(j, "frame_count", v.frame_count, path);
  return v;
}

json video_to_json(const SimVideoSpec& v) {
  return {{"id", v.id}, {"codec", v.codec}, {"width", v.width},
          {"height", v.height}, {"fps", v.fps}, {"frame_count", v.frame_count}};
}

bool is_token(const std::string& s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  });
}

std::uint64_t container_size_of(const SimVideoSpec& v) {
  return kContainerHeaderBytes + std::uint64_t{v.frame_count} * frame_size_bytes(v.width, v.height);
}

}  // namespace

SimConfig SimConfig::from_json(const json& j) {
  if (!j.is_object()) invalid("config", "expected a JSON object");
  reject_unknown(j,
                 {"seed", "tick_ms", "segment_size", "cache_budget", "cache_enabled", "cache_dir",
                  "prefetch_ms", "client_link_kbps", "pace_cap_kbps", "burst",
                  "telemetry_interval_ms", "staleness_ms", "fetch_timeout_ms", "max_retries",
                  "pipeline_depth", "transcode_bytes_per_ms", "verify_streams", "nodes", "catalog",
                  "profiles", "workload", "max_ticks"},
                 "");
  SimConfig c;
  read(j, "seed", c.seed, "");
  read(j, "tick_ms", c.tick_ms, "");
  read(j, "segment_size", c.segment_size, "");
  if (j.contains("cache_budget") && !j["cache_budget"].is_null()) {
    std::uint64_t b = 0;
    read(j, "cache_budget", b, "");
    c.cache_budget = b;
  }
  read(j, "cache_enabled", c.cache_enabled, "");
  std::string dir;
  read(j, "cache_dir", dir, "");
  c.cache_dir = dir;
  read(j, "prefetch_ms", c.prefetch_ms, "");
  read(j, "client_link_kbps", c.client_link_kbps, "");
  read(j, "pace_cap_kbps", c.pace_cap_kbps, "");
  read(j, "burst", c.burst, "");
  read(j, "telemetry_interval_ms", c.telemetry_interval_ms, "");
  read(j, "staleness_ms", c.staleness_ms, "");
  read(j, "fetch_timeout_ms", c.fetch_timeout_ms, "");
  read(j, "max_retries", c.max_retries, "");
  read(j, "pipeline_depth", c.pipeline_depth, "");
  read(j, "transcode_bytes_per_ms", c.transcode_bytes_per_ms, "");
  read(j, "verify_streams", c.verify_streams, "");
  read(j, "max_ticks", c.max_ticks, "");

  if (auto it = j.find("catalog"); it != j.end()) {
    if (!it->is_array()) invalid("catalog", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      c.catalog.push_back(video_from_json((*it)[i], "catalog[" + std::to_string(i) + "]."));
    }
  }
  if (auto it = j.find("profiles"); it != j.end()) {
    if (!it->is_array()) invalid("profiles", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& pj = (*it)[i];
      const std::string path = "profiles[" + std::to_string(i) + "].";
      if (!pj.is_object()) invalid(path, "expected an object");
      reject_unknown(pj, {"id", "codec", "width", "height", "max_fps"}, path);
      DeviceProfile p;
      read(pj, "id", p.profile_id, path);
      read(pj, "codec", p.codec_id, path);
      read(pj, "width", p.target_width, path);
      read(pj, "height", p.target_height, path);
      read(pj, "max_fps", p.max_fps, path);
      c.profiles.push_back(std::move(p));
    }
  }
  if (auto it = j.find("nodes"); it != j.end()) {
    if (!it->is_array()) invalid("nodes", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& nj = (*it)[i];
      const std::string path = "nodes[" + std::to_string(i) + "].";
      if (!nj.is_object()) invalid(path, "expected an object");
      reject_unknown(nj, {"id", "latency_ms", "capacity_kbps", "signal_db", "videos",
                          "fail_after_segments"}, path);
      SimNodeSpec n;
      read(nj, "id", n.id, path);
      read(nj, "latency_ms", n.latency_ms, path);
      read(nj, "capacity_kbps", n.capacity_kbps, path);
      read(nj, "signal_db", n.signal_db, path);
      read(nj, "fail_after_segments", n.fail_after_segments, path);
      if (auto v = nj.find("videos"); v != nj.end()) {
        if (v->is_string() && v->get<std::string>() == "*") {
          n.all_videos = true;
        } else if (v->is_array()) {
          for (const auto& x : *v) {
            if (!x.is_string()) invalid(path + "videos", "expected strings");
            n.videos.push_back(x.get<std::string>());
          }
        } else {
          invalid(path + "videos", "expected \"*\" or an array of video ids");
        }
      }
      c.nodes.push_back(std::move(n));
    }
  }
  if (auto it = j.find("workload"); it != j.end()) {
    const auto& w = *it;
    const std::string path = "workload.";
    if (!w.is_object()) invalid("workload", "expected an object");
    std::string model = "fixed";
    read(w, "model", model, path);
    if (model == "fixed") {
      reject_unknown(w, {"model", "trace"}, path);
      c.workload.model = WorkloadSpec::Model::kFixed;
      if (auto t = w.find("trace"); t != w.end()) {
        if (!t->is_array()) invalid(path + "trace", "expected an array");
        for (std::size_t i = 0; i < t->size(); ++i) {
          const auto& rj = (*t)[i];
          const std::string rp = path + "trace[" + std::to_string(i) + "].";
          if (!rj.is_object()) invalid(rp, "expected an object");
          reject_unknown(rj, {"tick", "video", "profile", "disconnect_after_bytes"}, rp);
          TraceRequest r;
          r.profile_id = "cif";
          read(rj, "tick", r.tick, rp);
          read(rj, "video", r.video_id, rp);
          read(rj, "profile", r.profile_id, rp);
          read(rj, "disconnect_after_bytes", r.disconnect_after_bytes, rp);
          c.workload.trace.push_back(std::move(r));
        }
      }
    } else if (model == "zipf") {
      reject_unknown(w, {"model", "exponent", "catalog_size", "requests", "inter_arrival_ticks",
                         "profile_mix"}, path);
      c.workload.model = WorkloadSpec::Model::kZipf;
      read(w, "exponent", c.workload.exponent, path);
      read(w, "catalog_size", c.workload.catalog_size, path);
      read(w, "requests", c.workload.requests, path);
      read(w, "inter_arrival_ticks", c.workload.inter_arrival_ticks, path);
      if (auto m = w.find("profile_mix"); m != w.end()) {
        if (!m->is_object()) invalid(path + "profile_mix", "expected an object");
        c.workload.profile_mix.clear();
        for (const auto& [k, _] : m->items()) {
          std::uint32_t weight = 0;
          read(*m, k.c_str(), weight, path + "profile_mix.");
          c.workload.profile_mix[k] = weight;
        }
      }
    } else {
      invalid(path + "model", "expected \"fixed\" or \"zipf\"");
    }
  }
  c.validate();
  return c;
}

SimConfig SimConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfigInvalid, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::kConfigInvalid, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void SimConfig::validate() const {
  if (tick_ms <= 0) invalid("tick_ms", "must be positive");
  if (segment_size < kContainerHeaderBytes) {
    invalid("segment_size", "must hold a container header (>= 15 bytes)");
  }
  if (segment_size > 0xFFFFFFFFull) invalid("segment_size", "must fit a 32-bit frame length");
  if (cache_budget && *cache_budget == 0) invalid("cache_budget", "must be positive");
  if (prefetch_ms < 0) invalid("prefetch_ms", "must not be negative");
  if (client_link_kbps <= 0) invalid("client_link_kbps", "must be positive");
  if (pace_cap_kbps < 0) invalid("pace_cap_kbps", "must not be negative");
  if (telemetry_interval_ms <= 0) invalid("telemetry_interval_ms", "must be positive");
  if (staleness_ms < 0) invalid("staleness_ms", "must not be negative");
  if (fetch_timeout_ms <= 0) invalid("fetch_timeout_ms", "must be positive");
  if (pipeline_depth == 0) invalid("pipeline_depth", "must be at least 1");
  if (max_ticks <= 0) invalid("max_ticks", "must be positive");

  std::set<std::string> videos;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& v = catalog[i];
    const std::string p = "catalog[" + std::to_string(i) + "].";
    if (!is_token(v.id)) invalid(p + "id", "must be a nonempty token");
    if (!videos.insert(v.id).second) invalid(p + "id", "duplicate video " + v.id);
    if (v.codec == 0) invalid(p + "codec", "must be positive");
    if (v.width == 0 || v.height == 0) invalid(p + "width", "dimensions must be positive");
    if (v.fps == 0) invalid(p + "fps", "must be positive");
    if (v.frame_count == 0) invalid(p + "frame_count", "must be positive");
  }
  std::set<std::string> node_ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const std::string p = "nodes[" + std::to_string(i) + "].";
    if (!is_token(n.id)) invalid(p + "id", "must be a nonempty token");
    if (!node_ids.insert(n.id).second) invalid(p + "id", "duplicate node " + n.id);
    if (n.latency_ms < 0) invalid(p + "latency_ms", "must not be negative");
    if (n.capacity_kbps <= 0) invalid(p + "capacity_kbps", "must be positive");
    for (const auto& v : n.videos) {
      if (!videos.contains(v)) invalid(p + "videos", "unknown video " + v);
    }
  }
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const std::string p = "profiles[" + std::to_string(i) + "]";
    if (!is_token(profiles[i].profile_id)) invalid(p + ".id", "must be a nonempty token");
    try {
      profiles[i].validate();
    } catch (const Error& e) {
      invalid(p, e.what());
    }
  }
  const ProfileRegistry profiles = profile_registry();
  if (workload.model == WorkloadSpec::Model::kFixed) {
    for (std::size_t i = 0; i < workload.trace.size(); ++i) {
      const auto& r = workload.trace[i];
      const std::string p = "workload.trace[" + std::to_string(i) + "].";
      if (r.tick < 0) invalid(p + "tick", "must not be negative");
      if (!is_token(r.video_id)) invalid(p + "video", "must be a nonempty token");
      if (!profiles.find(r.profile_id)) invalid(p + "profile", "unknown profile " + r.profile_id);
    }
  } else {
    if (!(workload.exponent > 0) || !std::isfinite(workload.exponent)) {
      invalid("workload.exponent", "must be a finite number > 0");
    }
    if (workload.catalog_size == 0 || workload.catalog_size > catalog.size()) {
      invalid("workload.catalog_size", "must be in [1, catalog length]");
    }
    if (workload.inter_arrival_ticks < 0) invalid("workload.inter_arrival_ticks", "must not be negative");
    std::uint64_t total = 0;
    for (const auto& [p, w] : workload.profile_mix) {
      if (!profiles.find(p)) invalid("workload.profile_mix." + p, "unknown profile");
      total += w;
    }
    if (total == 0) invalid("workload.profile_mix", "weights must sum to a positive value");
  }
}

ProfileRegistry SimConfig::profile_registry() const {
  ProfileRegistry registry;
  for (const auto& p : profiles) registry.add(p);
  return registry;
}

json SimConfig::to_json() const {
  json nodes_j = json::array();
  for (const auto& n : nodes) {
    json nj = {{"id", n.id}, {"latency_ms", n.latency_ms}, {"capacity_kbps", n.capacity_kbps},
               {"signal_db", n.signal_db}, {"fail_after_segments", n.fail_after_segments}};
    if (n.all_videos) {
      nj["videos"] = "*";
    } else {
      nj["videos"] = n.videos;
    }
    nodes_j.push_back(std::move(nj));
  }
  json w;
  if (workload.model == WorkloadSpec::Model::kFixed) {
    json trace = json::array();
    for (const auto& r : workload.trace) {
      trace.push_back({{"tick", r.tick}, {"video", r.video_id}, {"profile", r.profile_id},
                       {"disconnect_after_bytes", r.disconnect_after_bytes}});
    }
    w = {{"model", "fixed"}, {"trace", std::move(trace)}};
  } else {
    w = {{"model", "zipf"},
         {"exponent", workload.exponent},
         {"catalog_size", workload.catalog_size},
         {"requests", workload.requests},
         {"inter_arrival_ticks", workload.inter_arrival_ticks},
         {"profile_mix", workload.profile_mix}};
  }
  json profiles_j = json::array();
  for (const auto& p : profiles) {
    profiles_j.push_back({{"id", p.profile_id}, {"codec", p.codec_id}, {"width", p.target_width},
                          {"height", p.target_height}, {"max_fps", p.max_fps}});
  }
  json j = {{"seed", seed},
            {"tick_ms", tick_ms},
            {"segment_size", segment_size},
            {"cache_enabled", cache_enabled},
            {"cache_dir", cache_dir.string()},
            {"prefetch_ms", prefetch_ms},
            {"client_link_kbps", client_link_kbps},
            {"pace_cap_kbps", pace_cap_kbps},
            {"burst", burst},
            {"telemetry_interval_ms", telemetry_interval_ms},
            {"staleness_ms", staleness_ms},
            {"fetch_timeout_ms", fetch_timeout_ms},
            {"max_retries", max_retries},
            {"pipeline_depth", pipeline_depth},
            {"transcode_bytes_per_ms", transcode_bytes_per_ms},
            {"verify_streams", verify_streams},
            {"nodes", std::move(nodes_j)},
            {"catalog", catalog_to_json(catalog)},
            {"profiles", std::move(profiles_j)},
            {"workload", std::move(w)},
            {"max_ticks", max_ticks}};
  j["cache_budget"] = cache_budget ? json(*cache_budget) : json(nullptr);
  return j;
}

std::string SimConfig::workload_fingerprint() const {
  const auto j = to_json();
  const json key = {{"seed", seed}, {"catalog", j["catalog"]}, {"profiles", j["profiles"]},
                    {"workload", j["workload"]}};
  return to_hex64(fnv1a64(key.dump()));
}

// ---- workload ----

std::vector<double> zipf_weights(std::uint64_t n, double exponent) {
  std::vector<double> w(n);
  double total = 0;
  for (std::uint64_t r = 1; r <= n; ++r) {
    w[r - 1] = std::pow(static_cast<double>(r), -exponent);
    total += w[r - 1];
  }
  for (auto& x : w) x /= total;
  return w;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<TraceRequest> generate_workload(const WorkloadSpec& spec,
                                            const std::vector<SimVideoSpec>& catalog,
                                            std::uint64_t seed) {
  if (spec.model == WorkloadSpec::Model::kFixed) return spec.trace;
  if (spec.catalog_size == 0 || spec.catalog_size > catalog.size()) {
    throw Error(Errc::kConfigInvalid, "workload.catalog_size: must be in [1, catalog length]");
  }
  const auto weights = zipf_weights(spec.catalog_size, spec.exponent);
  std::vector<double> cdf(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cdf.begin());
  std::vector<std::pair<std::string, std::uint32_t>> mix(spec.profile_mix.begin(),
                                                         spec.profile_mix.end());
  std::uint64_t mix_total = 0;
  for (const auto& [_, w] : mix) mix_total += w;

  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<TraceRequest> trace;
  trace.reserve(spec.requests);
  for (std::uint64_t i = 0; i < spec.requests; ++i) {
    const double u = uniform01(rng);
    auto rank = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    rank = std::min(rank, cdf.size() - 1);
    auto pick = static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(mix_total));
    std::string profile = mix.back().first;
    for (const auto& [p, w] : mix) {
      if (pick < w) {
        profile = p;
        break;
      }
      pick -= w;
    }
    trace.push_back({static_cast<std::int64_t>(i) * spec.inter_arrival_ticks, catalog[rank].id,
                     std::move(profile), -1});
  }
  return trace;
}

std::vector<SimVideoSpec> generate_catalog(std::uint64_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SimVideoSpec> out;
  for (std::uint64_t i = 1; i <= count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "v%04llu", static_cast<unsigned long long>(i));
    SimVideoSpec v;
    v.id = id;
    v.fps = (rng() % 2 == 0) ? 30 : 25;
    v.frame_count = static_cast<std::uint32_t>(v.fps * (2 + rng() % 9));  // 2-10 s
    out.push_back(v);
  }
  return out;
}

json catalog_to_json(const std::vector<SimVideoSpec>& catalog) {
  json out = json::array();
  for (const auto& v : catalog) out.push_back(video_to_json(v));
  return out;
}

Bytes make_catalog_container(const SimVideoSpec& v, std::uint64_t seed) {
  return encode_container(
      make_synthetic_asset(v.id, v.codec, v.width, v.height, v.fps, v.frame_count, seed));
}

// ---- network ----

SimOriginNetwork::Node& SimOriginNetwork::add_node(const SimNodeSpec& spec) {
  auto& slot = nodes_[spec.id];
  slot = std::make_unique<Node>();
  slot->spec = spec;
  return *slot;
}

SimOriginNetwork::Node* SimOriginNetwork::node(const std::string& id) {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.get();
}

TimeMs SimOriginNetwork::transfer_ms(std::uint64_t bytes, std::int64_t kbps) {
  // One kbps moves one bit per millisecond.
  return static_cast<TimeMs>(ceil_div(bytes * 8, static_cast<std::uint64_t>(kbps)));
}

void SimOriginNetwork::send(const NodeRecord& target, const OriginRequest& request,
                            Callback done) {
  Node* n = node(target.node_id);
  if (!n || n->hung) return;  // silence; the client's timeout fires
  ++n->requests;
  if (request.kind == OriginRequest::Kind::kGet) ++n->range_requests;
  OriginResponse resp = n->store.handle(request);
  if (request.kind == OriginRequest::Kind::kGet && resp.status == 206) {
    if (n->spec.fail_after_segments >= 0 &&
        n->range_responses >= static_cast<std::uint64_t>(n->spec.fail_after_segments)) {
      n->hung = true;
      return;
    }
    ++n->range_responses;
  }
  std::uint64_t wire = std::to_string(resp.status).size() + 1 + resp.body.size();
  if (resp.status == 200 || resp.status == 206) wire += 1 + std::to_string(resp.value).size();
  const TimeMs arrive = executor_.now() + n->spec.latency_ms;
  const TimeMs start = std::max(arrive, n->busy_until);
  n->busy_until = start + transfer_ms(wire, n->spec.capacity_kbps);
  executor_.post_at(n->busy_until + n->spec.latency_ms,
                    [done = std::move(done), resp = std::move(resp)]() mutable {
                      done(std::move(resp));
                    });
}

// ---- report ----

json SimReport::to_json() const {
  return {{"requests", requests},
          {"cache_hits", cache_hits},
          {"cache_misses", cache_misses},
          {"not_found", not_found},
          {"failed", failed},
          {"completed", completed},
          {"hit_rate", hit_rate},
          {"origin_bytes", origin_bytes},
          {"client_bytes", client_bytes},
          {"origin_equivalent_bytes", origin_equivalent_bytes},
          {"bandwidth_saved_ratio", bandwidth_saved_ratio},
          {"startup_mean_hit_ms", startup_mean_hit_ms},
          {"startup_median_hit_ms", startup_median_hit_ms},
          {"startup_mean_miss_ms", startup_mean_miss_ms},
          {"startup_median_miss_ms", startup_median_miss_ms},
          {"total_stall_ms", total_stall_ms},
          {"stalled_sessions", stalled_sessions},
          {"transcode_count", transcode_count},
          {"coalesced", coalesced},
          {"distinct_videos", distinct_videos},
          {"integrity_failures", integrity_failures},
          {"trace_violations", trace_violations},
          {"node_jobs", node_jobs},
          {"node_range_requests", node_range_requests},
          {"end_tick", end_tick},
          {"truncated", truncated},
          {"cache_enabled", cache_enabled},
          {"fingerprint", fingerprint}};
}

SimReport SimReport::from_json(const json& j) {
  SimReport r;
  try {
    r.requests = j.at("requests");
    r.cache_hits = j.at("cache_hits");
    r.cache_misses = j.at("cache_misses");
    r.not_found = j.at("not_found");
    r.failed = j.at("failed");
    r.completed = j.at("completed");
    r.hit_rate = j.at("hit_rate");
    r.origin_bytes = j.at("origin_bytes");
    r.client_bytes = j.at("client_bytes");
    r.origin_equivalent_bytes = j.at("origin_equivalent_bytes");
    r.bandwidth_saved_ratio = j.at("bandwidth_saved_ratio");
    r.startup_mean_hit_ms = j.at("startup_mean_hit_ms");
    r.startup_median_hit_ms = j.at("startup_median_hit_ms");
    r.startup_mean_miss_ms = j.at("startup_mean_miss_ms");
    r.startup_median_miss_ms = j.at("startup_median_miss_ms");
    r.total_stall_ms = j.at("total_stall_ms");
    r.stalled_sessions = j.at("stalled_sessions");
    r.transcode_count = j.at("transcode_count");
    r.coalesced = j.at("coalesced");
    r.distinct_videos = j.at("distinct_videos");
    r.integrity_failures = j.at("integrity_failures");
    r.trace_violations = j.at("trace_violations");
    r.node_jobs = j.at("node_jobs").get<std::map<std::string, std::uint64_t>>();
    r.node_range_requests = j.at("node_range_requests").get<std::map<std::string, std::uint64_t>>();
    r.end_tick = j.at("end_tick");
    r.truncated = j.at("truncated");
    r.cache_enabled = j.at("cache_enabled");
    r.fingerprint = j.at("fingerprint");
  } catch (const json::exception& e) {
    throw Error(Errc::kConfigInvalid, std::string("report: ") + e.what());
  }
  return r;
}

json compare_runs(const SimReport& a, const SimReport& b) {
  if (a.fingerprint != b.fingerprint) {
    throw Error(Errc::kMismatchedConfigs,
                "workload fingerprints differ: " + a.fingerprint + " vs " + b.fingerprint);
  }
  const json ja = a.to_json();
  const json jb = b.to_json();
  json table = json::object();
  for (const auto& [k, va] : ja.items()) {
    const auto& vb = jb.at(k);
    if (va.is_number() && vb.is_number() && !va.is_boolean()) {
      const double da = va.get<double>();
      const double db = vb.get<double>();
      json row = {{"a", va}, {"b", vb}};
      if (va.is_number_integer() && vb.is_number_integer()) {
        row["delta"] = vb.get<std::int64_t>() - va.get<std::int64_t>();
      } else {
        row["delta"] = db - da;
      }
      table[k] = std::move(row);
    }
  }
  // Headline: bytes the cached run saved against the uncached one.
  std::int64_t saved = static_cast<std::int64_t>(b.origin_bytes) -
                       static_cast<std::int64_t>(a.origin_bytes);
  if (b.cache_enabled && !a.cache_enabled) saved = -saved;
  return {{"fingerprint", a.fingerprint},
          {"a_cache_enabled", a.cache_enabled},
          {"b_cache_enabled", b.cache_enabled},
          {"origin_bytes_saved", saved},
          {"metrics", std::move(table)}};
}

// ---- run ----

namespace {

class SimClientSink final : public ClientSink {
 public:
  SimClientSink(std::int64_t disconnect_after, bool keep_payload)
      : disconnect_after_(disconnect_after) {
    parser_.set_keep_payload(keep_payload);
  }
  bool connected() const override { return !hung_up_ && !closed_; }
  void write(std::span<const std::uint8_t> bytes) override {
    if (!connected()) return;
    parser_.feed(bytes);
    if (disconnect_after_ >= 0 &&
        parser_.payload_bytes() >= static_cast<std::uint64_t>(disconnect_after_)) {
      hung_up_ = true;
    }
  }
  void close() override { closed_ = true; }
  const ResponseParser& parser() const { return parser_; }

 private:
  std::int64_t disconnect_after_;
  ResponseParser parser_;
  bool hung_up_ = false;
  bool closed_ = false;
};

}  // namespace

SimResult run_simulation(const SimConfig& config, const SimOptions& options) {
  config.validate();
  SimExecutor exec(config.tick_ms);

  SessionTraceChecker checker;
  TraceCheckingLog checking_log(exec, config.tick_ms, checker);
  TeeEventLog log;
  log.add(&checking_log);
  std::optional<NdjsonEventLog> ndjson;
  if (options.event_stream) {
    ndjson.emplace(*options.event_stream, exec, config.tick_ms);
    log.add(&*ndjson);
  }
  if (options.extra_log) log.add(options.extra_log);

  const ProfileRegistry profiles = config.profile_registry();
  SimRouteProber prober;
  NodeRegistry registry(exec, config.staleness_ms);
  SimOriginNetwork network(exec);

  std::map<std::string, const SimVideoSpec*> catalog;
  for (const auto& v : config.catalog) catalog[v.id] = &v;
  std::map<std::string, SharedBytes> containers;
  std::map<std::string, std::vector<std::string>> hosted;
  for (const auto& spec : config.nodes) {
    auto& node = network.add_node(spec);
    auto& list = hosted[spec.id];
    if (spec.all_videos) {
      for (const auto& v : config.catalog) list.push_back(v.id);
    } else {
      list = spec.videos;
    }
    for (const auto& id : list) {
      auto& bytes = containers[id];
      if (!bytes) bytes = std::make_shared<const Bytes>(make_catalog_container(*catalog[id], config.seed));
      node.store.put(id, bytes);
    }
    registry.register_node({spec.id, "sim:" + spec.id, spec.latency_ms, spec.signal_db,
                            spec.capacity_kbps});
    prober.set_latency(spec.id, spec.latency_ms);
  }

  std::optional<CacheStore> cache;
  if (config.cache_enabled) {
    CacheConfig cc;
    cc.segment_size = config.segment_size;
    if (config.cache_budget) cc.byte_budget = *config.cache_budget;
    cc.dir = config.cache_dir;
    cache.emplace(cc, exec);
    if (!cc.dir.empty()) {
      const auto loaded = cache->load_manifest();
      log.emit("cache_loaded", {{"entries", loaded.entries}, {"corrupt", loaded.corrupt}});
    }
    cache->set_eviction_listener([&log](const CacheKey& key, std::uint64_t bytes) {
      log.emit("evict", {{"key", key.to_string()}, {"bytes", bytes}});
    });
  }
  CacheStore* cache_ptr = cache ? &*cache : nullptr;

  FetchConfig fc;
  fc.timeout_ms = config.fetch_timeout_ms;
  fc.pipeline_depth = config.pipeline_depth;
  fc.max_retries = config.max_retries;
  fc.coalesce = config.cache_enabled;
  fc.segment_size = config.segment_size;
  OriginClient origin(exec, network, cache_ptr, fc, &log);

  ManagerConfig mc;
  mc.stream.prefetch_ms = config.prefetch_ms;
  mc.stream.pace_cap_kbps = config.pace_cap_kbps;
  mc.stream.burst = config.burst;
  mc.stream.tick_ms = config.tick_ms;
  mc.client_link_kbps = config.client_link_kbps;
  mc.transcode_bytes_per_ms = config.transcode_bytes_per_ms;
  mc.rng_seed = config.seed;
  BillboardManager manager(exec, cache_ptr, registry, origin, profiles, mc, &log);

  const auto trace = generate_workload(config.workload, config.catalog, config.seed);
  log.emit("sim_start", {{"requests", trace.size()}, {"nodes", config.nodes.size()},
                         {"catalog", config.catalog.size()},
                         {"fingerprint", config.workload_fingerprint()}});

  std::size_t issued = 0;
  auto all_done = [&] {
    return issued == trace.size() && manager.active_sessions() == 0 && origin.running_count() == 0;
  };

  // Telemetry: every node reports its catalog and capacity periodically.
  std::function<void(const std::string&)> telemetry = [&](const std::string& id) {
    if (all_done()) return;
    auto* node = network.node(id);
    if (node->hung) {
      prober.set_unreachable(id, true);
    } else {
      TelemetryMsg msg;
      msg.node_id = id;
      msg.timestamp = exec.now();
      msg.channel_capacity_kbps = node->spec.capacity_kbps;
      msg.add_videos = hosted[id];
      registry.apply_telemetry(msg);
    }
    nlohmann::json fields = {{"node", id}};
    try {
      fields["route_ms"] = registry.measure_route(id, prober);
    } catch (const Error& e) {
      fields["probe"] = errc_name(e.code());
    }
    log.emit("telemetry", std::move(fields));
    exec.post_after(config.telemetry_interval_ms, [&telemetry, id] { telemetry(id); });
  };
  for (const auto& spec : config.nodes) {
    exec.post_at(0, [&telemetry, id = spec.id] { telemetry(id); });
  }

  // Expected payload hashes, by (video, profile).
  std::map<std::pair<std::string, std::string>, std::uint64_t> expected;
  auto expected_hash = [&](const std::string& video, const std::string& profile) {
    auto key = std::pair(video, profile);
    if (auto it = expected.find(key); it != expected.end()) return it->second;
    const auto& spec = *catalog.at(video);
    auto asset = make_synthetic_asset(spec.id, spec.codec, spec.width, spec.height, spec.fps,
                                      spec.frame_count, config.seed);
    const auto out = transcode(asset, *profiles.find(profile));
    return expected[key] = fnv1a64(encode_container(out));
  };

  std::map<std::uint64_t, std::shared_ptr<SimClientSink>> sinks;
  std::uint64_t integrity_failures = 0;
  manager.on_session_done = [&](const SessionRecord& r) {
    auto it = sinks.find(r.request.session_id);
    if (it == sinks.end()) return;
    if (config.verify_streams && r.final_state() == SessionState::kDone) {
      const auto& p = it->second->parser();
      const bool ok = p.done() && !p.status() && p.payload_bytes() == r.progress.bytes_sent &&
                      fnv1a64(p.payload()) == expected_hash(r.request.video_id, r.request.profile_id);
      if (!ok) {
        ++integrity_failures;
        log.emit("integrity_failure", {{"session", r.request.session_id}});
      }
    }
    sinks.erase(it);
  };

  for (std::size_t i = 0; i < trace.size(); ++i) {
    exec.post_at(trace[i].tick * config.tick_ms, [&, i] {
      const auto& r = trace[i];
      auto sink = std::make_shared<SimClientSink>(r.disconnect_after_bytes, config.verify_streams);
      const std::uint64_t id = i + 1;
      sinks[id] = sink;
      ++issued;
      manager.handle_request({r.video_id, r.profile_id, id, 0}, sink);
    });
  }

  const TimeMs limit = config.max_ticks * config.tick_ms;
  bool truncated = false;
  while (!exec.empty() && !all_done()) {
    if (exec.next_time() > limit) {
      truncated = true;
      break;
    }
    exec.run_one();
  }

  SimResult result;
  SimReport& rep = result.report;
  const Metrics m = manager.snapshot_metrics();
  rep.requests = m.requests;
  rep.cache_hits = m.cache_hits;
  rep.cache_misses = m.cache_misses;
  rep.not_found = m.not_found;
  rep.failed = m.failed;
  rep.hit_rate = m.requests ? static_cast<double>(m.cache_hits) / static_cast<double>(m.requests) : 0;
  rep.origin_bytes = m.origin_bytes;
  rep.client_bytes = m.client_bytes;
  for (const auto& s : manager.history()) {
    if (s.final_state() != SessionState::kDone) continue;
    ++rep.completed;
    rep.origin_equivalent_bytes += container_size_of(*catalog.at(s.request.video_id));
    if (!s.progress.stall_events.empty()) ++rep.stalled_sessions;
  }
  if (rep.origin_equivalent_bytes > 0) {
    rep.bandwidth_saved_ratio = std::clamp(
        1.0 - static_cast<double>(rep.origin_bytes) / static_cast<double>(rep.origin_equivalent_bytes),
        0.0, 1.0);
  }
  rep.startup_mean_hit_ms = m.startup_delay_hit.mean();
  rep.startup_median_hit_ms = m.startup_delay_hit.median();
  rep.startup_mean_miss_ms = m.startup_delay_miss.mean();
  rep.startup_median_miss_ms = m.startup_delay_miss.median();
  rep.total_stall_ms = m.stall_time.sum();
  rep.transcode_count = m.transcode_count;
  rep.coalesced = m.coalesced;
  std::set<std::string> distinct;
  for (const auto& r : trace) distinct.insert(r.video_id);
  rep.distinct_videos = distinct.size();
  rep.integrity_failures = integrity_failures;
  for (const auto& spec : config.nodes) {
    const auto& stats = origin.stats().per_node_jobs;
    auto it = stats.find(spec.id);
    rep.node_jobs[spec.id] = it == stats.end() ? 0 : it->second;
    rep.node_range_requests[spec.id] = network.node(spec.id)->range_requests;
  }
  rep.end_tick = exec.now() / config.tick_ms;
  rep.truncated = truncated;
  rep.cache_enabled = config.cache_enabled;
  rep.fingerprint = config.workload_fingerprint();
  result.trace_problems = checker.problems(!truncated);
  rep.trace_violations = result.trace_problems.size();
  log.emit("sim_end", rep.to_json());
  result.sessions = manager.history();
  return result;
}

}  // namespace bbm
