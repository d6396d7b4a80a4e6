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

#include "bbm/cache_store.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace bbm {

namespace fs = std::filesystem;

namespace {
constexpr std::string_view kManifestHeader = "bbm-manifest v1";
constexpr std::string_view kManifestName = "manifest";
}  // namespace

std::string CacheKey::hash_hex() const {
  return to_hex64(fnv1a64(video_id + '\n' + variant.to_string()));
}

// ---- handles ----

CacheStore::EntryHandle::~EntryHandle() {
  if (entry_) store_->unpin(*entry_, /*filler=*/false);
}

const CacheKey& CacheStore::EntryHandle::key() const { return entry_->key; }

EntryInfo CacheStore::EntryHandle::info() const {
  std::lock_guard lock(store_->mu_);
  return store_->info_locked(*entry_);
}

FillState CacheStore::EntryHandle::state() const {
  std::lock_guard lock(store_->mu_);
  return entry_->state;
}

bool CacheStore::EntryHandle::has_segment(std::uint64_t index) const {
  std::lock_guard lock(store_->mu_);
  return index < entry_->total_segments && entry_->segments[index] != nullptr;
}

std::uint64_t CacheStore::EntryHandle::total_bytes() const { return entry_->total_bytes; }
std::uint64_t CacheStore::EntryHandle::total_segments() const { return entry_->total_segments; }
std::uint64_t CacheStore::EntryHandle::segment_size() const { return store_->segment_size(); }

SharedBytes CacheStore::EntryHandle::read_segment(std::uint64_t index) const {
  return store_->read_segment(*this, index);
}

CacheStore::EntryHandle CacheStore::EntryHandle::clone() const {
  std::lock_guard lock(store_->mu_);
  ++entry_->pin_count;
  return EntryHandle(store_, entry_);
}

CacheStore::FillHandle::~FillHandle() { release(); }

void CacheStore::FillHandle::release() {
  if (entry_) {
    store_->unpin(*entry_, /*filler=*/true);
    entry_.reset();
  }
}

const CacheKey& CacheStore::FillHandle::key() const { return entry_->key; }

void CacheStore::FillHandle::write_segment(std::uint64_t index,
                                           std::span<const std::uint8_t> bytes) {
  store_->write_segment(*this, index, bytes);
}

bool CacheStore::FillHandle::has_segment(std::uint64_t index) const {
  std::lock_guard lock(store_->mu_);
  return index < entry_->total_segments && entry_->segments[index] != nullptr;
}

bool CacheStore::FillHandle::complete() const {
  std::lock_guard lock(store_->mu_);
  return entry_->state == FillState::kComplete;
}

std::uint64_t CacheStore::FillHandle::total_bytes() const { return entry_->total_bytes; }
std::uint64_t CacheStore::FillHandle::total_segments() const { return entry_->total_segments; }
std::uint64_t CacheStore::FillHandle::segment_size() const { return store_->segment_size(); }

CacheStore::EntryHandle CacheStore::FillHandle::reader() const {
  std::lock_guard lock(store_->mu_);
  ++entry_->pin_count;
  return EntryHandle(store_, entry_);
}

// ---- store ----

CacheStore::CacheStore(CacheConfig config, const Clock& clock)
    : config_(std::move(config)), clock_(clock) {
  if (config_.segment_size == 0) {
    throw Error(Errc::kConfigInvalid, "segment_size must be positive");
  }
  if (!config_.dir.empty()) fs::create_directories(config_.dir);
}

CacheStore::~CacheStore() = default;

std::optional<CacheStore::EntryHandle> CacheStore::lookup(
    const std::string& video_id, const FormatVariantKey& variant) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(CacheKey{video_id, variant});
  if (it == entries_.end()) return std::nullopt;
  Entry& e = *it->second;
  e.last_access = clock_.now();
  ++e.pin_count;
  return EntryHandle(this, it->second);
}

std::vector<EntryInfo> CacheStore::variants_of(const std::string& video_id) const {
  std::lock_guard lock(mu_);
  std::vector<EntryInfo> out;
  for (auto it = entries_.lower_bound(CacheKey{video_id, {}});
       it != entries_.end() && it->first.video_id == video_id; ++it) {
    out.push_back(info_locked(*it->second));
  }
  return out;
}

CacheStore::FillHandle CacheStore::begin_fill(const std::string& video_id,
                                              const FormatVariantKey& variant,
                                              std::uint64_t total_bytes) {
  std::lock_guard lock(mu_);
  CacheKey key{video_id, variant};
  auto it = entries_.find(key);
  std::shared_ptr<Entry> entry;
  std::uint64_t needed = total_bytes;
  if (it != entries_.end()) {
    entry = it->second;
    if (entry->state == FillState::kComplete) {
      throw Error(Errc::kAlreadyComplete, key.to_string());
    }
    if (entry->filler_active || entry->pin_count > 0) {
      throw Error(Errc::kFillInProgress, key.to_string());
    }
    if (entry->total_bytes != total_bytes) {
      // Origin size changed since the failed fill; start over.
      remove_locked(it);
      entry.reset();
    } else {
      // Restart: its outstanding bytes are already reserved.
      needed = 0;
    }
  }

  if (entry) {
    entry->filler_active = true;
    ++entry->pin_count;
    entry->last_access = clock_.now();
    return FillHandle(this, entry);
  }

  if (total_bytes > config_.byte_budget) {
    throw Error(Errc::kInsufficientBudget, key.to_string() + " larger than budget");
  }
  evict_until_locked(needed);
  if (free_bytes_locked() < needed) {
    throw Error(Errc::kInsufficientBudget,
                key.to_string() + ": " + std::to_string(needed) + " bytes needed, " +
                    std::to_string(free_bytes_locked()) + " free after eviction");
  }

  entry = std::make_shared<Entry>();
  entry->key = key;
  entry->total_bytes = total_bytes;
  entry->total_segments = segments_for(total_bytes);
  entry->segments.resize(entry->total_segments);
  entry->last_access = clock_.now();
  entry->pin_count = 1;
  entry->filler_active = true;
  if (entry->total_segments == 0) entry->state = FillState::kComplete;
  reserved_ += total_bytes;
  entries_.emplace(key, entry);
  if (entry->state == FillState::kComplete) persist_entry_locked(*entry);
  return FillHandle(this, entry);
}

std::uint64_t CacheStore::expected_segment_bytes(const Entry& e,
                                                 std::uint64_t index) const {
  if (index + 1 < e.total_segments) return config_.segment_size;
  return e.total_bytes - (e.total_segments - 1) * config_.segment_size;
}

void CacheStore::write_segment(FillHandle& fill, std::uint64_t index,
                               std::span<const std::uint8_t> bytes) {
  if (!fill) throw Error(Errc::kOutOfRange, "write through released fill handle");
  std::lock_guard lock(mu_);
  Entry& e = *fill.entry_;
  if (index >= e.total_segments) {
    throw Error(Errc::kOutOfRange, e.key.to_string() + " segment " + std::to_string(index));
  }
  if (bytes.size() != expected_segment_bytes(e, index)) {
    throw Error(Errc::kSizeMismatch,
                e.key.to_string() + " segment " + std::to_string(index) + " has " +
                    std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected_segment_bytes(e, index)));
  }
  if (e.segments[index]) {
    const Bytes& have = *e.segments[index];
    if (!std::equal(have.begin(), have.end(), bytes.begin(), bytes.end())) {
      throw Error(Errc::kDuplicateSegment,
                  e.key.to_string() + " segment " + std::to_string(index));
    }
    return;
  }
  e.segments[index] = std::make_shared<const Bytes>(bytes.begin(), bytes.end());
  ++e.present_count;
  e.stored_bytes += bytes.size();
  bytes_used_ += bytes.size();
  reserved_ -= bytes.size();
  if (e.present_count == e.total_segments) {
    e.state = FillState::kComplete;
    persist_entry_locked(e);
  }
}

SharedBytes CacheStore::read_segment(const EntryHandle& handle,
                                     std::uint64_t index) const {
  std::lock_guard lock(mu_);
  const Entry& e = *handle.entry_;
  if (index >= e.total_segments || !e.segments[index]) {
    throw Error(Errc::kSegmentNotPresent,
                e.key.to_string() + " segment " + std::to_string(index));
  }
  return e.segments[index];
}

std::uint64_t CacheStore::free_bytes_locked() const {
  const std::uint64_t committed = bytes_used_ + reserved_;
  return committed >= config_.byte_budget ? 0 : config_.byte_budget - committed;
}

std::vector<CacheKey> CacheStore::evict_until(std::uint64_t needed_bytes) {
  std::lock_guard lock(mu_);
  return evict_until_locked(needed_bytes);
}

std::vector<CacheKey> CacheStore::evict_until_locked(std::uint64_t needed_bytes) {
  std::vector<CacheKey> evicted;
  while (free_bytes_locked() < needed_bytes) {
    auto key = evict_one_locked();
    if (!key) break;
    evicted.push_back(std::move(*key));
  }
  return evicted;
}

std::optional<CacheKey> CacheStore::evict_one_locked() {
  auto victim = entries_.end();
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (it->second->pin_count > 0) continue;
    // Map order is key order, so strict < keeps the smaller key on ties.
    if (victim == entries_.end() || it->second->last_access < victim->second->last_access) {
      victim = it;
    }
  }
  if (victim == entries_.end()) return std::nullopt;
  CacheKey key = victim->first;
  remove_locked(victim);
  return key;
}

void CacheStore::remove_locked(std::map<CacheKey, std::shared_ptr<Entry>>::iterator it) {
  Entry& e = *it->second;
  bytes_used_ -= e.stored_bytes;
  reserved_ -= e.total_bytes - e.stored_bytes;
  const bool persisted = e.persisted;
  const CacheKey key = e.key;
  const std::uint64_t freed = e.total_bytes;
  entries_.erase(it);
  if (persisted) {
    std::error_code ec;
    fs::remove(payload_path(key), ec);
    write_manifest_locked();
  }
  if (on_evict_) on_evict_(key, freed);
}

void CacheStore::unpin(Entry& e, bool filler) {
  std::lock_guard lock(mu_);
  if (e.pin_count > 0) --e.pin_count;
  if (filler) e.filler_active = false;
}

EntryInfo CacheStore::info_locked(const Entry& e) const {
  EntryInfo info;
  info.key = e.key;
  info.segment_size = config_.segment_size;
  info.total_bytes = e.total_bytes;
  info.total_segments = e.total_segments;
  info.present.reserve(e.total_segments);
  for (const auto& s : e.segments) info.present.push_back(s != nullptr);
  info.state = e.state;
  info.stored_bytes = e.stored_bytes;
  info.last_access = e.last_access;
  info.pin_count = e.pin_count;
  return info;
}

std::uint64_t CacheStore::bytes_used() const {
  std::lock_guard lock(mu_);
  return bytes_used_;
}

std::uint64_t CacheStore::reserved_bytes() const {
  std::lock_guard lock(mu_);
  return reserved_;
}

std::size_t CacheStore::entry_count() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<EntryInfo> CacheStore::dump() const {
  std::lock_guard lock(mu_);
  std::vector<EntryInfo> out;
  for (const auto& [_, e] : entries_) out.push_back(info_locked(*e));
  return out;
}

void CacheStore::set_eviction_listener(EvictionListener listener) {
  std::lock_guard lock(mu_);
  on_evict_ = std::move(listener);
}

// ---- persistence ----

fs::path CacheStore::payload_path(const CacheKey& key) const {
  return config_.dir / (key.hash_hex() + ".bin");
}

void CacheStore::persist_entry_locked(Entry& e) {
  if (config_.dir.empty()) return;
  const fs::path path = payload_path(e.key);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& seg : e.segments) {
      out.write(reinterpret_cast<const char*>(seg->data()),
                static_cast<std::streamsize>(seg->size()));
    }
    if (!out) throw Error(Errc::kIo, "writing " + tmp.string());
  }
  fs::rename(tmp, path);
  e.persisted = true;
  write_manifest_locked();
}

void CacheStore::write_manifest_locked() {
  if (config_.dir.empty()) return;
  const fs::path path = config_.dir / kManifestName;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << kManifestHeader << '\n';
    for (const auto& [key, e] : entries_) {
      if (e->state != FillState::kComplete || !e->persisted) continue;
      out << key.hash_hex() << ' ' << key.video_id << ' ' << key.variant.to_string()
          << ' ' << e->total_bytes << ' ' << e->last_access << '\n';
    }
    if (!out) throw Error(Errc::kIo, "writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void CacheStore::save_manifest() {
  std::lock_guard lock(mu_);
  for (auto& [_, e] : entries_) {
    if (e->state == FillState::kComplete && !e->persisted) persist_entry_locked(*e);
  }
  write_manifest_locked();
}

CacheStore::LoadResult CacheStore::load_manifest() {
  std::lock_guard lock(mu_);
  LoadResult result;
  if (config_.dir.empty()) return result;
  const fs::path path = config_.dir / kManifestName;
  std::ifstream in(path);
  if (!in) return result;

  struct Record {
    CacheKey key;
    std::uint64_t total_bytes;
    TimeMs last_access;
  };
  std::vector<Record> records;
  try {
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
      throw Error(Errc::kCorruptManifest, "bad header");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string hash, video_id, variant_text, extra;
      Record r;
      if (!(ls >> hash >> video_id >> variant_text >> r.total_bytes >> r.last_access) ||
          (ls >> extra)) {
        throw Error(Errc::kCorruptManifest, "line " + std::to_string(lineno));
      }
      auto variant = FormatVariantKey::parse(variant_text);
      if (!variant) {
        throw Error(Errc::kCorruptManifest, "bad variant on line " + std::to_string(lineno));
      }
      r.key = CacheKey{video_id, *variant};
      if (r.key.hash_hex() != hash) {
        throw Error(Errc::kCorruptManifest, "hash mismatch on line " + std::to_string(lineno));
      }
      records.push_back(std::move(r));
    }
  } catch (const Error& err) {
    spdlog::warn("cache manifest {} unusable ({}); starting empty", path.string(), err.what());
    entries_.clear();
    bytes_used_ = reserved_ = 0;
    result.corrupt = true;
    return result;
  }

  // Filling entries never reach the manifest, so everything here is Complete.
  entries_.clear();
  bytes_used_ = reserved_ = 0;
  for (auto& r : records) {
    const fs::path payload = payload_path(r.key);
    std::error_code ec;
    if (fs::file_size(payload, ec) != r.total_bytes || ec) {
      spdlog::warn("cache payload {} missing or wrong size; dropping {}",
                   payload.string(), r.key.to_string());
      continue;
    }
    auto e = std::make_shared<Entry>();
    e->key = r.key;
    e->total_bytes = r.total_bytes;
    e->total_segments = segments_for(r.total_bytes);
    e->last_access = r.last_access;
    e->state = FillState::kComplete;
    e->persisted = true;
    std::ifstream pin(payload, std::ios::binary);
    for (std::uint64_t i = 0; i < e->total_segments; ++i) {
      Bytes seg(expected_segment_bytes(*e, i));
      pin.read(reinterpret_cast<char*>(seg.data()), static_cast<std::streamsize>(seg.size()));
      e->segments.push_back(std::make_shared<const Bytes>(std::move(seg)));
    }
    if (!pin) {
      spdlog::warn("cache payload {} unreadable; dropping {}", payload.string(),
                   r.key.to_string());
      continue;
    }
    e->present_count = e->total_segments;
    e->stored_bytes = e->total_bytes;
    bytes_used_ += e->total_bytes;
    entries_.emplace(r.key, std::move(e));
    ++result.entries;
  }
  // A smaller budget than last run: trim back to it.
  while (bytes_used_ > config_.byte_budget && evict_one_locked()) --result.entries;
  write_manifest_locked();
  return result;
}

}  // namespace bbm
