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

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbm/common.h"
#include "bbm/media_model.h"

namespace bbm {

struct CacheKey {
  std::string video_id;
  FormatVariantKey variant;

  auto operator<=>(const CacheKey&) const = default;
  std::string to_string() const { return video_id + "/" + variant.to_string(); }
  // Stable 64-bit hash, rendered as 16 hex digits. Names payload files.
  std::string hash_hex() const;
};

enum class FillState { kFilling, kComplete };

struct CacheConfig {
  std::uint64_t segment_size = 256 * 1024;
  std::uint64_t byte_budget = std::numeric_limits<std::uint64_t>::max();
  // Empty: memory only. Otherwise Complete entries are persisted here.
  std::filesystem::path dir;
};

// Point-in-time copy of one entry's bookkeeping.
struct EntryInfo {
  CacheKey key;
  std::uint64_t segment_size = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t total_segments = 0;
  std::vector<bool> present;
  FillState state = FillState::kFilling;
  std::uint64_t stored_bytes = 0;
  TimeMs last_access = 0;
  std::uint32_t pin_count = 0;
};

// Segment-granular video cache with LRU eviction under a byte budget.
//
// Entries are addressed by (video_id, variant). Readers pin an entry through
// an EntryHandle; a single filler owns a FillHandle (which is also a pin).
// Pinned entries are never evicted. Space for a fill is reserved up front in
// begin_fill, so bytes_used() + reserved_bytes() <= byte_budget() holds at
// every operation boundary.
//
// All methods are thread-safe; mutations are serialized on one mutex.
class CacheStore {
  struct Entry;

 public:
  class EntryHandle {
   public:
    EntryHandle() = default;
    EntryHandle(EntryHandle&& o) noexcept { swap(o); }
    EntryHandle& operator=(EntryHandle&& o) noexcept {
      EntryHandle tmp(std::move(o));
      swap(tmp);
      return *this;
    }
    EntryHandle(const EntryHandle&) = delete;
    EntryHandle& operator=(const EntryHandle&) = delete;
    ~EntryHandle();

    explicit operator bool() const { return entry_ != nullptr; }
    const CacheKey& key() const;
    EntryInfo info() const;
    FillState state() const;
    bool has_segment(std::uint64_t index) const;
    std::uint64_t total_bytes() const;
    std::uint64_t total_segments() const;
    std::uint64_t segment_size() const;
    SharedBytes read_segment(std::uint64_t index) const;
    // Another pin on the same entry.
    EntryHandle clone() const;

   private:
    friend class CacheStore;
    EntryHandle(CacheStore* store, std::shared_ptr<Entry> entry)
        : store_(store), entry_(std::move(entry)) {}
    void swap(EntryHandle& o) noexcept {
      std::swap(store_, o.store_);
      std::swap(entry_, o.entry_);
    }
    CacheStore* store_ = nullptr;
    std::shared_ptr<Entry> entry_;
  };

  class FillHandle {
   public:
    FillHandle() = default;
    FillHandle(FillHandle&& o) noexcept { swap(o); }
    FillHandle& operator=(FillHandle&& o) noexcept {
      FillHandle tmp(std::move(o));
      swap(tmp);
      return *this;
    }
    FillHandle(const FillHandle&) = delete;
    FillHandle& operator=(const FillHandle&) = delete;
    // Releasing an incomplete fill leaves the entry Filling and restartable.
    ~FillHandle();

    explicit operator bool() const { return entry_ != nullptr; }
    const CacheKey& key() const;
    void write_segment(std::uint64_t index, std::span<const std::uint8_t> bytes);
    bool has_segment(std::uint64_t index) const;
    bool complete() const;
    std::uint64_t total_bytes() const;
    std::uint64_t total_segments() const;
    std::uint64_t segment_size() const;
    // Opens an additional read pin on the entry being filled.
    EntryHandle reader() const;
    void release();

   private:
    friend class CacheStore;
    FillHandle(CacheStore* store, std::shared_ptr<Entry> entry)
        : store_(store), entry_(std::move(entry)) {}
    void swap(FillHandle& o) noexcept {
      std::swap(store_, o.store_);
      std::swap(entry_, o.entry_);
    }
    CacheStore* store_ = nullptr;
    std::shared_ptr<Entry> entry_;
  };

  struct LoadResult {
    std::size_t entries = 0;
    bool corrupt = false;
  };

  CacheStore(CacheConfig config, const Clock& clock);
  ~CacheStore();
  CacheStore(const CacheStore&) = delete;
  CacheStore& operator=(const CacheStore&) = delete;

  std::optional<EntryHandle> lookup(const std::string& video_id,
                                    const FormatVariantKey& variant);
  // Variants held for a video, ordered by key.
  std::vector<EntryInfo> variants_of(const std::string& video_id) const;

  FillHandle begin_fill(const std::string& video_id,
                        const FormatVariantKey& variant,
                        std::uint64_t total_bytes);
  void write_segment(FillHandle& fill, std::uint64_t index,
                     std::span<const std::uint8_t> bytes);
  SharedBytes read_segment(const EntryHandle& entry, std::uint64_t index) const;

  // Evicts least-recently-used unpinned entries until `needed_bytes` fit in
  // the unreserved budget or nothing evictable remains.
  std::vector<CacheKey> evict_until(std::uint64_t needed_bytes);

  void save_manifest();
  LoadResult load_manifest();

  std::uint64_t bytes_used() const;
  std::uint64_t reserved_bytes() const;
  std::uint64_t byte_budget() const { return config_.byte_budget; }
  std::uint64_t segment_size() const { return config_.segment_size; }
  std::size_t entry_count() const;
  std::vector<EntryInfo> dump() const;

  std::uint64_t segments_for(std::uint64_t total_bytes) const {
    return ceil_div(total_bytes, config_.segment_size);
  }

  using EvictionListener = std::function<void(const CacheKey&, std::uint64_t)>;
  void set_eviction_listener(EvictionListener listener);

 private:
  struct Entry {
    CacheKey key;
    std::uint64_t total_bytes = 0;
    std::uint64_t total_segments = 0;
    std::vector<SharedBytes> segments;
    std::uint64_t present_count = 0;
    std::uint64_t stored_bytes = 0;
    FillState state = FillState::kFilling;
    TimeMs last_access = 0;
    std::uint32_t pin_count = 0;
    bool filler_active = false;
    bool persisted = false;
  };

  std::uint64_t expected_segment_bytes(const Entry& e, std::uint64_t index) const;
  std::uint64_t free_bytes_locked() const;
  std::vector<CacheKey> evict_until_locked(std::uint64_t needed_bytes);
  std::optional<CacheKey> evict_one_locked();
  void remove_locked(std::map<CacheKey, std::shared_ptr<Entry>>::iterator it);
  void unpin(Entry& e, bool filler);
  EntryInfo info_locked(const Entry& e) const;
  void persist_entry_locked(Entry& e);
  void write_manifest_locked();
  std::filesystem::path payload_path(const CacheKey& key) const;

  CacheConfig config_;
  const Clock& clock_;
  mutable std::mutex mu_;
  std::map<CacheKey, std::shared_ptr<Entry>> entries_;
  std::uint64_t bytes_used_ = 0;
  std::uint64_t reserved_ = 0;
  EvictionListener on_evict_;
};

}  // namespace bbm
