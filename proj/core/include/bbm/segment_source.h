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

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "bbm/cache_store.h"
#include "bbm/common.h"

namespace bbm {

// Read side of a segmented byte object that may still be filling.
class SegmentSource {
 public:
  virtual ~SegmentSource() = default;
  virtual std::uint64_t total_bytes() const = 0;
  virtual std::uint64_t segment_size() const = 0;
  virtual bool has_segment(std::uint64_t index) const = 0;
  virtual SharedBytes read_segment(std::uint64_t index) const = 0;

  std::uint64_t total_segments() const { return ceil_div(total_bytes(), segment_size()); }
  std::uint64_t segment_bytes(std::uint64_t index) const {
    if (index + 1 < total_segments()) return segment_size();
    return total_bytes() - (total_segments() - 1) * segment_size();
  }
};

// Pinned view of a cache entry.
class CacheEntrySource : public SegmentSource {
 public:
  explicit CacheEntrySource(CacheStore::EntryHandle handle) : handle_(std::move(handle)) {}
  std::uint64_t total_bytes() const override { return handle_.total_bytes(); }
  std::uint64_t segment_size() const override { return handle_.segment_size(); }
  bool has_segment(std::uint64_t index) const override { return handle_.has_segment(index); }
  SharedBytes read_segment(std::uint64_t index) const override {
    return handle_.read_segment(index);
  }
  const CacheStore::EntryHandle& handle() const { return handle_; }

 private:
  CacheStore::EntryHandle handle_;
};

// Uncached segments held in memory, for transient copies that bypass the cache.
class MemorySegments : public SegmentSource {
 public:
  MemorySegments(std::uint64_t total_bytes, std::uint64_t segment_size);
  // Splits a complete byte object into segments.
  static std::shared_ptr<MemorySegments> from_bytes(const Bytes& bytes,
                                                    std::uint64_t segment_size);

  std::uint64_t total_bytes() const override { return total_bytes_; }
  std::uint64_t segment_size() const override { return segment_size_; }
  bool has_segment(std::uint64_t index) const override;
  SharedBytes read_segment(std::uint64_t index) const override;
  void write_segment(std::uint64_t index, std::span<const std::uint8_t> bytes);
  bool complete() const;

 private:
  std::uint64_t total_bytes_;
  std::uint64_t segment_size_;
  mutable std::mutex mu_;
  std::vector<SharedBytes> segments_;
  std::uint64_t present_ = 0;
};

// Reassembles every segment; the source must be complete.
Bytes read_all(const SegmentSource& source);

}  // namespace bbm
