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

#include "bbm/segment_source.h"

#include <algorithm>

namespace bbm {

MemorySegments::MemorySegments(std::uint64_t total_bytes, std::uint64_t segment_size)
    : total_bytes_(total_bytes), segment_size_(segment_size) {
  if (segment_size == 0) throw Error(Errc::kConfigInvalid, "segment_size must be positive");
  segments_.resize(ceil_div(total_bytes, segment_size));
}

std::shared_ptr<MemorySegments> MemorySegments::from_bytes(const Bytes& bytes,
                                                           std::uint64_t segment_size) {
  auto out = std::make_shared<MemorySegments>(bytes.size(), segment_size);
  for (std::uint64_t i = 0; i < out->total_segments(); ++i) {
    const auto off = i * segment_size;
    out->write_segment(i, std::span<const std::uint8_t>(bytes).subspan(
                              off, std::min<std::uint64_t>(segment_size, bytes.size() - off)));
  }
  return out;
}

bool MemorySegments::has_segment(std::uint64_t index) const {
  std::lock_guard lock(mu_);
  return index < segments_.size() && segments_[index] != nullptr;
}

SharedBytes MemorySegments::read_segment(std::uint64_t index) const {
  std::lock_guard lock(mu_);
  if (index >= segments_.size() || !segments_[index]) {
    throw Error(Errc::kSegmentNotPresent, "segment " + std::to_string(index));
  }
  return segments_[index];
}

void MemorySegments::write_segment(std::uint64_t index, std::span<const std::uint8_t> bytes) {
  std::lock_guard lock(mu_);
  if (index >= segments_.size()) {
    throw Error(Errc::kOutOfRange, "segment " + std::to_string(index));
  }
  if (bytes.size() != segment_bytes(index)) {
    throw Error(Errc::kSizeMismatch, "segment " + std::to_string(index));
  }
  if (segments_[index]) return;
  segments_[index] = std::make_shared<const Bytes>(bytes.begin(), bytes.end());
  ++present_;
}

bool MemorySegments::complete() const {
  std::lock_guard lock(mu_);
  return present_ == segments_.size();
}

Bytes read_all(const SegmentSource& source) {
  Bytes out;
  out.reserve(source.total_bytes());
  for (std::uint64_t i = 0; i < source.total_segments(); ++i) {
    auto seg = source.read_segment(i);
    out.insert(out.end(), seg->begin(), seg->end());
  }
  return out;
}

}  // namespace bbm
