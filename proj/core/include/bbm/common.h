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
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bbm {

using Bytes = std::vector<std::uint8_t>;
using SharedBytes = std::shared_ptr<const Bytes>;

// Virtual (or wall) time in milliseconds.
using TimeMs = std::int64_t;

enum class Errc {
  kBadMagic,
  kBadVersion,
  kTruncatedPayload,
  kInvalidAsset,
  kInvalidProfile,
  kUpscaleRequested,
  kInsufficientBudget,
  kAlreadyComplete,
  kFillInProgress,
  kOutOfRange,
  kSizeMismatch,
  kDuplicateSegment,
  kSegmentNotPresent,
  kCorruptManifest,
  kUnknownNode,
  kStaleMessage,
  kProbeTimeout,
  kNodeTimeout,
  kRangeRejected,
  kShortRead,
  kNotFound,
  kBandwidthBelowPlayback,
  kClientDisconnected,
  kSourceFailed,
  kConfigInvalid,
  kMismatchedConfigs,
  kProtocol,
  kIo,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimeMs now() const = 0;
};

// Runs callbacks at (or after) a point in time. The simulator implements this
// over a virtual event queue; the live service over a real-time loop. All
// callbacks posted to one executor run on a single thread, in time order.
class Executor : public Clock {
 public:
  using Task = std::function<void()>;

  virtual void post_at(TimeMs when, Task task) = 0;
  void post(Task task) { post_at(now(), std::move(task)); }
  void post_after(TimeMs delay, Task task) {
    post_at(now() + delay, std::move(task));
  }
};

// Manually advanced clock, handy in tests.
class ManualClock : public Clock {
 public:
  explicit ManualClock(TimeMs start = 0) : now_(start) {}
  TimeMs now() const override { return now_; }
  void set(TimeMs t) { now_ = t; }
  void advance(TimeMs d) { now_ += d; }

 private:
  TimeMs now_;
};

// 64-bit FNV-1a. Stable across platforms and runs; used for on-disk names.
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const Bytes& data,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::string to_hex64(std::uint64_t v);

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) {
  return (a + b - 1) / b;
}

}  // namespace bbm
