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
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "bbm/common.h"

namespace bbm {

// Origin wire protocol. Requests are single lines:
//   GET <video_id> RANGE <start>-<end>      (end inclusive)
//   SIZE <video_id>
// Responses:
//   206 <len>\n<len bytes>
//   200 <total_bytes>\n
//   404\n   unknown video
//   416\n   unsatisfiable range
//   400\n   malformed request
struct OriginRequest {
  enum class Kind { kGet, kSize };
  Kind kind = Kind::kGet;
  std::string video_id;
  std::uint64_t start = 0;
  std::uint64_t end_inclusive = 0;

  static OriginRequest get(std::string video_id, std::uint64_t start, std::uint64_t end) {
    return {Kind::kGet, std::move(video_id), start, end};
  }
  static OriginRequest size(std::string video_id) { return {Kind::kSize, std::move(video_id)}; }

  std::string to_line() const;  // includes the trailing newline
  static std::optional<OriginRequest> parse(std::string_view line);
};

struct OriginResponse {
  int status = 0;
  std::uint64_t value = 0;  // body length for 206, total size for 200
  Bytes body;

  Bytes encode() const;
  // Parses the status line; returns the header length consumed, or nullopt if
  // `bytes` does not yet hold a full line. Throws Error(kProtocol).
  static std::optional<std::size_t> parse_status_line(std::span<const std::uint8_t> bytes,
                                                      OriginResponse& out);
  static OriginResponse decode(std::span<const std::uint8_t> bytes);
};

// Videos an origin node stores, served by the wire protocol.
class OriginStore {
 public:
  void put(const std::string& video_id, SharedBytes container);
  void remove(const std::string& video_id);
  bool has(std::string_view video_id) const;
  OriginResponse handle(const OriginRequest& request) const;
  OriginResponse handle_line(std::string_view line) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, SharedBytes, std::less<>> videos_;
};

}  // namespace bbm
