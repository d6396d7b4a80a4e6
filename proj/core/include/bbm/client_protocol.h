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
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "bbm/common.h"
#include "bbm/media_model.h"

namespace bbm {

// Client-facing protocol.
//
// Requests (one line each):
//   PLAY <video_id> PROFILE <profile_id>
//   STATS
//   TELEMETRY <json>          node telemetry, admin only
// Responses to PLAY are a status line, or
//   STREAM <video_id> <variant> <total_bytes> <segment_size>\n
// followed by frames of a 4-byte big-endian length and that many bytes, ending
// with a zero-length frame.
struct ClientCommand {
  enum class Kind { kPlay, kStats, kTelemetry };
  Kind kind = Kind::kPlay;
  std::string video_id;
  std::string profile_id;
  std::string payload;  // telemetry JSON

  static std::optional<ClientCommand> parse(std::string_view line);
  std::string to_line() const;
};

enum class ClientStatus { kNotAvailable, kFetchFailed, kFormatUnsupported };
// "404 NOT_AVAILABLE\n" and friends.
std::string status_line(ClientStatus status);
std::optional<ClientStatus> parse_status_line(std::string_view line);

std::string stream_header_line(std::string_view video_id, const FormatVariantKey& variant,
                               std::uint64_t total_bytes, std::uint64_t segment_size);
void append_frame_length(Bytes& out, std::uint32_t length);

// Where a session's response goes. Implementations decide what "connected"
// means; writes after disconnect are dropped.
class ClientSink {
 public:
  virtual ~ClientSink() = default;
  virtual bool connected() const = 0;
  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  virtual void close() = 0;

  void write_text(std::string_view text) {
    write({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
};

// Incremental reader of one PLAY response.
class ResponseParser {
 public:
  // Consumes bytes; throws Error(kProtocol) on malformed input.
  void feed(std::span<const std::uint8_t> bytes);
  bool done() const { return done_; }
  std::optional<ClientStatus> status() const { return status_; }
  const std::string& video_id() const { return video_id_; }
  const FormatVariantKey& variant() const { return variant_; }
  std::uint64_t total_bytes() const { return total_bytes_; }
  std::uint64_t segment_size() const { return segment_size_; }
  std::uint64_t frames() const { return frames_; }
  std::uint64_t payload_bytes() const { return payload_bytes_; }
  // Concatenated frame payloads (empty when not kept).
  const Bytes& payload() const { return payload_; }
  void set_keep_payload(bool keep) { keep_payload_ = keep; }

 private:
  void parse_header(std::string_view line);

  std::string line_;
  bool header_done_ = false;
  bool done_ = false;
  std::optional<ClientStatus> status_;
  std::string video_id_;
  FormatVariantKey variant_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t segment_size_ = 0;
  std::uint64_t frames_ = 0;
  std::uint8_t len_buf_[4] = {};
  std::size_t len_have_ = 0;
  std::uint64_t frame_left_ = 0;
  std::uint64_t payload_bytes_ = 0;
  bool keep_payload_ = true;
  Bytes payload_;
};

}  // namespace bbm
