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

#include "bbm/client_protocol.h"

#include <charconv>
#include <sstream>
#include <vector>

namespace bbm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool to_u64(std::string_view s, std::uint64_t& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

std::optional<ClientCommand> ClientCommand::parse(std::string_view line) {
  line = trim(line);
  if (line == "STATS") return ClientCommand{Kind::kStats, {}, {}, {}};
  constexpr std::string_view kTelemetry = "TELEMETRY ";
  if (line.starts_with(kTelemetry)) {
    return ClientCommand{Kind::kTelemetry, {}, {}, std::string(trim(line.substr(kTelemetry.size())))};
  }
  auto w = words(line);
  if (w.size() == 4 && w[0] == "PLAY" && w[2] == "PROFILE") {
    return ClientCommand{Kind::kPlay, std::string(w[1]), std::string(w[3]), {}};
  }
  return std::nullopt;
}

std::string ClientCommand::to_line() const {
  switch (kind) {
    case Kind::kPlay: return "PLAY " + video_id + " PROFILE " + profile_id + "\n";
    case Kind::kStats: return "STATS\n";
    case Kind::kTelemetry: return "TELEMETRY " + payload + "\n";
  }
  return {};
}

std::string status_line(ClientStatus status) {
  switch (status) {
    case ClientStatus::kNotAvailable: return "404 NOT_AVAILABLE\n";
    case ClientStatus::kFetchFailed: return "500 FETCH_FAILED\n";
    case ClientStatus::kFormatUnsupported: return "501 FORMAT_UNSUPPORTED\n";
  }
  return {};
}

std::optional<ClientStatus> parse_status_line(std::string_view line) {
  line = trim(line);
  if (line == "404 NOT_AVAILABLE") return ClientStatus::kNotAvailable;
  if (line == "500 FETCH_FAILED") return ClientStatus::kFetchFailed;
  if (line == "501 FORMAT_UNSUPPORTED") return ClientStatus::kFormatUnsupported;
  return std::nullopt;
}

std::string stream_header_line(std::string_view video_id, const FormatVariantKey& variant,
                               std::uint64_t total_bytes, std::uint64_t segment_size) {
  std::ostringstream os;
  os << "STREAM " << video_id << ' ' << variant.to_string() << ' ' << total_bytes << ' '
     << segment_size << '\n';
  return os.str();
}

void append_frame_length(Bytes& out, std::uint32_t length) {
  out.push_back(static_cast<std::uint8_t>(length >> 24));
  out.push_back(static_cast<std::uint8_t>(length >> 16));
  out.push_back(static_cast<std::uint8_t>(length >> 8));
  out.push_back(static_cast<std::uint8_t>(length));
}

void ResponseParser::parse_header(std::string_view line) {
  if (auto st = parse_status_line(line)) {
    status_ = st;
    done_ = true;
    return;
  }
  auto w = words(trim(line));
  if (w.size() != 5 || w[0] != "STREAM") throw Error(Errc::kProtocol, "bad response line");
  auto variant = FormatVariantKey::parse(w[2]);
  if (!variant || !to_u64(w[3], total_bytes_) || !to_u64(w[4], segment_size_)) {
    throw Error(Errc::kProtocol, "bad STREAM header");
  }
  video_id_ = std::string(w[1]);
  variant_ = *variant;
}

void ResponseParser::feed(std::span<const std::uint8_t> bytes) {
  std::size_t i = 0;
  while (i < bytes.size() && !done_) {
    if (!header_done_) {
      const char c = static_cast<char>(bytes[i++]);
      if (c != '\n') {
        line_.push_back(c);
        continue;
      }
      header_done_ = true;
      parse_header(line_);
      continue;
    }
    if (frame_left_ == 0) {
      len_buf_[len_have_++] = bytes[i++];
      if (len_have_ < 4) continue;
      len_have_ = 0;
      frame_left_ = (std::uint64_t{len_buf_[0]} << 24) | (std::uint64_t{len_buf_[1]} << 16) |
                    (std::uint64_t{len_buf_[2]} << 8) | std::uint64_t{len_buf_[3]};
      if (frame_left_ == 0) {
        done_ = true;
      } else {
        ++frames_;
      }
      continue;
    }
    const std::size_t n = std::min<std::uint64_t>(frame_left_, bytes.size() - i);
    if (keep_payload_) payload_.insert(payload_.end(), bytes.begin() + i, bytes.begin() + i + n);
    payload_bytes_ += n;
    frame_left_ -= n;
    i += n;
  }
  if (i < bytes.size()) throw Error(Errc::kProtocol, "bytes after end of stream");
}

}  // namespace bbm
