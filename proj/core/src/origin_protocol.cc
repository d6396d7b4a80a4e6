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

#include "bbm/origin_protocol.h"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <vector>

namespace bbm {
namespace {

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\r' || s[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\r' && s[j] != '\n') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool to_u64(std::string_view s, std::uint64_t& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

OriginResponse reply(int status, std::uint64_t value = 0) {
  OriginResponse r;
  r.status = status;
  r.value = value;
  return r;
}

}  // namespace

std::string OriginRequest::to_line() const {
  std::ostringstream os;
  if (kind == Kind::kSize) {
    os << "SIZE " << video_id << '\n';
  } else {
    os << "GET " << video_id << " RANGE " << start << '-' << end_inclusive << '\n';
  }
  return os.str();
}

std::optional<OriginRequest> OriginRequest::parse(std::string_view line) {
  auto tok = split_ws(line);
  if (tok.size() == 2 && tok[0] == "SIZE") return size(std::string(tok[1]));
  if (tok.size() == 4 && tok[0] == "GET" && tok[2] == "RANGE") {
    auto dash = tok[3].find('-');
    std::uint64_t s = 0, e = 0;
    if (dash == std::string_view::npos || !to_u64(tok[3].substr(0, dash), s) ||
        !to_u64(tok[3].substr(dash + 1), e)) {
      return std::nullopt;
    }
    return get(std::string(tok[1]), s, e);
  }
  return std::nullopt;
}

Bytes OriginResponse::encode() const {
  std::string head = std::to_string(status);
  if (status == 206 || status == 200) head += ' ' + std::to_string(value);
  head += '\n';
  Bytes out(head.begin(), head.end());
  if (status == 206) out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::optional<std::size_t> OriginResponse::parse_status_line(
    std::span<const std::uint8_t> bytes, OriginResponse& out) {
  auto nl = std::find(bytes.begin(), bytes.end(), '\n');
  if (nl == bytes.end()) return std::nullopt;
  std::string_view line(reinterpret_cast<const char*>(bytes.data()),
                        static_cast<std::size_t>(nl - bytes.begin()));
  auto tok = split_ws(line);
  std::uint64_t status = 0;
  if (tok.empty() || !to_u64(tok[0], status)) {
    throw Error(Errc::kProtocol, "bad origin status line");
  }
  out.status = static_cast<int>(status);
  out.value = 0;
  if (status == 206 || status == 200) {
    if (tok.size() != 2 || !to_u64(tok[1], out.value)) {
      throw Error(Errc::kProtocol, "bad origin status line");
    }
  }
  return static_cast<std::size_t>(nl - bytes.begin()) + 1;
}

OriginResponse OriginResponse::decode(std::span<const std::uint8_t> bytes) {
  OriginResponse r;
  auto head = parse_status_line(bytes, r);
  if (!head) throw Error(Errc::kProtocol, "incomplete origin response");
  if (r.status == 206) {
    r.body.assign(bytes.begin() + *head, bytes.end());
  }
  return r;
}

void OriginStore::put(const std::string& video_id, SharedBytes container) {
  std::lock_guard lock(mu_);
  videos_[video_id] = std::move(container);
}

void OriginStore::remove(const std::string& video_id) {
  std::lock_guard lock(mu_);
  videos_.erase(video_id);
}

bool OriginStore::has(std::string_view video_id) const {
  std::lock_guard lock(mu_);
  return videos_.find(video_id) != videos_.end();
}

OriginResponse OriginStore::handle(const OriginRequest& req) const {
  SharedBytes data;
  {
    std::lock_guard lock(mu_);
    auto it = videos_.find(req.video_id);
    if (it == videos_.end()) return reply(404);
    data = it->second;
  }
  if (req.kind == OriginRequest::Kind::kSize) return reply(200, data->size());
  if (req.start > req.end_inclusive || req.end_inclusive >= data->size()) return reply(416);
  auto r = reply(206, req.end_inclusive - req.start + 1);
  r.body.assign(data->begin() + static_cast<std::ptrdiff_t>(req.start),
                data->begin() + static_cast<std::ptrdiff_t>(req.end_inclusive + 1));
  return r;
}

OriginResponse OriginStore::handle_line(std::string_view line) const {
  auto req = OriginRequest::parse(line);
  if (!req) return reply(400);
  return handle(*req);
}

}  // namespace bbm
