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

#include "bbm/media_model.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace bbm {
namespace {

void put_le(Bytes& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t off, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  return v;
}

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::string FormatVariantKey::to_string() const {
  std::ostringstream os;
  os << int(codec_id) << ':' << width << 'x' << height << '@' << int(fps);
  return os.str();
}

std::optional<FormatVariantKey> FormatVariantKey::parse(std::string_view text) {
  auto colon = text.find(':');
  auto x = text.find('x', colon == std::string_view::npos ? 0 : colon);
  auto at = text.find('@', x == std::string_view::npos ? 0 : x);
  if (colon == std::string_view::npos || x == std::string_view::npos ||
      at == std::string_view::npos) {
    return std::nullopt;
  }
  unsigned codec = 0, fps = 0;
  std::uint16_t w = 0, h = 0;
  if (!parse_uint(text.substr(0, colon), codec) ||
      !parse_uint(text.substr(colon + 1, x - colon - 1), w) ||
      !parse_uint(text.substr(x + 1, at - x - 1), h) ||
      !parse_uint(text.substr(at + 1), fps) || codec > 255 || fps > 255) {
    return std::nullopt;
  }
  return FormatVariantKey{static_cast<std::uint8_t>(codec), w, h,
                          static_cast<std::uint8_t>(fps)};
}

std::span<const std::uint8_t> VideoAsset::frame(std::uint32_t index) const {
  const auto size = frame_size();
  return std::span<const std::uint8_t>(payload).subspan(index * size, size);
}

void VideoAsset::validate() const {
  if (width == 0 || height == 0) throw Error(Errc::kInvalidAsset, "zero dimension");
  if (fps < 1) throw Error(Errc::kInvalidAsset, "fps must be >= 1");
  if (payload.size() != frame_count * frame_size()) {
    throw Error(Errc::kInvalidAsset, "payload length " + std::to_string(payload.size()) +
                                         " != frame_count * frame_size");
  }
}

void DeviceProfile::validate() const {
  if (target_width == 0 || target_height == 0 || max_fps == 0) {
    throw Error(Errc::kInvalidProfile, profile_id + ": non-positive target");
  }
  if (target_width > kCifWidth || target_height > kCifHeight) {
    throw Error(Errc::kInvalidProfile, profile_id + ": target exceeds CIF");
  }
}

FormatVariantKey DeviceProfile::target_variant(std::uint8_t source_fps) const {
  return {codec_id, target_width, target_height, std::min(source_fps, max_fps)};
}

DeviceProfile cif_profile() { return {"cif", kMobileCodec, kCifWidth, kCifHeight, 30}; }
DeviceProfile qcif_profile() { return {"qcif", kMobileCodec, kQcifWidth, kQcifHeight, 15}; }

ProfileRegistry::ProfileRegistry() {
  add(cif_profile());
  add(qcif_profile());
}

void ProfileRegistry::add(DeviceProfile profile) {
  profile.validate();
  auto id = profile.profile_id;
  profiles_.insert_or_assign(std::move(id), std::move(profile));
}

const DeviceProfile* ProfileRegistry::find(std::string_view profile_id) const {
  auto it = profiles_.find(profile_id);
  return it == profiles_.end() ? nullptr : &it->second;
}

std::vector<std::string> ProfileRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : profiles_) out.push_back(id);
  return out;
}

ProfileRegistry ProfileRegistry::load_roster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfigInvalid, "cannot open profile roster " + path);
  ProfileRegistry reg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    DeviceProfile p;
    unsigned codec = 0, fps = 0;
    if (!(ls >> p.profile_id >> codec >> p.target_width >> p.target_height >> fps) ||
        codec > 255 || fps > 255) {
      throw Error(Errc::kConfigInvalid,
                  path + ":" + std::to_string(lineno) + ": malformed profile");
    }
    p.codec_id = static_cast<std::uint8_t>(codec);
    p.max_fps = static_cast<std::uint8_t>(fps);
    reg.add(std::move(p));
  }
  return reg;
}

Bytes encode_container(const VideoAsset& asset) {
  asset.validate();
  Bytes out;
  out.reserve(asset.container_size());
  out.insert(out.end(), std::begin(kContainerMagic), std::end(kContainerMagic));
  out.push_back(kContainerVersion);
  out.push_back(asset.codec_id);
  put_le(out, asset.width, 2);
  put_le(out, asset.height, 2);
  out.push_back(asset.fps);
  put_le(out, asset.frame_count, 4);
  out.insert(out.end(), asset.payload.begin(), asset.payload.end());
  return out;
}

VideoAsset decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kContainerMagic),
                                      std::end(kContainerMagic), bytes.begin())) {
    throw Error(Errc::kBadMagic, "not a BBMV container");
  }
  if (bytes.size() < 5 || bytes[4] != kContainerVersion) {
    throw Error(Errc::kBadVersion, "unsupported container version");
  }
  if (bytes.size() < kContainerHeaderBytes) {
    throw Error(Errc::kTruncatedPayload, "header truncated");
  }
  VideoAsset a;
  a.codec_id = bytes[5];
  a.width = static_cast<std::uint16_t>(get_le(bytes, 6, 2));
  a.height = static_cast<std::uint16_t>(get_le(bytes, 8, 2));
  a.fps = bytes[10];
  a.frame_count = static_cast<std::uint32_t>(get_le(bytes, 11, 4));
  return a;
}

VideoAsset decode_container(std::span<const std::uint8_t> bytes,
                            std::string video_id) {
  VideoAsset a = decode_header(bytes);
  a.video_id = std::move(video_id);
  const std::uint64_t need = std::uint64_t{a.frame_count} * a.frame_size();
  const std::uint64_t have = bytes.size() - kContainerHeaderBytes;
  if (need > have) {
    throw Error(Errc::kTruncatedPayload, "declared " + std::to_string(need) +
                                             " payload bytes, have " + std::to_string(have));
  }
  a.payload.assign(bytes.begin() + kContainerHeaderBytes,
                   bytes.begin() + kContainerHeaderBytes + need);
  a.validate();
  return a;
}

bool matches_profile(const FormatVariantKey& v, const DeviceProfile& p) {
  return v.codec_id == p.codec_id && v.width == p.target_width &&
         v.height == p.target_height && v.fps <= p.max_fps;
}

bool matches_profile(const VideoAsset& asset, const DeviceProfile& profile) {
  return matches_profile(asset.variant(), profile);
}

std::uint32_t additive_checksum(std::span<const std::uint8_t> bytes) {
  std::uint32_t sum = 0;
  for (auto b : bytes) sum += b;
  return sum;
}

VideoAsset transcode(const VideoAsset& asset, const DeviceProfile& profile) {
  asset.validate();
  profile.validate();
  if (matches_profile(asset, profile)) return asset;
  if (profile.target_width > asset.width || profile.target_height > asset.height) {
    throw Error(Errc::kUpscaleRequested,
                asset.variant().to_string() + " -> " + profile.profile_id);
  }

  VideoAsset out;
  out.video_id = asset.video_id;
  out.codec_id = profile.codec_id;
  out.width = profile.target_width;
  out.height = profile.target_height;
  out.fps = std::min(asset.fps, profile.max_fps);

  const std::uint64_t in_size = asset.frame_size();
  const std::uint64_t out_size = out.frame_size();
  std::uint32_t kept = 0;
  for (std::uint64_t i = 1; i <= asset.frame_count; ++i) {
    if (keep_frame(i, asset.fps, out.fps)) ++kept;
  }
  out.frame_count = kept;
  out.payload.reserve(kept * out_size);

  for (std::uint64_t i = 1; i <= asset.frame_count; ++i) {
    if (!keep_frame(i, asset.fps, out.fps)) continue;
    auto src = asset.frame(static_cast<std::uint32_t>(i - 1));
    if (out_size == in_size) {
      out.payload.insert(out.payload.end(), src.begin(), src.end());
      continue;
    }
    // Truncate to out_size - 4 bytes, then append the source frame checksum.
    const std::uint32_t sum = additive_checksum(src);
    const std::uint64_t body = out_size >= 4 ? out_size - 4 : 0;
    out.payload.insert(out.payload.end(), src.begin(), src.begin() + body);
    for (std::uint64_t k = 0; k < out_size - body; ++k) {
      out.payload.push_back(static_cast<std::uint8_t>(sum >> (8 * k)));
    }
  }
  return out;
}

VideoAsset make_synthetic_asset(std::string video_id, std::uint8_t codec_id,
                                std::uint16_t width, std::uint16_t height,
                                std::uint8_t fps, std::uint32_t frame_count,
                                std::uint64_t seed) {
  VideoAsset a;
  a.codec_id = codec_id;
  a.width = width;
  a.height = height;
  a.fps = fps;
  a.frame_count = frame_count;
  std::uint64_t state = fnv1a64(video_id, seed ^ 0x6a09e667f3bcc909ull);
  a.video_id = std::move(video_id);
  a.payload.resize(frame_count * a.frame_size());
  std::size_t i = 0;
  for (; i + 8 <= a.payload.size(); i += 8) {
    std::uint64_t r = splitmix64(state);
    for (int k = 0; k < 8; ++k) a.payload[i + k] = static_cast<std::uint8_t>(r >> (8 * k));
  }
  std::uint64_t r = splitmix64(state);
  for (; i < a.payload.size(); ++i, r >>= 8) a.payload[i] = static_cast<std::uint8_t>(r);
  return a;
}

}  // namespace bbm
