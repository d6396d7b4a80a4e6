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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbm/common.h"

namespace bbm {

// Synthetic "BBMV" container.
//
// Layout (little-endian):
//   0  4  magic "BBMV"
//   4  1  version (1)
//   5  1  codec id
//   6  2  width
//   8  2  height
//   10 1  fps
//   11 4  frame count
//   15 .. frame_count frames of frame_size_bytes each
//
// Frames are modelled as planar 4:2:0, so a frame occupies
// floor(width * height * 3 / 2) bytes.
inline constexpr std::uint8_t kContainerMagic[4] = {0x42, 0x42, 0x4D, 0x56};
inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 15;

inline constexpr std::uint16_t kCifWidth = 352;
inline constexpr std::uint16_t kCifHeight = 288;
inline constexpr std::uint16_t kQcifWidth = 176;
inline constexpr std::uint16_t kQcifHeight = 144;

constexpr std::uint64_t frame_size_bytes(std::uint32_t width,
                                         std::uint32_t height) {
  return static_cast<std::uint64_t>(width) * height * 3 / 2;
}

// Identifies one rendition of a video. The cache keys transcoded copies by it.
struct FormatVariantKey {
  std::uint8_t codec_id = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t fps = 0;

  auto operator<=>(const FormatVariantKey&) const = default;

  // "codec:WxH@fps"
  std::string to_string() const;
  static std::optional<FormatVariantKey> parse(std::string_view text);
};

struct VideoAsset {
  std::string video_id;
  std::uint8_t codec_id = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t fps = 0;
  std::uint32_t frame_count = 0;
  Bytes payload;

  std::uint64_t frame_size() const { return frame_size_bytes(width, height); }
  std::uint64_t container_size() const {
    return kContainerHeaderBytes + payload.size();
  }
  FormatVariantKey variant() const { return {codec_id, width, height, fps}; }
  std::span<const std::uint8_t> frame(std::uint32_t index) const;

  // Throws Error(kInvalidAsset) when an invariant does not hold.
  void validate() const;

  bool operator==(const VideoAsset&) const = default;
};

struct DeviceProfile {
  std::string profile_id;
  std::uint8_t codec_id = 0;
  std::uint16_t target_width = 0;
  std::uint16_t target_height = 0;
  std::uint8_t max_fps = 0;

  // Throws Error(kInvalidProfile).
  void validate() const;
  // The variant a matching asset of `source_fps` would have.
  FormatVariantKey target_variant(std::uint8_t source_fps) const;
};

// Built-in device classes. Source material is assumed to be codec 1 at CIF;
// mobile renditions use codec 2.
inline constexpr std::uint8_t kSourceCodec = 1;
inline constexpr std::uint8_t kMobileCodec = 2;
DeviceProfile cif_profile();
DeviceProfile qcif_profile();

class ProfileRegistry {
 public:
  ProfileRegistry();  // preloaded with "cif" and "qcif"
  void add(DeviceProfile profile);
  const DeviceProfile* find(std::string_view profile_id) const;
  std::vector<std::string> ids() const;

  // One profile per line: "<id> <codec> <width> <height> <max_fps>".
  static ProfileRegistry load_roster(const std::string& path);

 private:
  std::map<std::string, DeviceProfile, std::less<>> profiles_;
};

Bytes encode_container(const VideoAsset& asset);
// Only parses the 15-byte header; `bytes` may be a prefix of a container.
// The returned asset has an empty payload.
VideoAsset decode_header(std::span<const std::uint8_t> bytes);
VideoAsset decode_container(std::span<const std::uint8_t> bytes,
                            std::string video_id = {});

bool matches_profile(const VideoAsset& asset, const DeviceProfile& profile);
bool matches_profile(const FormatVariantKey& variant,
                     const DeviceProfile& profile);

// True iff frame `index` (1-based) survives decimation from in_fps to out_fps.
constexpr bool keep_frame(std::uint64_t index, std::uint32_t in_fps,
                          std::uint32_t out_fps) {
  return (index * out_fps) / in_fps > ((index - 1) * out_fps) / in_fps;
}

std::uint32_t additive_checksum(std::span<const std::uint8_t> bytes);

VideoAsset transcode(const VideoAsset& asset, const DeviceProfile& profile);

// Deterministic synthetic source asset; payload bytes derive from `seed`
// and the video id.
VideoAsset make_synthetic_asset(std::string video_id, std::uint8_t codec_id,
                                std::uint16_t width, std::uint16_t height,
                                std::uint8_t fps, std::uint32_t frame_count,
                                std::uint64_t seed);

}  // namespace bbm
