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

#include "bbm/common.h"

#include <cstdio>

namespace bbm {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kBadVersion: return "BadVersion";
    case Errc::kTruncatedPayload: return "TruncatedPayload";
    case Errc::kInvalidAsset: return "InvalidAsset";
    case Errc::kInvalidProfile: return "InvalidProfile";
    case Errc::kUpscaleRequested: return "UpscaleRequested";
    case Errc::kInsufficientBudget: return "InsufficientBudget";
    case Errc::kAlreadyComplete: return "AlreadyComplete";
    case Errc::kFillInProgress: return "FillInProgress";
    case Errc::kOutOfRange: return "OutOfRange";
    case Errc::kSizeMismatch: return "SizeMismatch";
    case Errc::kDuplicateSegment: return "DuplicateSegment";
    case Errc::kSegmentNotPresent: return "SegmentNotPresent";
    case Errc::kCorruptManifest: return "CorruptManifest";
    case Errc::kUnknownNode: return "UnknownNode";
    case Errc::kStaleMessage: return "StaleMessage";
    case Errc::kProbeTimeout: return "ProbeTimeout";
    case Errc::kNodeTimeout: return "NodeTimeout";
    case Errc::kRangeRejected: return "RangeRejected";
    case Errc::kShortRead: return "ShortRead";
    case Errc::kNotFound: return "NotFound";
    case Errc::kBandwidthBelowPlayback: return "BandwidthBelowPlayback";
    case Errc::kClientDisconnected: return "ClientDisconnected";
    case Errc::kSourceFailed: return "SourceFailed";
    case Errc::kConfigInvalid: return "ConfigInvalid";
    case Errc::kMismatchedConfigs: return "MismatchedConfigs";
    case Errc::kProtocol: return "Protocol";
    case Errc::kIo: return "Io";
  }
  return "Unknown";
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(const Bytes& data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace bbm
