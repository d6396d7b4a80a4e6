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

#include "bbm/event_log.h"

namespace bbm {

namespace {
nlohmann::json stamp(std::string_view kind, nlohmann::json fields, TimeMs now, TimeMs tick_ms) {
  if (!fields.is_object()) fields = nlohmann::json::object();
  fields["tick"] = tick_ms > 0 ? now / tick_ms : now;
  fields["kind"] = kind;
  return fields;
}
}  // namespace

void NdjsonEventLog::emit(std::string_view kind, nlohmann::json fields) {
  out_ << stamp(kind, std::move(fields), clock_.now(), tick_ms_).dump() << '\n';
}

void MemoryEventLog::emit(std::string_view kind, nlohmann::json fields) {
  events_.push_back(stamp(kind, std::move(fields), clock_.now(), tick_ms_));
}

std::vector<nlohmann::json> MemoryEventLog::of_kind(std::string_view kind) const {
  std::vector<nlohmann::json> out;
  for (const auto& e : events_) {
    if (e["kind"] == kind) out.push_back(e);
  }
  return out;
}

}  // namespace bbm
