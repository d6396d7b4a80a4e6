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

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbm/common.h"

namespace bbm {

// Structured trace of everything the manager does. One JSON object per event
// with `tick`, `kind` and kind-specific fields.
class EventLog {
 public:
  virtual ~EventLog() = default;
  virtual void emit(std::string_view kind, nlohmann::json fields) = 0;
};

class NullEventLog final : public EventLog {
 public:
  void emit(std::string_view, nlohmann::json) override {}
};

// Writes newline-delimited JSON. `tick_ms` converts clock time to ticks.
class NdjsonEventLog final : public EventLog {
 public:
  NdjsonEventLog(std::ostream& out, const Clock& clock, TimeMs tick_ms)
      : out_(out), clock_(clock), tick_ms_(tick_ms) {}
  void emit(std::string_view kind, nlohmann::json fields) override;

 private:
  std::ostream& out_;
  const Clock& clock_;
  TimeMs tick_ms_;
};

// Keeps events in memory; used by tests and the trace checker.
class MemoryEventLog final : public EventLog {
 public:
  MemoryEventLog(const Clock& clock, TimeMs tick_ms) : clock_(clock), tick_ms_(tick_ms) {}
  void emit(std::string_view kind, nlohmann::json fields) override;
  const std::vector<nlohmann::json>& events() const { return events_; }
  std::vector<nlohmann::json> of_kind(std::string_view kind) const;

 private:
  const Clock& clock_;
  TimeMs tick_ms_;
  std::vector<nlohmann::json> events_;
};

// Fans one event out to several logs.
class TeeEventLog final : public EventLog {
 public:
  void add(EventLog* log) { logs_.push_back(log); }
  void emit(std::string_view kind, nlohmann::json fields) override {
    for (auto* log : logs_) log->emit(kind, fields);
  }

 private:
  std::vector<EventLog*> logs_;
};

}  // namespace bbm
