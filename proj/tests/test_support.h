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

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bbm/client_protocol.h"
#include "bbm/common.h"

namespace bbm::test {

// Client sink that records everything and can hang up after a byte count.
class RecordingSink final : public ClientSink {
 public:
  explicit RecordingSink(std::int64_t disconnect_after = -1)
      : disconnect_after_(disconnect_after) {}

  bool connected() const override { return !closed_ && !hung_up_; }
  void write(std::span<const std::uint8_t> bytes) override {
    if (!connected()) return;
    data.insert(data.end(), bytes.begin(), bytes.end());
    parser.feed(bytes);
    if (disconnect_after_ >= 0 &&
        parser.payload_bytes() >= static_cast<std::uint64_t>(disconnect_after_)) {
      hung_up_ = true;
    }
  }
  void close() override { closed_ = true; }
  bool closed() const { return closed_; }

  Bytes data;
  ResponseParser parser;

 private:
  std::int64_t disconnect_after_;
  bool closed_ = false;
  bool hung_up_ = false;
};

// Upper-tail probability of a chi-square statistic with `dof` degrees of
// freedom: exact for one degree, Wilson-Hilferty otherwise.
inline double chi_square_p_value(double statistic, double dof) {
  if (dof == 1) return std::erfc(std::sqrt(statistic / 2.0));
  const double z = (std::cbrt(statistic / dof) - (1.0 - 2.0 / (9.0 * dof))) /
                   std::sqrt(2.0 / (9.0 * dof));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

inline double chi_square_statistic(const std::vector<std::uint64_t>& counts,
                                   double expected) {
  double s = 0;
  for (auto c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

}  // namespace bbm::test
