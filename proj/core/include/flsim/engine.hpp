// Copyright 2026 The flsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLSIM_ENGINE_HPP_
#define FLSIM_ENGINE_HPP_

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "flsim/common.hpp"

namespace flsim {

// Single-threaded logical event queue: the reference execution for every
// simulation in this project. Events run in (timestamp, insertion sequence)
// order, which makes runs bit-deterministic under a fixed seed.
class EventQueue {
 public:
  SimTime now() const { return now_; }

  void ScheduleAt(SimTime at, std::function<void()> fn) {
    if (at < now_) at = now_;
    heap_.push(Entry{at, next_seq_++, std::move(fn)});
  }

  void ScheduleAfter(SimTime delay, std::function<void()> fn) {
    ScheduleAt(now_ + (delay < 0 ? 0 : delay), std::move(fn));
  }

  bool RunOne() {
    if (heap_.empty()) return false;
    Entry e = std::move(const_cast<Entry&>(heap_.top()));
    heap_.pop();
    now_ = e.at;
    e.fn();
    return true;
  }

  // Runs every event with timestamp <= end; the clock lands on end.
  void RunUntil(SimTime end) {
    while (!heap_.empty() && heap_.top().at <= end) RunOne();
    if (now_ < end) now_ = end;
  }

  void RunUntilIdle() {
    while (RunOne()) {
    }
  }

  std::size_t pending() const { return heap_.size(); }

 private:
  struct Entry {
    SimTime at;
    std::uint64_t seq;
    std::function<void()> fn;

    bool operator>(const Entry& o) const {
      if (at != o.at) return at > o.at;
      return seq > o.seq;
    }
  };

  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
};

}  // namespace flsim

#endif  // FLSIM_ENGINE_HPP_
