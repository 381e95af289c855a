// Copyright 2026 The Maple Authors
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

// Completion and embedding backend interfaces plus the retry policy every
// transport-level backend follows. Backends must be shareable across
// concurrent callers.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "maple/error.hpp"

namespace maple {

struct CompletionRequest {
  std::string prompt;
  std::size_t max_tokens = 512;
  double temperature = 1.0;
  std::optional<std::int64_t> seed;

  void validate() const {
    if (prompt.empty()) throw InvalidArgument("CompletionRequest: empty prompt");
    if (max_tokens < 1) throw InvalidArgument("CompletionRequest: max_tokens must be >= 1");
    if (std::isnan(temperature) || temperature < 0.0) {
      throw InvalidArgument("CompletionRequest: temperature must be >= 0");
    }
  }
};

struct BackendPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds initial_backoff{100};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds timeout{30000};
  std::size_t max_concurrency = 4;

  void validate() const {
    if (max_retries > 100) throw InvalidArgument("BackendPolicy: max_retries out of range");
    if (initial_backoff.count() < 0) {
      throw InvalidArgument("BackendPolicy: negative backoff");
    }
    if (!(backoff_multiplier >= 1.0)) {
      throw InvalidArgument("BackendPolicy: backoff multiplier must be >= 1");
    }
    if (timeout.count() <= 0) throw InvalidArgument("BackendPolicy: timeout must be positive");
    if (max_concurrency < 1) {
      throw InvalidArgument("BackendPolicy: max_concurrency must be >= 1");
    }
  }
};

// Delay before retry attempt i (1-based): initial * multiplier^(i-1).
inline std::chrono::milliseconds backoff_delay(const BackendPolicy& policy,
                                               std::size_t retry_index) {
  if (retry_index == 0) return std::chrono::milliseconds{0};
  double ms = static_cast<double>(policy.initial_backoff.count()) *
              std::pow(policy.backoff_multiplier, static_cast<double>(retry_index - 1));
  ms = std::min(ms, 60.0 * 60.0 * 1000.0);
  return std::chrono::milliseconds{static_cast<std::int64_t>(ms)};
}

// Transient failure a retry may fix; anything else aborts immediately.
class RetryableError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Runs fn up to 1 + max_retries times, sleeping the multiplicative backoff
// before each retry. Exhausted retries rethrow the last failure as a hard
// BackendError.
template <typename Fn>
auto with_retries(const BackendPolicy& policy, Fn&& fn) -> decltype(fn()) {
  policy.validate();
  std::string last;
  for (std::size_t attempt = 0; attempt <= policy.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(backoff_delay(policy, attempt));
    try {
      return fn();
    } catch (const RetryableError& e) {
      last = e.what();
    }
  }
  throw BackendError("retries exhausted after " + std::to_string(policy.max_retries) +
                     " retries: " + last);
}

// Counting semaphore bounding in-flight backend requests.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(std::size_t limit) : limit_(limit) {
    if (limit_ < 1) throw InvalidArgument("ConcurrencyLimiter: limit must be >= 1");
  }

  class Ticket {
   public:
    explicit Ticket(ConcurrencyLimiter& owner) : owner_(&owner) { owner_->acquire(); }
    ~Ticket() {
      if (owner_ != nullptr) owner_->release();
    }
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;

   private:
    ConcurrencyLimiter* owner_;
  };

  std::size_t peak() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return peak_;
  }

 private:
  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
    peak_ = std::max(peak_, in_flight_);
  }
  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --in_flight_;
    }
    cv_.notify_one();
  }

  std::size_t limit_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  // Returns nonempty text or throws BackendError after exhausting retries.
  virtual std::string complete(const CompletionRequest& request) = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  // One L2-normalized vector per input text, in input order.
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

// Completions may wrap the document in <<< >>> delimiters per the prompt
// instruction; strip one such wrapper and surrounding whitespace.
inline std::string strip_document_delimiters(std::string text) {
  auto trim = [](std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  trim(text);
  if (text.size() >= 6 && text.rfind("<<<", 0) == 0 &&
      text.compare(text.size() - 3, 3, ">>>") == 0) {
    text = text.substr(3, text.size() - 6);
    trim(text);
  }
  return text;
}

}  // namespace maple
