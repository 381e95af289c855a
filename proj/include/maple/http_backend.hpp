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

// OpenAI-compatible HTTP backends: chat-completion and embedding clients
// with bounded retries, multiplicative backoff, a concurrency cap, and an
// audit hook that logs request/response bodies (text redacted by default).

#pragma once

#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "maple/backends.hpp"
#include "maple/error.hpp"

namespace maple {

struct HttpBackendConfig {
  std::string base_url;  // e.g. "http://localhost:8000"
  std::string completion_path = "/v1/chat/completions";
  std::string embedding_path = "/v1/embeddings";
  std::string model;
  std::string api_key;
  BackendPolicy policy;
  bool redact_text = true;

  void validate() const {
    if (base_url.empty()) throw ConfigError("http backend: base_url is required");
    if (model.empty()) throw ConfigError("http backend: model is required");
    policy.validate();
  }
};

// Fills empty fields from MAPLE_API_BASE_URL / MAPLE_API_KEY.
inline void apply_backend_env(HttpBackendConfig& config) {
  if (config.base_url.empty()) {
    if (const char* v = std::getenv("MAPLE_API_BASE_URL")) config.base_url = v;
  }
  if (config.api_key.empty()) {
    if (const char* v = std::getenv("MAPLE_API_KEY")) config.api_key = v;
  }
}

struct AuditEvent {
  std::string endpoint;
  std::size_t attempt = 0;
  int status = 0;  // 0 = transport failure
  std::string request_body;
  std::string response_body;
};

using AuditSink = std::function<void(const AuditEvent&)>;

namespace http_detail {

// Replaces free-text payload fields so audit logs carry structure, sizes,
// and status but no raw private text.
inline void redact_value(nlohmann::json& v) {
  if (v.is_string()) {
    v = "[redacted " + std::to_string(v.get<std::string>().size()) + " chars]";
  } else if (v.is_array()) {
    v = "[redacted " + std::to_string(v.size()) + " values]";
  }
}

inline std::string redact_body(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    return "[unparseable body: " + std::to_string(body.size()) + " bytes]";
  }
  if (j.contains("messages") && j["messages"].is_array()) {
    for (auto& m : j["messages"]) {
      if (m.contains("content")) redact_value(m["content"]);
    }
  }
  if (j.contains("input")) redact_value(j["input"]);
  if (j.contains("choices") && j["choices"].is_array()) {
    for (auto& c : j["choices"]) {
      if (c.contains("message") && c["message"].contains("content")) {
        redact_value(c["message"]["content"]);
      }
    }
  }
  if (j.contains("data") && j["data"].is_array()) {
    for (auto& d : j["data"]) {
      if (d.contains("embedding")) redact_value(d["embedding"]);
    }
  }
  return j.dump();
}

}  // namespace http_detail

class HttpBackendBase {
 public:
  explicit HttpBackendBase(HttpBackendConfig config)
      : config_(std::move(config)), limiter_(config_.policy.max_concurrency) {
    config_.validate();
  }

  void set_audit_sink(AuditSink sink) { sink_ = std::move(sink); }
  const HttpBackendConfig& config() const { return config_; }

 protected:
  // Single POST attempt; every transport, status, or parse failure is
  // retryable so callers wrap this (plus their content extraction) in
  // with_retries.
  nlohmann::json exchange_once(const std::string& path, const std::string& body,
                               std::size_t attempt) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.policy.timeout);
    client.set_read_timeout(config_.policy.timeout);
    client.set_write_timeout(config_.policy.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(path, headers, body, "application/json");
    audit(path, attempt, res ? res->status : 0, body, res ? res->body : std::string());
    if (!res) {
      throw RetryableError("transport failure: " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
      throw RetryableError("http status " + std::to_string(res->status));
    }
    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw RetryableError("malformed response body");
    return parsed;
  }

  ConcurrencyLimiter& limiter() { return limiter_; }

  const HttpBackendConfig config_;

 private:
  void audit(const std::string& path, std::size_t attempt, int status,
             const std::string& request_body, const std::string& response_body) {
    if (!sink_) return;
    AuditEvent event;
    event.endpoint = config_.base_url + path;
    event.attempt = attempt;
    event.status = status;
    event.request_body =
        config_.redact_text ? http_detail::redact_body(request_body) : request_body;
    event.response_body =
        config_.redact_text ? http_detail::redact_body(response_body) : response_body;
    sink_(event);
  }

  ConcurrencyLimiter limiter_;
  AuditSink sink_;
};

class HttpCompletionBackend : public HttpBackendBase, public CompletionBackend {
 public:
  using HttpBackendBase::HttpBackendBase;

  std::string complete(const CompletionRequest& request) override {
    request.validate();
    nlohmann::json body{
        {"model", config_.model},
        {"messages",
         nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"max_tokens", request.max_tokens},
        {"temperature", request.temperature},
    };
    if (request.seed) body["seed"] = *request.seed;
    const std::string body_str = body.dump();
    ConcurrencyLimiter::Ticket ticket(limiter());
    std::size_t attempt = 0;
    return with_retries(config_.policy, [&]() -> std::string {
      nlohmann::json response = exchange_once(config_.completion_path, body_str, ++attempt);
      if (!response.contains("choices") || !response["choices"].is_array() ||
          response["choices"].empty()) {
        throw RetryableError("completion response has no choices");
      }
      const auto& first = response["choices"][0];
      if (!first.contains("message") || !first["message"].contains("content") ||
          !first["message"]["content"].is_string()) {
        throw RetryableError("completion response has no message content");
      }
      std::string content = first["message"]["content"].get<std::string>();
      if (content.empty()) throw RetryableError("completion response is empty");
      return content;
    });
  }
};

class HttpEmbeddingBackend : public HttpBackendBase, public EmbeddingBackend {
 public:
  using HttpBackendBase::HttpBackendBase;

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) return {};
    for (const std::string& t : texts) {
      if (t.empty()) throw InvalidArgument("embed: empty text");
    }
    nlohmann::json body{{"model", config_.model}, {"input", texts}};
    const std::string body_str = body.dump();
    ConcurrencyLimiter::Ticket ticket(limiter());
    std::size_t attempt = 0;
    return with_retries(config_.policy, [&]() -> std::vector<std::vector<double>> {
      nlohmann::json response = exchange_once(config_.embedding_path, body_str, ++attempt);
      if (!response.contains("data") || !response["data"].is_array() ||
          response["data"].size() != texts.size()) {
        throw RetryableError("embedding response size mismatch");
      }
      std::vector<std::vector<double>> out(texts.size());
      std::size_t position = 0;
      for (const auto& item : response["data"]) {
        std::size_t index = item.contains("index") && item["index"].is_number_unsigned()
                                ? item["index"].get<std::size_t>()
                                : position;
        if (index >= out.size() || !item.contains("embedding") ||
            !item["embedding"].is_array() || item["embedding"].empty()) {
          throw RetryableError("embedding response entry malformed");
        }
        out[index] = item["embedding"].get<std::vector<double>>();
        ++position;
      }
      for (auto& v : out) {
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
          throw RetryableError("embedding response has a degenerate vector");
        }
        for (double& x : v) x /= norm;
      }
      return out;
    });
  }
};

}  // namespace maple
