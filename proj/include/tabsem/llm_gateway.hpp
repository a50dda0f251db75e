#pragma once

// Chat-completion client for OpenAI-compatible endpoints plus a scripted mock
// backend for offline, deterministic runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tabsem/errors.hpp"

namespace tabsem {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 4096;

  void validate() const {
    if (messages.empty()) throw InvalidInput("chat request has no messages");
    if (messages.back().role != Role::User) throw InvalidInput("last chat message must have role user");
    if (temperature < 0.0) throw InvalidInput("temperature must be >= 0");
    if (max_output_tokens <= 0) throw InvalidInput("max_output_tokens must be > 0");
  }
};

enum class FinishReason { Stop, Length, Error };

inline std::string_view to_string(FinishReason f) {
  switch (f) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
  }
  return "error";
}

struct Usage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  FinishReason finish_reason = FinishReason::Stop;
  Usage usage;
};

// Scripted playback. The cursor is shared by every copy of the owning
// BackendConfig and is safe to advance from several threads.
class MockScript {
 public:
  explicit MockScript(std::vector<std::string> responses) : responses_(std::move(responses)) {}

  std::string next(const ChatRequest& req) {
    std::lock_guard lock(mu_);
    requests_.push_back(req);
    if (cursor_ >= responses_.size()) throw ScriptExhausted();
    return responses_[cursor_++];
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return requests_.size();
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return responses_.size() - std::min(cursor_, responses_.size());
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> responses_;
  std::size_t cursor_ = 0;
  std::vector<ChatRequest> requests_;
};

// Collects every successful completion so a live run can be replayed later.
class Recording {
 public:
  void add(std::string content) {
    std::lock_guard lock(mu_);
    contents_.push_back(std::move(content));
  }
  std::vector<std::string> contents() const {
    std::lock_guard lock(mu_);
    return contents_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> contents_;
};

enum class BackendKind { Http, Mock };

struct BackendConfig {
  BackendKind backend_kind = BackendKind::Http;
  std::string endpoint_url;
  std::string api_key_env = "TABSEM_API_KEY";
  double timeout_s = 120.0;
  int retries = 2;
  double backoff_initial_s = 0.5;

  // generation parameters used to build requests
  std::string model = "default";
  double temperature = 0.0;
  int max_output_tokens = 4096;

  std::shared_ptr<MockScript> mock;
  std::shared_ptr<Recording> recorder;

  std::string name() const { return backend_kind == BackendKind::Mock ? "mock" : "http:" + model; }

  void validate() const {
    if (retries < 0) throw ConfigError("retries must be >= 0");
    if (timeout_s <= 0) throw ConfigError("timeout must be > 0");
    if (backend_kind == BackendKind::Http && endpoint_url.empty())
      throw ConfigError("http backend requires an endpoint url");
    if (backend_kind == BackendKind::Mock && !mock) throw ConfigError("mock backend has no script");
  }

  ChatRequest request(std::string system, std::string user) const {
    ChatRequest req;
    req.model = model;
    req.temperature = temperature;
    req.max_output_tokens = max_output_tokens;
    if (!system.empty()) req.messages.push_back({Role::System, std::move(system)});
    req.messages.push_back({Role::User, std::move(user)});
    return req;
  }
};

inline BackendConfig mock_script(std::vector<std::string> responses) {
  if (responses.empty()) throw InvalidInput("mock script needs at least one response");
  BackendConfig cfg;
  cfg.backend_kind = BackendKind::Mock;
  cfg.mock = std::make_shared<MockScript>(std::move(responses));
  return cfg;
}

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // base path, no trailing slash
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint url needs a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_begin);
  ep.path = path_begin == std::string::npos ? "" : url.substr(path_begin);
  while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  return ep;
}

inline std::string request_body(const ChatRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = req.model;
  auto& msgs = body["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_output_tokens;
  return body.dump();
}

inline ChatResponse parse_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("response body is not JSON: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw ProtocolError("response has no choices");
  const auto& choice = j["choices"][0];
  ChatResponse out;
  const std::string finish = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                                 ? choice["finish_reason"].get<std::string>()
                                 : "stop";
  out.finish_reason = finish == "stop" ? FinishReason::Stop : finish == "length" ? FinishReason::Length : FinishReason::Error;
  const bool has_content =
      choice.contains("message") && choice["message"].is_object() && choice["message"].contains("content") &&
      choice["message"]["content"].is_string();
  if (has_content)
    out.content = choice["message"]["content"].get<std::string>();
  else if (out.finish_reason != FinishReason::Error)
    throw ProtocolError("response lacks choices[0].message.content");
  if (j.contains("usage") && j["usage"].is_object()) {
    out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
    out.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
  }
  return out;
}

inline ChatResponse complete_http(const BackendConfig& cfg, const ChatRequest& req) {
  const auto ep = split_endpoint(cfg.endpoint_url);
  const auto body = request_body(req);
  httplib::Headers headers;
  // read at call time, never stored
  if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const auto seconds = std::chrono::duration<double>(cfg.timeout_s);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(seconds);

  std::string last_failure;
  bool rate_limited = false;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    if (attempt > 0) {
      const double delay = cfg.backoff_initial_s * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto res = client.Post(ep.path + "/chat/completions", headers, body, "application/json");
    if (!res) {
      last_failure = "transport failure: " + httplib::to_string(res.error());
      rate_limited = false;
      continue;
    }
    const int status = res->status;
    if (status >= 200 && status < 300) return parse_response(res->body);
    if (status == 401 || status == 403) throw AuthError(status);
    if (status == 429) {
      rate_limited = true;
      continue;
    }
    if (status >= 500) {
      rate_limited = false;
      last_failure = "server error HTTP " + std::to_string(status);
      continue;
    }
    throw ProtocolError("request rejected with HTTP " + std::to_string(status));
  }
  if (rate_limited) throw RateLimited();
  throw TransportError(last_failure + " (after " + std::to_string(cfg.retries) + " retries)");
}

}  // namespace detail

inline ChatResponse complete(const BackendConfig& cfg, const ChatRequest& req) {
  cfg.validate();
  req.validate();
  ChatResponse res;
  if (cfg.backend_kind == BackendKind::Mock) {
    res.content = cfg.mock->next(req);
  } else {
    res = detail::complete_http(cfg, req);
  }
  if (cfg.recorder) cfg.recorder->add(res.content);
  return res;
}

}  // namespace tabsem
