// SPDX-License-Identifier: Apache-2.0
#include "sci/modelio.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace sci {
namespace {

using nlohmann::json;

const Message* last_user_message(const std::vector<Message>& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == "user") return &*it;
  }
  return nullptr;
}

void validate_chat_request(const ChatRequestData& request) {
  const Message* user = last_user_message(request.messages);
  if (user == nullptr || user->content.empty()) {
    throw Error(ErrorCode::InvalidInput, "chat: a non-empty user message is required");
  }
}

std::optional<TokenUsage> parse_usage(const json& body) {
  if (!body.contains("usage") || !body["usage"].is_object()) return std::nullopt;
  const json& u = body["usage"];
  TokenUsage usage;
  usage.prompt_tokens = u.value("prompt_tokens", 0);
  usage.completion_tokens = u.value("completion_tokens", 0);
  return usage;
}

}  // namespace

std::optional<std::string> env_api_key(const std::string& role) {
  std::string var = "SCI_API_KEY_";
  for (unsigned char c : role) var += static_cast<char>(std::toupper(c));
  const char* value = std::getenv(var.c_str());
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

ChatExchange ModelClient::chat(const ChatRequestData& request) {
  validate_chat_request(request);
  for (int attempt = 0;; ++attempt) {
    try {
      ChatExchange exchange = chat_attempt(request);
      exchange.query = last_user_message(request.messages)->content;
      return exchange;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EndpointUnavailable || attempt >= config_.max_retries) {
        throw;
      }
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_base_ms * (1LL << attempt)));
    }
  }
}

ChatExchange ModelClient::chat(const std::optional<std::string>& system,
                               const std::string& user) {
  ChatRequestData request;
  if (system.has_value()) request.messages.push_back({"system", *system});
  request.messages.push_back({"user", user});
  return chat(request);
}

std::vector<std::vector<double>> ModelClient::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) {
    throw Error(ErrorCode::InvalidInput, "embed: texts must be non-empty");
  }
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::InvalidInput, "embed: empty text in batch");
  }

  std::vector<std::vector<double>> vectors;
  for (int attempt = 0;; ++attempt) {
    try {
      vectors = embed_attempt(texts);
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EndpointUnavailable || attempt >= config_.max_retries) {
        throw;
      }
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_base_ms * (1LL << attempt)));
    }
  }

  if (vectors.size() != texts.size()) {
    throw Error(ErrorCode::MalformedResponse, "embed: vector count mismatch");
  }
  const std::size_t dim = vectors.empty() ? 0 : vectors.front().size();
  for (auto& v : vectors) {
    if (v.size() != dim || dim == 0) {
      throw Error(ErrorCode::MalformedResponse, "embed: dimension mismatch in batch");
    }
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0 || !std::isfinite(norm)) {
      throw Error(ErrorCode::MalformedResponse, "embed: non-normalizable vector");
    }
    if (std::fabs(norm - 1.0) > 1e-6) {
      for (double& x : v) x /= norm;
    }
  }
  return vectors;
}

// ---------------------------------------------------------------------------
// HttpModelClient
// ---------------------------------------------------------------------------

HttpModelClient::HttpModelClient(EndpointConfig config) : ModelClient(std::move(config)) {}

namespace {

std::unique_ptr<httplib::Client> make_http_client(const EndpointConfig& config) {
  auto client = std::make_unique<httplib::Client>(config.base_url);
  const auto timeout = std::chrono::duration<double>(config.timeout_s);
  client->set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client->set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client->set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  if (config.api_key.has_value()) {
    client->set_default_headers({{"Authorization", "Bearer " + *config.api_key}});
  }
  return client;
}

json post_json(const EndpointConfig& config, const std::string& path, const json& payload) {
  // One connection per call keeps the client safe under concurrent use.
  auto client = make_http_client(config);
  auto result = client->Post(path, payload.dump(), "application/json");
  if (!result) {
    throw Error(ErrorCode::EndpointUnavailable,
                "transport failure for " + config.base_url + path + ": " +
                    httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw Error(ErrorCode::EndpointUnavailable,
                "HTTP " + std::to_string(result->status) + " from " + config.base_url + path);
  }
  if (result->body.empty()) {
    throw Error(ErrorCode::MalformedResponse, "empty response body from " + path);
  }
  json body = json::parse(result->body, nullptr, false);
  if (body.is_discarded()) {
    throw Error(ErrorCode::MalformedResponse, "response is not valid JSON from " + path);
  }
  return body;
}

}  // namespace

ChatExchange HttpModelClient::chat_attempt(const ChatRequestData& request) {
  json payload;
  payload["model"] = config_.model_name;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  payload["messages"] = std::move(messages);
  if (request.temperature.has_value()) {
    payload["temperature"] = *request.temperature;
  } else if (config_.temperature.has_value()) {
    payload["temperature"] = *config_.temperature;
  }

  const json body = post_json(config_, "/v1/chat/completions", payload);
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw Error(ErrorCode::MalformedResponse, "chat response has no choices");
  }
  const json& message = body["choices"][0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw Error(ErrorCode::MalformedResponse, "chat response has no message content");
  }

  ChatExchange exchange;
  exchange.output = message["content"].get<std::string>();
  if (message.contains("reasoning_content") && message["reasoning_content"].is_string()) {
    exchange.reasoning = message["reasoning_content"].get<std::string>();
  }
  exchange.usage = parse_usage(body);
  return exchange;
}

std::vector<std::vector<double>> HttpModelClient::embed_attempt(
    const std::vector<std::string>& texts) {
  json payload;
  payload["model"] = config_.model_name;
  payload["input"] = texts;

  const json body = post_json(config_, "/v1/embeddings", payload);
  if (!body.contains("data") || !body["data"].is_array()) {
    throw Error(ErrorCode::MalformedResponse, "embeddings response has no data array");
  }

  // Entries are returned in input order; honor an explicit index when given.
  std::vector<std::vector<double>> vectors(body["data"].size());
  std::size_t position = 0;
  for (const json& item : body["data"]) {
    if (!item.contains("embedding") || !item["embedding"].is_array()) {
      throw Error(ErrorCode::MalformedResponse, "embeddings entry has no vector");
    }
    const std::size_t index = item.value("index", position);
    if (index >= vectors.size()) {
      throw Error(ErrorCode::MalformedResponse, "embeddings index out of range");
    }
    vectors[index] = item["embedding"].get<std::vector<double>>();
    ++position;
  }
  return vectors;
}

// ---------------------------------------------------------------------------
// MockModelClient
// ---------------------------------------------------------------------------

EndpointConfig MockModelClient::mock_endpoint() {
  EndpointConfig config;
  config.base_url = "mock://local";
  config.model_name = "mock";
  config.backoff_base_ms = 1;  // keep scripted retry tests fast
  return config;
}

MockModelClient::MockModelClient(std::vector<MockRule> script, EndpointConfig config)
    : ModelClient(std::move(config)),
      script_(std::move(script)),
      consumed_(script_.size(), false) {}

int MockModelClient::chat_calls() const {
  std::lock_guard lock(mutex_);
  return chat_calls_;
}

int MockModelClient::embed_calls() const {
  std::lock_guard lock(mutex_);
  return embed_calls_;
}

void MockModelClient::fail_next(int n) {
  std::lock_guard lock(mutex_);
  failures_pending_ = n;
}

std::vector<ChatRequestData> MockModelClient::captured() const {
  std::lock_guard lock(mutex_);
  return captured_;
}

void MockModelClient::set_embedder(
    std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)> fn) {
  std::lock_guard lock(mutex_);
  embedder_ = std::move(fn);
}

ChatExchange MockModelClient::chat_attempt(const ChatRequestData& request) {
  std::lock_guard lock(mutex_);
  ++chat_calls_;
  captured_.push_back(request);

  if (failures_pending_ > 0) {
    --failures_pending_;
    throw Error(ErrorCode::EndpointUnavailable, "mock: injected transport failure");
  }

  const Message* user = last_user_message(request.messages);
  const std::string& content = user ? user->content : std::string();

  auto matches = [&content](const MockRule& rule) {
    return rule.matcher == "*" || content.find(rule.matcher) != std::string::npos;
  };

  const MockRule* chosen = nullptr;
  for (std::size_t i = 0; i < script_.size(); ++i) {
    if (!matches(script_[i])) continue;
    if (!consumed_[i]) {
      consumed_[i] = true;
      chosen = &script_[i];
      break;
    }
    chosen = &script_[i];  // sticky: last matching rule keeps answering
  }
  if (chosen == nullptr) {
    throw Error(ErrorCode::MalformedResponse, "mock: no scripted rule matches request");
  }

  ChatExchange exchange;
  exchange.output = chosen->response;
  exchange.reasoning = chosen->reasoning;
  exchange.usage = chosen->usage;
  return exchange;
}

std::vector<std::vector<double>> MockModelClient::embed_attempt(
    const std::vector<std::string>& texts) {
  std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)> fn;
  {
    std::lock_guard lock(mutex_);
    ++embed_calls_;
    fn = embedder_;
  }
  if (fn) return fn(texts);

  // Deterministic fallback: hash each text into an 8-dim unit vector.
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::vector<double> v(8);
    for (auto& x : v) {
      h ^= h >> 33;
      h *= 0xff51afd7ed558ccdULL;
      h ^= h >> 33;
      x = static_cast<double>(h % 2000) / 1000.0 - 1.0;
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace sci
