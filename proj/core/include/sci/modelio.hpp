// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sci/core.hpp"

namespace sci {

/// Connection settings for one remote model role.
struct EndpointConfig {
  std::string base_url;
  std::string model_name;
  std::optional<std::string> api_key;
  double timeout_s = 30.0;
  int max_retries = 2;
  std::optional<double> temperature;
  int backoff_base_ms = 250;  // backoff = base * 2^attempt, jitter-free
};

struct Message {
  std::string role;
  std::string content;
};

struct ChatRequestData {
  std::vector<Message> messages;
  std::optional<double> temperature;  // overrides EndpointConfig::temperature
};

/// Reads SCI_API_KEY_<ROLE> (role upper-cased), e.g. SCI_API_KEY_GUARD.
std::optional<std::string> env_api_key(const std::string& role);

/// Abstract client over the chat-completions / embeddings wire protocol.
/// chat() and embed() retry transient transport failures with exponential
/// backoff before surfacing Error{EndpointUnavailable}. Implementations keep
/// no per-call mutable state, so one client may serve concurrent requests.
class ModelClient {
 public:
  virtual ~ModelClient() = default;

  ChatExchange chat(const ChatRequestData& request);
  ChatExchange chat(const std::optional<std::string>& system, const std::string& user);

  /// One L2-normalized vector per input text, all of equal dimension.
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

  const EndpointConfig& config() const { return config_; }

 protected:
  explicit ModelClient(EndpointConfig config) : config_(std::move(config)) {}

  virtual ChatExchange chat_attempt(const ChatRequestData& request) = 0;
  virtual std::vector<std::vector<double>> embed_attempt(
      const std::vector<std::string>& texts) = 0;

  EndpointConfig config_;
};

/// Client for OpenAI-compatible endpoints: POST {base-url}/v1/chat/completions
/// and POST {base-url}/v1/embeddings. Parses only the minimal field subset
/// (first choice content, optional reasoning_content, optional usage).
class HttpModelClient final : public ModelClient {
 public:
  explicit HttpModelClient(EndpointConfig config);

 protected:
  ChatExchange chat_attempt(const ChatRequestData& request) override;
  std::vector<std::vector<double>> embed_attempt(
      const std::vector<std::string>& texts) override;
};

/// One scripted reply. The matcher is a case-sensitive substring checked
/// against the last user message, or "*" to match anything.
struct MockRule {
  std::string matcher;
  std::string response;
  std::optional<std::string> reasoning;
  std::optional<TokenUsage> usage;

  MockRule() = default;
  MockRule(std::string matcher_text, std::string response_text,
           std::optional<std::string> reasoning_text = std::nullopt,
           std::optional<TokenUsage> usage_counts = std::nullopt)
      : matcher(std::move(matcher_text)),
        response(std::move(response_text)),
        reasoning(std::move(reasoning_text)),
        usage(usage_counts) {}
};

/// Fully scripted in-process client for hermetic tests. Rules are consumed in
/// order: a call takes the first unconsumed matching rule; once all matching
/// rules are spent, the last matching rule keeps answering. Counters count
/// every attempt that reaches the mock, including injected failures.
class MockModelClient final : public ModelClient {
 public:
  explicit MockModelClient(std::vector<MockRule> script, EndpointConfig config = mock_endpoint());
  MockModelClient(std::initializer_list<MockRule> script)
      : MockModelClient(std::vector<MockRule>(script)) {}

  static EndpointConfig mock_endpoint();

  int chat_calls() const;
  int embed_calls() const;

  /// The next `n` chat attempts fail with a transport error.
  void fail_next(int n);

  /// Every chat request seen, in arrival order.
  std::vector<ChatRequestData> captured() const;

  /// Replaces the embedding script. The default derives a deterministic
  /// unit vector (dimension 8) from a hash of each text.
  void set_embedder(
      std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)> fn);

 protected:
  ChatExchange chat_attempt(const ChatRequestData& request) override;
  std::vector<std::vector<double>> embed_attempt(
      const std::vector<std::string>& texts) override;

 private:
  mutable std::mutex mutex_;
  std::vector<MockRule> script_;
  std::vector<bool> consumed_;
  std::vector<ChatRequestData> captured_;
  std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)> embedder_;
  int chat_calls_ = 0;
  int embed_calls_ = 0;
  int failures_pending_ = 0;
};

}  // namespace sci
