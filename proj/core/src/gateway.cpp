// SPDX-License-Identifier: Apache-2.0
#include "sci/gateway.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "sci/smf.hpp"

namespace sci::gateway {
namespace {

using nlohmann::json;

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

json error_body(const std::string& message, const std::string& type) {
  return json{{"error", {{"message", message}, {"type", type}}}};
}

// Index of the last user message, or npos.
std::size_t last_user_index(const json& messages) {
  for (std::size_t i = messages.size(); i > 0; --i) {
    const json& m = messages[i - 1];
    if (m.is_object() && m.value("role", "") == "user" && m.contains("content") &&
        m["content"].is_string()) {
      return i - 1;
    }
  }
  return std::string::npos;
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Off: return "off";
    case Mode::Smf: return "smf";
    case Mode::Daf: return "daf";
  }
  return "off";
}

std::optional<Mode> mode_from(std::string_view text) {
  const std::string t = to_lower(text);
  if (t == "off") return Mode::Off;
  if (t == "smf") return Mode::Smf;
  if (t == "daf") return Mode::Daf;
  return std::nullopt;
}

EnvReader system_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* value = std::getenv(name.c_str());
    if (value == nullptr || *value == '\0') return std::nullopt;
    return std::string(value);
  };
}

GatewayConfig load_config(const CliOverrides& flags, const EnvReader& env) {
  auto pick = [&](const std::optional<std::string>& flag,
                  const char* env_name) -> std::optional<std::string> {
    if (flag.has_value()) return flag;
    if (env_name != nullptr) return env(env_name);
    return std::nullopt;
  };

  GatewayConfig config;

  if (const auto listen = pick(flags.listen, nullptr); listen.has_value()) {
    const std::size_t colon = listen->rfind(':');
    if (colon == std::string::npos || colon + 1 >= listen->size()) {
      throw Error(ErrorCode::ConfigError, "--listen expects host:port, got '" + *listen + "'");
    }
    config.listen_host = listen->substr(0, colon);
    try {
      config.listen_port = std::stoi(listen->substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "invalid listen port in '" + *listen + "'");
    }
    if (config.listen_port < 0 || config.listen_port > 65535) {
      throw Error(ErrorCode::ConfigError, "listen port out of range");
    }
  }

  if (const auto mode = pick(flags.mode, "SCI_MODE"); mode.has_value()) {
    const auto parsed = mode_from(*mode);
    if (!parsed.has_value()) {
      throw Error(ErrorCode::ConfigError, "mode must be off|smf|daf, got '" + *mode + "'");
    }
    config.mode = *parsed;
  }

  const auto protected_url = pick(flags.protected_url, "SCI_PROTECTED_URL");
  if (!protected_url.has_value()) {
    throw Error(ErrorCode::ConfigError,
                "a protected endpoint is required (--protected-url or SCI_PROTECTED_URL)");
  }
  config.protected_endpoint.base_url = *protected_url;
  config.protected_endpoint.model_name = flags.protected_model.value_or("protected");
  config.protected_endpoint.api_key = env_api_key("protected");

  if (const auto guard_url = pick(flags.guard_url, "SCI_GUARD_URL"); guard_url.has_value()) {
    EndpointConfig guard;
    guard.base_url = *guard_url;
    guard.model_name = flags.guard_model.value_or("guard");
    guard.temperature = 0.0;
    guard.api_key = env_api_key("guard");
    config.guard_endpoint = guard;
  }
  if (const auto agent_url = pick(flags.agent_url, "SCI_AGENT_URL"); agent_url.has_value()) {
    EndpointConfig agent;
    agent.base_url = *agent_url;
    agent.model_name = flags.agent_model.value_or("agent");
    agent.temperature = 0.0;
    agent.api_key = env_api_key("agent");
    config.agent_endpoint = agent;
  }

  if (const auto audit = pick(flags.audit_log, "SCI_AUDIT_LOG"); audit.has_value()) {
    config.audit_log_path = *audit;
  }
  if (const auto fail = pick(flags.fail, nullptr); fail.has_value()) {
    const std::string f = to_lower(*fail);
    if (f == "closed") {
      config.fail = FailPolicy::Closed;
    } else if (f == "open") {
      config.fail = FailPolicy::Open;
    } else {
      throw Error(ErrorCode::ConfigError, "--fail must be closed or open");
    }
  }
  if (flags.t_max.has_value()) {
    if (*flags.t_max < 1) {
      throw Error(ErrorCode::ConfigError, "--t-max must be >= 1");
    }
    config.daf_config.t_max = *flags.t_max;
  }
  config.lexicon_overlay = flags.lexicon;

  if (config.mode == Mode::Smf && !config.guard_endpoint.has_value()) {
    throw Error(ErrorCode::ConfigError, "mode smf requires --guard-url or SCI_GUARD_URL");
  }
  if (config.mode == Mode::Daf && !config.agent_endpoint.has_value()) {
    throw Error(ErrorCode::ConfigError, "mode daf requires --agent-url or SCI_AGENT_URL");
  }
  return config;
}

json audit_to_json(const AuditEntry& entry) {
  nlohmann::ordered_json obj;
  obj["ts"] = entry.timestamp;
  obj["id"] = entry.request_id;
  obj["mode"] = entry.mode;
  obj["decision"] = entry.decision;
  obj["label"] = entry.label;
  obj["categories"] = entry.categories;
  obj["report_tokens"] = entry.report_tokens;
  obj["latency_ms"] = {{"defense", entry.defense_ms}, {"upstream", entry.upstream_ms}};
  obj["evidence_steps"] = entry.evidence_steps;
  return obj;
}

// ---------------------------------------------------------------------------
// GatewayService
// ---------------------------------------------------------------------------

struct GatewayService::Impl {
  GatewayConfig config;
  Backends backends;
  daf::ToolRegistry tools;

  mutable std::mutex audit_mutex;
  std::vector<AuditEntry> audit;
  std::ofstream audit_file;

  std::atomic<std::uint64_t> next_request_id{1};

  httplib::Server server;
  std::thread server_thread;
  std::atomic<bool> running{false};

  explicit Impl(GatewayConfig cfg, Backends injected) : config(std::move(cfg)) {
    if (injected.protected_model) {
      backends = std::move(injected);
    } else {
      backends.protected_model =
          std::make_shared<HttpModelClient>(config.protected_endpoint);
      if (config.guard_endpoint.has_value()) {
        backends.guard = std::make_shared<HttpModelClient>(*config.guard_endpoint);
      }
      if (config.agent_endpoint.has_value()) {
        backends.agent = std::make_shared<HttpModelClient>(*config.agent_endpoint);
      }
    }

    daf::PatternLexicon lexicon = daf::PatternLexicon::builtin();
    if (config.lexicon_overlay.has_value()) {
      lexicon.load_overlay(*config.lexicon_overlay);
    }
    tools = daf::ToolRegistry::standard(std::move(lexicon));

    if (!config.audit_log_path.empty()) {
      audit_file.open(config.audit_log_path, std::ios::app);
      if (!audit_file) {
        throw Error(ErrorCode::IoError,
                    "cannot open audit log: " + config.audit_log_path);
      }
    }
  }

  void append_audit(AuditEntry entry) {
    std::lock_guard lock(audit_mutex);
    if (audit_file.is_open()) {
      audit_file << audit_to_json(entry).dump() << '\n';
      audit_file.flush();
    }
    audit.push_back(std::move(entry));
  }

  std::string fresh_request_id() {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "req-%06llu",
                  static_cast<unsigned long long>(next_request_id.fetch_add(1)));
    return buf;
  }

  json upstream_response_body(const std::string& request_id, const std::string& model,
                              const ChatExchange& exchange, const std::string& finish_reason) {
    json message = {{"role", "assistant"}, {"content", exchange.output}};
    if (exchange.reasoning.has_value()) {
      message["reasoning_content"] = *exchange.reasoning;
    }
    json body = {
        {"id", request_id},
        {"object", "chat.completion"},
        {"created",
         std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
             .count()},
        {"model", model},
        {"choices",
         json::array({json{{"index", 0}, {"message", message}, {"finish_reason", finish_reason}}})},
    };
    if (exchange.usage.has_value()) {
      body["usage"] = {{"prompt_tokens", exchange.usage->prompt_tokens},
                       {"completion_tokens", exchange.usage->completion_tokens}};
    }
    return body;
  }

  json refusal_response_body(const std::string& request_id, const std::string& model,
                             const std::string& refusal) {
    ChatExchange refusal_exchange;
    refusal_exchange.output = refusal;
    return upstream_response_body(request_id, model, refusal_exchange, "content_filter");
  }

  HttpResult handle_chat(const json& request) {
    const std::string request_id = fresh_request_id();
    if (!request.is_object() || !request.contains("messages") ||
        !request["messages"].is_array() || request["messages"].empty()) {
      return {400, error_body("request must carry a messages array", "invalid_request_error")};
    }
    const json& messages = request["messages"];
    const std::size_t user_index = last_user_index(messages);
    if (user_index == std::string::npos) {
      return {400, error_body("request has no user message", "invalid_request_error")};
    }
    const std::string query = messages[user_index]["content"].get<std::string>();
    if (query.empty()) {
      return {400, error_body("user message is empty", "invalid_request_error")};
    }
    const std::string model = request.value("model", config.protected_endpoint.model_name);
    std::optional<double> temperature;
    if (request.contains("temperature") && request["temperature"].is_number()) {
      temperature = request["temperature"].get<double>();
    }

    AuditEntry entry;
    entry.timestamp = iso8601_now();
    entry.request_id = request_id;
    entry.mode = std::string(to_string(config.mode));

    ChatRequestData upstream;
    upstream.temperature = temperature;
    for (const json& m : messages) {
      if (m.is_object() && m.contains("role") && m.contains("content") &&
          m["content"].is_string()) {
        upstream.messages.push_back(
            {m.value("role", "user"), m["content"].get<std::string>()});
      }
    }
    // Position of the defended message inside the forwarded list.
    std::size_t forward_index = 0;
    for (std::size_t i = 0, kept = 0; i < messages.size(); ++i) {
      const json& m = messages[i];
      if (m.is_object() && m.contains("role") && m.contains("content") &&
          m["content"].is_string()) {
        if (i == user_index) forward_index = kept;
        ++kept;
      }
    }

    const auto defense_start = std::chrono::steady_clock::now();
    std::optional<Decision> decision;
    try {
      switch (config.mode) {
        case Mode::Off:
          entry.decision = "passthrough";
          break;
        case Mode::Smf: {
          smf::DefendTrace trace;
          decision = smf::defend(query, *backends.guard, config.fail, &trace);
          entry.label = trace.guard_unavailable
                            ? "unavailable"
                            : std::string(to_string(trace.assessment.label));
          break;
        }
        case Mode::Daf: {
          daf::LoopResult trace;
          decision = daf::defend(query, *backends.agent, config.daf_config, tools, &trace);
          entry.label = std::string(to_string(trace.fields.level));
          entry.evidence_steps = static_cast<int>(trace.evidence.size());
          break;
        }
      }
    } catch (const Error&) {
      // Defender failed outside its own fallback paths: the fail policy
      // decides between refusing and passing through.
      if (config.fail == FailPolicy::Closed) {
        entry.decision = "block";
        entry.label = "error";
        entry.defense_ms = elapsed_ms(defense_start);
        append_audit(std::move(entry));
        return {200, refusal_response_body(request_id, model, render_refusal(CategorySet{}))};
      }
      decision.reset();
      entry.decision = "passthrough";
      entry.label = "error";
    }
    entry.defense_ms = elapsed_ms(defense_start);

    if (decision.has_value() && is_block(*decision)) {
      const auto& block = std::get<BlockDecision>(*decision);
      entry.decision = "block";
      for (RiskCategory c : block.categories.values()) {
        entry.categories.emplace_back(display_name(c));
      }
      append_audit(std::move(entry));
      return {200, refusal_response_body(request_id, model, block.refusal)};
    }

    if (decision.has_value()) {
      const auto& forward = std::get<ForwardDecision>(*decision);
      entry.decision = "forward";
      for (RiskCategory c : forward.report.categories.values()) {
        entry.categories.emplace_back(display_name(c));
      }
      entry.report_tokens = whitespace_token_count(forward.report.rendered);
      upstream.messages[forward_index].content = forward.augmented_query;
    }

    const auto upstream_start = std::chrono::steady_clock::now();
    ChatExchange exchange;
    try {
      exchange = backends.protected_model->chat(upstream);
    } catch (const Error& e) {
      entry.upstream_ms = elapsed_ms(upstream_start);
      entry.decision = "error";
      append_audit(std::move(entry));
      return {502, error_body(std::string("protected endpoint unavailable: ") + e.what(),
                              "upstream_error")};
    }
    entry.upstream_ms = elapsed_ms(upstream_start);
    append_audit(std::move(entry));
    return {200, upstream_response_body(request_id, model, exchange, "stop")};
  }
};

GatewayService::GatewayService(GatewayConfig config)
    : impl_(std::make_unique<Impl>(std::move(config), Backends{})) {}

GatewayService::GatewayService(GatewayConfig config, Backends backends)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(backends))) {}

GatewayService::~GatewayService() { stop(); }

HttpResult GatewayService::handle_chat(const nlohmann::json& request) {
  return impl_->handle_chat(request);
}

std::vector<AuditEntry> GatewayService::audit_entries() const {
  std::lock_guard lock(impl_->audit_mutex);
  return impl_->audit;
}

std::size_t GatewayService::audit_size() const {
  std::lock_guard lock(impl_->audit_mutex);
  return impl_->audit.size();
}

namespace {

void install_routes(httplib::Server& server, GatewayService* service) {
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  server.Post("/v1/chat/completions",
              [service](const httplib::Request& req, httplib::Response& res) {
                const json body = json::parse(req.body, nullptr, false);
                if (body.is_discarded()) {
                  res.status = 400;
                  res.set_content(
                      error_body("request body is not valid JSON", "invalid_request_error")
                          .dump(),
                      "application/json");
                  return;
                }
                const HttpResult result = service->handle_chat(body);
                res.status = result.status;
                res.set_content(result.body.dump(), "application/json");
              });
}

}  // namespace

bool GatewayService::run() {
  install_routes(impl_->server, this);
  impl_->running = true;
  const bool ok =
      impl_->server.listen(impl_->config.listen_host, impl_->config.listen_port);
  impl_->running = false;
  return ok;
}

int GatewayService::start_async() {
  install_routes(impl_->server, this);
  int port = impl_->config.listen_port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.listen_host);
    if (port < 0) {
      throw Error(ErrorCode::IoError, "cannot bind listener");
    }
  } else if (!impl_->server.bind_to_port(impl_->config.listen_host, port)) {
    throw Error(ErrorCode::IoError, "cannot bind listener on port " + std::to_string(port));
  }
  impl_->running = true;
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void GatewayService::stop() {
  if (impl_ == nullptr) return;
  if (impl_->running.exchange(false)) {
    impl_->server.stop();
  }
  if (impl_->server_thread.joinable()) {
    impl_->server_thread.join();
  }
}

}  // namespace sci::gateway
