// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sci/core.hpp"
#include "sci/daf.hpp"
#include "sci/modelio.hpp"

namespace sci::gateway {

enum class Mode { Off, Smf, Daf };

std::string_view to_string(Mode mode);
std::optional<Mode> mode_from(std::string_view text);

struct GatewayConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  Mode mode = Mode::Off;
  EndpointConfig protected_endpoint;
  std::optional<EndpointConfig> guard_endpoint;
  std::optional<EndpointConfig> agent_endpoint;
  daf::DafConfig daf_config{};
  std::string audit_log_path;  // empty: in-memory audit only
  FailPolicy fail = FailPolicy::Closed;
  std::optional<std::string> lexicon_overlay;
};

/// Values supplied on the command line; unset fields fall back to environment
/// variables (SCI_MODE, SCI_PROTECTED_URL, SCI_GUARD_URL, SCI_AGENT_URL,
/// SCI_AUDIT_LOG) and then to built-in defaults.
struct CliOverrides {
  std::optional<std::string> listen;
  std::optional<std::string> mode;
  std::optional<std::string> protected_url;
  std::optional<std::string> guard_url;
  std::optional<std::string> agent_url;
  std::optional<std::string> audit_log;
  std::optional<std::string> fail;
  std::optional<std::string> lexicon;
  std::optional<int> t_max;
  std::optional<std::string> protected_model;
  std::optional<std::string> guard_model;
  std::optional<std::string> agent_model;
};

using EnvReader = std::function<std::optional<std::string>(const std::string&)>;

EnvReader system_env();

/// Resolves configuration with precedence flags > environment > defaults and
/// rejects invalid combinations (missing protected endpoint, smf without a
/// guard URL, daf without an agent URL) with Error{ConfigError}.
GatewayConfig load_config(const CliOverrides& flags, const EnvReader& env = system_env());

struct AuditEntry {
  std::string timestamp;    // ISO 8601 UTC
  std::string request_id;
  std::string mode;
  std::string decision;     // block | forward | passthrough | error
  std::string label;        // SMF label or DAF level, empty for off mode
  std::vector<std::string> categories;
  int report_tokens = 0;
  double defense_ms = 0.0;
  double upstream_ms = 0.0;
  int evidence_steps = 0;
};

nlohmann::json audit_to_json(const AuditEntry& entry);

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

/// The gateway: parses inbound chat requests, defends the last user message
/// according to the configured mode and either refuses (finish reason
/// "content_filter", protected model untouched) or forwards the augmented
/// request. Every handled request appends exactly one audit entry through a
/// single serialized writer.
class GatewayService {
 public:
  struct Backends {
    std::shared_ptr<ModelClient> protected_model;
    std::shared_ptr<ModelClient> guard;
    std::shared_ptr<ModelClient> agent;
  };

  /// Builds HTTP clients from the config.
  explicit GatewayService(GatewayConfig config);

  /// Injects backends (tests use mocks here).
  GatewayService(GatewayConfig config, Backends backends);

  ~GatewayService();
  GatewayService(const GatewayService&) = delete;
  GatewayService& operator=(const GatewayService&) = delete;

  /// Handles one parsed chat-completions request.
  HttpResult handle_chat(const nlohmann::json& request);

  std::vector<AuditEntry> audit_entries() const;
  std::size_t audit_size() const;

  /// Serves until stop(); returns false when the listener could not bind.
  bool run();

  /// Starts the listener on a background thread; returns the bound port
  /// (the configured one, or an ephemeral port when configured as 0).
  int start_async();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sci::gateway
