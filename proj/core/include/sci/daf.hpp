// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sci/core.hpp"
#include "sci/modelio.hpp"

namespace sci::daf {

// ---------------------------------------------------------------------------
// Evidence and agent actions
// ---------------------------------------------------------------------------

/// One tool observation. Steps are 1-based and strictly increasing within a
/// log; the log itself is append-only.
struct Evidence {
  int step = 0;
  std::string tool;
  nlohmann::json payload;
  std::string summary;
  bool tool_error = false;
};

using EvidenceLog = std::vector<Evidence>;

struct InvokeTool {
  std::string tool;
  nlohmann::json arguments;
};

struct FinalizeFields {
  DafLevel level = DafLevel::Suspicious;
  double confidence = 0.0;
  CategorySet categories;
  std::string analysis;
  RecommendedAction action = RecommendedAction::Flag;
};

using AgentAction = std::variant<InvokeTool, FinalizeFields>;

/// Agent loop settings. An empty enabled_tools set means "everything the
/// registry offers".
struct DafConfig {
  int t_max = 5;
  std::set<std::string> enabled_tools;
  CategorySet mandatory_check{RiskCategory::ViolentContent, RiskCategory::SuicideAndSelfHarm,
                              RiskCategory::NonViolentIllegalActs};
  int malformed_retries = 2;
};

// ---------------------------------------------------------------------------
// Pattern lexicon
// ---------------------------------------------------------------------------

struct LexiconEntry {
  std::string pattern;  // case-insensitive regex
  RiskCategory category = RiskCategory::Jailbreak;
  std::string id;
};

/// Versioned collection of heuristic patterns. Ships with a built-in set;
/// overlay files use the line format `pattern<TAB>category<TAB>id` (UTF-8,
/// `#` comments, blank lines ignored).
class PatternLexicon {
 public:
  static PatternLexicon builtin();
  static PatternLexicon from_entries(std::vector<LexiconEntry> entries, std::string version);

  /// Appends entries from an overlay file. Throws Error{ParseError} naming
  /// the offending line on malformed input.
  void load_overlay(const std::filesystem::path& path);

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const std::string& version() const { return version_; }

 private:
  std::vector<LexiconEntry> entries_;
  std::string version_;
};

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

/// Uniform tool result: a structured payload plus a one-line summary.
struct ToolOutput {
  nlohmann::json payload;
  std::string summary;
  bool error = false;
};

/// Shallow structural analysis: entity spans (maximal capitalized-token runs
/// and double-quoted phrases) and (subject, verb, object) triples from a
/// fixed verb lexicon. Deterministic; empty query gives empty lists.
ToolOutput entity_analysis(const std::string& query);

/// Scans the query against every lexicon entry; reports all matches with
/// byte offsets.
ToolOutput pattern_detect(const std::string& query, const PatternLexicon& lexicon);

/// Remote discriminative classifier: expects a JSON object of label->score in
/// the endpoint reply. Scores are clamped into [0,1] and clamping is flagged.
ToolOutput classifier_scores(const std::string& query, ModelClient& endpoint);

/// Remote zero-shot scorer over an explicit label set (order preserved).
/// The default label set is the ten risk-category display names.
ToolOutput zero_shot_scores(const std::string& query, const std::vector<std::string>& labels,
                            ModelClient& endpoint);

const std::vector<std::string>& default_zero_shot_labels();

/// Name -> tool dispatch used by the agent loop. Endpoint failures inside a
/// tool surface as error-flagged evidence, not exceptions, so the loop keeps
/// running.
class ToolRegistry {
 public:
  using ToolFn = std::function<ToolOutput(const std::string& query, const nlohmann::json& args)>;

  void register_tool(std::string name, std::string description, ToolFn fn);
  bool has(const std::string& name) const;
  ToolOutput run(const std::string& name, const std::string& query,
                 const nlohmann::json& args) const;

  /// (name, description) pairs in registration order, for the agent prompt.
  std::vector<std::pair<std::string, std::string>> catalog() const;

  /// The standard suite: entity_analysis and pattern_detector always;
  /// classifier and zero_shot_classifier only when a classifier backend is
  /// supplied.
  static ToolRegistry standard(PatternLexicon lexicon, ModelClient* classifier_backend = nullptr);

 private:
  struct Entry {
    std::string description;
    ToolFn fn;
  };
  std::vector<std::string> order_;
  std::map<std::string, Entry> tools_;
};

// ---------------------------------------------------------------------------
// Agent loop
// ---------------------------------------------------------------------------

/// Extracts the first balanced JSON object from free-form agent text and
/// validates it into an action. Throws Error{MalformedAction} on anything
/// else (no object, unknown action, missing or out-of-range fields).
AgentAction parse_agent_action(std::string_view text);

enum class FinalizeSource { Agent, Forced, Synthesized };

struct LoopResult {
  EvidenceLog evidence;
  FinalizeFields fields;
  FinalizeSource source = FinalizeSource::Agent;
  int agent_calls = 0;
  std::optional<TokenUsage> finalize_usage;
};

/// System prompt for the analyst agent: role, tool catalog and the one-action
/// wire format.
std::string agent_system_prompt(const ToolRegistry& registry, const DafConfig& config);

/// Runs the evidence-gathering loop: up to t_max tool steps, each malformed
/// reply consuming a retry rather than a step. When the step budget runs out
/// one forced finalize prompt is issued; if that fails too (or the endpoint
/// is down) a conservative (SUSPICIOUS, 0.5, {none}, FLAG) result is
/// synthesized so a dead analyst neither allows nor hard-blocks traffic.
LoopResult run_agent_loop(const std::string& query, ModelClient& agent, const DafConfig& config,
                          const ToolRegistry& registry);

/// Applies the standardization rules to the agent's recommendation:
/// UNSAFE+ALLOW escalates to FLAG, and ALLOW with any mandatory-check
/// category escalates to FLAG. BLOCK is never downgraded.
RecommendedAction map_recommendation(const FinalizeFields& fields, const DafConfig& config);

/// Renders the fixed eight-line report frame. The analysis is collapsed to a
/// single line; empty category sets normalize to {none}.
SafetyReport synthesize_report(const FinalizeFields& fields, const EvidenceLog& evidence);

/// Parses text produced by synthesize_report; nullopt when the frame is off.
std::optional<FinalizeFields> parse_report(std::string_view rendered);

/// Full pipeline: loop, recommendation mapping, then Block (refusal) or
/// Forward (report prepended to the query). The rendered report carries the
/// post-mapping effective action.
Decision defend(const std::string& query, ModelClient& agent, const DafConfig& config,
                const ToolRegistry& registry, LoopResult* trace = nullptr);

}  // namespace sci::daf
