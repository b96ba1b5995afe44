// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sci {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  InvalidInput,
  EndpointUnavailable,
  MalformedResponse,
  MalformedAction,
  ParseError,
  DuplicateId,
  DegenerateSample,
  DegenerateInput,
  IoError,
  ConfigError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Risk categories
// ---------------------------------------------------------------------------

/// Closed universe of risk categories. The enumeration order is the canonical
/// display order used everywhere lists of categories are rendered.
enum class RiskCategory : std::uint8_t {
  ViolentContent,
  NonViolentIllegalActs,
  SexualContent,
  PersonallyIdentifiableInformation,
  SuicideAndSelfHarm,
  UnethicalActs,
  PoliticallySensitiveTopics,
  CopyrightViolation,
  Jailbreak,
  None,
};

inline constexpr int kRiskCategoryCount = 10;

/// Canonical lower-case display name, e.g. "non-violent illegal acts".
std::string_view display_name(RiskCategory category);

/// All ten categories in canonical order.
const std::vector<RiskCategory>& all_risk_categories();

/// Alias-tolerant lookup: accepts display names, kebab/underscore ids and a
/// fixed table of common synonyms ("violence", "pii", ...). Case-insensitive.
std::optional<RiskCategory> lookup_category(std::string_view token);

/// Folds case and collapses separator runs so alias comparison is stable:
/// "Non-Violent_Illegal Acts" -> "non violent illegal acts".
std::string normalize_token(std::string_view token);

/// Set of risk categories that maintains the exclusivity of `none`: a set
/// holding `none` never holds anything else. Inserting a real category drops
/// `none`; inserting `none` into a non-empty set is a no-op.
class CategorySet {
 public:
  CategorySet() = default;
  CategorySet(std::initializer_list<RiskCategory> categories);

  /// Returns true when the set changed.
  bool insert(RiskCategory category);

  bool contains(RiskCategory category) const;
  bool empty() const { return mask_ == 0; }
  std::size_t size() const;

  /// True when the set is exactly {none}.
  bool none_only() const;

  /// Members in canonical enumeration order.
  std::vector<RiskCategory> values() const;

  /// Comma-space joined display names, or "None" for empty / {none}.
  std::string display_list() const;

  bool intersects(const CategorySet& other) const {
    return (mask_ & other.mask_) != 0;
  }

  bool operator==(const CategorySet&) const = default;

 private:
  std::uint16_t mask_ = 0;
};

// ---------------------------------------------------------------------------
// Labels, levels, actions
// ---------------------------------------------------------------------------

/// One-pass guard verdict. Severity order: Safe < Controversial < Unsafe.
enum class SafetyLabel : std::uint8_t { Safe, Controversial, Unsafe };

std::string_view to_string(SafetyLabel label);
std::optional<SafetyLabel> safety_label_from(std::string_view text);

/// Agent-assigned level used by the dynamic pipeline.
enum class DafLevel : std::uint8_t { Safe, Suspicious, Unsafe };

std::string_view to_string(DafLevel level);
std::optional<DafLevel> daf_level_from(std::string_view text);

enum class RecommendedAction : std::uint8_t { Allow, Flag, Block };

std::string_view to_string(RecommendedAction action);
std::optional<RecommendedAction> recommended_action_from(std::string_view text);

/// Behavior when a defender backend is unreachable.
enum class FailPolicy : std::uint8_t { Closed, Open };

// ---------------------------------------------------------------------------
// Safety report and decision
// ---------------------------------------------------------------------------

enum class ReportSource : std::uint8_t { Smf, Daf };

/// Structured safety report injected ahead of the user query. `rendered` is a
/// pure function of the other fields; the renderers live in the smf and daf
/// modules. SMF reports carry label+categories only; DAF reports additionally
/// carry confidence, analysis and recommended action.
struct SafetyReport {
  ReportSource source = ReportSource::Smf;
  SafetyLabel label = SafetyLabel::Safe;  // meaningful when source == Smf
  DafLevel level = DafLevel::Safe;        // meaningful when source == Daf
  CategorySet categories;
  std::optional<double> confidence;
  std::optional<std::string> analysis;
  std::optional<RecommendedAction> action;
  std::string rendered;
};

struct BlockDecision {
  std::string refusal;
  CategorySet categories;
};

struct ForwardDecision {
  std::string augmented_query;
  SafetyReport report;
};

using Decision = std::variant<BlockDecision, ForwardDecision>;

inline bool is_block(const Decision& decision) {
  return std::holds_alternative<BlockDecision>(decision);
}

// ---------------------------------------------------------------------------
// Chat exchange
// ---------------------------------------------------------------------------

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

/// One request/response pair with an upstream model. `reasoning` is present
/// only when the endpoint returns a separate reasoning channel.
struct ChatExchange {
  std::string query;
  std::optional<std::string> reasoning;
  std::string output;
  std::optional<TokenUsage> usage;
};

// ---------------------------------------------------------------------------
// Context composition
// ---------------------------------------------------------------------------

/// Prepends the rendered report to the query, separated by exactly one blank
/// line. Throws Error{InvalidInput} when query or report text is empty.
std::string augment_query(const SafetyReport& report, const std::string& query);

/// Fixed refusal sentence; non-empty category sets are appended
/// parenthetically in canonical order. Never contains a newline.
std::string render_refusal(const CategorySet& categories);

// ---------------------------------------------------------------------------
// Small shared utilities
// ---------------------------------------------------------------------------

/// Number of whitespace-separated tokens.
int whitespace_token_count(std::string_view text);

std::string to_lower(std::string_view text);

/// Write-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace sci
