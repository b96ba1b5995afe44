// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sci/core.hpp"
#include "sci/modelio.hpp"

namespace sci::smf {

/// Structured result of parsing a guard model's free-form assessment.
/// When no label can be extracted the parser falls back to
/// (Controversial, {none}) and sets parse_fallback.
struct GuardAssessment {
  std::string raw;
  SafetyLabel label = SafetyLabel::Controversial;
  CategorySet categories;
  bool parse_fallback = false;
};

/// One guard inference; returns the raw assessment text verbatim.
std::string run_guard(const std::string& query, ModelClient& guard);

/// Deterministic, total parser for guard assessments.
///
/// The label is the first of safe/unsafe/controversial (case-insensitive)
/// after a "Safety" marker. Categories are the comma-separated tokens after a
/// "Category"/"Categories"/"Risk Categories" marker, mapped through an alias
/// table; unknown tokens are dropped. A Safe label with no categories yields
/// {none}. `extra_aliases` extends the alias table for deployments whose
/// guard uses different category wording.
GuardAssessment parse_assessment(std::string_view raw);
GuardAssessment parse_assessment(
    std::string_view raw,
    const std::vector<std::pair<std::string, RiskCategory>>& extra_aliases);

/// Renders the fixed five-line report frame. Empty category sets are
/// normalized to {none} so rendering and re-parsing are mutually inverse.
SafetyReport format_report(SafetyLabel label, const CategorySet& categories);

/// Parses text produced by format_report; nullopt when the frame is off.
std::optional<std::pair<SafetyLabel, CategorySet>> parse_report(std::string_view rendered);

/// Extra detail captured by defend() for audit and evaluation.
struct DefendTrace {
  GuardAssessment assessment;
  std::optional<TokenUsage> guard_usage;
  bool guard_unavailable = false;
};

/// The one-pass pipeline: guard inference, parse, then either Block (label
/// Unsafe) or Forward with the report prepended. Exactly one guard call per
/// invocation; the protected model is never contacted here. On guard outage
/// the fail policy decides: Closed blocks with an empty category set, Open
/// forwards with a cautionary (Controversial, {none}) report.
Decision defend(const std::string& query, ModelClient& guard,
                FailPolicy policy = FailPolicy::Closed, DefendTrace* trace = nullptr);

}  // namespace sci::smf
