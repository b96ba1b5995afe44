// SPDX-License-Identifier: Apache-2.0
#include "sci/smf.hpp"

#include <cctype>
#include <sstream>

namespace sci::smf {
namespace {

constexpr std::string_view kReportHeader = "=== Safety Assessment Report ===";
constexpr std::string_view kReportFooter = "=== End of Report ===";
constexpr std::string_view kSectionLine = "[Prompt Safety]";

// Case-insensitive search without regex: the parser runs on fuzzed bytes, so
// it must never throw or backtrack pathologically.
std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
  if (needle.empty() || haystack.size() < needle.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    std::size_t j = 0;
    while (j < needle.size() &&
           std::tolower(static_cast<unsigned char>(haystack[i + j])) ==
               std::tolower(static_cast<unsigned char>(needle[j]))) {
      ++j;
    }
    if (j == needle.size()) return i;
  }
  return std::string_view::npos;
}

// First occurrence of any safety keyword at or after `from`. "unsafe" and
// "controversial" are tried before "safe" so that overlapping starts resolve
// to the longer keyword.
std::optional<SafetyLabel> first_label_keyword(std::string_view text, std::size_t from) {
  struct Keyword {
    std::string_view word;
    SafetyLabel label;
  };
  static constexpr Keyword kKeywords[] = {
      {"unsafe", SafetyLabel::Unsafe},
      {"controversial", SafetyLabel::Controversial},
      {"safe", SafetyLabel::Safe},
  };
  std::size_t best_pos = std::string_view::npos;
  SafetyLabel best = SafetyLabel::Controversial;
  for (const auto& kw : kKeywords) {
    const std::size_t pos = ifind(text, kw.word, from);
    if (pos < best_pos) {
      best_pos = pos;
      best = kw.label;
    }
  }
  if (best_pos == std::string_view::npos) return std::nullopt;
  return best;
}

// Text following the first "Category"/"Categories"/"Risk Categories" marker,
// up to a sentence/line delimiter. Matching the shared stem keeps the three
// marker spellings aligned on one code path.
std::optional<std::string_view> category_span(std::string_view text) {
  const std::size_t pos = ifind(text, "categor");
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t start = pos + std::string_view("categor").size();
  while (start < text.size() && std::isalpha(static_cast<unsigned char>(text[start]))) {
    ++start;  // consume the "y"/"ies" tail
  }
  while (start < text.size() &&
         (text[start] == ':' || std::isspace(static_cast<unsigned char>(text[start])))) {
    ++start;
  }
  std::size_t end = start;
  while (end < text.size() && text[end] != '\n' && text[end] != '\r' && text[end] != ';' &&
         text[end] != '.') {
    ++end;
  }
  return text.substr(start, end - start);
}

CategorySet parse_categories(
    std::string_view span,
    const std::vector<std::pair<std::string, RiskCategory>>& extra_aliases) {
  CategorySet out;
  std::size_t begin = 0;
  while (begin <= span.size()) {
    std::size_t comma = span.find(',', begin);
    std::string_view token =
        span.substr(begin, comma == std::string_view::npos ? std::string_view::npos
                                                           : comma - begin);
    std::optional<RiskCategory> cat = lookup_category(token);
    if (!cat.has_value()) {
      const std::string folded = normalize_token(token);
      for (const auto& [alias, category] : extra_aliases) {
        if (folded == normalize_token(alias)) {
          cat = category;
          break;
        }
      }
    }
    if (cat.has_value()) out.insert(*cat);
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return out;
}

}  // namespace

std::string run_guard(const std::string& query, ModelClient& guard) {
  if (query.empty()) {
    throw Error(ErrorCode::InvalidInput, "run_guard: query must be non-empty");
  }
  return guard.chat(std::nullopt, query).output;
}

GuardAssessment parse_assessment(std::string_view raw) {
  return parse_assessment(raw, {});
}

GuardAssessment parse_assessment(
    std::string_view raw,
    const std::vector<std::pair<std::string, RiskCategory>>& extra_aliases) {
  GuardAssessment out;
  out.raw = std::string(raw);

  const std::size_t marker = ifind(raw, "safety");
  std::optional<SafetyLabel> label;
  if (marker != std::string_view::npos) {
    label = first_label_keyword(raw, marker + std::string_view("safety").size());
  }
  if (!label.has_value()) {
    out.label = SafetyLabel::Controversial;
    out.categories = CategorySet{RiskCategory::None};
    out.parse_fallback = true;
    return out;
  }

  out.label = *label;
  if (const auto span = category_span(raw); span.has_value()) {
    out.categories = parse_categories(*span, extra_aliases);
  }
  if (out.categories.empty() && out.label == SafetyLabel::Safe) {
    out.categories = CategorySet{RiskCategory::None};
  }
  return out;
}

SafetyReport format_report(SafetyLabel label, const CategorySet& categories) {
  SafetyReport report;
  report.source = ReportSource::Smf;
  report.label = label;
  report.categories = categories;
  if (report.categories.empty()) report.categories.insert(RiskCategory::None);

  std::ostringstream text;
  text << kReportHeader << '\n'
       << kSectionLine << '\n'
       << "Safety Level: " << to_string(label) << '\n'
       << "Risk Categories: " << report.categories.display_list() << '\n'
       << kReportFooter;
  report.rendered = text.str();
  return report;
}

std::optional<std::pair<SafetyLabel, CategorySet>> parse_report(std::string_view rendered) {
  std::vector<std::string_view> lines;
  std::size_t begin = 0;
  while (begin <= rendered.size()) {
    const std::size_t nl = rendered.find('\n', begin);
    lines.push_back(rendered.substr(
        begin, nl == std::string_view::npos ? std::string_view::npos : nl - begin));
    if (nl == std::string_view::npos) break;
    begin = nl + 1;
  }
  if (lines.size() != 5 || lines[0] != kReportHeader || lines[1] != kSectionLine ||
      lines[4] != kReportFooter) {
    return std::nullopt;
  }
  constexpr std::string_view kLevelPrefix = "Safety Level: ";
  constexpr std::string_view kCategoriesPrefix = "Risk Categories: ";
  if (!lines[2].starts_with(kLevelPrefix) || !lines[3].starts_with(kCategoriesPrefix)) {
    return std::nullopt;
  }
  const auto label = safety_label_from(lines[2].substr(kLevelPrefix.size()));
  if (!label.has_value()) return std::nullopt;

  CategorySet categories;
  std::string_view list = lines[3].substr(kCategoriesPrefix.size());
  if (list == "None") {
    categories.insert(RiskCategory::None);
  } else {
    std::size_t pos = 0;
    while (pos <= list.size()) {
      const std::size_t comma = list.find(", ", pos);
      const std::string_view token = list.substr(
          pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      const auto cat = lookup_category(token);
      if (!cat.has_value()) return std::nullopt;
      categories.insert(*cat);
      if (comma == std::string_view::npos) break;
      pos = comma + 2;
    }
  }
  return std::make_pair(*label, categories);
}

Decision defend(const std::string& query, ModelClient& guard, FailPolicy policy,
                DefendTrace* trace) {
  if (query.empty()) {
    throw Error(ErrorCode::InvalidInput, "defend: query must be non-empty");
  }

  GuardAssessment assessment;
  std::optional<TokenUsage> guard_usage;
  bool unavailable = false;
  try {
    const ChatExchange exchange = guard.chat(std::nullopt, query);
    guard_usage = exchange.usage;
    assessment = parse_assessment(exchange.output);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EndpointUnavailable) throw;
    unavailable = true;
    assessment.raw.clear();
    assessment.label = SafetyLabel::Controversial;
    assessment.categories = CategorySet{RiskCategory::None};
    assessment.parse_fallback = true;
  }

  if (trace != nullptr) {
    trace->assessment = assessment;
    trace->guard_usage = guard_usage;
    trace->guard_unavailable = unavailable;
  }

  if (unavailable && policy == FailPolicy::Closed) {
    return BlockDecision{render_refusal(CategorySet{}), CategorySet{}};
  }
  if (assessment.label == SafetyLabel::Unsafe) {
    return BlockDecision{render_refusal(assessment.categories), assessment.categories};
  }
  const SafetyReport report = format_report(assessment.label, assessment.categories);
  return ForwardDecision{augment_query(report, query), report};
}

}  // namespace sci::smf
