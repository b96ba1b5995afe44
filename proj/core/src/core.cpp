// SPDX-License-Identifier: Apache-2.0
#include "sci/core.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <fstream>
#include <unordered_map>

namespace sci {
namespace {

constexpr std::array<std::string_view, kRiskCategoryCount> kDisplayNames = {
    "violent content",
    "non-violent illegal acts",
    "sexual content",
    "personally identifiable information",
    "suicide and self-harm",
    "unethical acts",
    "politically sensitive topics",
    "copyright violation",
    "jailbreak",
    "none",
};

constexpr std::uint16_t kNoneBit = 1u << static_cast<int>(RiskCategory::None);

const std::unordered_map<std::string, RiskCategory>& alias_table() {
  static const std::unordered_map<std::string, RiskCategory> table = [] {
    std::unordered_map<std::string, RiskCategory> t;
    auto add = [&t](std::string_view key, RiskCategory cat) {
      t.emplace(normalize_token(key), cat);
    };
    for (RiskCategory cat : all_risk_categories()) add(display_name(cat), cat);

    add("violence", RiskCategory::ViolentContent);
    add("violent", RiskCategory::ViolentContent);
    add("harm to others", RiskCategory::ViolentContent);
    add("illegal activity", RiskCategory::NonViolentIllegalActs);
    add("illegal activities", RiskCategory::NonViolentIllegalActs);
    add("illegal acts", RiskCategory::NonViolentIllegalActs);
    add("illegal", RiskCategory::NonViolentIllegalActs);
    add("criminal activity", RiskCategory::NonViolentIllegalActs);
    add("identity theft", RiskCategory::NonViolentIllegalActs);
    add("fraud", RiskCategory::NonViolentIllegalActs);
    add("sexual", RiskCategory::SexualContent);
    add("sexually explicit", RiskCategory::SexualContent);
    add("pornography", RiskCategory::SexualContent);
    add("pii", RiskCategory::PersonallyIdentifiableInformation);
    add("personal information", RiskCategory::PersonallyIdentifiableInformation);
    add("privacy", RiskCategory::PersonallyIdentifiableInformation);
    add("privacy violation", RiskCategory::PersonallyIdentifiableInformation);
    add("self-harm", RiskCategory::SuicideAndSelfHarm);
    add("self harm", RiskCategory::SuicideAndSelfHarm);
    add("suicide", RiskCategory::SuicideAndSelfHarm);
    add("self injury", RiskCategory::SuicideAndSelfHarm);
    add("unethical", RiskCategory::UnethicalActs);
    add("unethical behavior", RiskCategory::UnethicalActs);
    add("politically sensitive", RiskCategory::PoliticallySensitiveTopics);
    add("political", RiskCategory::PoliticallySensitiveTopics);
    add("politics", RiskCategory::PoliticallySensitiveTopics);
    add("copyright", RiskCategory::CopyrightViolation);
    add("copyright infringement", RiskCategory::CopyrightViolation);
    add("intellectual property", RiskCategory::CopyrightViolation);
    add("jailbreaking", RiskCategory::Jailbreak);
    add("prompt injection", RiskCategory::Jailbreak);
    add("injection", RiskCategory::Jailbreak);
    add("role play attack", RiskCategory::Jailbreak);
    add("no risk", RiskCategory::None);
    add("n/a", RiskCategory::None);
    add("harmless", RiskCategory::None);
    return t;
  }();
  return table;
}

}  // namespace

std::string normalize_token(std::string_view token) {
  std::string out;
  out.reserve(token.size());
  bool pending_space = false;
  for (unsigned char c : token) {
    if (std::isalnum(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::EndpointUnavailable: return "endpoint-unavailable";
    case ErrorCode::MalformedResponse: return "malformed-response";
    case ErrorCode::MalformedAction: return "malformed-action";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::DuplicateId: return "duplicate-id";
    case ErrorCode::DegenerateSample: return "degenerate-sample";
    case ErrorCode::DegenerateInput: return "degenerate-input";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::ConfigError: return "config-error";
  }
  return "unknown";
}

std::string_view display_name(RiskCategory category) {
  return kDisplayNames[static_cast<std::size_t>(category)];
}

const std::vector<RiskCategory>& all_risk_categories() {
  static const std::vector<RiskCategory> all = [] {
    std::vector<RiskCategory> v;
    for (int i = 0; i < kRiskCategoryCount; ++i) v.push_back(static_cast<RiskCategory>(i));
    return v;
  }();
  return all;
}

std::optional<RiskCategory> lookup_category(std::string_view token) {
  const auto normalized = normalize_token(token);
  if (normalized.empty()) return std::nullopt;
  const auto& table = alias_table();
  auto it = table.find(normalized);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

CategorySet::CategorySet(std::initializer_list<RiskCategory> categories) {
  for (RiskCategory c : categories) insert(c);
}

bool CategorySet::insert(RiskCategory category) {
  const std::uint16_t bit = 1u << static_cast<int>(category);
  if (category == RiskCategory::None) {
    if (mask_ != 0) return false;  // none never joins real categories
    mask_ = kNoneBit;
    return true;
  }
  std::uint16_t next = static_cast<std::uint16_t>((mask_ & ~kNoneBit) | bit);
  if (next == mask_) return false;
  mask_ = next;
  return true;
}

bool CategorySet::contains(RiskCategory category) const {
  return (mask_ & (1u << static_cast<int>(category))) != 0;
}

std::size_t CategorySet::size() const {
  return static_cast<std::size_t>(std::popcount(mask_));
}

bool CategorySet::none_only() const { return mask_ == kNoneBit; }

std::vector<RiskCategory> CategorySet::values() const {
  std::vector<RiskCategory> out;
  for (int i = 0; i < kRiskCategoryCount; ++i) {
    if (mask_ & (1u << i)) out.push_back(static_cast<RiskCategory>(i));
  }
  return out;
}

std::string CategorySet::display_list() const {
  if (empty() || none_only()) return "None";
  std::string out;
  for (RiskCategory c : values()) {
    if (!out.empty()) out += ", ";
    out += display_name(c);
  }
  return out;
}

std::string_view to_string(SafetyLabel label) {
  switch (label) {
    case SafetyLabel::Safe: return "Safe";
    case SafetyLabel::Controversial: return "Controversial";
    case SafetyLabel::Unsafe: return "Unsafe";
  }
  return "Safe";
}

std::optional<SafetyLabel> safety_label_from(std::string_view text) {
  const std::string t = to_lower(text);
  if (t == "safe") return SafetyLabel::Safe;
  if (t == "controversial") return SafetyLabel::Controversial;
  if (t == "unsafe") return SafetyLabel::Unsafe;
  return std::nullopt;
}

std::string_view to_string(DafLevel level) {
  switch (level) {
    case DafLevel::Safe: return "SAFE";
    case DafLevel::Suspicious: return "SUSPICIOUS";
    case DafLevel::Unsafe: return "UNSAFE";
  }
  return "SAFE";
}

std::optional<DafLevel> daf_level_from(std::string_view text) {
  const std::string t = to_lower(text);
  if (t == "safe") return DafLevel::Safe;
  if (t == "suspicious") return DafLevel::Suspicious;
  if (t == "unsafe") return DafLevel::Unsafe;
  return std::nullopt;
}

std::string_view to_string(RecommendedAction action) {
  switch (action) {
    case RecommendedAction::Allow: return "ALLOW";
    case RecommendedAction::Flag: return "FLAG";
    case RecommendedAction::Block: return "BLOCK";
  }
  return "ALLOW";
}

std::optional<RecommendedAction> recommended_action_from(std::string_view text) {
  const std::string t = to_lower(text);
  if (t == "allow") return RecommendedAction::Allow;
  if (t == "flag") return RecommendedAction::Flag;
  if (t == "block") return RecommendedAction::Block;
  return std::nullopt;
}

std::string augment_query(const SafetyReport& report, const std::string& query) {
  if (query.empty()) {
    throw Error(ErrorCode::InvalidInput, "augment_query: query must be non-empty");
  }
  if (report.rendered.empty()) {
    throw Error(ErrorCode::InvalidInput, "augment_query: report has no rendered text");
  }
  std::string out;
  out.reserve(report.rendered.size() + 2 + query.size());
  out += report.rendered;
  out += "\n\n";
  out += query;
  return out;
}

std::string render_refusal(const CategorySet& categories) {
  std::string out =
      "Sorry, I cannot provide information related to potentially harmful content";
  if (!categories.empty() && !categories.none_only()) {
    out += " (";
    out += categories.display_list();
    out += ")";
  }
  out += ".";
  return out;
}

int whitespace_token_count(std::string_view text) {
  int count = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path parent = path.parent_path();
  if (!parent.empty()) {
    fs::create_directories(parent, ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorCode::IoError, "cannot open for writing: " + tmp.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw Error(ErrorCode::IoError, "short write: " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "rename failed: " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open: " + path.string());
  }
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

}  // namespace sci
