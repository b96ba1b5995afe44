// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sci/core.hpp"
#include "sci/daf.hpp"
#include "sci/modelio.hpp"

namespace sci::eval {

enum class Condition { Original, Smf, Daf };

std::string_view to_string(Condition condition);
std::optional<Condition> condition_from(std::string_view text);

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusEntry {
  std::string id;
  std::string dataset;
  std::string attack;
  std::string prompt;
  std::optional<std::string> instruction;  // underlying harmful request, for the judge
};

/// JSONL, one object per line with fields {id, dataset, attack, prompt,
/// instruction?}. Malformed lines and duplicate ids raise errors naming the
/// line number.
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Refusal detection
// ---------------------------------------------------------------------------

/// Case-insensitive refusal phrases: `prefixes` match at the start of the
/// (left-trimmed) output, `substrings` anywhere. One lexicon is applied
/// identically to every condition.
struct RefusalLexicon {
  std::vector<std::string> prefixes;
  std::vector<std::string> substrings;

  static RefusalLexicon defaults();

  /// Line format: `prefix<TAB>phrase` or `substring<TAB>phrase`, `#` comments.
  static RefusalLexicon load(const std::filesystem::path& path);
};

/// Empty or whitespace-only output counts as a refusal (failed attack).
bool detect_refusal(std::string_view output, const RefusalLexicon& lexicon);

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct EvalRecord {
  std::string id;
  std::string dataset;
  std::string attack;
  Condition condition = Condition::Original;
  std::string instruction;  // what the judge scores against (corpus instruction, else prompt)
  std::optional<std::string> reasoning;  // -R channel
  std::string output;                    // -O channel
  bool refusal = false;
  bool asr_success = false;
  std::optional<int> ts;  // 1..5; missing until judged (blocked records get 1)
  int report_tokens = 0;
  std::string token_rule = "none";  // "usage" | "whitespace" | "none"
  bool blocked = false;
  std::string report_text;                   // rendered report for forwards
  std::optional<bool> reasoning_refusal;     // -R channel refusal flag
  std::optional<int> reasoning_ts;           // -R channel judge score
  std::optional<std::string> error;
};

std::string records_to_jsonl(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> records_from_jsonl(std::string_view content);
std::vector<EvalRecord> load_records(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of records with asr_success; blocked records never count as
/// successes. Throws Error{InvalidInput} on an empty list.
double compute_asr(const std::vector<EvalRecord>& records);

/// Asks the judge endpoint for a 1..5 harmfulness score using the five-level
/// rubric, reading the first 1..5 integer in the reply. Two retries on
/// unparseable replies, then missing (nullopt).
std::optional<int> judge_toxicity(const std::string& instruction, const std::string& response,
                                  ModelClient& judge);

struct JudgeStats {
  int judged = 0;
  int skipped_blocked = 0;
  int missing = 0;
};

/// Fills ts (or reasoning_ts when `reasoning_channel`) for non-blocked
/// records. Blocked records keep ts = 1 without a judge call.
JudgeStats judge_records(std::vector<EvalRecord>& records, ModelClient& judge,
                         bool reasoning_channel = false);

// ---------------------------------------------------------------------------
// Condition runner
// ---------------------------------------------------------------------------

struct Clients {
  ModelClient* protected_model = nullptr;
  ModelClient* guard = nullptr;                 // smf
  ModelClient* agent = nullptr;                 // daf
  const daf::ToolRegistry* tools = nullptr;     // daf
};

struct RunOptions {
  Condition condition = Condition::Original;
  int parallelism = 1;
  RefusalLexicon refusal = RefusalLexicon::defaults();
  daf::DafConfig daf_config{};
  FailPolicy fail = FailPolicy::Closed;
};

/// Runs every corpus entry under one condition. Output order equals corpus
/// order regardless of parallelism; per-entry endpoint failures become
/// error records and the run continues.
std::vector<EvalRecord> run_condition(const std::vector<CorpusEntry>& corpus,
                                      const Clients& clients, const RunOptions& options);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct TokenFamilyStats {
  std::string attack;
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population std within the family
};

struct TokenStats {
  std::vector<TokenFamilyStats> per_family;  // sorted by attack name
  int families = 0;
  double overall_mean = 0.0;  // mean of family means
  double overall_std = 0.0;   // sample std of family means (0 when < 2 families)
  std::string rule_note;      // which counting rules produced the counts
};

/// Report-token statistics per attack family over defended forwards; blocked
/// and original records carry no report and are excluded.
TokenStats token_stats(const std::vector<EvalRecord>& records);

struct CellSummary {
  std::string dataset;
  std::string attack;
  Condition condition = Condition::Original;
  std::string channel;  // "output" | "reasoning"
  int n = 0;
  double asr = 0.0;
  std::optional<double> ts_mean;
  std::optional<double> tok_mean;
  std::optional<double> tok_std;
  std::optional<double> asr_norm;
  std::optional<double> ts_norm;
};

/// Groups records by (dataset, attack, condition, channel) and emits raw
/// means plus min-max normalized values within each (dataset, channel,
/// metric) group; a flat metric normalizes to 0.
std::vector<CellSummary> aggregate_cells(const std::vector<EvalRecord>& records);

std::string summary_to_csv(const std::vector<CellSummary>& cells);

}  // namespace sci::eval
