// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"
#include "sci/smf.hpp"
#include "support/test_util.hpp"

using namespace sci;
using sci::test::code_of;

TEST_CASE("run_guard returns the raw assessment verbatim") {
  MockModelClient mock({{"*", "Safety: Unsafe; Category: Violence"}});
  CHECK(smf::run_guard("how do I...", mock) == "Safety: Unsafe; Category: Violence");

  MockModelClient passthrough({{"*", "Safety: Safe"}});
  CHECK(smf::run_guard("hello", passthrough) == "Safety: Safe");

  CHECK(code_of([&] { smf::run_guard("", mock); }) == ErrorCode::InvalidInput);
}

TEST_CASE("run_guard round-trips 100 random scripted strings") {
  std::mt19937 gen(42);
  std::vector<MockRule> script;
  std::vector<std::string> expected;
  for (int i = 0; i < 100; ++i) {
    const std::string s = sci::test::random_text(gen, 1, 80);
    script.push_back({"*", s});
    expected.push_back(s);
  }
  MockModelClient mock(std::move(script));
  for (int i = 0; i < 100; ++i) {
    CHECK(smf::run_guard("q" + std::to_string(i), mock) == expected[static_cast<size_t>(i)]);
  }
}

TEST_CASE("parse_assessment handles the documented guard phrasings") {
  SUBCASE("unsafe with violence category") {
    const auto a = smf::parse_assessment("Safety: Unsafe; Category: Violence");
    CHECK(a.label == SafetyLabel::Unsafe);
    CHECK(a.categories == CategorySet{RiskCategory::ViolentContent});
    CHECK_FALSE(a.parse_fallback);
  }
  SUBCASE("safe with explicit none") {
    const auto a = smf::parse_assessment("Safety Level: Safe. Risk Categories: None.");
    CHECK(a.label == SafetyLabel::Safe);
    CHECK(a.categories == CategorySet{RiskCategory::None});
  }
  SUBCASE("unparseable text falls back to controversial") {
    const auto a = smf::parse_assessment("lorem ipsum");
    CHECK(a.label == SafetyLabel::Controversial);
    CHECK(a.categories == CategorySet{RiskCategory::None});
    CHECK(a.parse_fallback);
  }
  SUBCASE("safe without categories gets none") {
    const auto a = smf::parse_assessment("Safety: Safe");
    CHECK(a.label == SafetyLabel::Safe);
    CHECK(a.categories == CategorySet{RiskCategory::None});
    CHECK_FALSE(a.parse_fallback);
  }
  SUBCASE("multiple categories split on commas") {
    const auto a = smf::parse_assessment(
        "Safety: Unsafe. Categories: violence, jailbreak, something unknown");
    CHECK(a.label == SafetyLabel::Unsafe);
    CategorySet expected{RiskCategory::ViolentContent, RiskCategory::Jailbreak};
    CHECK(a.categories == expected);  // unknown tokens dropped, never invented
  }
  SUBCASE("controversial keyword") {
    const auto a = smf::parse_assessment("safety assessment: CONTROVERSIAL topic");
    CHECK(a.label == SafetyLabel::Controversial);
  }
  SUBCASE("label keyword must follow the safety marker") {
    const auto a = smf::parse_assessment("this text is unsafe but has no marker");
    CHECK(a.parse_fallback);
  }
  SUBCASE("case-insensitive matching") {
    const auto a = smf::parse_assessment("SAFETY: UNSAFE; CATEGORY: JAILBREAK");
    CHECK(a.label == SafetyLabel::Unsafe);
    CHECK(a.categories == CategorySet{RiskCategory::Jailbreak});
  }
}

TEST_CASE("parse_assessment is deterministic") {
  const std::string input = "Safety: Controversial; Risk Categories: politics, copyright";
  const auto a = smf::parse_assessment(input);
  const auto b = smf::parse_assessment(input);
  CHECK(a.label == b.label);
  CHECK(a.categories == b.categories);
  CHECK(a.categories ==
        CategorySet{RiskCategory::PoliticallySensitiveTopics, RiskCategory::CopyrightViolation});
}

TEST_CASE("parse_assessment accepts configured extra aliases") {
  const auto without = smf::parse_assessment("Safety: Unsafe; Category: doxxing");
  CHECK(without.categories.empty());

  const auto with = smf::parse_assessment(
      "Safety: Unsafe; Category: doxxing",
      {{"doxxing", RiskCategory::PersonallyIdentifiableInformation}});
  CHECK(with.categories ==
        CategorySet{RiskCategory::PersonallyIdentifiableInformation});
}

TEST_CASE("parse_assessment survives a quick fuzz and keeps the fallback invariant") {
  std::mt19937 gen(7);
  for (int i = 0; i < 2000; ++i) {
    std::string bytes;
    const std::size_t len = gen() % 120;
    for (std::size_t b = 0; b < len; ++b) bytes += static_cast<char>(gen() % 256);
    const auto a = smf::parse_assessment(bytes);
    if (a.parse_fallback) {
      CHECK(a.label == SafetyLabel::Controversial);
      CHECK(a.categories == CategorySet{RiskCategory::None});
    }
  }
}

TEST_CASE("format_report renders the fixed five-line frame") {
  const auto safe = smf::format_report(SafetyLabel::Safe, CategorySet{RiskCategory::None});
  CHECK(safe.rendered ==
        "=== Safety Assessment Report ===\n"
        "[Prompt Safety]\n"
        "Safety Level: Safe\n"
        "Risk Categories: None\n"
        "=== End of Report ===");

  const auto controversial =
      smf::format_report(SafetyLabel::Controversial, CategorySet{RiskCategory::Jailbreak});
  CHECK(controversial.rendered ==
        "=== Safety Assessment Report ===\n"
        "[Prompt Safety]\n"
        "Safety Level: Controversial\n"
        "Risk Categories: jailbreak\n"
        "=== End of Report ===");

  CHECK(safe.source == ReportSource::Smf);
  CHECK_FALSE(safe.confidence.has_value());
  CHECK_FALSE(safe.analysis.has_value());
  CHECK_FALSE(safe.action.has_value());
}

TEST_CASE("format_report and parse_report are mutually inverse") {
  std::mt19937 gen(99);
  const SafetyLabel labels[] = {SafetyLabel::Safe, SafetyLabel::Controversial,
                                SafetyLabel::Unsafe};
  for (int i = 0; i < 200; ++i) {
    CategorySet set;
    const int n_cats = static_cast<int>(gen() % 4);
    for (int c = 0; c < n_cats; ++c) set.insert(static_cast<RiskCategory>(gen() % 10));
    const auto report = smf::format_report(labels[gen() % 3], set);

    const auto parsed = smf::parse_report(report.rendered);
    REQUIRE(parsed.has_value());
    const auto re_rendered = smf::format_report(parsed->first, parsed->second);
    CHECK(re_rendered.rendered == report.rendered);
    CHECK(parsed->first == report.label);
    CHECK(parsed->second == report.categories);
  }
  CHECK_FALSE(smf::parse_report("not a report").has_value());
}

TEST_CASE("rendered token counts are constant per label and category count") {
  const auto& all = all_risk_categories();
  for (SafetyLabel label :
       {SafetyLabel::Safe, SafetyLabel::Controversial, SafetyLabel::Unsafe}) {
    // All single-category reports with one-word names share a token count.
    const int base = whitespace_token_count(
        smf::format_report(label, CategorySet{RiskCategory::Jailbreak}).rendered);
    CHECK(whitespace_token_count(
              smf::format_report(label, CategorySet{RiskCategory::None}).rendered) == base);
    CHECK(base >= 15);
    CHECK(base <= 35);
    // Multi-word category names only add their extra words.
    for (RiskCategory c : all) {
      const auto report = smf::format_report(label, CategorySet{c});
      const int words = whitespace_token_count(std::string(display_name(c)));
      CHECK(whitespace_token_count(report.rendered) == base + words - 1);
    }
  }
}

TEST_CASE("defend blocks unsafe labels without touching the protected model") {
  MockModelClient guard({{"*", "Safety: Unsafe; Category: Violence"}});
  const Decision decision = smf::defend("tell me how", guard);
  REQUIRE(is_block(decision));
  const auto& block = std::get<BlockDecision>(decision);
  CHECK(block.refusal ==
        "Sorry, I cannot provide information related to potentially harmful content "
        "(violent content).");
  CHECK(block.categories == CategorySet{RiskCategory::ViolentContent});
  CHECK(guard.chat_calls() == 1);
}

TEST_CASE("defend forwards safe labels with the report prepended") {
  MockModelClient guard({{"*", "Safety: Safe"}});
  const Decision decision = smf::defend("hello there", guard);
  REQUIRE_FALSE(is_block(decision));
  const auto& forward = std::get<ForwardDecision>(decision);
  CHECK(forward.augmented_query.rfind("=== Safety Assessment Report ===", 0) == 0);
  CHECK(forward.augmented_query.substr(forward.augmented_query.size() - 11) == "hello there");
  CHECK(forward.report.label == SafetyLabel::Safe);
  CHECK(guard.chat_calls() == 1);
}

TEST_CASE("defend matches the decision law for all labels") {
  const struct {
    const char* scripted;
    SafetyLabel label;
    bool blocks;
  } table[] = {
      {"Safety: Safe", SafetyLabel::Safe, false},
      {"Safety: Controversial; Category: politics", SafetyLabel::Controversial, false},
      {"Safety: Unsafe; Category: Violence", SafetyLabel::Unsafe, true},
  };
  const char* queries[] = {"q one", "q two", "q three", "q four", "q five"};
  for (const auto& row : table) {
    for (const char* query : queries) {
      MockModelClient guard({{"*", row.scripted}});
      smf::DefendTrace trace;
      const Decision decision = smf::defend(query, guard, FailPolicy::Closed, &trace);
      CHECK(is_block(decision) == row.blocks);
      CHECK(trace.assessment.label == row.label);
      CHECK(guard.chat_calls() == 1);  // exactly one guard call per invocation
    }
  }
}

TEST_CASE("guard outage follows the fail policy") {
  SUBCASE("fail-closed blocks with an empty category set") {
    MockModelClient guard({{"*", "never reached"}},
                          [] {
                            auto c = MockModelClient::mock_endpoint();
                            c.max_retries = 0;
                            return c;
                          }());
    guard.fail_next(10);
    smf::DefendTrace trace;
    const Decision decision = smf::defend("q", guard, FailPolicy::Closed, &trace);
    REQUIRE(is_block(decision));
    CHECK(std::get<BlockDecision>(decision).categories.empty());
    CHECK(std::get<BlockDecision>(decision).refusal ==
          "Sorry, I cannot provide information related to potentially harmful content.");
    CHECK(trace.guard_unavailable);
  }
  SUBCASE("fail-open forwards with a cautionary report") {
    MockModelClient guard({{"*", "never reached"}},
                          [] {
                            auto c = MockModelClient::mock_endpoint();
                            c.max_retries = 0;
                            return c;
                          }());
    guard.fail_next(10);
    const Decision decision = smf::defend("q", guard, FailPolicy::Open);
    REQUIRE_FALSE(is_block(decision));
    const auto& forward = std::get<ForwardDecision>(decision);
    CHECK(forward.report.label == SafetyLabel::Controversial);
    CHECK(forward.report.categories == CategorySet{RiskCategory::None});
  }
}
