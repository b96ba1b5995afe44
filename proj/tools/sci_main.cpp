// SPDX-License-Identifier: Apache-2.0
//
// sci: safety-context-injection gateway and evaluation toolkit.
//
// Subcommands:
//   serve   run the defending gateway
//   eval    run an attack corpus through a condition and write records
//   judge   score records with a judge endpoint
//   stats   paired t-test over two metric columns
//   pca     joint 2D projection of report/reasoning embeddings
//   report  render a safety report from flags (golden-file helper)

#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "sci/core.hpp"
#include "sci/daf.hpp"
#include "sci/diag.hpp"
#include "sci/eval.hpp"
#include "sci/gateway.hpp"
#include "sci/modelio.hpp"
#include "sci/smf.hpp"
#include "sci/stats.hpp"

namespace {

sci::gateway::GatewayService* g_service = nullptr;

void handle_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

sci::CategorySet parse_category_list(const std::string& list) {
  sci::CategorySet out;
  std::stringstream stream(list);
  std::string token;
  while (std::getline(stream, token, ',')) {
    if (token.find_first_not_of(" \t") == std::string::npos) continue;
    const auto category = sci::lookup_category(token);
    if (!category.has_value()) {
      throw CLI::ValidationError("--categories", "unknown category '" + token + "'");
    }
    out.insert(*category);
  }
  return out;
}

std::vector<double> read_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw sci::Error(sci::ErrorCode::IoError, "cannot open: " + path);
  }
  std::vector<double> values;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    char* end = nullptr;
    const double value = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || (end != nullptr && *end != '\0' && *end != ' ')) {
      if (values.empty() && line_number == 1) continue;  // header row
      throw sci::Error(sci::ErrorCode::ParseError,
                       path + ":" + std::to_string(line_number) + ": not a number");
    }
    values.push_back(value);
  }
  return values;
}

sci::EndpointConfig make_endpoint(const std::string& url, const std::string& model,
                                  const std::string& role, bool deterministic) {
  sci::EndpointConfig config;
  config.base_url = url;
  config.model_name = model;
  config.api_key = sci::env_api_key(role);
  if (deterministic) config.temperature = 0.0;
  return config;
}

struct ServeArgs {
  std::string listen, mode, protected_url, guard_url, agent_url, audit_log, fail, lexicon;
  std::string protected_model, guard_model, agent_model;
  int t_max = 0;
};

int run_serve(const CLI::App& sub, const ServeArgs& args) {
  sci::gateway::CliOverrides overrides;
  auto set_if = [&sub](const char* flag, const std::string& value,
                       std::optional<std::string>& target) {
    if (sub.count(flag) > 0) target = value;
  };
  set_if("--listen", args.listen, overrides.listen);
  set_if("--mode", args.mode, overrides.mode);
  set_if("--protected-url", args.protected_url, overrides.protected_url);
  set_if("--guard-url", args.guard_url, overrides.guard_url);
  set_if("--agent-url", args.agent_url, overrides.agent_url);
  set_if("--audit-log", args.audit_log, overrides.audit_log);
  set_if("--fail", args.fail, overrides.fail);
  set_if("--lexicon", args.lexicon, overrides.lexicon);
  set_if("--protected-model", args.protected_model, overrides.protected_model);
  set_if("--guard-model", args.guard_model, overrides.guard_model);
  set_if("--agent-model", args.agent_model, overrides.agent_model);
  if (sub.count("--t-max") > 0) overrides.t_max = args.t_max;

  const sci::gateway::GatewayConfig config = sci::gateway::load_config(overrides);
  sci::gateway::GatewayService service(config);
  g_service = &service;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);

  std::cout << "sci gateway listening on " << config.listen_host << ":" << config.listen_port
            << " (mode " << sci::gateway::to_string(config.mode) << ")" << std::endl;
  const bool ok = service.run();
  g_service = nullptr;
  if (!ok) {
    std::cerr << "error: could not listen on " << config.listen_host << ":"
              << config.listen_port << std::endl;
    return 2;
  }
  return 0;
}

struct EvalArgs {
  std::string corpus, condition = "original", out = "records.jsonl", summary;
  std::string protected_url, guard_url, agent_url, judge_url;
  std::string protected_model = "protected", guard_model = "guard", agent_model = "agent";
  std::string refusal_lexicon, lexicon, fail = "closed";
  int parallel = 1;
  int t_max = 5;
};

int run_eval(const EvalArgs& args) {
  const auto condition = sci::eval::condition_from(args.condition);
  if (!condition.has_value()) {
    std::cerr << "error: --condition must be original|smf|daf" << std::endl;
    return 1;
  }
  if (*condition == sci::eval::Condition::Smf && args.guard_url.empty()) {
    std::cerr << "error: --condition smf requires --guard-url" << std::endl;
    return 1;
  }
  if (*condition == sci::eval::Condition::Daf && args.agent_url.empty()) {
    std::cerr << "error: --condition daf requires --agent-url" << std::endl;
    return 1;
  }

  const auto corpus = sci::eval::load_corpus(args.corpus);
  if (corpus.empty()) {
    std::cerr << "error: corpus is empty" << std::endl;
    return 2;
  }

  sci::HttpModelClient protected_client(
      make_endpoint(args.protected_url, args.protected_model, "protected", false));
  std::unique_ptr<sci::HttpModelClient> guard_client;
  std::unique_ptr<sci::HttpModelClient> agent_client;
  if (!args.guard_url.empty()) {
    guard_client = std::make_unique<sci::HttpModelClient>(
        make_endpoint(args.guard_url, args.guard_model, "guard", true));
  }
  if (!args.agent_url.empty()) {
    agent_client = std::make_unique<sci::HttpModelClient>(
        make_endpoint(args.agent_url, args.agent_model, "agent", true));
  }

  sci::daf::PatternLexicon lexicon = sci::daf::PatternLexicon::builtin();
  if (!args.lexicon.empty()) lexicon.load_overlay(args.lexicon);
  const sci::daf::ToolRegistry tools = sci::daf::ToolRegistry::standard(std::move(lexicon));

  sci::eval::RunOptions options;
  options.condition = *condition;
  options.parallelism = args.parallel;
  if (!args.refusal_lexicon.empty()) {
    options.refusal = sci::eval::RefusalLexicon::load(args.refusal_lexicon);
  }
  options.daf_config.t_max = args.t_max;
  options.fail = sci::to_lower(args.fail) == "open" ? sci::FailPolicy::Open
                                                    : sci::FailPolicy::Closed;

  sci::eval::Clients clients;
  clients.protected_model = &protected_client;
  clients.guard = guard_client.get();
  clients.agent = agent_client.get();
  clients.tools = &tools;

  auto records = sci::eval::run_condition(corpus, clients, options);

  if (!args.judge_url.empty()) {
    sci::HttpModelClient judge_client(
        make_endpoint(args.judge_url, "judge", "judge", true));
    const auto stats = sci::eval::judge_records(records, judge_client);
    std::cout << "judged " << stats.judged << " records (" << stats.missing << " missing, "
              << stats.skipped_blocked << " blocked)" << std::endl;
  }

  sci::write_file_atomic(args.out, sci::eval::records_to_jsonl(records));
  std::cout << "wrote " << records.size() << " records to " << args.out << std::endl;
  std::cout << "asr " << sci::eval::compute_asr(records) << std::endl;

  const auto token_stats = sci::eval::token_stats(records);
  if (token_stats.families > 0) {
    std::cout << "report tokens: mean " << token_stats.overall_mean << " std "
              << token_stats.overall_std << " across " << token_stats.families
              << " families (rule " << token_stats.rule_note << ")" << std::endl;
  }

  std::filesystem::path summary_path = args.summary;
  if (summary_path.empty()) {
    summary_path = args.out;
    summary_path.replace_extension(".summary.csv");
  }
  const auto cells = sci::eval::aggregate_cells(records);
  sci::write_file_atomic(summary_path, sci::eval::summary_to_csv(cells));
  std::cout << "wrote " << cells.size() << " cells to " << summary_path.string() << std::endl;
  return 0;
}

struct JudgeArgs {
  std::string records, out, judge_url, channel = "output", summary;
  std::string judge_model = "judge";
};

int run_judge(const JudgeArgs& args) {
  if (args.channel != "output" && args.channel != "reasoning") {
    std::cerr << "error: --channel must be output or reasoning" << std::endl;
    return 1;
  }
  auto records = sci::eval::load_records(args.records);
  sci::HttpModelClient judge_client(
      make_endpoint(args.judge_url, args.judge_model, "judge", true));
  const auto stats =
      sci::eval::judge_records(records, judge_client, args.channel == "reasoning");
  sci::write_file_atomic(args.out, sci::eval::records_to_jsonl(records));
  std::cout << "judged " << stats.judged << " records (" << stats.missing << " missing, "
            << stats.skipped_blocked << " blocked) -> " << args.out << std::endl;
  if (!args.summary.empty()) {
    const auto cells = sci::eval::aggregate_cells(records);
    sci::write_file_atomic(args.summary, sci::eval::summary_to_csv(cells));
  }
  return 0;
}

struct StatsArgs {
  std::string before, after;
};

int run_stats(const StatsArgs& args) {
  const auto before = read_column(args.before);
  const auto after = read_column(args.after);
  const auto result = sci::stats::paired_t_test(before, after);
  // d_z is reported as a magnitude alongside the signed t statistic.
  std::printf("n,t,p,d_z\n%zu,%.6f,%.6f,%.6f\n", result.n, result.t, result.p,
              std::fabs(result.d_z));
  return 0;
}

struct PcaArgs {
  std::string records, embed_url, out;
  std::string embed_model = "all-MiniLM-L6-v2";
  int cap = 300;
  unsigned int seed = 42;
};

int run_pca(const PcaArgs& args) {
  if (args.cap < 1) {
    std::cerr << "error: --cap must be >= 1" << std::endl;
    return 1;
  }
  const auto records = sci::eval::load_records(args.records);
  sci::HttpModelClient embed_client(
      make_endpoint(args.embed_url, args.embed_model, "encoder", false));

  std::map<std::pair<std::string, std::string>, std::vector<sci::eval::EvalRecord>> groups;
  for (const auto& record : records) {
    groups[{record.attack, std::string(sci::eval::to_string(record.condition))}].push_back(
        record);
  }

  std::vector<sci::diag::ProjectionSet> sets;
  for (const auto& [key, members] : groups) {
    const auto sampled =
        sci::diag::sample_records(members, static_cast<std::size_t>(args.cap), args.seed);
    std::vector<std::string> report_texts;
    std::vector<std::string> reasoning_texts;
    for (const auto& record : sampled) {
      if (!record.report_text.empty()) report_texts.push_back(record.report_text);
      if (record.reasoning.has_value() && !record.reasoning->empty()) {
        reasoning_texts.push_back(*record.reasoning);
      }
    }
    if (report_texts.size() + reasoning_texts.size() < 2) {
      std::cerr << "skipping group (" << key.first << ", " << key.second
                << "): fewer than 2 texts" << std::endl;
      continue;
    }
    std::vector<std::vector<double>> report_vectors;
    std::vector<std::vector<double>> reasoning_vectors;
    if (!report_texts.empty()) report_vectors = embed_client.embed(report_texts);
    if (!reasoning_texts.empty()) reasoning_vectors = embed_client.embed(reasoning_texts);

    auto set = sci::diag::pca_joint_2d(report_vectors, reasoning_vectors);
    set.attack = key.first;
    set.condition = key.second;
    sets.push_back(std::move(set));
  }

  if (sets.empty()) {
    std::cerr << "error: no group had enough report/reasoning texts" << std::endl;
    return 2;
  }
  sci::diag::export_projection(sets, args.out);
  std::cout << "wrote " << sets.size() << " projection groups to " << args.out << std::endl;
  return 0;
}

struct ReportArgs {
  std::string mode = "smf";
  std::string label = "Safe";
  std::string level = "SAFE";
  std::string categories = "none";
  std::string analysis;
  std::string action = "ALLOW";
  double confidence = 1.0;
};

int run_report(const ReportArgs& args) {
  const sci::CategorySet categories = parse_category_list(args.categories);
  if (args.mode == "smf") {
    const auto label = sci::safety_label_from(args.label);
    if (!label.has_value()) {
      std::cerr << "error: --label must be Safe|Controversial|Unsafe" << std::endl;
      return 1;
    }
    std::cout << sci::smf::format_report(*label, categories).rendered << std::endl;
    return 0;
  }
  if (args.mode == "daf") {
    const auto level = sci::daf_level_from(args.level);
    if (!level.has_value()) {
      std::cerr << "error: --level must be SAFE|SUSPICIOUS|UNSAFE" << std::endl;
      return 1;
    }
    const auto action = sci::recommended_action_from(args.action);
    if (!action.has_value()) {
      std::cerr << "error: --action must be ALLOW|FLAG|BLOCK" << std::endl;
      return 1;
    }
    if (args.confidence < 0.0 || args.confidence > 1.0) {
      std::cerr << "error: --confidence must be in [0,1]" << std::endl;
      return 1;
    }
    sci::daf::FinalizeFields fields;
    fields.level = *level;
    fields.confidence = args.confidence;
    fields.categories = categories;
    fields.analysis = args.analysis;
    fields.action = *action;
    std::cout << sci::daf::synthesize_report(fields, {}).rendered << std::endl;
    return 0;
  }
  std::cerr << "error: --mode must be smf or daf" << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sci: safety-context-injection gateway and evaluation toolkit"};
  app.require_subcommand(1);

  ServeArgs serve_args;
  CLI::App* serve = app.add_subcommand("serve", "Run the defending gateway");
  serve->add_option("--listen", serve_args.listen, "host:port to listen on");
  serve->add_option("--mode", serve_args.mode, "off|smf|daf");
  serve->add_option("--protected-url", serve_args.protected_url, "protected model base URL");
  serve->add_option("--guard-url", serve_args.guard_url, "guard model base URL (smf)");
  serve->add_option("--agent-url", serve_args.agent_url, "agent backend base URL (daf)");
  serve->add_option("--audit-log", serve_args.audit_log, "audit JSONL path");
  serve->add_option("--t-max", serve_args.t_max, "agent loop step limit");
  serve->add_option("--fail", serve_args.fail, "closed|open defender-failure policy");
  serve->add_option("--lexicon", serve_args.lexicon, "pattern lexicon overlay file");
  serve->add_option("--protected-model", serve_args.protected_model, "protected model name");
  serve->add_option("--guard-model", serve_args.guard_model, "guard model name");
  serve->add_option("--agent-model", serve_args.agent_model, "agent model name");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Run a corpus through one condition");
  eval->add_option("--corpus", eval_args.corpus, "corpus JSONL file")->required();
  eval->add_option("--condition", eval_args.condition, "original|smf|daf");
  eval->add_option("--out", eval_args.out, "records output file");
  eval->add_option("--summary", eval_args.summary, "summary CSV output file");
  eval->add_option("--protected-url", eval_args.protected_url, "protected model base URL")
      ->required();
  eval->add_option("--guard-url", eval_args.guard_url, "guard base URL (smf)");
  eval->add_option("--agent-url", eval_args.agent_url, "agent base URL (daf)");
  eval->add_option("--judge-url", eval_args.judge_url, "judge base URL (optional inline TS)");
  eval->add_option("--parallel", eval_args.parallel, "worker threads")
      ->check(CLI::Range(1, 256));
  eval->add_option("--refusal-lexicon", eval_args.refusal_lexicon, "refusal phrase file");
  eval->add_option("--lexicon", eval_args.lexicon, "pattern lexicon overlay file");
  eval->add_option("--t-max", eval_args.t_max, "agent loop step limit");
  eval->add_option("--fail", eval_args.fail, "closed|open defender-failure policy");
  eval->add_option("--protected-model", eval_args.protected_model, "protected model name");
  eval->add_option("--guard-model", eval_args.guard_model, "guard model name");
  eval->add_option("--agent-model", eval_args.agent_model, "agent model name");

  JudgeArgs judge_args;
  CLI::App* judge = app.add_subcommand("judge", "Score records with a judge endpoint");
  judge->add_option("--records", judge_args.records, "records JSONL file")->required();
  judge->add_option("--out", judge_args.out, "judged records output file")->required();
  judge->add_option("--judge-url", judge_args.judge_url, "judge base URL")->required();
  judge->add_option("--channel", judge_args.channel, "output|reasoning");
  judge->add_option("--summary", judge_args.summary, "summary CSV output file");
  judge->add_option("--judge-model", judge_args.judge_model, "judge model name");

  StatsArgs stats_args;
  CLI::App* stats = app.add_subcommand("stats", "Paired t-test over two metric columns");
  stats->add_option("--before", stats_args.before, "CSV column of pre values")->required();
  stats->add_option("--after", stats_args.after, "CSV column of post values")->required();

  PcaArgs pca_args;
  CLI::App* pca = app.add_subcommand("pca", "Project report/reasoning embeddings to 2D");
  pca->add_option("--records", pca_args.records, "records JSONL file")->required();
  pca->add_option("--embed-url", pca_args.embed_url, "embeddings endpoint base URL")
      ->required();
  pca->add_option("--out", pca_args.out, "projection CSV output file")->required();
  pca->add_option("--cap", pca_args.cap, "max records per group (default 300)");
  pca->add_option("--seed", pca_args.seed, "sampling seed (default 42)");
  pca->add_option("--embed-model", pca_args.embed_model, "encoder model name");

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "Render a safety report from flags");
  report->add_option("--mode", report_args.mode, "smf|daf");
  report->add_option("--label", report_args.label, "Safe|Controversial|Unsafe (smf)");
  report->add_option("--level", report_args.level, "SAFE|SUSPICIOUS|UNSAFE (daf)");
  report->add_option("--categories", report_args.categories, "comma-separated categories");
  report->add_option("--confidence", report_args.confidence, "confidence in [0,1] (daf)");
  report->add_option("--analysis", report_args.analysis, "analysis line (daf)");
  report->add_option("--action", report_args.action, "ALLOW|FLAG|BLOCK (daf)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (serve->parsed()) return run_serve(*serve, serve_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (judge->parsed()) return run_judge(judge_args);
    if (stats->parsed()) return run_stats(stats_args);
    if (pca->parsed()) return run_pca(pca_args);
    if (report->parsed()) return run_report(report_args);
  } catch (const sci::Error& e) {
    std::cerr << "error (" << sci::error_code_name(e.code()) << "): " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
