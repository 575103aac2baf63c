// crw: command-line entry point for every pipeline stage.
//
// Exit codes: 0 ok, 1 stage failure, 2 usage error. Logs go to stderr and
// artifacts only to the files named on the command line.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "crw/annotation_server.hpp"
#include "crw/merge.hpp"
#include "crw/pipeline.hpp"

namespace fs = std::filesystem;
using namespace crw;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStage = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> max_tokens;
  std::string log_level = "info";
};

struct OracleFlags {
  std::string endpoint;
  std::string model;
  std::string transcript;
  std::string exemplars_file;
};

PipelineConfig resolve(const GlobalOptions& g) {
  std::optional<fs::path> path;
  if (!g.config_path.empty()) path = g.config_path;
  PipelineConfig cfg = load_config(path);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.merge.seed = cfg.serve.seed = cfg.stats.seed = *g.seed;
  }
  if (g.workers) cfg.workers = *g.workers;
  if (g.max_tokens) cfg.max_tokens = cfg.oracle.max_tokens = cfg.policy.max_tokens = *g.max_tokens;
  return cfg;
}

void apply(const OracleFlags& f, PipelineConfig& cfg) {
  if (!f.endpoint.empty()) cfg.oracle.endpoint = f.endpoint;
  if (!f.model.empty()) cfg.oracle.model = f.model;
  if (!f.transcript.empty()) cfg.oracle.transcript_path = f.transcript;
  if (!f.exemplars_file.empty()) cfg.oracle.rubric_exemplars = read_file(f.exemplars_file);
}

void add_oracle_flags(CLI::App* cmd, OracleFlags& f) {
  cmd->add_option("--oracle-endpoint", f.endpoint, "Oracle endpoint URL, \"mock\" or \"mock:<file>\"");
  cmd->add_option("--oracle-model", f.model, "Oracle model name");
  cmd->add_option("--transcript", f.transcript, "Append every oracle call to this JSON-lines file");
  cmd->add_option("--rubric-exemplars", f.exemplars_file, "Text file with worked rubric examples for the prompt")
      ->check(CLI::ExistingFile);
}

struct Gateway {
  std::unique_ptr<ChatBackend> backend;
  std::unique_ptr<OracleGateway> gateway;
};

Gateway make_gateway(const OracleConfig& cfg) {
  Gateway g;
  g.backend = make_backend(cfg.endpoint, cfg.token, cfg.model, cfg.timeout_s);
  g.gateway = std::make_unique<OracleGateway>(*g.backend, cfg);
  return g;
}

OracleConfig policy_oracle(const PipelineConfig& cfg) {
  OracleConfig o = cfg.oracle;
  o.endpoint = cfg.policy.endpoint;
  o.token = cfg.policy.token;
  o.model = cfg.policy.model;
  o.transcript_path.clear();
  return o;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::stderr_color_mt("crw");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::from_str(level));
}

int serve(AnnotationServer& server) {
  // Block the shutdown signals in every thread and wait for them here.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  server.bind();
  spdlog::info("annotation service listening on port {}", server.port());
  std::thread worker([&] { server.listen(); });
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {} received, shutting down", sig);
  server.stop();
  worker.join();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clinical reasoning workbench: timelines, splits, oracle rubrics, evaluation, merging and annotation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the run seed (default 42)");
  app.add_option("--workers", g.workers, "Worker threads (default: hardware concurrency)");
  app.add_option("--max-tokens", g.max_tokens, "Context token budget for serialized pasts");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  // ingest
  std::string ingest_corpus, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Normalize a corpus of admissions into JSON lines");
  ingest->add_option("--corpus", ingest_corpus, "Directory of .json/.jsonl admissions, or one file")->required();
  ingest->add_option("--out", ingest_out, "Output JSON-lines file")->required();

  // cohort
  std::string cohort_corpus, cohort_out;
  auto* cohort = app.add_subcommand("cohort", "Select the training cover and sample the test set");
  cohort->add_option("--corpus", cohort_corpus, "Corpus directory or file")->required();
  cohort->add_option("--out", cohort_out, "Manifest JSON {train, test, seed}")->required();

  // split
  std::string split_corpus, split_manifest, split_out, split_subset = "test";
  auto* split = app.add_subcommand("split", "Sample past/future splits for manifest admissions");
  split->add_option("--corpus", split_corpus, "Corpus directory or file")->required();
  split->add_option("--manifest", split_manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
  split->add_option("--subset", split_subset, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  split->add_option("--out", split_out, "Output JSON-lines of split items")->required();

  // generate
  std::string gen_splits, gen_out, gen_category = "all";
  OracleFlags gen_oracle;
  auto* generate = app.add_subcommand("generate", "Generate query, reference and rubric per split and action space");
  generate->add_option("--splits", gen_splits, "Split items (JSON lines)")->required()->check(CLI::ExistingFile);
  generate->add_option("--out", gen_out, "Output evaluation items (JSON lines)")->required();
  generate->add_option("--category", gen_category, "Action space name, short alias, or \"all\"");
  add_oracle_flags(generate, gen_oracle);

  // grade
  std::string grade_items, grade_completions, grade_out;
  OracleFlags grade_oracle;
  auto* grade = app.add_subcommand("grade", "Grade completions (or the references) against item rubrics");
  grade->add_option("--items", grade_items, "Evaluation items (JSON lines)")->required()->check(CLI::ExistingFile);
  grade->add_option("--completions", grade_completions, "Rows {key, completion, family?, model?}")
      ->check(CLI::ExistingFile);
  grade->add_option("--out", grade_out, "Output records (JSON lines)")->required();
  add_oracle_flags(grade, grade_oracle);

  // reward
  std::string reward_in, reward_out, reward_profile, reward_family;
  auto* reward = app.add_subcommand("reward", "Compute the reward stack for graded completions");
  reward->add_option("--in", reward_in, "Rows {completion, rubric, verdicts, profile?, family?}")
      ->required()
      ->check(CLI::ExistingFile);
  reward->add_option("--out", reward_out, "Output reward breakdowns (JSON lines)")->required();
  reward->add_option("--profile", reward_profile, "Default profile: canonical or anchor");
  reward->add_option("--family", reward_family, "Default output family");

  // eval
  std::string eval_items, eval_records, eval_report, eval_model_endpoint, eval_model, eval_family;
  OracleFlags eval_oracle;
  auto* eval = app.add_subcommand("eval", "Run a policy over evaluation items and grade its answers");
  eval->add_option("--items", eval_items, "Evaluation items (JSON lines)")->required()->check(CLI::ExistingFile);
  eval->add_option("--records", eval_records, "Output records (JSON lines)")->required();
  eval->add_option("--report", eval_report, "Output aggregate report (JSON)")->required();
  eval->add_option("--model-endpoint", eval_model_endpoint, "Policy endpoint URL or \"mock\"");
  eval->add_option("--model", eval_model, "Policy model name");
  eval->add_option("--family", eval_family, "Policy output family");
  add_oracle_flags(eval, eval_oracle);

  // report
  std::string report_records, report_baseline, report_out;
  auto* report = app.add_subcommand("report", "Re-aggregate persisted records");
  report->add_option("--records", report_records, "Records (JSON lines)")->required()->check(CLI::ExistingFile);
  report->add_option("--baseline", report_baseline, "Baseline records for a head-to-head comparison")
      ->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output report (JSON)")->required();

  // merge
  std::string merge_base, merge_tuned, merge_out, merge_method, merge_aim, merge_dtype;
  std::optional<double> merge_rho, merge_gamma, merge_weight, merge_quantile;
  std::optional<std::uint64_t> merge_seed;
  auto* merge = app.add_subcommand("merge", "Merge a filtered task vector back into the base weights");
  merge->add_option("--base", merge_base, "Base archive (safetensors)")->required()->check(CLI::ExistingFile);
  merge->add_option("--tuned", merge_tuned, "Post-trained archive (safetensors)")->required()->check(CLI::ExistingFile);
  merge->add_option("--out", merge_out, "Merged archive")->required();
  merge->add_option("--method", merge_method, "della_linear, breadcrumbs or dare_linear");
  merge->add_option("--rho", merge_rho, "Density");
  merge->add_option("--gamma", merge_gamma, "Breadcrumbs upper-tail fraction");
  merge->add_option("--weight", merge_weight, "Task vector weight");
  merge->add_option("--seed", merge_seed, "DARE seed");
  merge->add_option("--aim-activations", merge_aim, "Activation archive enabling the AIM mask")
      ->check(CLI::ExistingFile);
  merge->add_option("--aim-quantile", merge_quantile, "AIM activation quantile");
  merge->add_option("--out-dtype", merge_dtype, "F64, F32, F16 or BF16 (default: base dtype)");

  // stats
  std::string stats_export, stats_md, stats_json, stats_mode;
  std::optional<std::size_t> stats_resamples;
  auto* stats = app.add_subcommand("stats", "Reliability and preference statistics over an annotation export");
  stats->add_option("--export", stats_export, "Annotation export (JSON lines)")->required()->check(CLI::ExistingFile);
  stats->add_option("--out-md", stats_md, "Markdown report")->required();
  stats->add_option("--out-json", stats_json, "Machine-readable report")->required();
  stats->add_option("--consensus-mode", stats_mode, "strict-consensus or all-decisive");
  stats->add_option("--resamples", stats_resamples, "Bootstrap resamples");

  // serve
  std::string serve_dir, serve_tokens, serve_cases, serve_host;
  std::optional<int> serve_port;
  std::optional<double> serve_redisplay;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  serve_cmd->add_option("--port", serve_port, "Listen port (0 picks a free port)");
  serve_cmd->add_option("--host", serve_host, "Bind address");
  serve_cmd->add_option("--data-dir", serve_dir, "Directory holding the submission journal")->required();
  serve_cmd->add_option("--tokens-file", serve_tokens, "JSON object mapping bearer token to rater id")
      ->required()
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--cases", serve_cases, "Case catalog (default: <data-dir>/cases.jsonl)");
  serve_cmd->add_option("--redisplay-probability", serve_redisplay, "Chance a case is flagged for re-display")
      ->check(CLI::Range(0.0, 1.0));

  // CLI11 reports a misspelled subcommand as a missing one; name it instead.
  if (argc > 1 && argv[1][0] != '-') {
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == argv[1]; });
    if (!known) {
      std::fprintf(stderr, "unknown subcommand '%s'\nRun with --help for more information.\n", argv[1]);
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    setup_logging(g.log_level);
    PipelineConfig cfg = resolve(g);
    if (cfg.policy.endpoint.empty()) cfg.policy.endpoint = cfg.oracle.endpoint;

    if (*ingest) {
      cfg.corpus = ingest_corpus;
      const auto r = ingest_stage(ingest_corpus, ingest_out, cfg);
      spdlog::info("ingested {} admissions ({} events)", r.admissions, r.events);
    } else if (*cohort) {
      cfg.corpus = cohort_corpus;
      const auto s = cohort_stage(cohort_corpus, cohort_out, cfg);
      spdlog::info("cohort: {} train, {} test", s.train.size(), s.test.size());
    } else if (*split) {
      cfg.corpus = split_corpus;
      const auto r = split_stage(split_corpus, split_manifest, parse_subset(split_subset), split_out, cfg);
      spdlog::info("split: {} items", r.items.size());
      for (const auto& [reason, n] : r.excluded) spdlog::info("  excluded {}: {}", reason, n);
    } else if (*generate) {
      apply(gen_oracle, cfg);
      auto gw = make_gateway(cfg.oracle);
      const auto r = generate_stage(gen_splits, gen_out, parse_categories(gen_category), *gw.gateway, cfg);
      spdlog::info("generated {} items ({} failed, {} fallback rubrics)", r.items.size(), r.failed, r.rubric_fallbacks);
    } else if (*grade) {
      apply(grade_oracle, cfg);
      auto gw = make_gateway(cfg.oracle);
      std::optional<fs::path> completions;
      if (!grade_completions.empty()) completions = grade_completions;
      const auto records = grade_stage(grade_items, completions, grade_out, *gw.gateway, cfg);
      spdlog::info("graded {} completions", records.size());
    } else if (*reward) {
      if (!reward_profile.empty()) cfg.reward_profile = parse_profile(reward_profile);
      if (!reward_family.empty()) cfg.policy.family = parse_family(reward_family);
      const auto r = reward_stage(reward_in, reward_out, cfg);
      spdlog::info("scored {} completions", r.size());
    } else if (*eval) {
      apply(eval_oracle, cfg);
      if (!eval_model_endpoint.empty()) cfg.policy.endpoint = eval_model_endpoint;
      if (!eval_model.empty()) cfg.policy.model = eval_model;
      if (!eval_family.empty()) cfg.policy.family = parse_family(eval_family);
      auto judge = make_gateway(cfg.oracle);
      auto policy = make_gateway(policy_oracle(cfg));
      const auto r = eval_stage(eval_items, eval_records, eval_report, *policy.gateway, *judge.gateway, cfg);
      spdlog::info("eval: {} items, aggregate {:.4f}, {} failed", r.report.n, r.report.aggregate, r.report.n_failed);
    } else if (*report) {
      std::optional<fs::path> baseline;
      if (!report_baseline.empty()) baseline = report_baseline;
      const auto doc = report_stage(report_records, baseline, report_out, cfg);
      spdlog::info("report: n={}, aggregate {:.4f}", doc.at("n").get<std::size_t>(), doc.at("aggregate").get<double>());
    } else if (*merge) {
      if (!merge_method.empty()) {
        const auto seed = cfg.merge.seed;
        cfg.merge = MergeConfig::defaults(parse_merge_method(merge_method));
        cfg.merge.seed = seed;
      }
      if (merge_rho) cfg.merge.rho = *merge_rho;
      if (merge_gamma) cfg.merge.gamma = *merge_gamma;
      if (merge_weight) cfg.merge.weight = *merge_weight;
      if (merge_seed) cfg.merge.seed = *merge_seed;
      if (!merge_aim.empty()) cfg.merge.aim = AimConfig{merge_aim, merge_quantile.value_or(AimConfig{}.quantile)};
      else if (merge_quantile && cfg.merge.aim) cfg.merge.aim->quantile = *merge_quantile;
      if (!merge_dtype.empty()) cfg.merge.out_dtype = parse_dtype(merge_dtype);
      const auto summary = merge_files(merge_base, merge_tuned, merge_out, cfg.merge, cfg.resolved_workers());
      json stamp = run_stamp("merge", cfg, {{"base", merge_base}, {"tuned", merge_tuned}});
      stamp["summary"] = to_json(summary);
      write_json(stamp_path(merge_out), stamp);
      spdlog::info("merged into {}", merge_out);
    } else if (*stats) {
      if (!stats_mode.empty()) cfg.stats.mode = parse_consensus_mode(stats_mode);
      if (stats_resamples) cfg.stats.bootstrap_resamples = *stats_resamples;
      stats_stage(stats_export, stats_md, stats_json, cfg);
      spdlog::info("wrote {} and {}", stats_md, stats_json);
    } else if (*serve_cmd) {
      if (serve_port) cfg.serve.port = *serve_port;
      if (!serve_host.empty()) cfg.serve.host = serve_host;
      if (serve_redisplay) cfg.serve.redisplay_probability = *serve_redisplay;
      fs::create_directories(serve_dir);
      const fs::path cases_path = serve_cases.empty() ? fs::path(serve_dir) / "cases.jsonl" : fs::path(serve_cases);
      const auto catalog = CaseCatalog::load(cases_path);
      AnnotationStore store(serve_dir);
      AnnotationServer server(store, catalog, load_tokens(serve_tokens), cfg.serve);
      return serve(server);
    }
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == ErrorCode::UnknownSubcommand || e.code() == ErrorCode::ConfigError ? kExitUsage : kExitStage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitStage;
  }
}
