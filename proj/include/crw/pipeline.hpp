#pragma once

// Pipeline stages as functions over files. Each stage reads frozen upstream
// artifacts and writes a self-contained output stamped with the resolved
// configuration, so any stage can be rerun on its own.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "crw/cohort.hpp"
#include "crw/config.hpp"
#include "crw/eval.hpp"
#include "crw/http_backend.hpp"
#include "crw/splitter.hpp"
#include "crw/stats.hpp"
#include "crw/timeline.hpp"

namespace crw {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Provenance block written next to (or into) every artifact.
inline json run_stamp(std::string_view stage, const PipelineConfig& cfg, json inputs, json counts = json::object()) {
  return json{{"stage", stage},
              {"version", kToolVersion},
              {"created_at", format_iso8601(system_now())},
              {"inputs", std::move(inputs)},
              {"counts", std::move(counts)},
              {"config", to_json(cfg)}};
}

/// JSON-lines artifacts carry their stamp in "<file>.run.json".
inline fs::path stamp_path(const fs::path& artifact) { return fs::path(artifact.string() + ".run.json"); }

inline void write_stamped_jsonl(const fs::path& path, const std::vector<json>& rows, const json& stamp) {
  write_jsonl(path, rows);
  write_json(stamp_path(path), stamp);
}

// ---------------------------------------------------------------------------
// ingest / cohort / split

struct IngestResult {
  std::size_t admissions = 0;
  std::size_t events = 0;
};

inline IngestResult ingest_stage(const fs::path& corpus, const fs::path& out, const PipelineConfig& cfg) {
  const auto admissions = load_corpus(corpus);
  std::vector<json> rows;
  IngestResult r;
  for (const auto& t : admissions) {
    rows.push_back(to_json(t));
    r.events += t.timeline.size();
  }
  r.admissions = rows.size();
  write_stamped_jsonl(out, rows,
                      run_stamp("ingest", cfg, {{"corpus", corpus.string()}},
                                {{"admissions", r.admissions}, {"events", r.events}}));
  return r;
}

inline CohortSplit cohort_stage(const fs::path& corpus, const fs::path& out, const PipelineConfig& cfg) {
  const auto admissions = load_corpus(corpus);
  const auto split = build_cohort(admissions, cfg.seed);
  json doc = to_json(split);
  doc["run"] = run_stamp("cohort", cfg, {{"corpus", corpus.string()}},
                         {{"corpus", admissions.size()}, {"train", split.train.size()}, {"test", split.test.size()}});
  write_json(out, doc);
  return split;
}

enum class SplitSubset { Train, Test, All };

inline SplitSubset parse_subset(std::string_view s) {
  if (s == "train") return SplitSubset::Train;
  if (s == "test") return SplitSubset::Test;
  if (s == "all") return SplitSubset::All;
  fail(ErrorCode::InvalidArgument, "subset must be train, test or all");
}

struct SplitStageResult {
  std::vector<SplitItem> items;
  std::map<std::string, std::size_t> excluded;  // reason -> count
};

/// Splits the manifest's admissions. Those failing the outcome constraints,
/// lacking a discharge time, or with an ICD-only past after retries are
/// excluded and counted.
inline SplitStageResult split_stage(const fs::path& corpus, const fs::path& manifest, SplitSubset subset,
                                    const fs::path& out, const PipelineConfig& cfg) {
  const auto admissions = load_corpus(corpus);
  const auto split = cohort_split_from_json(parse_json(read_file(manifest), manifest.string()));
  std::vector<AdmissionKey> wanted;
  if (subset != SplitSubset::Test) wanted.insert(wanted.end(), split.train.begin(), split.train.end());
  if (subset != SplitSubset::Train) wanted.insert(wanted.end(), split.test.begin(), split.test.end());
  std::sort(wanted.begin(), wanted.end());

  std::map<AdmissionKey, const AdmissionTimeline*> by_key;
  for (const auto& t : admissions) by_key[t.key] = &t;
  const auto registry = build_registry(admissions);

  SplitStageResult r;
  std::vector<json> rows;
  for (const auto& key : wanted) {
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      fail(ErrorCode::KeyMismatch,
           "manifest admission " + std::to_string(key.subject_id) + "/" + std::to_string(key.hadm_id) + " not in corpus");
    }
    const auto& t = *it->second;
    try {
      const auto check = check_outcome_constraints(t, registry);
      if (!check.pass) {
        ++r.excluded[check.reason];
        continue;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingDischargeTime) throw;
      spdlog::warn("{}/{}: no discharge time, excluded", key.subject_id, key.hadm_id);
      ++r.excluded["missing-discharge-time"];
      continue;
    }
    auto item = split_admission(t, cfg.seed);
    if (!item) {
      ++r.excluded[t.timeline.size() < 2 ? "too-few-events" : "empty-past-after-strip"];
      continue;
    }
    rows.push_back(to_json(*item));
    r.items.push_back(std::move(*item));
  }
  json counts = {{"requested", wanted.size()}, {"items", r.items.size()}, {"excluded", r.excluded}};
  write_stamped_jsonl(out, rows,
                      run_stamp("split", cfg, {{"corpus", corpus.string()}, {"manifest", manifest.string()}}, counts));
  return r;
}

// ---------------------------------------------------------------------------
// generate / grade / reward

inline std::vector<ActionCategory> parse_categories(std::string_view s) {
  if (s == "all") return {kActionCategories.begin(), kActionCategories.end()};
  auto c = parse_action_category(s);
  if (!c) fail(ErrorCode::InvalidArgument, "unknown action category '" + std::string(s) + "'");
  return {*c};
}

inline std::vector<SplitItem> read_split_items(const fs::path& path) {
  std::vector<SplitItem> out;
  for (const auto& row : read_jsonl(path)) out.push_back(split_item_from_json(row));
  return out;
}

inline std::vector<EvalItem> read_eval_items(const fs::path& path) {
  std::vector<EvalItem> out;
  for (const auto& row : read_jsonl(path)) out.push_back(eval_item_from_json(row));
  return out;
}

inline std::vector<EvalRecord> read_records(const fs::path& path) {
  std::vector<EvalRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(record_from_json(row));
  return out;
}

struct GenerateResult {
  std::vector<EvalItem> items;
  std::size_t failed = 0;
  std::size_t rubric_fallbacks = 0;
};

/// One query, reference and rubric per (split, category). An item whose
/// query cannot be obtained is logged and dropped; the stage fails only when
/// nothing was produced.
inline GenerateResult generate_stage(const fs::path& splits, const fs::path& out,
                                     const std::vector<ActionCategory>& categories, OracleGateway& oracle,
                                     const PipelineConfig& cfg) {
  const auto items = read_split_items(splits);
  const std::size_t n = items.size() * categories.size();
  std::vector<std::optional<EvalItem>> slots(n);
  parallel_for(n, cfg.resolved_workers(), [&](std::size_t i) {
    const auto& item = items[i / categories.size()];
    const auto cat = categories[i % categories.size()];
    try {
      slots[i] = build_eval_item(oracle, item, cat);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError) throw;
      spdlog::error("{}/{} {}: {}", item.key.subject_id, item.key.hadm_id, action_space(cat).name, e.what());
    }
  });
  GenerateResult r;
  std::vector<json> rows;
  for (auto& s : slots) {
    if (!s) {
      ++r.failed;
      continue;
    }
    if (s->rubric_fallback) ++r.rubric_fallbacks;
    rows.push_back(to_json(*s));
    r.items.push_back(std::move(*s));
  }
  if (n > 0 && r.items.empty()) fail(ErrorCode::EndpointUnavailable, "no item could be generated");
  json counts = {{"splits", items.size()}, {"items", r.items.size()}, {"failed", r.failed},
                 {"rubric_fallbacks", r.rubric_fallbacks}};
  write_stamped_jsonl(out, rows, run_stamp("generate", cfg, {{"splits", splits.string()}}, counts));
  return r;
}

/// The reference answer rendered as a think-then-text completion.
inline std::string reference_completion(const ClinicalQAPair& qa) {
  return "<think>\n" + qa.answer_reasoning + "\n</think>\n" + qa.final_answer;
}

struct Completion {
  std::string text;
  Family family = Family::ThinkThenText;
  std::string model;
};

/// Rows {key, completion, family?, model?}.
inline std::map<std::string, Completion> read_completions(const fs::path& path, Family default_family) {
  std::map<std::string, Completion> out;
  for (const auto& row : read_jsonl(path)) {
    if (!row.is_object() || !row.contains("key") || !row.contains("completion")) {
      fail(ErrorCode::MissingRequiredField, "completion rows need key and completion");
    }
    Completion c;
    c.text = row.at("completion").get<std::string>();
    c.family = row.contains("family") ? parse_family(row["family"].get<std::string>()) : default_family;
    c.model = row.value("model", std::string());
    const auto key = row.at("key").get<std::string>();
    if (!out.emplace(key, std::move(c)).second) fail(ErrorCode::KeyMismatch, "duplicate completion for " + key);
  }
  return out;
}

/// Grades supplied completions, or the oracle references when none are given.
inline std::vector<EvalRecord> grade_stage(const fs::path& items_path, const std::optional<fs::path>& completions_path,
                                           const fs::path& out, OracleGateway& judge, const PipelineConfig& cfg) {
  const auto items = read_eval_items(items_path);
  std::map<std::string, Completion> completions;
  if (completions_path) {
    completions = read_completions(*completions_path, cfg.policy.family);
    for (const auto& [key, c] : completions) {
      const bool known = std::any_of(items.begin(), items.end(), [&](const EvalItem& e) { return e.key() == key; });
      if (!known) fail(ErrorCode::KeyMismatch, "completion for unknown item " + key);
    }
  }
  std::vector<std::optional<EvalRecord>> slots(items.size());
  parallel_for(items.size(), cfg.resolved_workers(), [&](std::size_t i) {
    const auto& e = items[i];
    Completion c;
    if (completions_path) {
      auto it = completions.find(e.key());
      if (it == completions.end()) return;
      c = it->second;
    } else {
      c = {reference_completion(e.qa), Family::ThinkThenText, "reference"};
    }
    EvalRecord rec;
    try {
      auto verdicts = judge.grade(c.text, e.item, e.qa, e.rubric);
      rec = make_record(e.key(), e.category, c.text, c.family, e.rubric, std::move(verdicts));
    } catch (const Error& err) {
      spdlog::error("grading {} failed: {}", e.key(), err.what());
      rec.key = e.key();
      rec.category = e.category;
      rec.candidate = c.text;
      rec.error = std::string(to_string(err.code())) + ": " + err.detail();
    }
    rec.model = c.model;
    slots[i] = std::move(rec);
  });
  std::vector<EvalRecord> records;
  std::vector<json> rows;
  for (auto& s : slots) {
    if (!s) continue;
    rows.push_back(to_json(*s));
    records.push_back(std::move(*s));
  }
  const auto failed = std::count_if(records.begin(), records.end(), [](const EvalRecord& r) { return r.error.has_value(); });
  json inputs = {{"items", items_path.string()}, {"completions", completions_path ? json(completions_path->string()) : json()}};
  write_stamped_jsonl(out, rows, run_stamp("grade", cfg, inputs, {{"records", records.size()}, {"failed", failed}}));
  return records;
}

/// Rows {completion, rubric, verdicts, profile?, family?, key?}.
inline std::vector<RewardBreakdown> reward_stage(const fs::path& in, const fs::path& out, const PipelineConfig& cfg) {
  const auto rows = read_jsonl(in);
  std::vector<RewardBreakdown> results;
  std::vector<json> out_rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    try {
      if (!row.is_object()) fail(ErrorCode::SchemaViolation, "row must be an object");
      for (const char* f : {"completion", "rubric", "verdicts"}) {
        if (!row.contains(f)) fail(ErrorCode::MissingRequiredField, f);
      }
      const auto rubric = rubric_from_json(row["rubric"]);
      const auto verdicts = verdicts_from_json(row["verdicts"]);
      if (!same_key_set(rubric, verdicts)) fail(ErrorCode::KeyMismatch, "verdict ids differ from rubric ids");
      const auto profile = row.contains("profile") ? parse_profile(row["profile"].get<std::string>()) : cfg.reward_profile;
      const auto family = row.contains("family") ? parse_family(row["family"].get<std::string>()) : cfg.policy.family;
      const auto r = reward_stack(row["completion"].get<std::string>(), family, rubric, verdicts, profile);
      json o = to_json(r);
      if (row.contains("key")) o["key"] = row["key"];
      o["profile"] = to_string(profile);
      o["family"] = to_string(family);
      out_rows.push_back(std::move(o));
      results.push_back(r);
    } catch (const Error& e) {
      throw Error(e.code(), "row " + std::to_string(i + 1) + ": " + e.detail());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "row " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  write_stamped_jsonl(out, out_rows, run_stamp("reward", cfg, {{"input", in.string()}}, {{"rows", results.size()}}));
  return results;
}

// ---------------------------------------------------------------------------
// eval / report

inline json report_document(std::span<const EvalRecord> records, const std::optional<std::vector<EvalRecord>>& baseline) {
  json doc = to_json(aggregate(records));
  if (baseline) doc["head_to_head"] = to_json(head_to_head(records, *baseline));
  return doc;
}

struct EvalStageResult {
  std::vector<EvalRecord> records;
  AggregateReport report;
};

inline EvalStageResult eval_stage(const fs::path& items_path, const fs::path& records_out, const fs::path& report_out,
                                  OracleGateway& policy, OracleGateway& judge, const PipelineConfig& cfg) {
  const auto items = read_eval_items(items_path);
  EvalStageResult r;
  r.records = run_eval(items, policy, cfg.policy, judge, cfg.resolved_workers());
  std::vector<json> rows;
  for (const auto& rec : r.records) rows.push_back(to_json(rec));
  const json inputs = {{"items", items_path.string()}};
  write_stamped_jsonl(records_out, rows, run_stamp("eval", cfg, inputs, {{"records", rows.size()}}));
  r.report = aggregate(r.records);
  json doc = to_json(r.report);
  doc["run"] = run_stamp("eval", cfg, inputs, {{"records", rows.size()}});
  write_json(report_out, doc);
  return r;
}

/// Re-aggregates persisted records; the numbers depend on the records only.
inline json report_stage(const fs::path& records_path, const std::optional<fs::path>& baseline_path, const fs::path& out,
                         const PipelineConfig& cfg) {
  const auto records = read_records(records_path);
  std::optional<std::vector<EvalRecord>> baseline;
  if (baseline_path) baseline = read_records(*baseline_path);
  json doc = report_document(records, baseline);
  json inputs = {{"records", records_path.string()}, {"baseline", baseline_path ? json(baseline_path->string()) : json()}};
  json stamped = doc;
  stamped["run"] = run_stamp("report", cfg, inputs, {{"records", records.size()}});
  write_json(out, stamped);
  return doc;
}

// ---------------------------------------------------------------------------
// stats

inline json stats_stage(const fs::path& export_path, const fs::path& md_out, const fs::path& json_out,
                        const PipelineConfig& cfg) {
  const auto rows = read_jsonl(export_path);
  const auto data = load_export(rows);
  json report = stats_report(data, cfg.stats);
  write_file_atomic(md_out, stats_markdown(report));
  json stamped = report;
  stamped["run"] = run_stamp("stats", cfg, {{"export", export_path.string()}}, {{"rows", rows.size()}});
  write_json(json_out, stamped);
  return report;
}

}  // namespace crw
