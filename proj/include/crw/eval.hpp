#pragma once

// Evaluation: policy generation over CLR-POMDP items, grading, aggregation
// and head-to-head comparison.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "crw/distributions.hpp"
#include "crw/oracle.hpp"
#include "crw/parallel.hpp"

namespace crw {

/// A split item with its generated query, reference and rubric.
struct EvalItem {
  SplitItem item;
  ClinicalQAPair qa;
  Rubric rubric;
  std::string category;
  bool rubric_fallback = false;

  std::string key() const {
    return std::to_string(item.key.subject_id) + "/" + std::to_string(item.key.hadm_id) + "/" +
           std::to_string(item.spec.seed) + "/" + category;
  }
};

inline json to_json(const EvalItem& e) {
  return json{{"key", e.key()},
              {"category", e.category},
              {"item", to_json(e.item)},
              {"qa", to_json(e.qa)},
              {"rubric", to_json(e.rubric)},
              {"rubric_fallback", e.rubric_fallback}};
}

inline EvalItem eval_item_from_json(const json& doc) {
  EvalItem e;
  e.item = split_item_from_json(doc.at("item"));
  e.qa = qa_from_json(doc.at("qa"));
  e.rubric = rubric_from_json(doc.at("rubric"));
  e.category = doc.value("category", e.qa.action_space_category);
  e.rubric_fallback = doc.value("rubric_fallback", false);
  return e;
}

/// Query/reference, then rubric. A rubric that cannot be obtained after
/// retries is replaced by the fallback table and flagged.
inline EvalItem build_eval_item(OracleGateway& oracle, const SplitItem& item, ActionCategory category) {
  EvalItem e;
  e.item = item;
  e.category = std::string(action_space(category).name);
  e.qa = oracle.generate_qa(item, category).qa;
  try {
    e.rubric = oracle.generate_rubric(item, e.qa).rubric;
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ConfigError) throw;
    spdlog::warn("rubric generation failed for {} ({}); using fallback rubric", e.key(), err.what());
    e.rubric = fallback_rubric();
    e.rubric_fallback = true;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Records

struct CriterionRow {
  std::string id;
  Axis axis = Axis::Accuracy;
  int points = 0;
  bool met = false;
};

struct EvalRecord {
  std::string key;
  std::string category;
  std::string model;
  std::string candidate;
  CompletionParse parse;
  VerdictVector verdicts;
  double score = 0.0;
  std::vector<CriterionRow> rows;
  std::optional<std::string> error;  // set when the item failed; excluded from aggregation
};

inline EvalRecord make_record(std::string key, std::string category, std::string candidate, Family family,
                              const Rubric& rubric, VerdictVector verdicts) {
  EvalRecord r;
  r.key = std::move(key);
  r.category = std::move(category);
  r.candidate = std::move(candidate);
  r.parse = parse_completion(r.candidate, family);
  r.score = compute_rubric_score(rubric, verdicts);
  for (const auto& c : rubric.criteria) r.rows.push_back({c.id, c.axis, c.points, verdicts.verdicts.at(c.id)});
  r.verdicts = std::move(verdicts);
  return r;
}

inline json to_json(const EvalRecord& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"id", row.id}, {"axis", to_string(row.axis)}, {"points", row.points}, {"met", row.met}});
  }
  json out = {{"key", r.key},
              {"category", r.category},
              {"model", r.model},
              {"candidate", r.candidate},
              {"parse", to_json(r.parse)},
              {"verdicts", to_json(r.verdicts)},
              {"score", r.score},
              {"rows", rows}};
  if (r.error) out["error"] = *r.error;
  return out;
}

inline EvalRecord record_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("key")) fail(ErrorCode::SchemaViolation, "record needs a key");
  const bool failed = doc.contains("error") && doc["error"].is_string();
  if (!failed && !(doc.contains("score") && doc.contains("rows"))) {
    fail(ErrorCode::SchemaViolation, "record " + doc["key"].dump() + " has neither score/rows nor error");
  }
  EvalRecord r;
  r.key = doc.at("key").get<std::string>();
  r.category = doc.value("category", std::string());
  r.model = doc.value("model", std::string());
  r.candidate = doc.value("candidate", std::string());
  if (auto p = doc.find("parse"); p != doc.end() && p->is_object()) {
    r.parse.family = parse_family(p->value("family", std::string("think-then-text")));
    if (auto t = p->find("think"); t != p->end() && t->is_string()) r.parse.think = t->get<std::string>();
    if (auto a = p->find("answer"); a != p->end() && a->is_string()) r.parse.answer = a->get<std::string>();
  }
  if (auto v = doc.find("verdicts"); v != doc.end()) r.verdicts = verdicts_from_json(*v);
  r.score = doc.value("score", 0.0);
  for (const auto& row : doc.value("rows", json::array())) {
    const auto axis = parse_axis(row.at("axis").get<std::string>());
    if (!axis) fail(ErrorCode::SchemaViolation, "unknown axis in record row");
    r.rows.push_back({row.at("id").get<std::string>(), *axis, row.at("points").get<int>(), row.at("met").get<bool>()});
  }
  if (auto e = doc.find("error"); e != doc.end() && e->is_string()) r.error = e->get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Running

struct PolicyConfig {
  std::string endpoint;
  std::string token;
  std::string model = "policy";
  Family family = Family::ThinkThenText;
  Sampling sampling{0.2, 1.0, 0, 4096};
  std::size_t max_tokens = kDefaultMaxTokens;  // context budget for the past
};

inline ChatRequest policy_request(const EvalItem& e, const PolicyConfig& cfg) {
  ChatRequest req;
  req.kind = RequestKind::Policy;
  req.system = prompts::policy_system(cfg.family);
  const auto past = serialize_events(past_view(e.item), e.item.past, TokenBudget{cfg.max_tokens});
  req.user = prompts::policy_user(e.item.demographics.dump(), past.text, e.qa.question, cfg.family);
  req.sampling = cfg.sampling;
  req.context = {{"question", e.qa.question}, {"family", to_string(cfg.family)}};
  return req;
}

/// One generation and one grading per item. Failures are recorded on the
/// item's record and the run continues. Output order follows `items`.
inline std::vector<EvalRecord> run_eval(std::span<const EvalItem> items, OracleGateway& policy, const PolicyConfig& cfg,
                                        OracleGateway& judge, std::size_t workers) {
  std::vector<EvalRecord> out(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const auto& e = items[i];
    try {
      std::string candidate = policy.call(policy_request(e, cfg), [](const std::string& s) { return s; });
      auto verdicts = judge.grade(candidate, e.item, e.qa, e.rubric);
      out[i] = make_record(e.key(), e.category, std::move(candidate), cfg.family, e.rubric, std::move(verdicts));
    } catch (const Error& err) {
      spdlog::error("item {} failed: {}", e.key(), err.what());
      out[i].key = e.key();
      out[i].category = e.category;
      out[i].error = std::string(to_string(err.code())) + ": " + err.detail();
    }
    out[i].model = cfg.model;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateReport {
  std::size_t n = 0;
  std::size_t n_failed = 0;
  double aggregate = 0.0;        // mean per-item score (headline)
  double aggregate_micro = 0.0;  // pooled earned / pooled positive points
  std::map<Axis, double> per_axis;
  std::map<std::string, double> per_action;        // item-mean
  std::map<std::string, double> per_action_micro;  // pooled
  std::optional<double> critical_accuracy;
  std::size_t critical_n = 0;
  double negative_trigger_rate = 0.0;
  std::size_t negative_n = 0;
  double mean_length_chars = 0.0;
};

inline constexpr int kCriticalPoints = 8;

namespace detail {

struct Pool {
  double earned = 0;
  double positive = 0;
  double ratio() const { return positive > 0 ? std::clamp(earned / positive, 0.0, 1.0) : 0.0; }
  void add(const CriterionRow& row) {
    if (row.met) earned += row.points;
    if (row.points > 0) positive += row.points;
  }
};

}  // namespace detail

inline AggregateReport aggregate(std::span<const EvalRecord> records) {
  AggregateReport rep;
  detail::Pool all;
  std::map<Axis, detail::Pool> axes;
  std::map<std::string, detail::Pool> actions;
  std::map<std::string, std::pair<double, std::size_t>> action_means;
  std::size_t critical_correct = 0, negatives_met = 0;
  double score_sum = 0, length_sum = 0;
  for (const auto& r : records) {
    if (r.error) {
      ++rep.n_failed;
      continue;
    }
    ++rep.n;
    score_sum += r.score;
    length_sum += static_cast<double>(r.candidate.size());
    auto& am = action_means[r.category];
    am.first += r.score;
    ++am.second;
    for (const auto& row : r.rows) {
      all.add(row);
      axes[row.axis].add(row);
      actions[r.category].add(row);
      if (row.axis == Axis::Accuracy && std::abs(row.points) >= kCriticalPoints) {
        ++rep.critical_n;
        if (row.met == (row.points > 0)) ++critical_correct;
      }
      if (row.points < 0) {
        ++rep.negative_n;
        if (row.met) ++negatives_met;
      }
    }
  }
  if (rep.n == 0) fail(ErrorCode::EmptyRecordSet, "no successful records to aggregate");
  const double n = static_cast<double>(rep.n);
  rep.aggregate = score_sum / n;
  rep.aggregate_micro = all.ratio();
  rep.mean_length_chars = length_sum / n;
  for (Axis a : kAxes) rep.per_axis[a] = axes[a].ratio();
  for (const auto& [cat, pool] : actions) rep.per_action_micro[cat] = pool.ratio();
  for (const auto& [cat, m] : action_means) rep.per_action[cat] = m.first / static_cast<double>(m.second);
  if (rep.critical_n > 0) rep.critical_accuracy = static_cast<double>(critical_correct) / static_cast<double>(rep.critical_n);
  if (rep.negative_n > 0) rep.negative_trigger_rate = static_cast<double>(negatives_met) / static_cast<double>(rep.negative_n);
  return rep;
}

inline json to_json(const AggregateReport& r) {
  json axes = json::object();
  for (const auto& [a, v] : r.per_axis) axes[std::string(to_string(a))] = v;
  return json{{"n", r.n},
              {"n_failed", r.n_failed},
              {"aggregate", r.aggregate},
              {"aggregate_micro", r.aggregate_micro},
              {"per_axis", axes},
              {"per_action", r.per_action},
              {"per_action_micro", r.per_action_micro},
              {"critical_accuracy", r.critical_accuracy ? json(*r.critical_accuracy) : json()},
              {"critical_n", r.critical_n},
              {"negative_trigger_rate", r.negative_trigger_rate},
              {"negative_n", r.negative_n},
              {"mean_length_chars", r.mean_length_chars}};
}

// ---------------------------------------------------------------------------
// Head to head

struct HeadToHead {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  WilcoxonResult wilcoxon;
};

/// Per-item comparison of A against B over identical key sets; ties are
/// exact score equality.
inline HeadToHead head_to_head(std::span<const EvalRecord> a, std::span<const EvalRecord> b) {
  std::map<std::string, double> sa, sb;
  for (const auto& r : a) {
    if (!r.error) sa[r.key] = r.score;
  }
  for (const auto& r : b) {
    if (!r.error) sb[r.key] = r.score;
  }
  if (sa.size() != sb.size()) fail(ErrorCode::KeyMismatch, "record sets differ in size");
  HeadToHead h;
  std::vector<double> diffs;
  for (const auto& [k, va] : sa) {
    auto it = sb.find(k);
    if (it == sb.end()) fail(ErrorCode::KeyMismatch, "key " + k + " missing from B");
    const double d = va - it->second;
    diffs.push_back(d);
    if (d > 0) {
      ++h.wins;
    } else if (d < 0) {
      ++h.losses;
    } else {
      ++h.ties;
    }
  }
  if (diffs.empty()) fail(ErrorCode::EmptyRecordSet, "no records to compare");
  h.wilcoxon = wilcoxon_signed_rank(diffs);
  return h;
}

inline json to_json(const HeadToHead& h) {
  const double n = static_cast<double>(h.wins + h.ties + h.losses);
  return json{{"wins", h.wins},
              {"ties", h.ties},
              {"losses", h.losses},
              {"tie_rate", n > 0 ? static_cast<double>(h.ties) / n : 0.0},
              {"wilcoxon",
               {{"w_plus", h.wilcoxon.w_plus},
                {"w_minus", h.wilcoxon.w_minus},
                {"n_used", h.wilcoxon.n_used},
                {"n_zero", h.wilcoxon.n_zero},
                {"p_value", h.wilcoxon.p_value},
                {"exact", h.wilcoxon.exact},
                {"degenerate", h.wilcoxon.degenerate}}}};
}

}  // namespace crw
