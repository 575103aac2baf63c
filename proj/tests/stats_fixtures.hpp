#pragma once

// Synthetic annotation exports shaped to reproduce the published cohort
// counts. Each metric family gets its own export.

#include <string>
#include <utility>
#include <vector>

#include "crw/jsonio.hpp"
#include "crw/rubric.hpp"

namespace crw::fixtures {

inline std::string axis_name(std::size_t i) { return std::string(to_string(kAxes[i % kAxes.size()])); }

inline json criterion(const std::string& id, std::size_t axis, int points, json oracle_verdict, json verdict,
                      json not_relevant = false, bool is_new = false, bool is_modified = false) {
  return json{{"id", id},
              {"axis", axis_name(axis)},
              {"description", "criterion " + id},
              {"points", points},
              {"provenance", is_new ? "clinician-added" : is_modified ? "clinician-modified" : "oracle"},
              {"is_new", is_new},
              {"is_modified", is_modified},
              {"not_relevant", std::move(not_relevant)},
              {"order", 0},
              {"oracle_verdict", std::move(oracle_verdict)},
              {"verdict", std::move(verdict)},
              {"rationale", ""}};
}

inline json rubric_row(const std::string& rater, const std::string& experiment, const std::string& case_id,
                       json criteria, bool invalid = false) {
  return json{{"rater_id", rater},
              {"experiment_id", experiment},
              {"patient_id", "p-" + case_id},
              {"sample_id", case_id},
              {"submission_type", "clinical_reasoning"},
              {"is_invalid", invalid},
              {"invalid_reason", invalid ? "timeline unreadable" : ""},
              {"is_draft", false},
              {"results_metadata", {{"interaction_count", 1}, {"decision_time_seconds", 30.0}}},
              {"payload", {{"theme", "Context Seeking"}, {"criteria", std::move(criteria)}}}};
}

/// Spine: 1030 oracle criteria, 174 not relevant, 35 modified, 28 added.
/// Obesity: 1270 oracle criteria, 76 not relevant, none modified or added.
inline std::vector<json> relevance_export(std::size_t oracle_total, std::size_t not_relevant, std::size_t modified,
                                          std::size_t added, const std::string& experiment) {
  std::vector<json> rows;
  const std::size_t cases = oracle_total / 10;
  std::size_t idx = 0, mods = 0, adds = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    json crit = json::array();
    for (std::size_t k = 0; k < 10; ++k, ++idx) {
      const bool nr = idx < not_relevant;
      const bool mod = !nr && mods < modified;
      if (mod) ++mods;
      crit.push_back(criterion("c" + std::to_string(k), k, 5, true, nr ? json() : json(true), nr, false, mod));
    }
    if (adds < added) {
      crit.push_back(criterion("n1", c, 4, json(), true, false, true));
      ++adds;
    }
    rows.push_back(rubric_row("r1", experiment, experiment + "-" + std::to_string(c), crit));
  }
  return rows;
}

/// Two raters over criteria of a 2x2 table: a both met, b only r1, c only r2, d neither.
inline std::vector<json> irr_export(std::size_t a, std::size_t b, std::size_t c, std::size_t d,
                                    const std::string& experiment) {
  std::vector<std::pair<bool, bool>> cells;
  cells.insert(cells.end(), a, {true, true});
  cells.insert(cells.end(), b, {true, false});
  cells.insert(cells.end(), c, {false, true});
  cells.insert(cells.end(), d, {false, false});
  std::vector<json> rows;
  for (std::size_t start = 0, case_no = 0; start < cells.size(); start += 8, ++case_no) {
    json c1 = json::array(), c2 = json::array();
    for (std::size_t k = start; k < std::min(cells.size(), start + 8); ++k) {
      const std::string id = "c" + std::to_string(k - start);
      c1.push_back(criterion(id, k, 5, true, cells[k].first));
      c2.push_back(criterion(id, k, 5, true, cells[k].second));
    }
    const std::string cid = experiment + "-" + std::to_string(case_no);
    rows.push_back(rubric_row("r1", experiment, cid, c1));
    rows.push_back(rubric_row("r2", experiment, cid, c2));
  }
  return rows;
}

/// One rater; judge verdict against clinician verdict with the given counts.
inline std::vector<json> judge_export(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn,
                                      const std::string& experiment) {
  std::vector<std::pair<bool, bool>> cells;
  cells.insert(cells.end(), tp, {true, true});
  cells.insert(cells.end(), fp, {true, false});
  cells.insert(cells.end(), fn, {false, true});
  cells.insert(cells.end(), tn, {false, false});
  std::vector<json> rows;
  for (std::size_t start = 0, case_no = 0; start < cells.size(); start += 10, ++case_no) {
    json crit = json::array();
    for (std::size_t k = start; k < std::min(cells.size(), start + 10); ++k) {
      crit.push_back(criterion("c" + std::to_string(k - start), k, 5, cells[k].first, cells[k].second));
    }
    rows.push_back(rubric_row("r1", experiment, experiment + "-" + std::to_string(case_no), crit));
  }
  return rows;
}

/// (oracle criteria met, clinician criteria met, number of cases) over 10 positive criteria.
inline const std::vector<std::tuple<int, int, int>>& score_multiplicities() {
  static const std::vector<std::tuple<int, int, int>> m = {
      {3, 3, 2},  {3, 4, 3},  {4, 4, 2},  {4, 5, 8},  {4, 8, 2},  {4, 9, 1},  {5, 3, 2},  {5, 4, 4},  {5, 6, 1},
      {5, 7, 2},  {5, 9, 1},  {5, 10, 1}, {6, 5, 4},  {6, 6, 4},  {6, 7, 1},  {6, 8, 2},  {6, 9, 2},  {6, 10, 1},
      {7, 4, 1},  {7, 5, 3},  {7, 6, 6},  {7, 7, 4},  {7, 8, 2},  {7, 9, 2},  {8, 4, 2},  {8, 5, 3},  {8, 6, 3},
      {8, 7, 1},  {8, 8, 2},  {8, 9, 2},  {8, 10, 3}, {9, 4, 2},  {9, 6, 2},  {9, 7, 2},  {9, 8, 2},  {9, 9, 3},
      {9, 10, 4}, {10, 6, 1}, {10, 7, 2}, {10, 8, 3}, {10, 10, 2}};
  return m;
}

inline std::vector<json> score_export() {
  std::vector<json> rows;
  int case_no = 0;
  for (const auto& [ko, kc, count] : score_multiplicities()) {
    for (int rep = 0; rep < count; ++rep, ++case_no) {
      json crit = json::array();
      for (int k = 0; k < 10; ++k) {
        crit.push_back(criterion("c" + std::to_string(k), static_cast<std::size_t>(k), 5, k < ko, k < kc));
      }
      rows.push_back(rubric_row("r1", "score", "s-" + std::to_string(case_no), crit));
    }
  }
  return rows;
}

struct PairVerdict {
  std::string rater;
  std::string choice;  // A, B or tie as displayed
  bool m1_left = true;
  std::size_t length_a = 100;
  std::size_t length_b = 100;
  double seconds = 10.0;
  std::string redisplay;  // empty when not re-displayed

  PairVerdict(std::string r, std::string c, bool left, std::size_t la = 100, std::size_t lb = 100, double s = 10.0,
              std::string re = {})
      : rater(std::move(r)), choice(std::move(c)), m1_left(left), length_a(la), length_b(lb), seconds(s),
        redisplay(std::move(re)) {}
};

inline json ab_row(const std::string& rater, const std::string& experiment, const std::string& case_id,
                   json pairs, bool invalid = false) {
  return json{{"rater_id", rater},
              {"experiment_id", experiment},
              {"patient_id", "p-" + case_id},
              {"sample_id", case_id},
              {"submission_type", "ab_clinical_reasoning"},
              {"is_invalid", invalid},
              {"invalid_reason", invalid ? "responses truncated" : ""},
              {"is_draft", false},
              {"results_metadata", {{"interaction_count", 3}, {"decision_time_seconds", 60.0}}},
              {"payload", {{"pairs", std::move(pairs)}}}};
}

inline json pair_entry(const std::string& pair_id, const std::string& m1, const std::string& m2,
                       const PairVerdict& v) {
  json p{{"pair_id", pair_id},
         {"model_1", m1},
         {"model_2", m2},
         {"actualModelA", m1},
         {"actualModelB", m2},
         {"displayedAsA", v.m1_left ? m1 : m2},
         {"displayedAsB", v.m1_left ? m2 : m1},
         {"choice", v.choice},
         {"length_a", v.length_a},
         {"length_b", v.length_b},
         {"decision_time_seconds", v.seconds}};
  if (!v.redisplay.empty()) p["redisplay_choice"] = v.redisplay;
  return p;
}

/// Display label that selects m1 (or m2) given the pane assignment.
inline std::string pick(bool want_m1, bool m1_left) { return want_m1 == m1_left ? "A" : "B"; }

/// Spine, ours vs GPT-5: 24 strict (all for ours), 1 semi, 53 single, 8 non-consensus.
inline std::vector<json> bucket_export() {
  std::vector<json> rows;
  int n = 0;
  auto dyad = [&](std::vector<PairVerdict> vs) {
    const std::string cid = "b-" + std::to_string(n++);
    for (const auto& v : vs) {
      rows.push_back(ab_row(v.rater, "spine-ab", cid, json::array({pair_entry("ours_vs_gpt5", "ours", "gpt-5", v)})));
    }
  };
  for (int i = 0; i < 24; ++i) {
    const bool left = i % 2 == 0;
    dyad({{"r1", pick(true, left), left}, {"r2", pick(true, left), left}});
  }
  dyad({{"r1", pick(true, true), true}, {"r2", "tie", true}});
  for (int i = 0; i < 53; ++i) dyad({{i % 2 ? "r1" : "r2", pick(i % 3 != 0, true), true}});
  for (int i = 0; i < 8; ++i) dyad({{"r1", pick(true, false), false}, {"r2", pick(false, false), false}});
  return rows;
}

/// 79 dual-rated strict dyads (158 decisive verdicts): 83 pick the left
/// pane and 156 pick the longer response.
inline std::vector<json> bias_export() {
  std::vector<json> rows;
  std::size_t left_picks = 0;
  for (int i = 0; i < 79; ++i) {
    const std::string cid = "pb-" + std::to_string(i);
    // ours wins every dyad and is longer except in one dyad
    const bool ours_longer = i != 0;
    for (const char* rater : {"r1", "r2"}) {
      PairVerdict v{rater, "", true};
      // the first 83 verdicts show ours on the left
      v.m1_left = left_picks < 83;
      v.choice = pick(true, v.m1_left);
      const std::size_t ours_len = ours_longer ? 900 : 400, other_len = 600;
      v.length_a = v.m1_left ? ours_len : other_len;
      v.length_b = v.m1_left ? other_len : ours_len;
      if (v.m1_left) ++left_picks;
      rows.push_back(ab_row(rater, "spine-bias", cid, json::array({pair_entry("ours_vs_gpt5", "ours", "gpt-5", v)})));
    }
  }
  return rows;
}

/// 79 verdicts from R1 whose nearest-rank median is 13.2 s, P75 40.8 s,
/// P90 93.8 s; ten are re-displayed and two revised.
inline std::vector<json> effort_export() {
  std::vector<double> times;
  for (int r = 1; r <= 79; ++r) {
    double t;
    if (r < 40) t = 0.3 * r;
    else if (r == 40) t = 13.2;
    else if (r < 60) t = 14.0 + (r - 41);
    else if (r == 60) t = 40.8;
    else if (r < 72) t = 41.0 + 4.0 * (r - 61);
    else if (r == 72) t = 93.8;
    else t = 100.0 + r;
    times.push_back(t);
  }
  std::vector<json> rows;
  for (int i = 0; i < 79; ++i) {
    // reverse order so storage order differs from sorted order
    PairVerdict v{"R1", i % 10 == 0 ? "tie" : "A", true, 100, 100, times[78 - i]};
    if (i < 10) v.redisplay = i < 2 ? "B" : v.choice;
    rows.push_back(ab_row("R1", "spine-effort", "e-" + std::to_string(i),
                          json::array({pair_entry("ours_vs_gpt5", "ours", "gpt-5", v)})));
  }
  return rows;
}

}  // namespace crw::fixtures
