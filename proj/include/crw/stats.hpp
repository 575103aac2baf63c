#pragma once

// Clinician-annotation analysis: agreement statistics, judge and score
// alignment, A/B preference metrics and rater diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "crw/distributions.hpp"
#include "crw/parallel.hpp"
#include "crw/random.hpp"
#include "crw/reward.hpp"
#include "crw/rubric.hpp"

namespace crw {

struct StatResult {
  double value = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> p_value;
  std::size_t n = 0;
  bool degenerate = false;
};

inline json to_json(const StatResult& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(); };
  return json{{"value", s.value}, {"ci_low", opt(s.ci_low)}, {"ci_high", opt(s.ci_high)},
              {"p_value", opt(s.p_value)}, {"n", s.n}, {"degenerate", s.degenerate}};
}

// ---------------------------------------------------------------------------
// Agreement

/// Cohen's kappa over categorical labels. P_e = 1 gives value 0 flagged
/// degenerate.
inline StatResult cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "rater vectors differ in length");
  if (a.empty()) fail(ErrorCode::EmptyInput, "no paired ratings");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ma, mb;
  double agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[a[i]] += 1;
    mb[b[i]] += 1;
    if (a[i] == b[i]) agree += 1;
  }
  const double po = agree / n;
  double pe = 0;
  for (const auto& [k, ca] : ma) {
    if (auto it = mb.find(k); it != mb.end()) pe += (ca / n) * (it->second / n);
  }
  StatResult r;
  r.n = a.size();
  if (pe >= 1.0 - 1e-15) {
    r.degenerate = true;
    return r;
  }
  r.value = (po - pe) / (1 - pe);
  return r;
}

inline std::vector<int> as_ints(const std::vector<bool>& v) { return std::vector<int>(v.begin(), v.end()); }

inline StatResult cohen_kappa(const std::vector<bool>& a, const std::vector<bool>& b) {
  const auto ia = as_ints(a), ib = as_ints(b);
  return cohen_kappa(std::span<const int>(ia), std::span<const int>(ib));
}

/// Binary kappa straight from a 2x2 table: a = both yes, b = first yes only,
/// c = second yes only, d = both no.
inline StatResult cohen_kappa_table(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  if (n <= 0) fail(ErrorCode::EmptyInput, "empty table");
  const double po = (a + d) / n;
  const double pe = ((a + b) / n) * ((a + c) / n) + ((c + d) / n) * ((b + d) / n);
  StatResult r;
  r.n = static_cast<std::size_t>(n);
  if (pe >= 1.0 - 1e-15) {
    r.degenerate = true;
    return r;
  }
  r.value = (po - pe) / (1 - pe);
  return r;
}

/// Fleiss' kappa over an items x raters matrix of category labels.
inline StatResult fleiss_kappa(const std::vector<std::vector<int>>& m) {
  if (m.empty()) fail(ErrorCode::EmptyInput, "no items");
  const std::size_t raters = m.front().size();
  if (raters < 2) fail(ErrorCode::RaggedMatrix, "need at least two raters per item");
  std::set<int> cats;
  for (const auto& row : m) {
    if (row.size() != raters) fail(ErrorCode::RaggedMatrix, "items have different rater counts");
    cats.insert(row.begin(), row.end());
  }
  const double n = static_cast<double>(raters);
  const double N = static_cast<double>(m.size());
  std::map<int, double> totals;
  double pbar = 0;
  for (const auto& row : m) {
    std::map<int, double> counts;
    for (int v : row) counts[v] += 1;
    double s = 0;
    for (const auto& [k, c] : counts) {
      s += c * (c - 1);
      totals[k] += c;
    }
    pbar += s / (n * (n - 1));
  }
  pbar /= N;
  double pe = 0;
  for (const auto& [k, c] : totals) {
    const double p = c / (N * n);
    pe += p * p;
  }
  StatResult r;
  r.n = m.size();
  if (pe >= 1.0 - 1e-15) {
    r.degenerate = true;
    return r;
  }
  r.value = (pbar - pe) / (1 - pe);
  return r;
}

inline StatResult fleiss_kappa(const std::vector<std::vector<bool>>& m) {
  std::vector<std::vector<int>> im;
  for (const auto& row : m) im.emplace_back(row.begin(), row.end());
  return fleiss_kappa(im);
}

/// Nominal Krippendorff's alpha over items x raters with missing values;
/// items with fewer than two values are not pairable and are skipped.
inline StatResult krippendorff_alpha(const std::vector<std::vector<std::optional<int>>>& m) {
  std::map<std::pair<int, int>, double> coincidence;
  std::map<int, double> marginal;
  double total = 0;
  for (const auto& row : m) {
    std::vector<int> vals;
    for (const auto& v : row) {
      if (v) vals.push_back(*v);
    }
    const double mu = static_cast<double>(vals.size());
    if (mu < 2) continue;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      for (std::size_t j = 0; j < vals.size(); ++j) {
        if (i == j) continue;
        coincidence[{vals[i], vals[j]}] += 1.0 / (mu - 1);
      }
    }
  }
  for (const auto& [k, w] : coincidence) {
    marginal[k.first] += w;
    total += w;
  }
  if (total < 2) fail(ErrorCode::InsufficientPairs, "fewer than two pairable values");
  double disagree_obs = 0;
  for (const auto& [k, w] : coincidence) {
    if (k.first != k.second) disagree_obs += w;
  }
  double disagree_exp = 0;
  for (const auto& [c, nc] : marginal) {
    for (const auto& [k, nk] : marginal) {
      if (c != k) disagree_exp += nc * nk;
    }
  }
  StatResult r;
  r.n = static_cast<std::size_t>(std::llround(total));
  if (disagree_exp <= 0) {
    r.degenerate = true;
    return r;
  }
  r.value = 1.0 - (total - 1) * disagree_obs / disagree_exp;
  return r;
}

// ---------------------------------------------------------------------------
// Correlation and error

inline double mean_of(std::span<const double> x) {
  if (x.empty()) fail(ErrorCode::EmptyInput, "empty series");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "series differ in length");
  if (x.size() < 2) fail(ErrorCode::InsufficientPairs, "need at least two pairs");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) fail(ErrorCode::ConstantSeries, "correlation of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "series differ in length");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

inline double mean_absolute_error(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "series differ in length");
  if (x.empty()) fail(ErrorCode::EmptyInput, "empty series");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::fabs(x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

struct ScoreAlignment {
  StatResult mae;
  StatResult pearson;
  StatResult spearman;
};

inline ScoreAlignment score_alignment(std::span<const double> oracle, std::span<const double> clinician) {
  ScoreAlignment out;
  out.mae.value = mean_absolute_error(oracle, clinician);
  out.mae.n = out.pearson.n = out.spearman.n = oracle.size();
  auto corr = [&](StatResult& r, auto fn) {
    try {
      r.value = fn(oracle, clinician);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConstantSeries && e.code() != ErrorCode::InsufficientPairs) throw;
      r.degenerate = true;
    }
  };
  corr(out.pearson, [](auto a, auto b) { return crw::pearson(a, b); });
  corr(out.spearman, [](auto a, auto b) { return crw::spearman(a, b); });
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap

/// Percentile interval (nearest-rank 2.5 / 97.5) over case resamples with
/// replacement; replicate b uses derive_seed(seed, b).
template <typename Stat>
Interval bootstrap_ci(std::span<const double> values, Stat&& stat, std::size_t resamples = 1000,
                      std::uint64_t seed = kDefaultSeed, std::size_t workers = 1) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "bootstrap over an empty sample");
  if (resamples == 0) fail(ErrorCode::InvalidArgument, "need at least one resample");
  std::vector<double> reps(resamples);
  parallel_for(resamples, workers, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    std::vector<double> sample(values.size());
    for (auto& s : sample) s = values[rng.below(values.size())];
    reps[b] = stat(std::span<const double>(sample));
  });
  return {nearest_rank(reps, 2.5), nearest_rank(reps, 97.5)};
}

inline Interval bootstrap_mean_ci(std::span<const double> values, std::size_t resamples = 1000,
                                  std::uint64_t seed = kDefaultSeed) {
  return bootstrap_ci(values, [](std::span<const double> s) { return mean_of(s); }, resamples, seed);
}

// ---------------------------------------------------------------------------
// Annotation export model

struct CriterionAnnotation {
  Criterion criterion;
  std::optional<int> oracle_points;  // original points when modified
  bool is_new = false;
  bool is_modified = false;
  std::optional<bool> not_relevant;  // Step 1; null = not yet decided
  int order = 0;
  std::optional<bool> oracle_verdict;
  std::optional<bool> verdict;  // Step 2, clinician
  std::string rationale;

  bool oracle_authored() const { return !is_new; }
  bool retained() const { return not_relevant.has_value() && !*not_relevant; }
};

struct RubricAnnotation {
  std::string experiment;
  std::string case_id;
  std::string rater;
  bool is_invalid = false;
  std::string theme;
  std::vector<CriterionAnnotation> criteria;
};

enum class Choice { M1, M2, Tie };

struct RaterVerdict {
  std::string rater;
  Choice choice = Choice::Tie;
  std::string displayed_a;  // model shown in the left pane
  std::size_t length_m1 = 0;
  std::size_t length_m2 = 0;
  std::optional<double> decision_time_s;
  std::optional<Choice> redisplay_choice;
};

struct AbDyad {
  std::string experiment;
  std::string case_id;
  std::string pair_id;
  std::string model_1;
  std::string model_2;
  std::vector<RaterVerdict> verdicts;  // valid verdicts only
};

inline std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::M1: return "m1";
    case Choice::M2: return "m2";
    case Choice::Tie: return "tie";
  }
  return "?";
}

namespace detail {

inline std::optional<bool> opt_bool(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_boolean()) fail(ErrorCode::SchemaViolation, std::string(key) + " must be boolean or null");
  return it->get<bool>();
}

/// Display-relative choice ("A", "B", "tie") mapped onto the pair's models.
inline std::optional<Choice> map_choice(const json& v, const std::string& shown_a, const std::string& m1) {
  if (v.is_null()) return std::nullopt;
  const auto s = v.get<std::string>();
  if (s == "tie") return Choice::Tie;
  if (s != "A" && s != "B") fail(ErrorCode::SchemaViolation, "choice must be A, B or tie");
  const bool picked_left = s == "A";
  const bool left_is_m1 = shown_a == m1;
  return picked_left == left_is_m1 ? Choice::M1 : Choice::M2;
}

}  // namespace detail

inline CriterionAnnotation criterion_annotation_from_json(const json& c) {
  CriterionAnnotation a;
  a.criterion.id = c.at("id").get<std::string>();
  const auto axis = parse_axis(c.at("axis").get<std::string>());
  if (!axis) fail(ErrorCode::SchemaViolation, "unknown axis for " + a.criterion.id);
  a.criterion.axis = *axis;
  a.criterion.description = c.value("description", std::string());
  a.criterion.points = c.at("points").get<int>();
  a.criterion.provenance = parse_provenance(c.value("provenance", std::string("oracle")));
  if (auto it = c.find("oracle_points"); it != c.end() && !it->is_null()) a.oracle_points = it->get<int>();
  a.is_new = c.value("is_new", false);
  a.is_modified = c.value("is_modified", false);
  a.not_relevant = detail::opt_bool(c, "not_relevant");
  a.order = c.value("order", 0);
  a.oracle_verdict = detail::opt_bool(c, "oracle_verdict");
  a.verdict = detail::opt_bool(c, "verdict");
  a.rationale = c.value("rationale", std::string());
  if (a.is_new && a.criterion.provenance == Provenance::Oracle) a.criterion.provenance = Provenance::ClinicianAdded;
  return a;
}

inline json to_json(const CriterionAnnotation& a) {
  auto ob = [](const std::optional<bool>& v) { return v ? json(*v) : json(); };
  json j = to_json(a.criterion);
  j["oracle_points"] = a.oracle_points ? json(*a.oracle_points) : json();
  j["is_new"] = a.is_new;
  j["is_modified"] = a.is_modified;
  j["not_relevant"] = ob(a.not_relevant);
  j["order"] = a.order;
  j["oracle_verdict"] = ob(a.oracle_verdict);
  j["verdict"] = ob(a.verdict);
  j["rationale"] = a.rationale;
  return j;
}

inline std::vector<CriterionAnnotation> criteria_from_payload(const json& payload) {
  std::vector<CriterionAnnotation> out;
  for (const auto& c : payload.at("criteria")) out.push_back(criterion_annotation_from_json(c));
  return out;
}

struct ExportData {
  std::vector<RubricAnnotation> rubrics;
  std::vector<AbDyad> dyads;
  std::size_t rubric_total = 0;  // including invalid
  std::size_t rubric_invalid = 0;
  std::size_t ab_total = 0;
  std::size_t ab_invalid = 0;
};

/// Groups export rows into rubric annotations and (case, pair) dyads.
inline ExportData load_export(std::span<const json> rows) {
  ExportData out;
  std::map<std::tuple<std::string, std::string, std::string>, AbDyad> dyads;
  for (const auto& row : rows) {
    if (row.value("is_draft", false)) continue;
    const std::string type = row.at("submission_type").get<std::string>();
    const bool invalid = row.value("is_invalid", false);
    const std::string exp = row.value("experiment_id", std::string());
    const std::string case_id = row.at("sample_id").get<std::string>();
    const std::string rater = row.at("rater_id").get<std::string>();
    const auto& payload = row.at("payload");
    if (type == "clinical_reasoning") {
      ++out.rubric_total;
      RubricAnnotation a;
      a.experiment = exp;
      a.case_id = case_id;
      a.rater = rater;
      a.is_invalid = invalid;
      a.theme = payload.value("theme", std::string());
      a.criteria = criteria_from_payload(payload);
      if (invalid) ++out.rubric_invalid;
      out.rubrics.push_back(std::move(a));
    } else if (type == "ab_clinical_reasoning") {
      ++out.ab_total;
      if (invalid) {
        ++out.ab_invalid;
        continue;
      }
      for (const auto& p : payload.at("pairs")) {
        if (p.value("is_invalid", false)) continue;
        const std::string pair_id = p.at("pair_id").get<std::string>();
        const std::string m1 = p.at("model_1").get<std::string>();
        const std::string m2 = p.at("model_2").get<std::string>();
        const std::string shown_a = p.at("displayedAsA").get<std::string>();
        const std::string shown_b = p.at("displayedAsB").get<std::string>();
        if (!((shown_a == m1 && shown_b == m2) || (shown_a == m2 && shown_b == m1))) {
          fail(ErrorCode::SchemaViolation, "display mapping is not a bijection for " + case_id + "/" + pair_id);
        }
        auto choice = detail::map_choice(p.value("choice", json()), shown_a, m1);
        auto& d = dyads[{exp, case_id, pair_id}];
        d.experiment = exp;
        d.case_id = case_id;
        d.pair_id = pair_id;
        d.model_1 = m1;
        d.model_2 = m2;
        if (!choice) continue;
        RaterVerdict v;
        v.rater = rater;
        v.choice = *choice;
        v.displayed_a = shown_a;
        const auto la = p.value("length_a", std::size_t{0}), lb = p.value("length_b", std::size_t{0});
        v.length_m1 = shown_a == m1 ? la : lb;
        v.length_m2 = shown_a == m1 ? lb : la;
        if (auto t = p.find("decision_time_seconds"); t != p.end() && t->is_number()) v.decision_time_s = t->get<double>();
        if (auto r = p.find("redisplay_choice"); r != p.end()) v.redisplay_choice = detail::map_choice(*r, shown_a, m1);
        d.verdicts.push_back(std::move(v));
      }
    } else {
      fail(ErrorCode::SchemaViolation, "unknown submission_type '" + type + "'");
    }
  }
  for (auto& [k, d] : dyads) out.dyads.push_back(std::move(d));
  return out;
}

// ---------------------------------------------------------------------------
// Phase 1

struct RubricQuality {
  double validity_rate = 1.0;
  double relevance_rate = 1.0;
  double modification_rate = 0.0;
  double addition_rate = 0.0;
  std::size_t oracle_criteria = 0;
  std::size_t not_relevant = 0;
  std::size_t modified = 0;
  std::size_t added = 0;
  std::map<Axis, double> axis_coverage;  // fraction of valid annotations whose retained rubric covers the axis
};

inline RubricQuality rubric_quality(std::span<const RubricAnnotation> annos) {
  if (annos.empty()) fail(ErrorCode::EmptyInput, "no rubric annotations");
  RubricQuality q;
  std::size_t invalid = 0, valid = 0;
  std::map<Axis, std::size_t> covered;
  for (const auto& a : annos) {
    if (a.is_invalid) {
      ++invalid;
      continue;
    }
    ++valid;
    std::set<Axis> axes;
    for (const auto& c : a.criteria) {
      if (c.oracle_authored()) {
        ++q.oracle_criteria;
        if (c.not_relevant.value_or(false)) ++q.not_relevant;
        if (c.is_modified) ++q.modified;
      } else {
        ++q.added;
      }
      if (c.retained()) axes.insert(c.criterion.axis);
    }
    for (Axis ax : axes) ++covered[ax];
  }
  q.validity_rate = 1.0 - static_cast<double>(invalid) / static_cast<double>(annos.size());
  if (q.oracle_criteria > 0) {
    const double o = static_cast<double>(q.oracle_criteria);
    q.relevance_rate = 1.0 - static_cast<double>(q.not_relevant) / o;
    q.modification_rate = static_cast<double>(q.modified) / o;
    q.addition_rate = static_cast<double>(q.added) / o;
  }
  for (Axis ax : kAxes) {
    q.axis_coverage[ax] = valid ? static_cast<double>(covered[ax]) / static_cast<double>(valid) : 0.0;
  }
  return q;
}

/// Strict majority; even splits resolve to false.
inline bool pooled_verdict(const std::vector<bool>& votes) {
  const auto yes = static_cast<std::size_t>(std::count(votes.begin(), votes.end(), true));
  return 2 * yes > votes.size();
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t n() const { return tp + fp + fn + tn; }
  void add(bool judge, bool clinician) {
    if (judge && clinician) ++tp;
    else if (judge) ++fp;
    else if (clinician) ++fn;
    else ++tn;
  }
};

struct ClassMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, fail_f1 = 0, balanced_f1 = 0;
  StatResult kappa;
};

inline double safe_ratio(double a, double b) { return b > 0 ? a / b : 0.0; }

inline ClassMetrics class_metrics(const Confusion& c) {
  ClassMetrics m;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
               tn = static_cast<double>(c.tn);
  m.accuracy = safe_ratio(tp + tn, tp + fp + fn + tn);
  m.precision = safe_ratio(tp, tp + fp);
  m.recall = safe_ratio(tp, tp + fn);
  m.f1 = safe_ratio(2 * m.precision * m.recall, m.precision + m.recall);
  const double fprec = safe_ratio(tn, tn + fn), frec = safe_ratio(tn, tn + fp);
  m.fail_f1 = safe_ratio(2 * fprec * frec, fprec + frec);
  m.balanced_f1 = (m.f1 + m.fail_f1) / 2;
  if (c.n() > 0) m.kappa = cohen_kappa_table(tp, fp, fn, tn);
  return m;
}

struct JudgeAlignment {
  Confusion confusion;
  ClassMetrics metrics;
  std::map<Axis, double> per_axis_f1;
  std::map<Axis, Confusion> per_axis;
};

/// Judge verdict against the pooled clinician verdict for every retained
/// criterion that has both. Invalid annotations are skipped.
inline JudgeAlignment judge_alignment(std::span<const RubricAnnotation> annos) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<bool, Axis>> judge;
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<bool>> votes;
  for (const auto& a : annos) {
    if (a.is_invalid) continue;
    for (const auto& c : a.criteria) {
      if (!c.retained() || !c.oracle_verdict || !c.verdict) continue;
      const auto key = std::make_tuple(a.experiment, a.case_id, c.criterion.id);
      judge[key] = {*c.oracle_verdict, c.criterion.axis};
      votes[key].push_back(*c.verdict);
    }
  }
  if (judge.empty()) fail(ErrorCode::EmptyInput, "no criteria with both judge and clinician verdicts");
  JudgeAlignment out;
  for (const auto& [key, jv] : judge) {
    const bool clin = pooled_verdict(votes.at(key));
    out.confusion.add(jv.first, clin);
    out.per_axis[jv.second].add(jv.first, clin);
  }
  out.metrics = class_metrics(out.confusion);
  for (const auto& [ax, c] : out.per_axis) out.per_axis_f1[ax] = class_metrics(c).f1;
  return out;
}

/// Binary verdict agreement between two raters over the criteria both
/// judged, as a 2x2 table.
inline Confusion rater_agreement_table(std::span<const RubricAnnotation> annos, const std::string& r1,
                                       const std::string& r2) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<std::optional<bool>, std::optional<bool>>> both;
  for (const auto& a : annos) {
    if (a.is_invalid || (a.rater != r1 && a.rater != r2)) continue;
    for (const auto& c : a.criteria) {
      if (!c.retained() || !c.verdict) continue;
      auto& slot = both[{a.experiment, a.case_id, c.criterion.id}];
      (a.rater == r1 ? slot.first : slot.second) = *c.verdict;
    }
  }
  Confusion t;
  for (const auto& [k, v] : both) {
    if (v.first && v.second) t.add(*v.first, *v.second);
  }
  return t;
}

/// Per-case oracle score (oracle-authored criteria at original points, judge
/// verdicts) and clinician score (retained curated rubric, clinician
/// verdicts; mean over raters). Cases missing any needed verdict are skipped.
struct CaseScores {
  std::vector<std::string> case_ids;
  std::vector<double> oracle;
  std::vector<double> clinician;
};

inline CaseScores case_scores(std::span<const RubricAnnotation> annos) {
  std::map<std::pair<std::string, std::string>, std::pair<std::optional<double>, std::vector<double>>> per_case;
  for (const auto& a : annos) {
    if (a.is_invalid) continue;
    Rubric oracle_rubric, curated;
    VerdictVector ov, cv;
    bool oracle_ok = true, clin_ok = true;
    for (const auto& c : a.criteria) {
      if (c.oracle_authored()) {
        Criterion o = c.criterion;
        o.points = c.oracle_points.value_or(c.criterion.points);
        oracle_rubric.criteria.push_back(o);
        if (c.oracle_verdict) {
          ov.verdicts[o.id] = *c.oracle_verdict;
        } else {
          oracle_ok = false;
        }
      }
      if (c.retained()) {
        curated.criteria.push_back(c.criterion);
        if (c.verdict) {
          cv.verdicts[c.criterion.id] = *c.verdict;
        } else {
          clin_ok = false;
        }
      }
    }
    auto& slot = per_case[{a.experiment, a.case_id}];
    if (oracle_ok && oracle_rubric.positive_sum() > 0 && !slot.first) slot.first = compute_rubric_score(oracle_rubric, ov);
    if (clin_ok && curated.positive_sum() > 0) slot.second.push_back(compute_rubric_score(curated, cv));
  }
  CaseScores out;
  for (const auto& [k, v] : per_case) {
    if (!v.first || v.second.empty()) continue;
    out.case_ids.push_back(k.first + "/" + k.second);
    out.oracle.push_back(*v.first);
    out.clinician.push_back(mean_of(v.second));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phase 2

enum class ConsensusMode { AllVerdicts, StrictConsensus };

inline ConsensusMode parse_consensus_mode(std::string_view s) {
  if (s == "all-decisive" || s == "all") return ConsensusMode::AllVerdicts;
  if (s == "strict-consensus" || s == "strict") return ConsensusMode::StrictConsensus;
  fail(ErrorCode::InvalidArgument, "unknown consensus mode '" + std::string(s) + "'");
}

struct BucketCounts {
  std::size_t total = 0;
  std::size_t strict = 0;
  std::size_t semi = 0;
  std::size_t single = 0;
  std::size_t non_consensus = 0;
  std::size_t tie_consensus = 0;  // every rater chose tie
};

enum class Bucket { Strict, Semi, Single, NonConsensus, TieConsensus, Unrated };

inline Bucket bucket_of(const AbDyad& d) {
  if (d.verdicts.empty()) return Bucket::Unrated;
  if (d.verdicts.size() == 1) return Bucket::Single;
  std::size_t m1 = 0, m2 = 0, ties = 0;
  for (const auto& v : d.verdicts) {
    (v.choice == Choice::M1 ? m1 : v.choice == Choice::M2 ? m2 : ties) += 1;
  }
  if (m1 > 0 && m2 > 0) return Bucket::NonConsensus;
  if (m1 + m2 == 0) return Bucket::TieConsensus;
  return ties == 0 ? Bucket::Strict : Bucket::Semi;
}

struct PairMetrics {
  std::string pair_id;
  std::string model_1;
  std::string model_2;
  std::size_t w_m1 = 0, w_m2 = 0, ties = 0;
  double win_rate = 0;  // w_m1 / (w_m1 + w_m2 + ties)
  double tie_rate = 0;
  StatResult decisive;  // w_m1 / (w_m1 + w_m2) with Wilson CI and one-sided binomial p (Bonferroni adjusted)
  std::optional<Interval> wilson_all;  // same rate over all verdicts
  BucketCounts buckets;
};

/// Verdicts counted per mode: every valid rater verdict, or one verdict per
/// strict-consensus dyad.
inline std::vector<Choice> counted_choices(const AbDyad& d, ConsensusMode mode) {
  if (mode == ConsensusMode::AllVerdicts) {
    std::vector<Choice> out;
    for (const auto& v : d.verdicts) out.push_back(v.choice);
    return out;
  }
  if (bucket_of(d) == Bucket::Strict) return {d.verdicts.front().choice};
  return {};
}

inline std::vector<PairMetrics> ab_metrics(std::span<const AbDyad> dyads, ConsensusMode mode,
                                           std::size_t bonferroni_arms = 3) {
  if (dyads.empty()) fail(ErrorCode::NoDyads, "no dyads");
  std::map<std::string, PairMetrics> by_pair;
  for (const auto& d : dyads) {
    auto& p = by_pair[d.pair_id];
    p.pair_id = d.pair_id;
    p.model_1 = d.model_1;
    p.model_2 = d.model_2;
    ++p.buckets.total;
    switch (bucket_of(d)) {
      case Bucket::Strict: ++p.buckets.strict; break;
      case Bucket::Semi: ++p.buckets.semi; break;
      case Bucket::Single: ++p.buckets.single; break;
      case Bucket::NonConsensus: ++p.buckets.non_consensus; break;
      case Bucket::TieConsensus: ++p.buckets.tie_consensus; break;
      case Bucket::Unrated: break;
    }
    for (Choice c : counted_choices(d, mode)) {
      (c == Choice::M1 ? p.w_m1 : c == Choice::M2 ? p.w_m2 : p.ties) += 1;
    }
  }
  std::vector<PairMetrics> out;
  for (auto& [id, p] : by_pair) {
    const std::size_t all = p.w_m1 + p.w_m2 + p.ties;
    const std::size_t dec = p.w_m1 + p.w_m2;
    p.win_rate = all ? static_cast<double>(p.w_m1) / static_cast<double>(all) : 0.0;
    p.tie_rate = all ? static_cast<double>(p.ties) / static_cast<double>(all) : 0.0;
    p.decisive.n = dec;
    if (dec == 0) {
      p.decisive.degenerate = true;
    } else {
      p.decisive.value = static_cast<double>(p.w_m1) / static_cast<double>(dec);
      const auto ci = wilson_interval(p.w_m1, dec);
      p.decisive.ci_low = ci.low;
      p.decisive.ci_high = ci.high;
      p.decisive.p_value = std::min(1.0, static_cast<double>(bonferroni_arms) * binomial_upper(p.w_m1, dec, 0.5));
    }
    if (all > 0) p.wilson_all = wilson_interval(p.w_m1, all);
    out.push_back(p);
  }
  return out;
}

/// Left-pane preference over decisive verdicts, two-sided exact binomial.
inline StatResult position_bias(std::span<const AbDyad> dyads, ConsensusMode mode = ConsensusMode::AllVerdicts,
                                const std::string& rater = {}) {
  std::size_t left = 0, n = 0;
  for (const auto& d : dyads) {
    if (mode == ConsensusMode::StrictConsensus && bucket_of(d) != Bucket::Strict) continue;
    for (const auto& v : d.verdicts) {
      if (v.choice == Choice::Tie || (!rater.empty() && v.rater != rater)) continue;
      const std::string& picked = v.choice == Choice::M1 ? d.model_1 : d.model_2;
      ++n;
      if (picked == v.displayed_a) ++left;
    }
  }
  if (n == 0) fail(ErrorCode::NoDecisive, "no decisive verdicts");
  StatResult r;
  r.n = n;
  r.value = static_cast<double>(left) / static_cast<double>(n);
  const auto ci = wilson_interval(left, n);
  r.ci_low = ci.low;
  r.ci_high = ci.high;
  r.p_value = binomial_two_sided(left, n, 0.5);
  return r;
}

/// Fraction of decisive verdicts that picked the longer response; equal
/// lengths are excluded. No eligible verdicts gives a degenerate result.
inline StatResult length_bias(std::span<const AbDyad> dyads, ConsensusMode mode = ConsensusMode::AllVerdicts) {
  std::size_t longer = 0, n = 0;
  for (const auto& d : dyads) {
    if (mode == ConsensusMode::StrictConsensus && bucket_of(d) != Bucket::Strict) continue;
    for (const auto& v : d.verdicts) {
      if (v.choice == Choice::Tie || v.length_m1 == v.length_m2) continue;
      ++n;
      const bool m1_longer = v.length_m1 > v.length_m2;
      if ((v.choice == Choice::M1) == m1_longer) ++longer;
    }
  }
  StatResult r;
  r.n = n;
  if (n == 0) {
    r.degenerate = true;
    return r;
  }
  r.value = static_cast<double>(longer) / static_cast<double>(n);
  r.p_value = binomial_two_sided(longer, n, 0.5);
  return r;
}

/// Three-way (m1/m2/tie) and decisive-only kappa over dyads rated by both.
struct AbAgreement {
  std::size_t n_dual = 0;
  double percent_agreement = 0;
  StatResult kappa_3way;
  StatResult kappa_ab_only;
};

inline AbAgreement ab_agreement(std::span<const AbDyad> dyads, const std::string& r1, const std::string& r2) {
  std::vector<int> a, b, a2, b2;
  for (const auto& d : dyads) {
    std::optional<Choice> c1, c2;
    for (const auto& v : d.verdicts) {
      if (v.rater == r1) c1 = v.choice;
      if (v.rater == r2) c2 = v.choice;
    }
    if (!c1 || !c2) continue;
    a.push_back(static_cast<int>(*c1));
    b.push_back(static_cast<int>(*c2));
    if (*c1 != Choice::Tie && *c2 != Choice::Tie) {
      a2.push_back(static_cast<int>(*c1));
      b2.push_back(static_cast<int>(*c2));
    }
  }
  AbAgreement out;
  out.n_dual = a.size();
  if (a.empty()) {
    out.kappa_3way.degenerate = out.kappa_ab_only.degenerate = true;
    return out;
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  out.percent_agreement = static_cast<double>(same) / static_cast<double>(a.size());
  out.kappa_3way = cohen_kappa(std::span<const int>(a), std::span<const int>(b));
  if (a2.empty()) {
    out.kappa_ab_only.degenerate = true;
  } else {
    out.kappa_ab_only = cohen_kappa(std::span<const int>(a2), std::span<const int>(b2));
  }
  return out;
}

struct RaterEffort {
  std::string rater;
  std::size_t n = 0;
  double tie_rate = 0;
  std::optional<double> median_s, p75_s, p90_s;
  std::size_t redisplayed = 0;
  std::size_t revisions = 0;
};

inline std::vector<RaterEffort> effort_diagnostics(std::span<const AbDyad> dyads) {
  std::map<std::string, RaterEffort> by;
  std::map<std::string, std::vector<double>> times;
  std::map<std::string, std::size_t> ties;
  for (const auto& d : dyads) {
    for (const auto& v : d.verdicts) {
      auto& e = by[v.rater];
      e.rater = v.rater;
      ++e.n;
      if (v.choice == Choice::Tie) ++ties[v.rater];
      if (v.decision_time_s) times[v.rater].push_back(*v.decision_time_s);
      if (v.redisplay_choice) {
        ++e.redisplayed;
        if (*v.redisplay_choice != v.choice) ++e.revisions;
      }
    }
  }
  std::vector<RaterEffort> out;
  for (auto& [r, e] : by) {
    e.tie_rate = static_cast<double>(ties[r]) / static_cast<double>(e.n);
    if (auto it = times.find(r); it != times.end() && !it->second.empty()) {
      e.median_s = nearest_rank(it->second, 50);
      e.p75_s = nearest_rank(it->second, 75);
      e.p90_s = nearest_rank(it->second, 90);
    }
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bradley-Terry

struct Comparison {
  std::string winner;
  std::string loser;
  bool tie = false;  // counted as half a win each way
};

inline std::vector<Comparison> comparisons_from_dyads(std::span<const AbDyad> dyads) {
  std::vector<Comparison> out;
  for (const auto& d : dyads) {
    for (const auto& v : d.verdicts) {
      if (v.choice == Choice::M1) out.push_back({d.model_1, d.model_2, false});
      else if (v.choice == Choice::M2) out.push_back({d.model_2, d.model_1, false});
      else out.push_back({d.model_1, d.model_2, true});
    }
  }
  return out;
}

struct BradleyTerry {
  std::vector<std::string> models;
  std::vector<double> strength;  // sums to 1
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<Interval> rank_interval;  // 1 = strongest
};

inline BradleyTerry bradley_terry_fit(std::span<const Comparison> comps, double tol = 1e-8, std::size_t max_iter = 100000) {
  std::map<std::string, std::size_t> index;
  for (const auto& c : comps) {
    index.emplace(c.winner, 0);
    index.emplace(c.loser, 0);
  }
  BradleyTerry bt;
  for (auto& [name, i] : index) {
    i = bt.models.size();
    bt.models.push_back(name);
  }
  const std::size_t m = bt.models.size();
  if (m < 2) fail(ErrorCode::DisconnectedGraph, "need at least two models");
  std::vector<std::vector<double>> games(m, std::vector<double>(m, 0.0));
  std::vector<double> wins(m, 0.0);
  for (const auto& c : comps) {
    const auto w = index.at(c.winner), l = index.at(c.loser);
    games[w][l] += 1;
    games[l][w] += 1;
    if (c.tie) {
      wins[w] += 0.5;
      wins[l] += 0.5;
    } else {
      wins[w] += 1;
    }
  }
  // Connectivity over the comparison graph.
  std::vector<bool> seen(m, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < m; ++v) {
      if (games[u][v] > 0 && !seen[v]) {
        seen[v] = true;
        stack.push_back(v);
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) fail(ErrorCode::DisconnectedGraph, "comparison graph is disconnected");

  std::vector<double> p(m, 1.0 / static_cast<double>(m)), next(m);
  for (bt.iterations = 0; bt.iterations < max_iter; ++bt.iterations) {
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != i && games[i][j] > 0) denom += games[i][j] / (p[i] + p[j]);
      }
      next[i] = denom > 0 ? wins[i] / denom : 0.0;
    }
    const double s = std::accumulate(next.begin(), next.end(), 0.0);
    double change = 0;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] /= s;
      change = std::max(change, std::fabs(next[i] - p[i]) / std::max(p[i], 1e-300));
    }
    p.swap(next);
    if (change < tol) {
      bt.converged = true;
      ++bt.iterations;
      break;
    }
  }
  bt.strength = p;
  return bt;
}

inline std::vector<std::size_t> ranks_of(const std::vector<double>& strength) {
  std::vector<std::size_t> order(strength.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return strength[a] > strength[b]; });
  std::vector<std::size_t> rank(strength.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

/// Fit plus bootstrap rank intervals over comparisons; resamples whose
/// graph is disconnected or misses a model are skipped.
inline BradleyTerry bradley_terry(std::span<const Comparison> comps, std::size_t resamples = 1000,
                                  std::uint64_t seed = kDefaultSeed) {
  auto bt = bradley_terry_fit(comps);
  const std::size_t m = bt.models.size();
  std::vector<std::vector<double>> rank_samples(m);
  for (std::size_t b = 0; b < resamples; ++b) {
    Rng rng(derive_seed(seed, b));
    std::vector<Comparison> sample(comps.size());
    for (auto& c : sample) c = comps[rng.below(comps.size())];
    try {
      auto fit = bradley_terry_fit(sample, 1e-6, 10000);
      if (fit.models != bt.models) continue;
      const auto r = ranks_of(fit.strength);
      for (std::size_t i = 0; i < m; ++i) rank_samples[i].push_back(static_cast<double>(r[i]));
    } catch (const Error&) {
    }
  }
  const auto point = ranks_of(bt.strength);
  for (std::size_t i = 0; i < m; ++i) {
    if (rank_samples[i].empty()) {
      bt.rank_interval.push_back({static_cast<double>(point[i]), static_cast<double>(point[i])});
    } else {
      bt.rank_interval.push_back({nearest_rank(rank_samples[i], 2.5), nearest_rank(rank_samples[i], 97.5)});
    }
  }
  return bt;
}

// ---------------------------------------------------------------------------
// Report

struct StatsOptions {
  ConsensusMode mode = ConsensusMode::StrictConsensus;
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t seed = kDefaultSeed;
  std::size_t bonferroni_arms = 3;
};

inline json interval_json(const Interval& i) { return json::array({i.low, i.high}); }

inline json to_json(const BucketCounts& b) {
  return json{{"total", b.total}, {"strict", b.strict}, {"semi", b.semi}, {"single", b.single},
              {"non_consensus", b.non_consensus}, {"tie_consensus", b.tie_consensus}};
}

inline json to_json(const PairMetrics& p) {
  return json{{"pair_id", p.pair_id}, {"model_1", p.model_1}, {"model_2", p.model_2}, {"w_m1", p.w_m1},
              {"w_m2", p.w_m2}, {"ties", p.ties}, {"win_rate", p.win_rate}, {"tie_rate", p.tie_rate},
              {"decisive", to_json(p.decisive)},
              {"wilson_all", p.wilson_all ? interval_json(*p.wilson_all) : json()},
              {"buckets", to_json(p.buckets)}};
}

inline json to_json(const Confusion& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

inline json to_json(const ClassMetrics& m) {
  return json{{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
              {"fail_f1", m.fail_f1}, {"balanced_f1", m.balanced_f1}, {"kappa", to_json(m.kappa)}};
}

inline std::vector<std::string> raters_of(std::span<const RubricAnnotation> annos) {
  std::set<std::string> s;
  for (const auto& a : annos) s.insert(a.rater);
  return {s.begin(), s.end()};
}

inline std::vector<std::string> raters_of(std::span<const AbDyad> dyads) {
  std::set<std::string> s;
  for (const auto& d : dyads) {
    for (const auto& v : d.verdicts) s.insert(v.rater);
  }
  return {s.begin(), s.end()};
}

/// Every metric family that the export supports; families without data are
/// reported as null with a reason.
inline json stats_report(const ExportData& data, const StatsOptions& opt = {}) {
  json r;
  r["options"] = {{"consensus_mode", opt.mode == ConsensusMode::StrictConsensus ? "strict-consensus" : "all-decisive"},
                  {"bootstrap_resamples", opt.bootstrap_resamples},
                  {"seed", opt.seed},
                  {"bonferroni_arms", opt.bonferroni_arms}};
  r["counts"] = {{"rubric_submissions", data.rubric_total}, {"rubric_invalid", data.rubric_invalid},
                 {"ab_submissions", data.ab_total}, {"ab_invalid", data.ab_invalid}, {"dyads", data.dyads.size()}};
  auto guarded = [&](const char* key, auto fn) {
    try {
      r[key] = fn();
    } catch (const Error& e) {
      r[key] = json{{"unavailable", e.what()}};
    }
  };
  const std::span<const RubricAnnotation> annos(data.rubrics);
  const std::span<const AbDyad> dyads(data.dyads);
  guarded("rubric_quality", [&] {
    const auto q = rubric_quality(annos);
    json axes;
    for (const auto& [ax, v] : q.axis_coverage) axes[std::string(to_string(ax))] = v;
    return json{{"validity_rate", q.validity_rate}, {"relevance_rate", q.relevance_rate},
                {"modification_rate", q.modification_rate}, {"addition_rate", q.addition_rate},
                {"oracle_criteria", q.oracle_criteria}, {"not_relevant", q.not_relevant},
                {"modified", q.modified}, {"added", q.added}, {"axis_coverage", axes}};
  });
  guarded("rubric_irr", [&] {
    const auto raters = raters_of(annos);
    json rows = json::array();
    for (std::size_t i = 0; i < raters.size(); ++i) {
      for (std::size_t j = i + 1; j < raters.size(); ++j) {
        const auto t = rater_agreement_table(annos, raters[i], raters[j]);
        if (t.n() == 0) continue;
        rows.push_back({{"raters", {raters[i], raters[j]}}, {"table", to_json(t)},
                        {"percent_agreement", static_cast<double>(t.tp + t.tn) / static_cast<double>(t.n())},
                        {"kappa", to_json(cohen_kappa_table(t.tp, t.fp, t.fn, t.tn))}});
      }
    }
    return rows;
  });
  guarded("judge_alignment", [&] {
    const auto ja = judge_alignment(annos);
    json axes;
    for (const auto& [ax, f] : ja.per_axis_f1) axes[std::string(to_string(ax))] = f;
    return json{{"confusion", to_json(ja.confusion)}, {"metrics", to_json(ja.metrics)}, {"per_axis_f1", axes}};
  });
  guarded("score_alignment", [&] {
    const auto cs = case_scores(annos);
    if (cs.oracle.empty()) fail(ErrorCode::EmptyInput, "no case with complete oracle and clinician verdicts");
    const auto sa = score_alignment(cs.oracle, cs.clinician);
    std::vector<double> diffs(cs.oracle.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = std::fabs(cs.oracle[i] - cs.clinician[i]);
    auto mae = to_json(sa.mae);
    const auto ci = bootstrap_mean_ci(diffs, opt.bootstrap_resamples, opt.seed);
    mae["ci_low"] = ci.low;
    mae["ci_high"] = ci.high;
    return json{{"cases", cs.oracle.size()}, {"mae", mae}, {"pearson", to_json(sa.pearson)},
                {"spearman", to_json(sa.spearman)}};
  });
  guarded("ab", [&] {
    json pairs = json::array();
    for (const auto& p : ab_metrics(dyads, opt.mode, opt.bonferroni_arms)) pairs.push_back(to_json(p));
    return pairs;
  });
  guarded("ab_irr", [&] {
    const auto raters = raters_of(dyads);
    json rows = json::array();
    for (std::size_t i = 0; i < raters.size(); ++i) {
      for (std::size_t j = i + 1; j < raters.size(); ++j) {
        const auto a = ab_agreement(dyads, raters[i], raters[j]);
        if (a.n_dual == 0) continue;
        rows.push_back({{"raters", {raters[i], raters[j]}}, {"n_dual", a.n_dual},
                        {"percent_agreement", a.percent_agreement}, {"kappa_3way", to_json(a.kappa_3way)},
                        {"kappa_ab_only", to_json(a.kappa_ab_only)}});
      }
    }
    return rows;
  });
  guarded("position_bias", [&] {
    json rows = json::object();
    rows["pooled"] = to_json(position_bias(dyads, opt.mode));
    for (const auto& rater : raters_of(dyads)) {
      try {
        rows[rater] = to_json(position_bias(dyads, opt.mode, rater));
      } catch (const Error&) {
      }
    }
    return rows;
  });
  guarded("length_bias", [&] { return to_json(length_bias(dyads, opt.mode)); });
  guarded("effort", [&] {
    json rows = json::array();
    auto opt_num = [](const std::optional<double>& v) { return v ? json(*v) : json(); };
    for (const auto& e : effort_diagnostics(dyads)) {
      rows.push_back({{"rater", e.rater}, {"n", e.n}, {"tie_rate", e.tie_rate}, {"median_s", opt_num(e.median_s)},
                      {"p75_s", opt_num(e.p75_s)}, {"p90_s", opt_num(e.p90_s)}, {"redisplayed", e.redisplayed},
                      {"revisions", e.revisions}});
    }
    return rows;
  });
  guarded("bradley_terry", [&] {
    const auto comps = comparisons_from_dyads(dyads);
    const auto bt = bradley_terry(comps, opt.bootstrap_resamples, opt.seed);
    json rows = json::array();
    for (std::size_t i = 0; i < bt.models.size(); ++i) {
      rows.push_back({{"model", bt.models[i]}, {"strength", bt.strength[i]},
                      {"rank_interval", interval_json(bt.rank_interval[i])}});
    }
    return json{{"converged", bt.converged}, {"iterations", bt.iterations}, {"models", rows}};
  });
  return r;
}

namespace detail {

inline std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string fmt_json(const json& v, int prec = 3) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) return fmt(v.get<double>(), prec);
  if (v.is_number()) return std::to_string(v.get<long long>());
  return v.dump();
}

}  // namespace detail

inline std::string stats_markdown(const json& r) {
  using detail::fmt_json;
  std::string md = "# Annotation report\n\n";
  auto unavailable = [&](const json& sec) {
    if (sec.is_object() && sec.contains("unavailable")) {
      md += "_unavailable: " + sec["unavailable"].get<std::string>() + "_\n\n";
      return true;
    }
    return false;
  };
  md += "## Rubric quality\n\n";
  if (const auto& q = r["rubric_quality"]; !unavailable(q)) {
    md += "| metric | value |\n|---|---|\n";
    for (const char* k : {"validity_rate", "relevance_rate", "modification_rate", "addition_rate", "oracle_criteria",
                          "not_relevant", "modified", "added"}) {
      md += std::string("| ") + k + " | " + fmt_json(q[k]) + " |\n";
    }
    md += "\n";
  }
  md += "## Rubric inter-rater agreement\n\n";
  if (const auto& q = r["rubric_irr"]; !unavailable(q)) {
    md += "| raters | n | agreement | kappa |\n|---|---|---|---|\n";
    for (const auto& row : q) {
      md += "| " + row["raters"][0].get<std::string>() + " / " + row["raters"][1].get<std::string>() + " | " +
            fmt_json(row["kappa"]["n"]) + " | " + fmt_json(row["percent_agreement"]) + " | " +
            fmt_json(row["kappa"]["value"]) + " |\n";
    }
    md += "\n";
  }
  md += "## Judge alignment\n\n";
  if (const auto& q = r["judge_alignment"]; !unavailable(q)) {
    const auto& c = q["confusion"];
    const auto& m = q["metrics"];
    md += "TP " + fmt_json(c["tp"]) + ", FP " + fmt_json(c["fp"]) + ", FN " + fmt_json(c["fn"]) + ", TN " +
          fmt_json(c["tn"]) + "\n\n";
    md += "| accuracy | precision | recall | F1 | balanced F1 | kappa |\n|---|---|---|---|---|---|\n";
    md += "| " + fmt_json(m["accuracy"]) + " | " + fmt_json(m["precision"]) + " | " + fmt_json(m["recall"]) + " | " +
          fmt_json(m["f1"]) + " | " + fmt_json(m["balanced_f1"]) + " | " + fmt_json(m["kappa"]["value"]) + " |\n\n";
  }
  md += "## Score alignment\n\n";
  if (const auto& q = r["score_alignment"]; !unavailable(q)) {
    md += "cases " + fmt_json(q["cases"]) + ", MAE " + fmt_json(q["mae"]["value"]) + " [" +
          fmt_json(q["mae"]["ci_low"]) + ", " + fmt_json(q["mae"]["ci_high"]) + "], Pearson " +
          fmt_json(q["pearson"]["value"]) + ", Spearman " + fmt_json(q["spearman"]["value"]) + "\n\n";
  }
  md += "## Preference\n\n";
  if (const auto& q = r["ab"]; !unavailable(q)) {
    md += "| pair | m1 wins | m2 wins | ties | decisive rate | 95% CI | p (adj) | strict | semi | single | "
          "non-consensus |\n|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& p : q) {
      const auto& d = p["decisive"];
      const auto& b = p["buckets"];
      md += "| " + p["pair_id"].get<std::string>() + " | " + fmt_json(p["w_m1"]) + " | " + fmt_json(p["w_m2"]) +
            " | " + fmt_json(p["ties"]) + " | " + fmt_json(d["value"]) + " | [" + fmt_json(d["ci_low"]) + ", " +
            fmt_json(d["ci_high"]) + "] | " + fmt_json(d["p_value"], 4) + " | " + fmt_json(b["strict"]) + " | " +
            fmt_json(b["semi"]) + " | " + fmt_json(b["single"]) + " | " + fmt_json(b["non_consensus"]) + " |\n";
    }
    md += "\n";
  }
  md += "## Position and length bias\n\n";
  if (const auto& q = r["position_bias"]; !unavailable(q)) {
    md += "| rater | n | left-pane rate | p |\n|---|---|---|---|\n";
    for (const auto& [k, v] : q.items()) {
      md += "| " + k + " | " + fmt_json(v["n"]) + " | " + fmt_json(v["value"]) + " | " + fmt_json(v["p_value"]) + " |\n";
    }
    md += "\n";
  }
  if (const auto& q = r["length_bias"]; !unavailable(q)) {
    md += "Longer response preferred: " + fmt_json(q["value"]) + " of " + fmt_json(q["n"]) + " decisive verdicts\n\n";
  }
  md += "## Rater effort\n\n";
  if (const auto& q = r["effort"]; !unavailable(q)) {
    md += "| rater | n | tie rate | median s | P75 s | P90 s | revisions |\n|---|---|---|---|---|---|---|\n";
    for (const auto& e : q) {
      md += "| " + e["rater"].get<std::string>() + " | " + fmt_json(e["n"]) + " | " + fmt_json(e["tie_rate"]) +
            " | " + fmt_json(e["median_s"], 1) + " | " + fmt_json(e["p75_s"], 1) + " | " + fmt_json(e["p90_s"], 1) +
            " | " + fmt_json(e["revisions"]) + "/" + fmt_json(e["redisplayed"]) + " |\n";
    }
    md += "\n";
  }
  md += "## Bradley-Terry\n\n";
  if (const auto& q = r["bradley_terry"]; !unavailable(q)) {
    md += "| model | strength | rank 95% |\n|---|---|---|\n";
    for (const auto& m : q["models"]) {
      md += "| " + m["model"].get<std::string>() + " | " + fmt_json(m["strength"]) + " | " +
            fmt_json(m["rank_interval"][0], 0) + "-" + fmt_json(m["rank_interval"][1], 0) + " |\n";
    }
    md += "\n";
  }
  return md;
}

}  // namespace crw
