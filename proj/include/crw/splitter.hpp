#pragma once

// Past/future partitioning of an admission at a sampled decision point.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crw/random.hpp"
#include "crw/timeline.hpp"

namespace crw {

enum class ActionCategory { Diagnosis, Treatment, Procedural, Uncertainty };

inline constexpr std::array<ActionCategory, 4> kActionCategories = {
    ActionCategory::Diagnosis, ActionCategory::Treatment, ActionCategory::Procedural, ActionCategory::Uncertainty};

struct ActionSpace {
  ActionCategory category;
  std::string_view name;
  std::string_view description;
};

inline constexpr std::array<ActionSpace, 4> kActionSpaces = {{
    {ActionCategory::Diagnosis, "Diagnosis Assistance",
     "This category focuses on clinical reasoning to determine the correct diagnosis. It includes the "
     "following subcategories: (i) Differential Diagnosis Generation & Diagnostic Hypothesis Ranking: the "
     "model generates a ranked list of potential diagnoses — covering common conditions as well as "
     "critical must-not-miss possibilities — by analysing abnormal vitals, lab trends, and clinical "
     "notes; (ii) Diagnostic Test Suggestions: in cases of uncertainty, the model may recommend additional "
     "tests (e.g., ordering a troponin test for suspected myocardial infarction) to refine the diagnosis. "
     "Additional contextual information (e.g., family history, vaccination status, travel history) should "
     "be considered when available."},
    {ActionCategory::Treatment, "Treatment Recommendations",
     "This category is aimed at guiding therapeutic interventions and ensuring best practices in patient "
     "care. It is subdivided into: (i) Medication Management — the model recommends appropriate "
     "medications, specifying drug name, dosage, and duration, while taking into account patient-specific "
     "factors (e.g., allergies or prior adverse reactions); (ii) Supportive Care & Monitoring — the "
     "model suggests supportive measures such as IV fluids, oxygen therapy, or nursing care orders that "
     "complement primary treatments; (iii) Follow-up and Long-Term Planning — the model outlines future "
     "monitoring steps, reassessment timings, or specialist consultations. The answer should propose a "
     "future treatment event rather than merely extracting past actions."},
    {ActionCategory::Procedural, "Procedural Decision Making",
     "This category addresses decisions related to both diagnostic and therapeutic procedures. It is "
     "organised into: (i) Diagnostic Procedures — recommendations for tests such as imaging, biopsies, "
     "or endoscopies, determined from evolving clinical data; (ii) Therapeutic Procedures — decisions "
     "about invasive interventions (e.g., surgery, catheterisation) when indicated; (iii) Timing, Approach, "
     "and Watchful Waiting — the model assesses the optimal timing for procedures, chooses between "
     "alternative approaches (e.g., minimally invasive versus open surgery), or recommends non-intervention "
     "when appropriate."},
    {ActionCategory::Uncertainty, "Responding under Uncertainty",
     "This category focuses on how the model should handle situations where the clinical data is "
     "incomplete or ambiguous. The questions generated for this category should be intentionally ambiguous "
     "and must require the agent to reason about how to handle uncertainty. It includes: (1) Uncertainty "
     "Acknowledgment; (2) Risk-Benefit Analysis; (3) Alternative Recommendations; (4) Escalation Protocols; "
     "and (5) Context Seeking (asking for additional information that could help clarify the clinical "
     "picture)."},
}};

inline const ActionSpace& action_space(ActionCategory c) { return kActionSpaces[static_cast<std::size_t>(c)]; }

inline std::optional<ActionCategory> parse_action_category(std::string_view name) {
  for (const auto& a : kActionSpaces) {
    if (a.name == name) return a.category;
  }
  static const std::map<std::string_view, ActionCategory> aliases = {
      {"Diagnosis", ActionCategory::Diagnosis},   {"Treatment", ActionCategory::Treatment},
      {"Procedural", ActionCategory::Procedural}, {"Uncertainty", ActionCategory::Uncertainty}};
  if (auto it = aliases.find(name); it != aliases.end()) return it->second;
  return std::nullopt;
}

struct SplitSpec {
  std::size_t n = 0;
  std::size_t k = 0;           // past = events [1..k]
  std::string split_time;      // time of event k+1, verbatim
  Instant split_instant;
  std::uint64_t seed = 0;
};

/// k = round_half_up(N(n/2, n/6)) clamped to [1, n-1].
inline std::size_t sample_split_index(std::size_t n, std::uint64_t seed) {
  if (n < 2) fail(ErrorCode::TooFewEvents, "need at least 2 events, have " + std::to_string(n));
  Rng rng(seed);
  const double nd = static_cast<double>(n);
  const double draw = rng.normal(nd / 2.0, nd / 6.0);
  const double rounded = std::floor(draw + 0.5);
  const double clamped = std::clamp(rounded, 1.0, nd - 1.0);
  return static_cast<std::size_t>(clamped);
}

inline SplitSpec sample_split(const AdmissionTimeline& t, std::uint64_t seed) {
  SplitSpec spec;
  spec.n = t.timeline.size();
  spec.k = sample_split_index(spec.n, seed);
  spec.split_time = t.timeline[spec.k].time;
  spec.split_instant = t.timeline[spec.k].instant;
  spec.seed = seed;
  return spec;
}

/// Per-admission, per-attempt seed derived from the run seed.
inline std::uint64_t admission_split_seed(std::uint64_t run_seed, const AdmissionKey& key, std::uint64_t attempt) {
  return derive_seed(derive_seed(derive_seed(run_seed, static_cast<std::uint64_t>(key.subject_id)),
                                 static_cast<std::uint64_t>(key.hadm_id)),
                     attempt);
}

// ---------------------------------------------------------------------------
// Outcome constraints

inline constexpr std::int64_t kOutcomeWindowDays = 730;

struct AdmissionInterval {
  std::int64_t hadm_id = 0;
  Instant admit;
  std::optional<Instant> discharge;
};

struct SubjectRecord {
  std::vector<AdmissionInterval> admissions;
  std::optional<Instant> dod;
};

/// subject_id -> every admission interval and date of death. Built once,
/// read-only afterwards.
using OutcomeRegistry = std::map<std::int64_t, SubjectRecord>;

namespace detail {

inline std::optional<Instant> field_instant(const json& obj, const char* key) {
  if (!obj.is_object()) return std::nullopt;
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return parse_iso8601(it->get_ref<const std::string&>());
}

inline std::optional<Instant> admission_time_field(const AdmissionTimeline& t, const char* key) {
  if (auto v = field_instant(t.extra, key)) return v;
  for (const auto& ev : t.timeline) {
    if (auto v = field_instant(ev.data, key)) return v;
  }
  return std::nullopt;
}

}  // namespace detail

inline std::optional<Instant> discharge_time(const AdmissionTimeline& t) {
  return detail::admission_time_field(t, "dischtime");
}

inline Instant admit_time(const AdmissionTimeline& t) {
  if (auto v = detail::admission_time_field(t, "admittime")) return *v;
  return t.timeline.empty() ? Instant{} : t.timeline.front().instant;
}

inline std::optional<Instant> date_of_death(const AdmissionTimeline& t) {
  if (auto p = t.misc.find("Patient"); p != t.misc.end()) return detail::field_instant(*p, "dod");
  return std::nullopt;
}

inline OutcomeRegistry build_registry(std::span<const AdmissionTimeline> corpus) {
  OutcomeRegistry reg;
  for (const auto& t : corpus) {
    auto& rec = reg[t.key.subject_id];
    rec.admissions.push_back({t.key.hadm_id, admit_time(t), discharge_time(t)});
    if (auto dod = date_of_death(t)) rec.dod = dod;
  }
  return reg;
}

struct OutcomeCheck {
  bool pass = true;
  std::string reason;  // "death-within-2y" / "readmission-within-2y"
};

/// Fails when death or another admission of the same subject falls within
/// 730 days after this admission's discharge. Death before discharge fails.
inline OutcomeCheck check_outcome_constraints(const AdmissionTimeline& t, const OutcomeRegistry& registry) {
  const auto discharge = discharge_time(t);
  if (!discharge) {
    fail(ErrorCode::MissingDischargeTime,
         "admission " + std::to_string(t.key.subject_id) + "/" + std::to_string(t.key.hadm_id));
  }
  const Instant limit{discharge->millis + days_to_millis(kOutcomeWindowDays)};
  std::optional<Instant> dod = date_of_death(t);
  const SubjectRecord* rec = nullptr;
  if (auto it = registry.find(t.key.subject_id); it != registry.end()) {
    rec = &it->second;
    if (!dod) dod = rec->dod;
  }
  if (dod && *dod <= limit) return {false, "death-within-2y"};
  if (rec) {
    for (const auto& other : rec->admissions) {
      if (other.hadm_id == t.key.hadm_id) continue;
      if (other.admit >= *discharge && other.admit <= limit) return {false, "readmission-within-2y"};
    }
  }
  return {true, {}};
}

// ---------------------------------------------------------------------------
// Split items

struct SplitItem {
  AdmissionKey key;
  json demographics = json::object();
  std::vector<ClinicalEvent> past;    // ICD-source events removed
  std::vector<ClinicalEvent> future;  // untouched
  json misc_retained = json::object();
  SplitSpec spec;
  std::size_t icd_stripped = 0;
};

inline SplitItem build_split_item(const AdmissionTimeline& t, const SplitSpec& spec) {
  if (spec.k < 1 || spec.k >= t.timeline.size()) fail(ErrorCode::InvalidArgument, "split index out of range");
  SplitItem item;
  item.key = t.key;
  item.demographics = t.demographics;
  item.misc_retained = retained_misc(t.misc);
  item.spec = spec;
  for (std::size_t i = 0; i < spec.k; ++i) {
    if (is_icd_source(t.timeline[i].source)) {
      ++item.icd_stripped;
    } else {
      item.past.push_back(t.timeline[i]);
    }
  }
  item.future.assign(t.timeline.begin() + static_cast<std::ptrdiff_t>(spec.k), t.timeline.end());
  if (item.past.empty()) fail(ErrorCode::EmptyPastAfterStrip, "every past event was ICD-sourced");
  return item;
}

inline constexpr int kSplitAttempts = 3;

/// Samples a split; an ICD-only past is resampled with a fresh seed up to
/// three attempts, then the admission is skipped (nullopt).
inline std::optional<SplitItem> split_admission(const AdmissionTimeline& t, std::uint64_t run_seed) {
  if (t.timeline.size() < 2) return std::nullopt;
  for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
    const auto spec = sample_split(t, admission_split_seed(run_seed, t.key, static_cast<std::uint64_t>(attempt)));
    try {
      return build_split_item(t, spec);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyPastAfterStrip) throw;
    }
  }
  return std::nullopt;
}

/// A SplitItem viewed as the admission holding only its past; used to
/// serialize the policy-visible context.
inline AdmissionTimeline past_view(const SplitItem& item) {
  AdmissionTimeline t;
  t.key = item.key;
  t.demographics = item.demographics;
  t.misc = item.misc_retained;
  t.timeline = item.past;
  return t;
}

inline json to_json(const SplitSpec& spec) {
  return json{{"n", spec.n}, {"k", spec.k}, {"split_time", spec.split_time}, {"seed", spec.seed}};
}

inline json to_json(const SplitItem& item) {
  json cats = json::array();
  for (const auto& a : kActionSpaces) cats.push_back(a.name);
  return json{{"subject_id", item.key.subject_id},
              {"hadm_id", item.key.hadm_id},
              {"demographics", item.demographics},
              {"past", events_to_json(item.past)},
              {"future", events_to_json(item.future)},
              {"misc", item.misc_retained},
              {"spec", to_json(item.spec)},
              {"icd_stripped", item.icd_stripped},
              {"categories", cats}};
}

inline SplitItem split_item_from_json(const json& doc) {
  // Reuse the admission reader for event parsing; past and future are
  // already ordered, and re-sorting preserves that order.
  auto events_of = [&](const char* field) {
    json shell = {{"subject_id", doc.at("subject_id")}, {"hadm_id", doc.at("hadm_id")}, {"timeline", doc.at(field)}};
    return admission_from_json(shell).timeline;
  };
  SplitItem item;
  item.key = {doc.at("subject_id").get<std::int64_t>(), doc.at("hadm_id").get<std::int64_t>()};
  item.demographics = doc.value("demographics", json::object());
  item.past = events_of("past");
  item.future = events_of("future");
  item.misc_retained = doc.value("misc", json::object());
  const auto& spec = doc.at("spec");
  item.spec.n = spec.at("n").get<std::size_t>();
  item.spec.k = spec.at("k").get<std::size_t>();
  item.spec.split_time = spec.at("split_time").get<std::string>();
  item.spec.split_instant = parse_iso8601(item.spec.split_time).value_or(Instant{});
  item.spec.seed = spec.at("seed").get<std::uint64_t>();
  item.icd_stripped = doc.value("icd_stripped", std::size_t{0});
  return item;
}

}  // namespace crw
