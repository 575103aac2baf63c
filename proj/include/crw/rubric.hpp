#pragma once

// Signed-weight pass/fail rubrics and the verdict vectors graded against them.

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "crw/error.hpp"
#include "crw/jsonio.hpp"

namespace crw {

enum class Axis { Accuracy, Completeness, CommunicationQuality, ContextAwareness, InstructionFollowing };

inline constexpr std::array<Axis, 5> kAxes = {Axis::Accuracy, Axis::Completeness, Axis::CommunicationQuality,
                                              Axis::ContextAwareness, Axis::InstructionFollowing};

inline constexpr std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::Accuracy: return "Accuracy";
    case Axis::Completeness: return "Completeness";
    case Axis::CommunicationQuality: return "CommunicationQuality";
    case Axis::ContextAwareness: return "ContextAwareness";
    case Axis::InstructionFollowing: return "InstructionFollowing";
  }
  return "?";
}

/// Accepts the canonical names plus spaced variants ("Communication Quality").
inline std::optional<Axis> parse_axis(std::string_view text) {
  std::string squeezed;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
      squeezed += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  for (Axis a : kAxes) {
    std::string name(to_string(a));
    for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (name == squeezed) return a;
  }
  return std::nullopt;
}

inline constexpr std::array<std::string_view, 7> kThemes = {
    "Emergency Referrals", "Responding under Uncertainty",     "Health Data Tasks", "Global Health",
    "Expertise-Specific Communication", "Context Seeking", "Response Depth"};

inline bool is_theme(std::string_view t) { return std::find(kThemes.begin(), kThemes.end(), t) != kThemes.end(); }

enum class Provenance { Oracle, ClinicianAdded, ClinicianModified };

inline constexpr std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Oracle: return "oracle";
    case Provenance::ClinicianAdded: return "clinician-added";
    case Provenance::ClinicianModified: return "clinician-modified";
  }
  return "?";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "clinician-added") return Provenance::ClinicianAdded;
  if (s == "clinician-modified") return Provenance::ClinicianModified;
  if (s == "oracle" || s.empty()) return Provenance::Oracle;
  fail(ErrorCode::SchemaViolation, "unknown provenance '" + std::string(s) + "'");
}

inline constexpr int kMaxAbsPoints = 10;

struct Criterion {
  std::string id;
  Axis axis = Axis::Accuracy;
  std::string description;
  int points = 0;
  Provenance provenance = Provenance::Oracle;
};

struct Rubric {
  std::string theme;
  std::vector<Criterion> criteria;

  long positive_sum() const {
    long s = 0;
    for (const auto& c : criteria) s += c.points > 0 ? c.points : 0;
    return s;
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& c : criteria) out.push_back(c.id);
    return out;
  }
};

struct VerdictVector {
  std::map<std::string, bool> verdicts;
  bool degenerate = false;
};

/// Lowercased, whitespace-collapsed, trimmed; the key for de-duplication.
inline std::string normalize_description(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

inline void assign_ids(Rubric& r) {
  for (std::size_t i = 0; i < r.criteria.size(); ++i) r.criteria[i].id = "c" + std::to_string(i + 1);
}

/// Drops later criteria whose normalized description repeats an earlier one.
/// Returns the number removed. Ids are reassigned afterwards.
inline std::size_t dedup_criteria(Rubric& r) {
  std::set<std::string> seen;
  std::vector<Criterion> kept;
  for (auto& c : r.criteria) {
    if (seen.insert(normalize_description(c.description)).second) kept.push_back(std::move(c));
  }
  const std::size_t removed = r.criteria.size() - kept.size();
  r.criteria = std::move(kept);
  assign_ids(r);
  return removed;
}

inline std::set<Axis> covered_axes(const Rubric& r) {
  std::set<Axis> axes;
  for (const auto& c : r.criteria) axes.insert(c.axis);
  return axes;
}

/// Structural checks every accepted rubric satisfies.
inline void validate_rubric(const Rubric& r, bool require_theme = true) {
  if (r.criteria.empty()) fail(ErrorCode::SchemaViolation, "rubric has no criteria");
  if (require_theme && !is_theme(r.theme)) fail(ErrorCode::SchemaViolation, "unknown theme '" + r.theme + "'");
  std::set<std::string> ids;
  for (const auto& c : r.criteria) {
    if (c.points == 0 || c.points < -kMaxAbsPoints || c.points > kMaxAbsPoints) {
      fail(ErrorCode::SchemaViolation, "criterion " + c.id + " has points " + std::to_string(c.points));
    }
    if (normalize_description(c.description).empty()) {
      fail(ErrorCode::SchemaViolation, "criterion " + c.id + " has an empty description");
    }
    if (!ids.insert(c.id).second) fail(ErrorCode::SchemaViolation, "duplicate criterion id " + c.id);
  }
  const auto axes = covered_axes(r);
  if (axes.size() != kAxes.size()) {
    std::string missing;
    for (Axis a : kAxes) {
      if (!axes.count(a)) missing += (missing.empty() ? "" : ",") + std::string(to_string(a));
    }
    fail(ErrorCode::AxisCoverageMissing, missing);
  }
  if (r.positive_sum() <= 0) fail(ErrorCode::NoPositiveCriteria, "rubric has no positive criteria");
}

/// The grader's six-criterion default, used when rubric parsing fails.
inline Rubric fallback_rubric() {
  Rubric r;
  r.theme = "Response Depth";
  r.criteria = {
      {"c1", Axis::Accuracy, "Correctly identifies the answer with clinical accuracy.", 10, Provenance::Oracle},
      {"c2", Axis::Completeness, "Mentions supporting evidence for the identified answer from the patient timeline.",
       8, Provenance::Oracle},
      {"c3", Axis::CommunicationQuality,
       "Uses clear and concise language appropriate for healthcare professionals.", 7, Provenance::Oracle},
      {"c4", Axis::ContextAwareness,
       "References relevant clinical context such as the identified source from the EHR document.", 9,
       Provenance::Oracle},
      {"c5", Axis::Completeness, "References unnecessary or imprecise information in its reasoning or answer.", -6,
       Provenance::Oracle},
      {"c6", Axis::InstructionFollowing, "Provides a reasoning section and final answer as requested.", 5,
       Provenance::Oracle},
  };
  return r;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Criterion& c) {
  return json{{"id", c.id},
              {"axis", to_string(c.axis)},
              {"description", c.description},
              {"points", c.points},
              {"provenance", to_string(c.provenance)}};
}

inline json to_json(const Rubric& r) {
  json crit = json::array();
  for (const auto& c : r.criteria) crit.push_back(to_json(c));
  return json{{"meta", {{"theme", r.theme}}}, {"criteria", crit}};
}

namespace detail {

inline int read_points(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<double>(static_cast<int>(d))) return static_cast<int>(d);
  }
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      const int p = std::stoi(v.get<std::string>(), &used);
      if (used == v.get_ref<const std::string&>().size()) return p;
    } catch (...) {
    }
  }
  fail(ErrorCode::SchemaViolation, "points must be an integer, got " + v.dump());
}

}  // namespace detail

/// Reads both the generation output shape ({meta:{theme}, criteria:[...]})
/// and the persisted one (which also carries ids and provenance). Missing
/// ids are assigned by position. Performs no rubric-level validation.
inline Rubric rubric_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorCode::SchemaViolation, "rubric must be an object");
  Rubric r;
  if (auto m = doc.find("meta"); m != doc.end() && m->is_object()) r.theme = m->value("theme", "");
  if (r.theme.empty()) r.theme = doc.value("theme", "");
  auto cit = doc.find("criteria");
  if (cit == doc.end() || !cit->is_array()) fail(ErrorCode::SchemaViolation, "rubric.criteria missing");
  bool any_missing_id = false;
  for (const auto& row : *cit) {
    if (!row.is_object()) fail(ErrorCode::SchemaViolation, "criterion must be an object");
    Criterion c;
    auto ax = row.find("axis");
    if (ax == row.end() || !ax->is_string()) fail(ErrorCode::SchemaViolation, "criterion axis missing");
    auto axis = parse_axis(ax->get<std::string>());
    if (!axis) fail(ErrorCode::SchemaViolation, "unknown axis '" + ax->get<std::string>() + "'");
    c.axis = *axis;
    auto desc = row.find("description");
    if (desc == row.end() || !desc->is_string()) fail(ErrorCode::SchemaViolation, "criterion description missing");
    c.description = desc->get<std::string>();
    auto pts = row.find("points");
    if (pts == row.end()) fail(ErrorCode::SchemaViolation, "criterion points missing");
    c.points = detail::read_points(*pts);
    if (auto id = row.find("id"); id != row.end() && id->is_string()) {
      c.id = id->get<std::string>();
    } else {
      any_missing_id = true;
    }
    if (auto p = row.find("provenance"); p != row.end() && p->is_string()) {
      c.provenance = parse_provenance(p->get<std::string>());
    }
    r.criteria.push_back(std::move(c));
  }
  if (any_missing_id) assign_ids(r);
  return r;
}

inline json to_json(const VerdictVector& v) {
  json m = json::object();
  for (const auto& [k, b] : v.verdicts) m[k] = b;
  return json{{"verdicts", m}, {"degenerate", v.degenerate}};
}

/// Accepts {"verdicts": {...}, "degenerate": bool} or a bare {"c1": true}.
inline VerdictVector verdicts_from_json(const json& doc) {
  VerdictVector v;
  const json* map = &doc;
  if (doc.is_object() && doc.contains("verdicts") && doc["verdicts"].is_object()) {
    map = &doc["verdicts"];
    v.degenerate = doc.value("degenerate", false);
  }
  if (!map->is_object()) fail(ErrorCode::SchemaViolation, "verdicts must be an object");
  for (const auto& [k, b] : map->items()) {
    if (!b.is_boolean()) fail(ErrorCode::SchemaViolation, "verdict " + k + " is not a boolean");
    v.verdicts[k] = b.get<bool>();
  }
  return v;
}

inline bool same_key_set(const Rubric& r, const VerdictVector& v) {
  if (r.criteria.size() != v.verdicts.size()) return false;
  for (const auto& c : r.criteria) {
    if (!v.verdicts.count(c.id)) return false;
  }
  return true;
}

inline VerdictVector all_false(const Rubric& r, bool degenerate) {
  VerdictVector v;
  v.degenerate = degenerate;
  for (const auto& c : r.criteria) v.verdicts[c.id] = false;
  return v;
}

}  // namespace crw
