#pragma once

// Annotation persistence: draft upserts, guarded finalization and export,
// backed by an append-only JSON-lines journal.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "crw/error.hpp"
#include "crw/jsonio.hpp"
#include "crw/stats.hpp"
#include "crw/time.hpp"

namespace crw {

inline constexpr std::string_view kPhase1Type = "clinical_reasoning";
inline constexpr std::string_view kPhase2Type = "ab_clinical_reasoning";
inline constexpr std::size_t kPairsPerCase = 3;

struct SubmissionKey {
  std::string rater_id;
  std::string sample_id;
  std::string submission_type;

  friend auto operator<=>(const SubmissionKey&, const SubmissionKey&) = default;
  std::string str() const { return rater_id + "|" + sample_id + "|" + submission_type; }
};

inline SubmissionKey key_of(const json& record) {
  return {record.at("rater_id").get<std::string>(), record.at("sample_id").get<std::string>(),
          record.at("submission_type").get<std::string>()};
}

namespace detail {

inline void require_string(const json& obj, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) {
    fail(ErrorCode::SchemaViolation, std::string("missing or empty '") + field + "'");
  }
}

inline void validate_pair(const json& p) {
  for (const char* f : {"pair_id", "model_1", "model_2", "displayedAsA", "displayedAsB"}) require_string(p, f);
  const auto m1 = p["model_1"].get<std::string>(), m2 = p["model_2"].get<std::string>();
  const auto a = p["displayedAsA"].get<std::string>(), b = p["displayedAsB"].get<std::string>();
  if (m1 == m2 || !((a == m1 && b == m2) || (a == m2 && b == m1))) {
    fail(ErrorCode::SchemaViolation, "display mapping for pair '" + p["pair_id"].get<std::string>() + "' is not a bijection");
  }
  if (auto c = p.find("choice"); c != p.end() && !c->is_null()) {
    if (!c->is_string() || (*c != "A" && *c != "B" && *c != "tie")) fail(ErrorCode::SchemaViolation, "choice must be A, B, tie or null");
  }
}

}  // namespace detail

/// Shape checks for a submission body; throws SchemaViolation.
inline void validate_submission(const json& sub) {
  if (!sub.is_object()) fail(ErrorCode::SchemaViolation, "submission must be an object");
  for (const char* f : {"rater_id", "experiment_id", "sample_id", "submission_type"}) detail::require_string(sub, f);
  const auto type = sub["submission_type"].get<std::string>();
  const auto& payload = sub.contains("payload") ? sub["payload"] : json();
  if (!payload.is_object()) fail(ErrorCode::SchemaViolation, "payload must be an object");
  if (sub.value("is_invalid", false)) {
    const auto reason = sub.value("invalid_reason", std::string());
    if (reason.find_first_not_of(" \t\r\n") == std::string::npos) {
      fail(ErrorCode::SchemaViolation, "invalid submissions need a free-text reason");
    }
  }
  if (type == kPhase1Type) {
    if (!payload.contains("criteria") || !payload["criteria"].is_array()) fail(ErrorCode::SchemaViolation, "payload.criteria must be an array");
    try {
      std::set<std::string> ids;
      for (const auto& c : payload["criteria"]) {
        const auto a = criterion_annotation_from_json(c);
        if (!ids.insert(a.criterion.id).second) fail(ErrorCode::SchemaViolation, "duplicate criterion id " + a.criterion.id);
        if (a.is_new && c.contains("provenance") && c["provenance"] == "oracle") {
          fail(ErrorCode::SchemaViolation, "clinician-added criterion marked oracle-authored");
        }
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::SchemaViolation, e.what());
    }
  } else if (type == kPhase2Type) {
    if (!payload.contains("pairs") || !payload["pairs"].is_array()) fail(ErrorCode::SchemaViolation, "payload.pairs must be an array");
    std::set<std::string> ids;
    for (const auto& p : payload["pairs"]) {
      detail::validate_pair(p);
      if (!ids.insert(p["pair_id"].get<std::string>()).second) fail(ErrorCode::SchemaViolation, "duplicate pair id");
    }
  } else {
    fail(ErrorCode::SchemaViolation, "unknown submission_type '" + type + "'");
  }
}

/// What still blocks finalization. Invalid submissions skip the guards.
inline std::vector<std::string> guard_missing(const json& record, std::size_t pairs_per_case = kPairsPerCase) {
  std::vector<std::string> missing;
  if (record.value("is_invalid", false)) return missing;
  const auto& payload = record.at("payload");
  if (record.at("submission_type") == kPhase1Type) {
    for (const auto& c : payload.at("criteria")) {
      const auto id = c.at("id").get<std::string>();
      const auto nr = c.find("not_relevant");
      if (nr == c.end() || nr->is_null()) {
        missing.push_back(id + ": suitability");
        continue;
      }
      if (!nr->get<bool>() && (!c.contains("verdict") || c["verdict"].is_null())) missing.push_back(id + ": verdict");
    }
  } else {
    const auto& pairs = payload.at("pairs");
    for (const auto& p : pairs) {
      if (!p.contains("choice") || p["choice"].is_null()) missing.push_back(p["pair_id"].get<std::string>() + ": choice");
    }
    if (pairs.size() < pairs_per_case) {
      missing.push_back("pairs: " + std::to_string(pairs.size()) + " of " + std::to_string(pairs_per_case));
    }
  }
  return missing;
}

using Clock = std::function<Instant()>;

inline Instant system_now() {
  using namespace std::chrono;
  return Instant{duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count()};
}

/// One live record per (rater, sample, type). Every mutation appends the
/// full record to the journal; replay keeps the last line per key.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path dir, Clock clock = system_now)
      : dir_(std::move(dir)), clock_(std::move(clock)) {
    std::filesystem::create_directories(dir_);
    if (std::filesystem::exists(journal_path())) {
      std::size_t lines = 0;
      for (auto& row : read_jsonl(journal_path())) {
        ++lines;
        auto key = key_of(row);
        records_[std::move(key)] = std::move(row);
      }
      if (lines > records_.size()) compact_locked();
    }
    journal_.open(journal_path(), std::ios::app | std::ios::binary);
    if (!journal_) fail(ErrorCode::IoError, "cannot open journal in " + dir_.string());
  }

  std::filesystem::path journal_path() const { return dir_ / "submissions.jsonl"; }

  json upsert_draft(json sub) {
    validate_submission(sub);
    std::lock_guard lock(mu_);
    const auto key = key_of(sub);
    const auto now = stamp();
    json record = std::move(sub);
    record["is_draft"] = true;
    if (!record.contains("is_invalid")) record["is_invalid"] = false;
    if (!record.contains("invalid_reason")) record["invalid_reason"] = "";
    if (!record.contains("patient_id")) record["patient_id"] = "";
    auto meta = record.value("results_metadata", json::object());
    const auto incoming = meta.value("interaction_count", std::int64_t{0});
    if (auto it = records_.find(key); it != records_.end()) {
      if (!it->second.value("is_draft", true)) fail(ErrorCode::FinalizedRecordExists, key.str());
      const auto prior = it->second["results_metadata"].value("interaction_count", std::int64_t{0});
      meta["interaction_count"] = std::max(prior, incoming);
      record["created_at"] = it->second["created_at"];
    } else {
      meta["interaction_count"] = incoming;
      record["created_at"] = now;
    }
    record["results_metadata"] = meta;
    record["updated_at"] = now;
    append(record);
    records_[key] = record;
    return record;
  }

  json finalize(const SubmissionKey& key) {
    std::lock_guard lock(mu_);
    auto it = records_.find(key);
    if (it == records_.end()) fail(ErrorCode::NoDraft, key.str());
    if (!it->second.value("is_draft", true)) fail(ErrorCode::FinalizedRecordExists, key.str());
    const auto missing = guard_missing(it->second, pairs_per_case_);
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      fail(ErrorCode::GuardFailed, list);
    }
    json record = it->second;
    record["is_draft"] = false;
    record["updated_at"] = stamp();
    append(record);
    it->second = record;
    return record;
  }

  std::optional<json> get(const SubmissionKey& key) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return std::optional<json>(std::in_place, it->second);
  }

  /// Finalized records, ordered by key. An empty experiment id selects all.
  std::vector<json> export_rows(const std::string& experiment_id) const {
    std::lock_guard lock(mu_);
    std::vector<json> out;
    for (const auto& [key, rec] : records_) {
      if (rec.value("is_draft", true)) continue;
      if (!experiment_id.empty() && rec.value("experiment_id", std::string()) != experiment_id) continue;
      out.push_back(rec);
    }
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  /// Rewrites the journal with one line per live record.
  void compact() {
    std::lock_guard lock(mu_);
    journal_.close();
    compact_locked();
    journal_.open(journal_path(), std::ios::app | std::ios::binary);
  }

  void set_pairs_per_case(std::size_t n) { pairs_per_case_ = n; }
  std::size_t pairs_per_case() const { return pairs_per_case_; }

 private:
  std::string stamp() {
    Instant now = clock_();
    if (now <= last_) now.millis = last_.millis + 1;
    last_ = now;
    return format_iso8601(now);
  }

  void append(const json& record) {
    journal_ << record.dump() << '\n';
    journal_.flush();
    if (!journal_) fail(ErrorCode::IoError, "journal write failed");
  }

  void compact_locked() {
    std::string text;
    for (const auto& [k, r] : records_) text += r.dump() + "\n";
    write_file_atomic(journal_path(), text);
  }

  std::filesystem::path dir_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<SubmissionKey, json> records_;
  std::ofstream journal_;
  Instant last_{};
  std::size_t pairs_per_case_ = kPairsPerCase;
};

// ---------------------------------------------------------------------------
// Cases

/// Annotation cases from a JSON-lines file. Each row needs case_id; cohort
/// and the timeline text used for keyword search are optional.
class CaseCatalog {
 public:
  CaseCatalog() = default;
  explicit CaseCatalog(std::vector<json> rows) {
    for (auto& r : rows) {
      if (!r.contains("case_id") || !r["case_id"].is_string()) fail(ErrorCode::SchemaViolation, "case row without case_id");
      const auto id = r["case_id"].get<std::string>();
      if (!index_.emplace(id, cases_.size()).second) fail(ErrorCode::SchemaViolation, "duplicate case " + id);
      cases_.push_back(std::move(r));
    }
  }

  static CaseCatalog load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return {};
    return CaseCatalog(read_jsonl(path));
  }

  static json summary(const json& c) {
    return json{{"case_id", c["case_id"]},
                {"cohort", c.value("cohort", std::string())},
                {"experiment_id", c.value("experiment_id", std::string())},
                {"patient_id", c.value("patient_id", std::string())}};
  }

  /// Case-insensitive substring search over the case's timeline text.
  std::vector<json> list(const std::string& cohort, const std::string& keyword) const {
    std::vector<json> out;
    const auto needle = lower(keyword);
    for (const auto& c : cases_) {
      if (!cohort.empty() && c.value("cohort", std::string()) != cohort) continue;
      if (!needle.empty() && lower(timeline_text(c)).find(needle) == std::string::npos) continue;
      out.push_back(summary(c));
    }
    return out;
  }

  const json& get(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail(ErrorCode::NotFound, "case " + id);
    return cases_[it->second];
  }

  std::size_t size() const { return cases_.size(); }

 private:
  static std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
  }

  static std::string timeline_text(const json& c) {
    if (auto it = c.find("timeline_text"); it != c.end() && it->is_string()) return it->get<std::string>();
    if (auto it = c.find("item"); it != c.end()) {
      if (auto p = it->find("past"); p != it->end()) return p->dump();
    }
    return c.dump();
  }

  std::vector<json> cases_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace crw
