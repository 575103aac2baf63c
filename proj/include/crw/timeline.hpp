#pragma once

// Per-admission EHR event streams: ingestion, ordering and past serialization.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

#include "crw/error.hpp"
#include "crw/jsonio.hpp"
#include "crw/time.hpp"

namespace crw {

struct AdmissionKey {
  std::int64_t subject_id = 0;
  std::int64_t hadm_id = 0;

  friend constexpr auto operator<=>(const AdmissionKey&, const AdmissionKey&) = default;
};

inline json to_json(const AdmissionKey& key) {
  return json{{"subject_id", key.subject_id}, {"hadm_id", key.hadm_id}};
}

struct ClinicalEvent {
  std::string time;  // as written in the source record
  Instant instant;
  std::string source;
  std::string table;
  json data = json::object();
  json descriptions = json::object();
  json raw = json::object();  // the original event object, re-emitted verbatim
  std::size_t original_index = 0;
};

struct AdmissionTimeline {
  AdmissionKey key;
  json demographics = json::object();
  std::vector<ClinicalEvent> timeline;  // ascending by (time, source, original index)
  json misc = json::object();
  json extra = json::object();  // any other top-level fields, carried through untouched
};

struct IngestDiagnostics {
  std::size_t events_seen = 0;
  std::size_t events_dropped = 0;
};

inline constexpr std::size_t kDefaultMaxTokens = 65'536;

struct TokenBudget {
  std::size_t max_tokens = kDefaultMaxTokens;
  bool truncated = false;
};

namespace detail {

inline bool read_int64(const json& value, std::int64_t& out) {
  if (value.is_number_integer()) {
    out = value.get<std::int64_t>();
    return true;
  }
  if (value.is_number_unsigned()) {
    out = static_cast<std::int64_t>(value.get<std::uint64_t>());
    return true;
  }
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
  }
  return false;
}

inline std::string dump_compact(const json& value) {
  return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace detail

/// Orders events by (time, source, original index). Stable and total.
inline void sort_timeline(std::vector<ClinicalEvent>& events) {
  std::sort(events.begin(), events.end(), [](const ClinicalEvent& a, const ClinicalEvent& b) {
    if (a.instant != b.instant) return a.instant < b.instant;
    if (a.source != b.source) return a.source < b.source;
    return a.original_index < b.original_index;
  });
}

inline AdmissionTimeline admission_from_json(const json& doc, IngestDiagnostics* diag = nullptr) {
  if (!doc.is_object()) fail(ErrorCode::MalformedJson, "admission must be a JSON object");
  AdmissionTimeline t;
  for (const char* field : {"subject_id", "hadm_id", "timeline"}) {
    if (!doc.contains(field)) fail(ErrorCode::MissingRequiredField, field);
  }
  if (!detail::read_int64(doc["subject_id"], t.key.subject_id)) {
    fail(ErrorCode::MissingRequiredField, "subject_id is not an integer");
  }
  if (!detail::read_int64(doc["hadm_id"], t.key.hadm_id)) {
    fail(ErrorCode::MissingRequiredField, "hadm_id is not an integer");
  }
  if (!doc["timeline"].is_array()) fail(ErrorCode::MissingRequiredField, "timeline is not an array");
  if (auto it = doc.find("demographics"); it != doc.end() && it->is_object()) t.demographics = *it;
  if (auto it = doc.find("misc"); it != doc.end() && it->is_object()) t.misc = *it;
  for (const auto& [name, value] : doc.items()) {
    if (name != "subject_id" && name != "hadm_id" && name != "demographics" &&
        name != "timeline" && name != "misc") {
      t.extra[name] = value;
    }
  }

  IngestDiagnostics local;
  const auto& events = doc["timeline"];
  t.timeline.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const json& ev = events[i];
    ++local.events_seen;
    auto drop = [&](std::string_view why) {
      ++local.events_dropped;
      spdlog::warn("admission {}/{}: dropping event {}: {}", t.key.subject_id, t.key.hadm_id, i, why);
    };
    if (!ev.is_object()) {
      drop("not an object");
      continue;
    }
    auto time_it = ev.find("time");
    if (time_it == ev.end() || !time_it->is_string()) {
      drop("missing timestamp");
      continue;
    }
    auto instant = parse_iso8601(time_it->get_ref<const std::string&>());
    if (!instant) {
      drop("unparseable timestamp");
      continue;
    }
    auto source_it = ev.find("source");
    if (source_it == ev.end() || !source_it->is_string() || source_it->get_ref<const std::string&>().empty()) {
      drop("missing source");
      continue;
    }
    ClinicalEvent out;
    out.time = time_it->get<std::string>();
    out.instant = *instant;
    out.source = source_it->get<std::string>();
    if (auto it = ev.find("table"); it != ev.end() && it->is_string()) out.table = it->get<std::string>();
    if (auto it = ev.find("data"); it != ev.end()) out.data = *it;
    if (auto it = ev.find("descriptions"); it != ev.end()) out.descriptions = *it;
    out.raw = ev;
    out.original_index = i;
    t.timeline.push_back(std::move(out));
  }
  sort_timeline(t.timeline);
  if (diag) *diag = local;
  return t;
}

inline AdmissionTimeline ingest_admission(std::string_view raw, IngestDiagnostics* diag = nullptr) {
  return admission_from_json(parse_json(raw, "admission"), diag);
}

inline json event_to_json(const ClinicalEvent& ev) { return ev.raw; }

inline json events_to_json(std::span<const ClinicalEvent> events) {
  json out = json::array();
  for (const auto& ev : events) out.push_back(ev.raw);
  return out;
}

/// Same schema as the input, timeline ascending.
inline json to_json(const AdmissionTimeline& t) {
  json out = t.extra;
  out["subject_id"] = t.key.subject_id;
  out["hadm_id"] = t.key.hadm_id;
  out["demographics"] = t.demographics;
  out["timeline"] = events_to_json(t.timeline);
  out["misc"] = t.misc;
  return out;
}

/// Only the Patient and ED_triage misc blocks are visible to a policy.
inline json retained_misc(const json& misc) {
  json out = json::object();
  if (!misc.is_object()) return out;
  for (const char* block : {"Patient", "ED_triage"}) {
    if (auto it = misc.find(block); it != misc.end()) out[block] = *it;
  }
  return out;
}

inline std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

struct SerializedPast {
  std::string text;
  TokenBudget budget;
  std::size_t events_kept = 0;
  std::size_t events_dropped = 0;
  std::size_t token_estimate = 0;
};

/// Serializes `events` as the timeline of a compact JSON object that also
/// carries ids, demographics and the retained misc blocks. The text equals
/// `json::dump()` of that object (keys sorted, timeline last). When the
/// estimate exceeds the budget the oldest events are dropped first; if even
/// the event-free object is over budget, the result has no events.
inline SerializedPast serialize_events(const AdmissionTimeline& t, std::span<const ClinicalEvent> events,
                                       TokenBudget budget) {
  if (budget.max_tokens == 0) fail(ErrorCode::InvalidArgument, "token budget must be positive");
  json head = json::object();
  head["demographics"] = t.demographics;
  head["hadm_id"] = t.key.hadm_id;
  head["misc"] = retained_misc(t.misc);
  head["subject_id"] = t.key.subject_id;
  std::string prefix = detail::dump_compact(head);
  prefix.pop_back();  // '}'
  prefix += ",\"timeline\":[";
  static constexpr std::string_view suffix = "]}";

  std::vector<std::string> parts;
  parts.reserve(events.size());
  for (const auto& ev : events) parts.push_back(detail::dump_compact(ev.raw));

  // Character count of the object holding parts[start..).
  std::vector<std::size_t> tail(parts.size() + 1, 0);
  for (std::size_t i = parts.size(); i-- > 0;) tail[i] = tail[i + 1] + parts[i].size();
  auto length_from = [&](std::size_t start) {
    const std::size_t n = parts.size() - start;
    return prefix.size() + suffix.size() + tail[start] + (n > 0 ? n - 1 : 0);
  };
  std::size_t start = 0;
  while (start < parts.size() && (length_from(start) + 3) / 4 > budget.max_tokens) ++start;

  SerializedPast out;
  out.text.reserve(length_from(start));
  out.text = prefix;
  for (std::size_t i = start; i < parts.size(); ++i) {
    if (i > start) out.text += ',';
    out.text += parts[i];
  }
  out.text += suffix;
  out.budget = budget;
  out.budget.truncated = start > 0;
  out.events_kept = parts.size() - start;
  out.events_dropped = start;
  out.token_estimate = estimate_tokens(out.text);
  return out;
}

/// Serializes events [1..upto] (1-based, inclusive).
inline SerializedPast serialize_past(const AdmissionTimeline& t, std::size_t upto, TokenBudget budget = {}) {
  if (upto == 0) fail(ErrorCode::EmptyPast, "upto must be at least 1");
  if (upto > t.timeline.size()) fail(ErrorCode::InvalidArgument, "upto exceeds timeline length");
  return serialize_events(t, std::span<const ClinicalEvent>(t.timeline.data(), upto), budget);
}

inline bool is_icd_source(std::string_view source) { return source.find("ICD") != std::string_view::npos; }

/// Corpus-level lint: a serialized past must never expose ICD-source events.
/// Returns the number of offending events.
inline std::size_t count_icd_events_in_serialized(std::string_view text) {
  const json doc = parse_json(text, "serialized past");
  std::size_t count = 0;
  for (const auto& ev : doc.at("timeline")) {
    if (auto it = ev.find("source"); it != ev.end() && it->is_string() &&
                                     is_icd_source(it->get_ref<const std::string&>())) {
      ++count;
    }
  }
  return count;
}

/// Loads a corpus from a single .json / .jsonl file or from a directory of
/// them (files visited in name order). Rejects duplicate admission keys.
inline std::vector<AdmissionTimeline> load_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      const auto ext = entry.path().extension();
      if (entry.is_regular_file() && (ext == ".json" || ext == ".jsonl")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(path)) {
    files.push_back(path);
  } else {
    fail(ErrorCode::IoError, "corpus path does not exist: " + path.string());
  }

  std::vector<AdmissionTimeline> corpus;
  for (const auto& file : files) {
    if (file.extension() == ".jsonl") {
      for (const auto& row : read_jsonl(file)) corpus.push_back(admission_from_json(row));
    } else {
      corpus.push_back(ingest_admission(read_file(file)));
    }
  }
  std::vector<AdmissionKey> keys;
  keys.reserve(corpus.size());
  for (const auto& t : corpus) keys.push_back(t.key);
  std::sort(keys.begin(), keys.end());
  if (auto dup = std::adjacent_find(keys.begin(), keys.end()); dup != keys.end()) {
    fail(ErrorCode::InvalidArgument, "duplicate admission " + std::to_string(dup->subject_id) + "/" +
                                         std::to_string(dup->hadm_id));
  }
  return corpus;
}

}  // namespace crw
