#pragma once

// Training-cohort selection by greedy set cover over categorical tokens, and
// the disjoint seeded test sample drawn from the remainder.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "crw/random.hpp"
#include "crw/timeline.hpp"

namespace crw {

enum class TokenKind { ICD, Gender, AgeBin, HeightBin, WeightBin };

struct CoverToken {
  TokenKind kind = TokenKind::ICD;
  std::string value;  // canonical, kind-prefixed: "ICD:I10--10", "AgeBin:70"

  friend bool operator==(const CoverToken& a, const CoverToken& b) { return a.value == b.value; }
  friend auto operator<=>(const CoverToken& a, const CoverToken& b) { return a.value <=> b.value; }
};

using TokenSet = std::set<CoverToken>;

inline constexpr int kAgeBinYears = 10;
inline constexpr int kHeightBinCm = 10;
inline constexpr int kWeightBinKg = 10;

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::optional<double> as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    try {
      std::size_t used = 0;
      double d = std::stod(s, &used);
      if (used > 0) return d;
    } catch (...) {
    }
  }
  return std::nullopt;
}

inline std::string as_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_null()) return {};
  return v.dump();
}

inline int bin_floor(double value, int width) {
  return static_cast<int>(std::floor(value / width)) * width;
}

struct BodyMeasure {
  std::optional<double> height_cm;
  std::optional<double> weight_kg;
};

// Label of a chart/OMR row: explicit result name first, then the dictionary
// enrichment.
inline std::string measure_label(const ClinicalEvent& ev) {
  for (const json* rec : {&ev.data, &ev.descriptions}) {
    if (!rec->is_object()) continue;
    for (const char* key : {"result_name", "label", "item", "name"}) {
      if (auto it = rec->find(key); it != rec->end() && it->is_string()) return it->get<std::string>();
    }
  }
  return {};
}

inline std::optional<double> measure_value(const ClinicalEvent& ev) {
  if (!ev.data.is_object()) return std::nullopt;
  for (const char* key : {"result_value", "valuenum", "value"}) {
    if (auto it = ev.data.find(key); it != ev.data.end()) {
      if (auto v = as_number(*it)) return v;
    }
  }
  return std::nullopt;
}

// Latest chart/OMR event carrying a height or weight wins.
inline BodyMeasure latest_body_measure(const AdmissionTimeline& t) {
  BodyMeasure out;
  for (const auto& ev : t.timeline) {
    const std::string source = lower(ev.source) + " " + lower(ev.table);
    if (source.find("chart") == std::string::npos && source.find("omr") == std::string::npos) continue;
    const std::string label = lower(measure_label(ev));
    const auto value = measure_value(ev);
    if (!value || *value <= 0) continue;
    if (label.find("height") != std::string::npos) {
      double cm = *value;
      if (label.find("inch") != std::string::npos || label.find("(in") != std::string::npos) cm *= 2.54;
      out.height_cm = cm;
    } else if (label.find("weight") != std::string::npos) {
      double kg = *value;
      if (label.find("lb") != std::string::npos) kg *= 0.45359237;
      out.weight_kg = kg;
    }
  }
  return out;
}

}  // namespace detail

inline TokenSet tokenize_admission(const AdmissionTimeline& t) {
  TokenSet tokens;
  if (auto it = t.misc.find("ICD_Diagnoses"); it != t.misc.end() && it->is_array()) {
    for (const auto& dx : *it) {
      std::string code, version;
      if (dx.is_object()) {
        if (auto c = dx.find("icd_code"); c != dx.end()) code = detail::as_text(*c);
        if (auto v = dx.find("icd_version"); v != dx.end()) version = detail::as_text(*v);
      } else if (dx.is_string()) {
        code = dx.get<std::string>();
      }
      while (!code.empty() && code.back() == ' ') code.pop_back();
      if (code.empty()) continue;
      tokens.insert({TokenKind::ICD, "ICD:" + code + "--" + version});
    }
  }
  const json& demo = t.demographics;
  if (auto g = demo.find("gender"); g != demo.end() && g->is_string() && !g->get_ref<const std::string&>().empty()) {
    tokens.insert({TokenKind::Gender, "Gender:" + g->get<std::string>()});
  }
  if (auto a = demo.find("anchor_age"); a != demo.end()) {
    if (auto age = detail::as_number(*a)) {
      tokens.insert({TokenKind::AgeBin, "AgeBin:" + std::to_string(detail::bin_floor(*age, kAgeBinYears))});
    }
  }
  const auto body = detail::latest_body_measure(t);
  if (body.height_cm) {
    tokens.insert({TokenKind::HeightBin, "HeightBin:" + std::to_string(detail::bin_floor(*body.height_cm, kHeightBinCm))});
  }
  if (body.weight_kg) {
    tokens.insert({TokenKind::WeightBin, "WeightBin:" + std::to_string(detail::bin_floor(*body.weight_kg, kWeightBinKg))});
  }
  return tokens;
}

struct CoverCandidate {
  AdmissionKey key;
  TokenSet tokens;
};

struct CoverStep {
  AdmissionKey selected;
  std::size_t newly_covered = 0;
};

struct CoverResult {
  std::vector<CoverStep> steps;  // selection order
  std::size_t universe_size = 0;

  std::vector<AdmissionKey> selected() const {
    std::vector<AdmissionKey> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.selected);
    return out;
  }
};

/// Picks, until every token is covered, the candidate covering the most
/// uncovered tokens; ties go to the smallest (subject_id, hadm_id). Lazy
/// evaluation: a heap of stale gains, which only ever over-estimate.
inline CoverResult greedy_set_cover(std::span<const CoverCandidate> candidates) {
  std::map<std::string, std::size_t> intern;
  std::vector<std::vector<std::size_t>> sets(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (const auto& tok : candidates[i].tokens) {
      auto [it, inserted] = intern.emplace(tok.value, intern.size());
      sets[i].push_back(it->second);
    }
  }
  std::vector<char> covered(intern.size(), 0);
  std::size_t remaining = intern.size();

  struct Entry {
    std::size_t gain;
    AdmissionKey key;
    std::size_t index;
  };
  // Top of heap: larger gain, then smaller key.
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.key > b.key;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!sets[i].empty()) heap.push({sets[i].size(), candidates[i].key, i});
  }

  CoverResult result;
  result.universe_size = intern.size();
  while (remaining > 0 && !heap.empty()) {
    Entry top = heap.top();
    heap.pop();
    std::size_t gain = 0;
    for (auto tok : sets[top.index]) gain += covered[tok] ? 0 : 1;
    if (gain == 0) continue;
    top.gain = gain;
    if (!heap.empty() && worse(top, heap.top())) {
      heap.push(top);
      continue;
    }
    for (auto tok : sets[top.index]) {
      if (!covered[tok]) {
        covered[tok] = 1;
        --remaining;
      }
    }
    result.steps.push_back({top.key, gain});
  }
  return result;
}

inline std::vector<CoverCandidate> cover_candidates(std::span<const AdmissionTimeline> corpus) {
  std::vector<CoverCandidate> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) out.push_back({t.key, tokenize_admission(t)});
  return out;
}

inline CoverResult greedy_set_cover(std::span<const AdmissionTimeline> corpus) {
  const auto candidates = cover_candidates(corpus);
  return greedy_set_cover(std::span<const CoverCandidate>(candidates));
}

inline constexpr double kTestFraction = 0.20;

struct CohortSplit {
  std::vector<AdmissionKey> train;  // sorted
  std::vector<AdmissionKey> test;   // sorted
  std::uint64_t seed = kDefaultSeed;
};

/// Uniform floor(20%) sample of the admissions not in `train`. The remainder
/// is sorted by key before the seeded shuffle, so input order is irrelevant.
inline CohortSplit sample_test_split(std::span<const AdmissionKey> corpus, std::span<const AdmissionKey> train,
                                     std::uint64_t seed = kDefaultSeed) {
  std::vector<AdmissionKey> train_sorted(train.begin(), train.end());
  std::sort(train_sorted.begin(), train_sorted.end());
  train_sorted.erase(std::unique(train_sorted.begin(), train_sorted.end()), train_sorted.end());

  std::vector<AdmissionKey> all(corpus.begin(), corpus.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (const auto& k : train_sorted) {
    if (!std::binary_search(all.begin(), all.end(), k)) {
      fail(ErrorCode::InvalidArgument, "train admission not in corpus");
    }
  }
  std::vector<AdmissionKey> remainder;
  std::set_difference(all.begin(), all.end(), train_sorted.begin(), train_sorted.end(),
                      std::back_inserter(remainder));

  const auto take = static_cast<std::size_t>(std::floor(kTestFraction * static_cast<double>(remainder.size()) + 1e-9));
  Rng rng(seed);
  rng.shuffle(std::span<AdmissionKey>(remainder));
  std::vector<AdmissionKey> test(remainder.begin(), remainder.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(test.begin(), test.end());
  return CohortSplit{std::move(train_sorted), std::move(test), seed};
}

inline CohortSplit build_cohort(std::span<const AdmissionTimeline> corpus, std::uint64_t seed = kDefaultSeed) {
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "corpus is empty");
  const auto cover = greedy_set_cover(corpus);
  const auto train = cover.selected();
  std::vector<AdmissionKey> keys;
  keys.reserve(corpus.size());
  for (const auto& t : corpus) keys.push_back(t.key);
  return sample_test_split(keys, train, seed);
}

inline json to_json(const CohortSplit& split) {
  json out = {{"train", json::array()}, {"test", json::array()}, {"seed", split.seed}};
  for (const auto& k : split.train) out["train"].push_back(to_json(k));
  for (const auto& k : split.test) out["test"].push_back(to_json(k));
  return out;
}

inline CohortSplit cohort_split_from_json(const json& doc) {
  CohortSplit split;
  auto read_keys = [&](const char* field, std::vector<AdmissionKey>& out) {
    if (!doc.contains(field) || !doc[field].is_array()) fail(ErrorCode::MissingRequiredField, field);
    for (const auto& row : doc[field]) {
      out.push_back({row.at("subject_id").get<std::int64_t>(), row.at("hadm_id").get<std::int64_t>()});
    }
  };
  read_keys("train", split.train);
  read_keys("test", split.test);
  split.seed = doc.value("seed", kDefaultSeed);
  return split;
}

}  // namespace crw
