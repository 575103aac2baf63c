#pragma once

// Reward arithmetic: the rubric reward and the structural auxiliaries.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "crw/completion.hpp"
#include "crw/rubric.hpp"

namespace crw {

/// clip01( sum of points over met criteria / sum of positive points ).
inline double compute_rubric_score(const Rubric& rubric, const VerdictVector& verdicts) {
  if (!same_key_set(rubric, verdicts)) fail(ErrorCode::VerdictKeyMismatch, "verdict keys differ from rubric ids");
  long earned = 0;
  long positive = 0;
  for (const auto& c : rubric.criteria) {
    if (c.points > 0) positive += c.points;
    if (verdicts.verdicts.at(c.id)) earned += c.points;
  }
  if (positive <= 0) fail(ErrorCode::NoPositiveCriteria, "rubric has no positive criteria");
  return std::clamp(static_cast<double>(earned) / static_cast<double>(positive), 0.0, 1.0);
}

inline double format_reward(std::string_view completion, Family family) {
  switch (family) {
    case Family::AnswerWrapper: return matches_answer_wrapper(completion) ? 1.0 : 0.0;
    case Family::ThinkThenText: return matches_think_then_text(completion) ? 1.0 : 0.0;
    default: fail(ErrorCode::UnsupportedFamily, "format reward needs answer-wrapper or think-then-text");
  }
}

inline double tag_reward(std::string_view completion, Family family) {
  auto once = [&](std::string_view tag) { return count_occurrences(completion, tag) == 1; };
  switch (family) {
    case Family::AnswerWrapper: {
      double r = 0;
      for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) r += once(tag) ? 0.25 : 0.0;
      return r;
    }
    case Family::ThinkThenText: {
      double r = 0;
      r += once(kThinkOpen) ? 0.4 : 0.0;
      r += once(kThinkClose) ? 0.4 : 0.0;
      if (const auto t = completion.find(kThinkClose); t != std::string_view::npos) {
        const auto rest = detail::trim(completion.substr(t + kThinkClose.size()));
        if (!rest.empty() && !rest.starts_with(kThinkOpen)) r += 0.2;
      }
      return r;
    }
    default: fail(ErrorCode::UnsupportedFamily, "tag reward needs answer-wrapper or think-then-text");
  }
}

namespace detail {

constexpr bool is_word(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

constexpr bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Occurrences of Step\s*\d+[:.] in a line.
inline std::size_t count_step_n(std::string_view line) {
  std::size_t n = 0;
  for (auto pos = line.find("Step"); pos != std::string_view::npos; pos = line.find("Step", pos + 1)) {
    std::size_t i = pos + 4;
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t digits = i;
    while (i < line.size() && is_digit(line[i])) ++i;
    if (i > digits && i < line.size() && (line[i] == ':' || line[i] == '.')) {
      ++n;
      pos = i;
    }
  }
  return n;
}

// ^\s*\d+[.)]
inline bool is_numbered_item(std::string_view line) {
  line = ltrim(line);
  std::size_t i = 0;
  while (i < line.size() && is_digit(line[i])) ++i;
  return i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')');
}

// ^\s*[-*•]
inline bool is_bullet(std::string_view line) {
  line = ltrim(line);
  return line.starts_with("-") || line.starts_with("*") || line.starts_with("\xE2\x80\xA2");
}

inline constexpr std::string_view kTransitionWords[] = {"first", "second", "third", "next", "then", "finally"};

// \b(first|second|third|next|then|finally)\b, case-insensitive.
inline std::size_t count_transition_words(std::string_view line) {
  std::size_t n = 0;
  std::size_t i = 0;
  while (i < line.size()) {
    if (!is_word(line[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < line.size() && is_word(line[j])) ++j;
    std::string word(line.substr(i, j - i));
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto w : kTransitionWords) {
      if (word == w) {
        ++n;
        break;
      }
    }
    i = j;
  }
  return n;
}

}  // namespace detail

/// Sum of step-marker matches over the lines of `think`.
inline std::size_t count_step_markers(std::string_view think) {
  std::size_t k = 0;
  std::size_t start = 0;
  while (start <= think.size()) {
    auto eol = think.find('\n', start);
    if (eol == std::string_view::npos) eol = think.size();
    const auto line = think.substr(start, eol - start);
    k += detail::count_step_n(line);
    k += detail::is_numbered_item(line) ? 1 : 0;
    k += detail::is_bullet(line) ? 1 : 0;
    k += detail::count_transition_words(line);
    start = eol + 1;
  }
  return k;
}

inline double steps_reward(std::string_view think) {
  return std::min(1.0, static_cast<double>(count_step_markers(think)) / 3.0);
}

inline std::vector<std::string_view> whitespace_tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && detail::is_space(s[i])) ++i;
    const std::size_t j = i;
    while (i < s.size() && !detail::is_space(s[i])) ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

/// Fraction of distinct n-grams among all n-grams; nullopt when there are none.
inline std::optional<double> ngram_uniqueness(std::string_view text, std::size_t n) {
  const auto toks = whitespace_tokens(text);
  if (n == 0 || toks.size() < n) return std::nullopt;
  std::unordered_set<std::string> seen;
  const std::size_t total = toks.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key += ' ';
      key += toks[i + j];
    }
    seen.insert(std::move(key));
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

inline double repetition_penalty(std::string_view completion, std::size_t n = 3, double lambda = 1.0) {
  const auto u = ngram_uniqueness(completion, n);
  return u ? -lambda * (1.0 - *u) : 0.0;
}

inline constexpr std::size_t kDegenerateMinTokens = 60;
inline constexpr double kDegenerateUniqueness = 0.1;

/// Local pre-check that spares a grading call: nothing but tags and
/// whitespace, or trigram uniqueness < 0.1 over at least 60 tokens.
inline bool is_degenerate(std::string_view completion) {
  std::string stripped(completion);
  for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
    for (auto pos = stripped.find(tag); pos != std::string::npos; pos = stripped.find(tag, pos)) {
      stripped.erase(pos, tag.size());
    }
  }
  if (detail::trim(stripped).empty()) return true;
  if (whitespace_tokens(completion).size() >= kDegenerateMinTokens) {
    const auto u = ngram_uniqueness(completion, 3);
    if (u && *u < kDegenerateUniqueness) return true;
  }
  return false;
}

enum class RewardProfile { Canonical, Anchor };

inline constexpr std::string_view to_string(RewardProfile p) {
  return p == RewardProfile::Canonical ? "canonical" : "anchor";
}

inline RewardProfile parse_profile(std::string_view s) {
  if (s == "canonical") return RewardProfile::Canonical;
  if (s == "anchor" || s == "anchor-1.5B") return RewardProfile::Anchor;
  fail(ErrorCode::InvalidArgument, "unknown reward profile '" + std::string(s) + "'");
}

struct RewardBreakdown {
  double r_rub = 0;
  double r_format = 0;
  double r_tag = 0;
  std::optional<double> r_steps;
  std::optional<double> r_rep;
  double r_total = 0;
};

inline RewardBreakdown reward_stack(std::string_view completion, Family family, const Rubric& rubric,
                                    const VerdictVector& verdicts, RewardProfile profile) {
  RewardBreakdown r;
  r.r_rub = verdicts.degenerate ? 0.0 : compute_rubric_score(rubric, verdicts);
  r.r_format = format_reward(completion, family);
  r.r_tag = tag_reward(completion, family);
  r.r_total = r.r_rub + r.r_format + r.r_tag;
  if (profile == RewardProfile::Anchor) {
    const auto parse = parse_completion(completion, family);
    r.r_steps = steps_reward(parse.think.value_or(""));
    r.r_rep = repetition_penalty(completion);
    r.r_total += *r.r_steps + *r.r_rep;
  }
  return r;
}

inline json to_json(const RewardBreakdown& r) {
  json out = {{"r_rub", r.r_rub}, {"r_format", r.r_format}, {"r_tag", r.r_tag},
              {"r_steps", nullptr}, {"r_rep", nullptr}, {"r_total", r.r_total}};
  if (r.r_steps) out["r_steps"] = *r.r_steps;
  if (r.r_rep) out["r_rep"] = *r.r_rep;
  return out;
}

}  // namespace crw
