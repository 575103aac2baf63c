#pragma once

// Splitting a policy completion into reasoning and answer, per output family.
//
// The structural matchers below are hand-written scanners equivalent to the
// anchored patterns they document. std::regex recurses per character in
// libstdc++ and overflows the stack on multi-kilobyte completions.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include "crw/error.hpp"
#include "crw/jsonio.hpp"

namespace crw {

enum class Family { AnswerWrapper, ThinkThenText, Headers, JsonFields };

inline constexpr std::string_view to_string(Family f) {
  switch (f) {
    case Family::AnswerWrapper: return "answer-wrapper";
    case Family::ThinkThenText: return "think-then-text";
    case Family::Headers: return "headers";
    case Family::JsonFields: return "json-fields";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "answer-wrapper") return Family::AnswerWrapper;
  if (s == "think-then-text") return Family::ThinkThenText;
  if (s == "headers") return Family::Headers;
  if (s == "json-fields") return Family::JsonFields;
  fail(ErrorCode::UnsupportedFamily, std::string(s));
}

struct CompletionParse {
  std::optional<std::string> think;
  std::optional<std::string> answer;
  Family family = Family::ThinkThenText;
};

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

namespace detail {

// Python/ECMAScript \s over ASCII.
constexpr bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string_view ltrim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  return s;
}

}  // namespace detail

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

/// Full-string match of ^<think>.*?</think>.*?<answer>.*?</answer>$ with
/// dot matching newlines and $ anchored at the very end.
inline bool matches_answer_wrapper(std::string_view s) {
  if (!s.starts_with(kThinkOpen) || !s.ends_with(kAnswerClose)) return false;
  const std::size_t close_at = s.size() - kAnswerClose.size();
  const auto t = s.find(kThinkClose, kThinkOpen.size());
  if (t == std::string_view::npos) return false;
  const auto a = s.find(kAnswerOpen, t + kThinkClose.size());
  if (a == std::string_view::npos) return false;
  return a + kAnswerOpen.size() <= close_at;
}

/// Match of ^\s*<think>\s*.*?\s*</think>\s*(\S[\s\S]*)$ (dot matching
/// newlines). Returns the captured trailing content, or nullopt.
inline std::optional<std::string_view> think_then_text_capture(std::string_view s) {
  const std::string_view body = detail::ltrim(s);
  if (!body.starts_with(kThinkOpen)) return std::nullopt;
  // The earliest </think> with any non-space after it yields the lazy match;
  // if the earliest one has none, no later one can.
  const auto t = body.find(kThinkClose, kThinkOpen.size());
  if (t == std::string_view::npos) return std::nullopt;
  const std::string_view rest = detail::ltrim(body.substr(t + kThinkClose.size()));
  if (rest.empty()) return std::nullopt;
  return rest;
}

inline bool matches_think_then_text(std::string_view s) {
  const auto cap = think_then_text_capture(s);
  return cap && !cap->starts_with(kThinkOpen);
}

namespace detail {

inline std::optional<std::string> between(std::string_view s, std::string_view open, std::string_view close,
                                          std::size_t from = 0, std::size_t* end = nullptr) {
  const auto o = s.find(open, from);
  if (o == std::string_view::npos) return std::nullopt;
  const auto c = s.find(close, o + open.size());
  if (c == std::string_view::npos) return std::nullopt;
  if (end) *end = c + close.size();
  return std::string(s.substr(o + open.size(), c - o - open.size()));
}

inline std::optional<std::string> non_empty(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  return std::string(s);
}

// Position just past a markdown header line whose text (after #'s) starts
// with `title`, case-insensitive.
inline std::size_t find_header(std::string_view s, std::string_view title, std::size_t& header_start) {
  std::size_t line = 0;
  while (line < s.size()) {
    auto eol = s.find('\n', line);
    if (eol == std::string_view::npos) eol = s.size();
    std::string_view l = ltrim(s.substr(line, eol - line));
    if (l.starts_with("#")) {
      while (!l.empty() && l.front() == '#') l.remove_prefix(1);
      l = trim(l);
      if (l.size() >= title.size()) {
        bool eq = true;
        for (std::size_t i = 0; i < title.size(); ++i) {
          if (std::tolower(static_cast<unsigned char>(l[i])) != std::tolower(static_cast<unsigned char>(title[i]))) {
            eq = false;
            break;
          }
        }
        if (eq) {
          header_start = line;
          return eol;
        }
      }
    }
    line = eol + 1;
  }
  return std::string_view::npos;
}

// The outermost {...} object in the text (code fences tolerated).
inline std::optional<json> embedded_object(std::string_view s) {
  const auto open = s.find('{');
  const auto close = s.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  try {
    auto doc = json::parse(s.substr(open, close - open + 1));
    if (doc.is_object()) return doc;
  } catch (const json::parse_error&) {
  }
  return std::nullopt;
}

}  // namespace detail

inline CompletionParse parse_completion(std::string_view text, Family family) {
  CompletionParse p;
  p.family = family;
  switch (family) {
    case Family::AnswerWrapper: {
      std::size_t end = 0;
      if (auto t = detail::between(text, kThinkOpen, kThinkClose, 0, &end)) {
        p.think = detail::non_empty(*t);
      } else {
        end = 0;
      }
      if (auto a = detail::between(text, kAnswerOpen, kAnswerClose, end)) p.answer = detail::non_empty(*a);
      break;
    }
    case Family::ThinkThenText: {
      const std::string_view body = detail::ltrim(text);
      if (body.starts_with(kThinkOpen)) {
        const auto t = body.find(kThinkClose, kThinkOpen.size());
        if (t != std::string_view::npos) {
          p.think = detail::non_empty(body.substr(kThinkOpen.size(), t - kThinkOpen.size()));
          p.answer = detail::non_empty(body.substr(t + kThinkClose.size()));
        } else {
          // Unterminated reasoning: no answer was produced.
          p.think = detail::non_empty(body.substr(kThinkOpen.size()));
        }
      } else {
        p.answer = detail::non_empty(text);
      }
      break;
    }
    case Family::Headers: {
      std::size_t think_start = 0, final_start = 0;
      const auto think_end = detail::find_header(text, "Thinking", think_start);
      const auto final_end = detail::find_header(text, "Final Response", final_start);
      if (think_end != std::string_view::npos) {
        const std::size_t stop = final_end != std::string_view::npos && final_start > think_end ? final_start : text.size();
        p.think = detail::non_empty(text.substr(think_end, stop - think_end));
      }
      if (final_end != std::string_view::npos) {
        p.answer = detail::non_empty(text.substr(std::min(final_end, text.size())));
      } else if (think_end == std::string_view::npos) {
        p.answer = detail::non_empty(text);
      }
      break;
    }
    case Family::JsonFields: {
      if (auto doc = detail::embedded_object(text)) {
        if (auto r = doc->find("answer_reasoning"); r != doc->end() && r->is_string()) {
          p.think = detail::non_empty(r->get<std::string>());
        }
        if (auto a = doc->find("final_answer"); a != doc->end() && a->is_string()) {
          p.answer = detail::non_empty(a->get<std::string>());
        }
      }
      break;
    }
  }
  return p;
}

inline json to_json(const CompletionParse& p) {
  json out = {{"family", to_string(p.family)}, {"think", nullptr}, {"answer", nullptr}};
  if (p.think) out["think"] = *p.think;
  if (p.answer) out["answer"] = *p.answer;
  return out;
}

}  // namespace crw
