#pragma once

// Traffic to the judge endpoint: query/reference generation, rubric
// synthesis and grading, with validation, retries and transcripts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "crw/completion.hpp"
#include "crw/prompts.hpp"
#include "crw/random.hpp"
#include "crw/reward.hpp"
#include "crw/rubric.hpp"
#include "crw/splitter.hpp"

namespace crw {

struct Sampling {
  double temperature = 1.0;
  double top_p = 0.95;
  int top_k = 64;          // 0 = not sent
  int max_tokens = 0;      // 0 = not sent
};

inline json to_json(const Sampling& s) {
  return json{{"temperature", s.temperature}, {"top_p", s.top_p}, {"top_k", s.top_k}, {"max_tokens", s.max_tokens}};
}

inline Sampling sampling_from_json(const json& j, Sampling base = {}) {
  base.temperature = j.value("temperature", base.temperature);
  base.top_p = j.value("top_p", base.top_p);
  base.top_k = j.value("top_k", base.top_k);
  base.max_tokens = j.value("max_tokens", base.max_tokens);
  return base;
}

inline constexpr Sampling kGenerationSampling{1.0, 0.95, 64, 0};
inline constexpr Sampling kGradingSampling{0.0, 1.0, 0, 0};

struct OracleConfig {
  std::string endpoint;  // http://host:port/path, or "mock"
  std::string token;
  std::string model = "oracle";
  Sampling generation = kGenerationSampling;
  Sampling rubric = kGenerationSampling;
  Sampling grading = kGradingSampling;
  int max_attempts = 3;
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
  double jitter = 0.2;
  double timeout_s = 120.0;
  std::size_t max_in_flight = 4;
  std::string transcript_path;
  std::string rubric_exemplars;
  std::size_t max_tokens = kDefaultMaxTokens;  // context budget for serialized pasts
};

inline json to_json(const OracleConfig& c) {
  // The token is deliberately never stamped into artifacts.
  return json{{"endpoint", c.endpoint},
              {"model", c.model},
              {"generation", to_json(c.generation)},
              {"rubric", to_json(c.rubric)},
              {"grading", to_json(c.grading)},
              {"max_attempts", c.max_attempts},
              {"backoff_base_s", c.backoff_base_s},
              {"backoff_factor", c.backoff_factor},
              {"jitter", c.jitter},
              {"timeout_s", c.timeout_s},
              {"max_in_flight", c.max_in_flight},
              {"transcript_path", c.transcript_path},
              {"max_tokens", c.max_tokens}};
}

enum class RequestKind { QaGeneration, RubricGeneration, Grading, Policy };

inline constexpr std::string_view to_string(RequestKind k) {
  switch (k) {
    case RequestKind::QaGeneration: return "qa";
    case RequestKind::RubricGeneration: return "rubric";
    case RequestKind::Grading: return "grade";
    case RequestKind::Policy: return "policy";
  }
  return "?";
}

struct ChatRequest {
  RequestKind kind = RequestKind::Grading;
  std::string system;
  std::string user;
  Sampling sampling;
  json context = json::object();  // structured inputs for the mock; never sent

  /// Stable key over everything that is sent.
  std::string hash() const {
    const json key = {{"kind", to_string(kind)}, {"system", system}, {"user", user}, {"sampling", to_json(sampling)}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(key.dump())));
    return buf;
  }
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Returns the assistant message text. Transport failures throw
  /// Error(EndpointUnavailable).
  virtual std::string complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Mock backend

struct MockStep {
  std::optional<std::string> content;  // nullopt = simulated outage
};

/// Offline backend. Lookup order: exact request hash, then the per-kind
/// script queue, then (if enabled) the synthetic generator; otherwise the
/// endpoint is reported unavailable.
class MockBackend : public ChatBackend {
 public:
  MockBackend() = default;
  explicit MockBackend(bool synthetic) : synthetic_(synthetic) {}

  /// {"synthetic": bool, "responses": {hash: reply}, "scripts": {kind: [reply
  /// | {"error": ...}]}}. Non-string replies are sent as their JSON text.
  void load(const json& doc) {
    synthetic_ = doc.value("synthetic", synthetic_);
    if (auto r = doc.find("responses"); r != doc.end()) {
      for (const auto& [hash, content] : r->items()) add_response(hash, as_content(content));
    }
    if (auto s = doc.find("scripts"); s != doc.end()) {
      for (const auto& [kind, steps] : s->items()) {
        for (const auto& step : steps) {
          if (step.is_object() && step.contains("error")) {
            push_step(parse_kind(kind), MockStep{});
          } else {
            push_step(parse_kind(kind), MockStep{as_content(step)});
          }
        }
      }
    }
  }

  void add_response(std::string hash, std::string content) {
    std::lock_guard lock(mu_);
    responses_[std::move(hash)] = std::move(content);
  }
  void push_step(RequestKind kind, MockStep step) {
    std::lock_guard lock(mu_);
    scripts_[kind].push_back(std::move(step));
  }
  void push_content(RequestKind kind, std::string content) { push_step(kind, MockStep{std::move(content)}); }
  void push_outage(RequestKind kind) { push_step(kind, MockStep{}); }
  void set_synthetic(bool on) { synthetic_ = on; }

  std::size_t calls(RequestKind kind) const {
    std::lock_guard lock(mu_);
    auto it = calls_.find(kind);
    return it == calls_.end() ? 0 : it->second;
  }

  std::string complete(const ChatRequest& request) override {
    {
      std::lock_guard lock(mu_);
      ++calls_[request.kind];
      if (auto it = responses_.find(request.hash()); it != responses_.end()) return it->second;
      if (auto it = scripts_.find(request.kind); it != scripts_.end() && !it->second.empty()) {
        MockStep step = std::move(it->second.front());
        it->second.pop_front();
        if (!step.content) fail(ErrorCode::EndpointUnavailable, "mock outage");
        return *step.content;
      }
    }
    if (synthetic_) return synthesize(request);
    fail(ErrorCode::EndpointUnavailable, "mock has no response for " + std::string(to_string(request.kind)) + " " +
                                             request.hash());
  }

  static std::string synthesize(const ChatRequest& request);

 private:
  static std::string as_content(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }
  static RequestKind parse_kind(std::string_view k) {
    if (k == "qa") return RequestKind::QaGeneration;
    if (k == "rubric") return RequestKind::RubricGeneration;
    if (k == "grade") return RequestKind::Grading;
    if (k == "policy") return RequestKind::Policy;
    fail(ErrorCode::ConfigError, "unknown mock script kind '" + std::string(k) + "'");
  }

  mutable std::mutex mu_;
  bool synthetic_ = false;
  std::map<std::string, std::string> responses_;
  std::map<RequestKind, std::deque<MockStep>> scripts_;
  std::map<RequestKind, std::size_t> calls_;
};

namespace detail {

inline std::string synth_qa(const json& ctx) {
  const auto& future = ctx.at("future");
  const std::string category = ctx.value("category", "Diagnosis Assistance");
  json sources = json::array();
  for (std::size_t i = 0; i < future.size() && i < 2; ++i) {
    const auto& ev = future[i];
    sources.push_back({{"event", "Recorded " + ev.value("source", std::string("event")) + " event"},
                       {"time", ev.value("time", std::string())},
                       {"source", ev.value("source", std::string("event"))}});
  }
  return json{{"question", "Based on the course so far, what is the most appropriate next step for this patient (" +
                               category + ")?"},
              {"final_answer", "Continue close monitoring and act on the most abnormal recent findings."},
              {"answer_reasoning", "The recent trajectory in the available record supports reassessment and targeted "
                                   "follow-up of the abnormal values."},
              {"action_space_category", category},
              {"action_space_subcategory", nullptr},
              {"source", sources}}
      .dump();
}

inline std::string synth_rubric(const json& ctx) {
  static const std::map<std::string, std::string> theme_of = {
      {"Diagnosis Assistance", "Context Seeking"},
      {"Treatment Recommendations", "Response Depth"},
      {"Procedural Decision Making", "Health Data Tasks"},
      {"Responding under Uncertainty", "Responding under Uncertainty"}};
  const std::string category = ctx.value("category", "Diagnosis Assistance");
  const auto it = theme_of.find(category);
  json crit = json::array({
      {{"axis", "Accuracy"}, {"description", "Correctly identifies the most likely clinical problem from the record."}, {"points", 9}},
      {{"axis", "Accuracy"}, {"description", "Recommends an action that is clinically inappropriate for the presentation."}, {"points", -7}},
      {{"axis", "Completeness"}, {"description", "Lists the key abnormal findings that support the recommendation."}, {"points", 7}},
      {{"axis", "Completeness"}, {"description", "Describes monitoring or follow-up steps."}, {"points", 5}},
      {{"axis", "CommunicationQuality"}, {"description", "Uses precise clinical terminology for a professional audience."}, {"points", 6}},
      {{"axis", "CommunicationQuality"}, {"description", "Organizes recommendations as a numbered list."}, {"points", 4}},
      {{"axis", "ContextAwareness"}, {"description", "References specific timestamps or values from the past record."}, {"points", 8}},
      {{"axis", "ContextAwareness"}, {"description", "Accounts for the patient's age and comorbidities."}, {"points", 6}},
      {{"axis", "InstructionFollowing"}, {"description", "Provides both a reasoning section and a final answer."}, {"points", 5}},
      {{"axis", "InstructionFollowing"}, {"description", "Bases reasoning solely on the available record."}, {"points", 4}},
  });
  return json{{"meta", {{"theme", it == theme_of.end() ? "Context Seeking" : it->second}}}, {"criteria", crit}}.dump();
}

inline std::string synth_grade(const json& ctx) {
  const std::string response = ctx.value("response", std::string());
  json out = json::object();
  for (const auto& c : ctx.at("rubric").at("criteria")) {
    const std::string id = c.at("id").get<std::string>();
    const auto h = fnv1a64(response + "\x1f" + id);
    const int points = c.at("points").get<int>();
    out[id] = points > 0 ? (h % 5 != 0) : (h % 7 == 0);
  }
  return out.dump();
}

inline std::string synth_policy(const json& ctx) {
  const std::string question = ctx.value("question", std::string("the question"));
  const Family family = parse_family(ctx.value("family", std::string("think-then-text")));
  const std::string think =
      "Step 1: I review the demographics and the most recent events.\n"
      "Step 2: I weigh the abnormal values against the presentation.\n"
      "Step 3: I decide on the safest next action for: " + question;
  const std::string answer =
      "1. Reassess vital signs and mental status at short intervals.\n"
      "2. Repeat the abnormal laboratory panels.\n"
      "3. Escalate care if the trajectory worsens.";
  switch (family) {
    case Family::AnswerWrapper: return "<think>\n" + think + "\n</think>\n<answer>\n" + answer + "\n</answer>";
    case Family::ThinkThenText: return "<think>\n" + think + "\n</think>\n" + answer;
    case Family::Headers: return "## Thinking\n" + think + "\n## Final Response\n" + answer;
    case Family::JsonFields: return json{{"answer_reasoning", think}, {"final_answer", answer}}.dump();
  }
  return answer;
}

}  // namespace detail

inline std::string MockBackend::synthesize(const ChatRequest& request) {
  switch (request.kind) {
    case RequestKind::QaGeneration: return detail::synth_qa(request.context);
    case RequestKind::RubricGeneration: return detail::synth_rubric(request.context);
    case RequestKind::Grading: return detail::synth_grade(request.context);
    case RequestKind::Policy: return detail::synth_policy(request.context);
  }
  fail(ErrorCode::EndpointUnavailable, "unknown request kind");
}

// ---------------------------------------------------------------------------
// Transcripts

class TranscriptSink {
 public:
  explicit TranscriptSink(std::filesystem::path path = {}) : path_(std::move(path)) {
    if (!path_.empty() && path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }
  void append(const json& row) {
    if (path_.empty()) return;
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << row.dump() << '\n';
  }
  bool enabled() const { return !path_.empty(); }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Structured results

struct SourceDetail {
  std::string event;
  std::string time;
  std::string source;
};

struct ClinicalQAPair {
  std::string question;
  std::string final_answer;
  std::string answer_reasoning;
  std::string action_space_category;
  std::optional<std::string> action_space_subcategory;
  std::vector<SourceDetail> source;
};

inline json to_json(const ClinicalQAPair& qa) {
  json src = json::array();
  for (const auto& s : qa.source) src.push_back({{"event", s.event}, {"time", s.time}, {"source", s.source}});
  return json{{"question", qa.question},
              {"final_answer", qa.final_answer},
              {"answer_reasoning", qa.answer_reasoning},
              {"action_space_category", qa.action_space_category},
              {"action_space_subcategory", qa.action_space_subcategory ? json(*qa.action_space_subcategory) : json()},
              {"source", src}};
}

namespace detail {

inline json extract_json_object(std::string_view content) {
  try {
    auto doc = json::parse(content);
    if (doc.is_object()) return doc;
  } catch (const json::parse_error&) {
  }
  if (auto doc = embedded_object(content)) return *doc;
  fail(ErrorCode::SchemaViolation, "response is not a JSON object");
}

inline std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string() || trim(it->get_ref<const std::string&>()).empty()) {
    fail(ErrorCode::SchemaViolation, std::string("field '") + key + "' missing or empty");
  }
  return it->get<std::string>();
}

}  // namespace detail

/// Schema check only; future anchoring is checked separately.
inline ClinicalQAPair qa_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorCode::SchemaViolation, "QA pair must be an object");
  ClinicalQAPair qa;
  qa.question = detail::required_string(doc, "question");
  qa.final_answer = detail::required_string(doc, "final_answer");
  qa.answer_reasoning = detail::required_string(doc, "answer_reasoning");
  qa.action_space_category = detail::required_string(doc, "action_space_category");
  if (auto it = doc.find("action_space_subcategory"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) fail(ErrorCode::SchemaViolation, "action_space_subcategory must be a string");
    qa.action_space_subcategory = it->get<std::string>();
  }
  auto src = doc.find("source");
  if (src == doc.end() || !src->is_array() || src->empty()) fail(ErrorCode::SchemaViolation, "source must be a non-empty list");
  for (const auto& s : *src) {
    if (!s.is_object()) fail(ErrorCode::SchemaViolation, "source entry must be an object");
    qa.source.push_back({detail::required_string(s, "event"), detail::required_string(s, "time"),
                         detail::required_string(s, "source")});
  }
  return qa;
}

/// Every source time must fall inside [first future event, last future event].
inline void check_sources_in_future(const ClinicalQAPair& qa, const SplitItem& item) {
  if (item.future.empty()) fail(ErrorCode::SourceNotInFuture, "item has no future events");
  const Instant lo = item.future.front().instant;
  const Instant hi = item.future.back().instant;
  for (const auto& s : qa.source) {
    const auto t = parse_iso8601(s.time);
    if (!t) fail(ErrorCode::SourceNotInFuture, "unparseable source time '" + s.time + "'");
    if (*t < lo || *t > hi) fail(ErrorCode::SourceNotInFuture, "source time " + s.time + " outside the future window");
  }
}

inline constexpr std::string_view kFutureLeakPhrase = "future timeline";

/// Parses a generated rubric, applies the lexical future-leak lint and the
/// de-duplication pass, assigns ids and checks every rubric invariant.
inline Rubric accept_rubric(const json& doc, std::size_t* removed = nullptr) {
  Rubric r = rubric_from_json(doc);
  for (auto& c : r.criteria) {
    c.provenance = Provenance::Oracle;
    if (normalize_description(c.description).find(kFutureLeakPhrase) != std::string::npos) {
      fail(ErrorCode::FutureLeakDetected, c.description);
    }
  }
  const auto n = dedup_criteria(r);
  if (removed) *removed = n;
  validate_rubric(r);
  return r;
}

/// Exactly the rubric's ids, boolean values.
inline VerdictVector accept_verdicts(const json& doc, const Rubric& rubric) {
  VerdictVector v;
  for (const auto& [k, b] : doc.items()) {
    if (!b.is_boolean()) fail(ErrorCode::SchemaViolation, "verdict " + k + " is not a boolean");
    v.verdicts[k] = b.get<bool>();
  }
  if (!same_key_set(rubric, v)) {
    fail(ErrorCode::SchemaViolation, "verdict keys " + std::to_string(v.verdicts.size()) + " do not match rubric ids " +
                                         std::to_string(rubric.criteria.size()));
  }
  return v;
}

struct CallStats {
  int attempts = 0;
  int retries() const { return attempts > 0 ? attempts - 1 : 0; }
  std::vector<double> delays_s;
};

using Sleeper = std::function<void(double seconds)>;

inline void real_sleep(double seconds) {
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

inline bool is_retryable(ErrorCode code) {
  switch (code) {
    case ErrorCode::EndpointUnavailable:
    case ErrorCode::SchemaViolation:
    case ErrorCode::MalformedJson:
    case ErrorCode::SourceNotInFuture:
    case ErrorCode::AxisCoverageMissing:
    case ErrorCode::FutureLeakDetected:
    case ErrorCode::NoPositiveCriteria:
      return true;
    default:
      return false;
  }
}

/// Serialized views of a split item used across prompts.
struct PromptContext {
  std::string past_json;
  std::string misc_json;
  std::string future_json;
  bool truncated = false;
};

inline PromptContext prompt_context(const SplitItem& item, std::size_t max_tokens) {
  PromptContext ctx;
  const auto past = serialize_events(past_view(item), item.past, TokenBudget{max_tokens});
  ctx.past_json = past.text;
  ctx.truncated = past.budget.truncated;
  ctx.misc_json = item.misc_retained.dump();
  ctx.future_json = events_to_json(item.future).dump();
  return ctx;
}

inline std::string sources_json(const ClinicalQAPair& qa) { return to_json(qa).at("source").dump(); }

struct QaResult {
  ClinicalQAPair qa;
  CallStats stats;
};

struct RubricResult {
  Rubric rubric;
  std::size_t deduplicated = 0;
  CallStats stats;
};

class OracleGateway {
 public:
  OracleGateway(ChatBackend& backend, OracleConfig cfg, Sleeper sleeper = real_sleep)
      : backend_(backend),
        cfg_(std::move(cfg)),
        sleeper_(std::move(sleeper)),
        transcript_(cfg_.transcript_path),
        in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_in_flight))) {}

  const OracleConfig& config() const { return cfg_; }

  /// Sends `request` and parses the reply with `parse`; transport and
  /// validation failures are retried with exponential backoff up to
  /// max_attempts, after which the last error propagates.
  template <typename Parse>
  auto call(const ChatRequest& request, Parse&& parse, CallStats* stats = nullptr) -> decltype(parse(std::string{})) {
    CallStats local;
    CallStats& st = stats ? *stats : local;
    const std::string hash = request.hash();
    const int attempts = std::max(1, cfg_.max_attempts);
    for (int attempt = 1;; ++attempt) {
      st.attempts = attempt;
      json row = {{"kind", to_string(request.kind)}, {"hash", hash}, {"attempt", attempt}};
      if (transcript_.enabled()) {
        row["system"] = request.system;
        row["user"] = request.user;
        row["sampling"] = to_json(request.sampling);
      }
      try {
        std::string content;
        {
          in_flight_.acquire();
          struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
          } release{in_flight_};
          content = backend_.complete(request);
        }
        row["response"] = content;
        try {
          auto result = parse(content);
          row["status"] = "ok";
          transcript_.append(row);
          return result;
        } catch (const json::exception& e) {
          fail(ErrorCode::SchemaViolation, e.what());
        }
      } catch (const Error& e) {
        row["status"] = "error";
        row["error"] = std::string(to_string(e.code()));
        row["detail"] = e.detail();
        transcript_.append(row);
        if (!is_retryable(e.code()) || attempt >= attempts) throw;
        const double delay = backoff_delay(hash, attempt);
        st.delays_s.push_back(delay);
        spdlog::warn("{} call {} attempt {} failed ({}); retrying in {:.2f}s", to_string(request.kind), hash, attempt,
                     to_string(e.code()), delay);
        sleeper_(delay);
      }
    }
  }

  /// base * factor^(attempt-1), jittered by up to +-jitter; deterministic per
  /// (request, attempt).
  double backoff_delay(std::string_view hash, int attempt) const {
    Rng rng(derive_seed(fnv1a64(hash), static_cast<std::uint64_t>(attempt)));
    const double nominal = cfg_.backoff_base_s * std::pow(cfg_.backoff_factor, attempt - 1);
    return nominal * (1.0 + cfg_.jitter * (2.0 * rng.uniform() - 1.0));
  }

  QaResult generate_qa(const SplitItem& item, ActionCategory category) {
    const auto& space = action_space(category);
    const auto ctx = prompt_context(item, cfg_.max_tokens);
    ChatRequest req;
    req.kind = RequestKind::QaGeneration;
    req.system = "";
    req.user = prompts::qa_generation(ctx.past_json, ctx.misc_json, space.name, space.description, ctx.future_json);
    req.sampling = cfg_.generation;
    req.context = {{"future", events_to_json(item.future)}, {"category", space.name}};
    QaResult out;
    out.qa = call(
        req,
        [&](const std::string& content) {
          auto qa = qa_from_json(detail::extract_json_object(content));
          check_sources_in_future(qa, item);
          return qa;
        },
        &out.stats);
    return out;
  }

  RubricResult generate_rubric(const SplitItem& item, const ClinicalQAPair& qa) {
    const auto ctx = prompt_context(item, cfg_.max_tokens);
    ChatRequest req;
    req.kind = RequestKind::RubricGeneration;
    req.system = prompts::rubric_system(cfg_.rubric_exemplars);
    req.user = prompts::rubric_user(ctx.past_json, ctx.misc_json, ctx.future_json, qa.question, qa.final_answer,
                                    qa.answer_reasoning);
    req.sampling = cfg_.rubric;
    req.context = {{"category", qa.action_space_category}, {"question", qa.question}};
    RubricResult out;
    out.rubric = call(
        req, [&](const std::string& content) { return accept_rubric(detail::extract_json_object(content), &out.deduplicated); },
        &out.stats);
    return out;
  }

  /// Degenerate candidates short-circuit to all-false without a call.
  VerdictVector grade(std::string_view candidate, const SplitItem& item, const ClinicalQAPair& qa, const Rubric& rubric,
                      CallStats* stats = nullptr) {
    if (is_degenerate(candidate)) return all_false(rubric, true);
    const auto ctx = prompt_context(item, cfg_.max_tokens);
    const std::string context =
        prompts::grader_context(ctx.past_json, ctx.misc_json, qa.final_answer, qa.answer_reasoning, sources_json(qa));
    ChatRequest req;
    req.kind = RequestKind::Grading;
    req.system = std::string(prompts::kGraderSystem);
    req.user = prompts::grader_user(context, "user: " + qa.question, qa.question, candidate, rubric);
    req.sampling = cfg_.grading;
    req.context = {{"rubric", to_json(rubric)}, {"response", candidate}};
    return call(
        req, [&](const std::string& content) { return accept_verdicts(detail::extract_json_object(content), rubric); },
        stats);
  }

 private:
  ChatBackend& backend_;
  OracleConfig cfg_;
  Sleeper sleeper_;
  TranscriptSink transcript_;
  std::counting_semaphore<> in_flight_;
};

}  // namespace crw
