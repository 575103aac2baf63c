#pragma once

// Pipeline configuration: one JSON file, environment overrides for
// endpoints and secrets, and a token-free resolved form stamped into every
// artifact.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>

#include "crw/annotation_server.hpp"
#include "crw/eval.hpp"
#include "crw/merge.hpp"
#include "crw/oracle.hpp"
#include "crw/reward.hpp"
#include "crw/stats.hpp"

namespace crw {

struct PipelineConfig {
  std::string corpus;
  std::string output = "out";
  std::uint64_t seed = kDefaultSeed;
  std::size_t max_tokens = kDefaultMaxTokens;
  std::size_t workers = 0;  // 0 = hardware concurrency
  OracleConfig oracle;
  PolicyConfig policy;
  RewardProfile reward_profile = RewardProfile::Canonical;
  MergeConfig merge;
  ServeOptions serve;
  StatsOptions stats;

  std::size_t resolved_workers() const {
    if (workers > 0) return workers;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
};

namespace detail {

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, std::string("bad type for '") + key + "'");
  }
}

inline void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::ConfigError, where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      fail(ErrorCode::ConfigError, "unknown key '" + k + "' in " + where);
    }
  }
}

inline Sampling read_sampling(const json& obj, const char* key, Sampling base) {
  auto it = obj.find(key);
  if (it == obj.end()) return base;
  check_keys(*it, {"temperature", "top_p", "top_k", "max_tokens"}, key);
  return sampling_from_json(*it, base);
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& doc) {
  using detail::read_opt;
  detail::check_keys(doc, {"corpus", "output", "seed", "max_tokens", "workers", "oracle", "policy", "reward", "merge", "serve", "stats"},
                     "config");
  PipelineConfig c;
  read_opt(doc, "corpus", c.corpus);
  read_opt(doc, "output", c.output);
  read_opt(doc, "seed", c.seed);
  read_opt(doc, "max_tokens", c.max_tokens);
  read_opt(doc, "workers", c.workers);

  if (auto it = doc.find("oracle"); it != doc.end()) {
    const auto& o = *it;
    detail::check_keys(o, {"endpoint", "token", "model", "generation", "rubric", "grading", "max_attempts", "backoff_base_s",
                           "backoff_factor", "jitter", "timeout_s", "max_in_flight", "transcript_path", "rubric_exemplars"},
                       "oracle");
    read_opt(o, "endpoint", c.oracle.endpoint);
    read_opt(o, "token", c.oracle.token);
    read_opt(o, "model", c.oracle.model);
    c.oracle.generation = detail::read_sampling(o, "generation", c.oracle.generation);
    c.oracle.rubric = detail::read_sampling(o, "rubric", c.oracle.rubric);
    c.oracle.grading = detail::read_sampling(o, "grading", c.oracle.grading);
    read_opt(o, "max_attempts", c.oracle.max_attempts);
    read_opt(o, "backoff_base_s", c.oracle.backoff_base_s);
    read_opt(o, "backoff_factor", c.oracle.backoff_factor);
    read_opt(o, "jitter", c.oracle.jitter);
    read_opt(o, "timeout_s", c.oracle.timeout_s);
    read_opt(o, "max_in_flight", c.oracle.max_in_flight);
    read_opt(o, "transcript_path", c.oracle.transcript_path);
    read_opt(o, "rubric_exemplars", c.oracle.rubric_exemplars);
    if (c.oracle.max_attempts < 1) fail(ErrorCode::ConfigError, "oracle.max_attempts must be at least 1");
  }
  if (auto it = doc.find("policy"); it != doc.end()) {
    const auto& p = *it;
    detail::check_keys(p, {"endpoint", "token", "model", "family", "sampling"}, "policy");
    read_opt(p, "endpoint", c.policy.endpoint);
    read_opt(p, "token", c.policy.token);
    read_opt(p, "model", c.policy.model);
    if (p.contains("family")) {
      try {
        c.policy.family = parse_family(p["family"].get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, e.what());
      }
    }
    c.policy.sampling = detail::read_sampling(p, "sampling", c.policy.sampling);
  }
  if (auto it = doc.find("reward"); it != doc.end()) {
    detail::check_keys(*it, {"profile"}, "reward");
    if (it->contains("profile")) {
      try {
        c.reward_profile = parse_profile((*it)["profile"].get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, e.what());
      }
    }
  }
  if (auto it = doc.find("merge"); it != doc.end()) {
    const auto& m = *it;
    detail::check_keys(m, {"method", "rho", "gamma", "epsilon", "weight", "seed", "aim_activations", "aim_quantile", "out_dtype"},
                       "merge");
    try {
      c.merge = MergeConfig::defaults(parse_merge_method(m.value("method", std::string("della_linear"))));
      if (m.contains("out_dtype")) c.merge.out_dtype = parse_dtype(m["out_dtype"].get<std::string>());
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.what());
    }
    c.merge.seed = c.seed;
    read_opt(m, "rho", c.merge.rho);
    read_opt(m, "gamma", c.merge.gamma);
    read_opt(m, "epsilon", c.merge.epsilon);
    read_opt(m, "weight", c.merge.weight);
    read_opt(m, "seed", c.merge.seed);
    if (m.contains("aim_activations")) {
      AimConfig aim;
      read_opt(m, "aim_activations", aim.activations);
      read_opt(m, "aim_quantile", aim.quantile);
      c.merge.aim = aim;
    }
  } else {
    c.merge.seed = c.seed;
  }
  if (auto it = doc.find("serve"); it != doc.end()) {
    detail::check_keys(*it, {"host", "port", "redisplay_probability"}, "serve");
    read_opt(*it, "host", c.serve.host);
    read_opt(*it, "port", c.serve.port);
    read_opt(*it, "redisplay_probability", c.serve.redisplay_probability);
  }
  c.serve.seed = c.seed;
  if (auto it = doc.find("stats"); it != doc.end()) {
    detail::check_keys(*it, {"consensus_mode", "bootstrap_resamples", "bonferroni_arms"}, "stats");
    if (it->contains("consensus_mode")) {
      try {
        c.stats.mode = parse_consensus_mode((*it)["consensus_mode"].get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, e.what());
      }
    }
    read_opt(*it, "bootstrap_resamples", c.stats.bootstrap_resamples);
    read_opt(*it, "bonferroni_arms", c.stats.bonferroni_arms);
  }
  c.stats.seed = c.seed;
  c.oracle.max_tokens = c.policy.max_tokens = c.max_tokens;
  return c;
}

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

/// CRW_ORACLE_ENDPOINT, CRW_ORACLE_TOKEN, CRW_MODEL_ENDPOINT, CRW_MODEL_TOKEN.
inline void apply_env_overrides(PipelineConfig& c, const EnvLookup& env = process_env) {
  if (auto v = env("CRW_ORACLE_ENDPOINT")) c.oracle.endpoint = *v;
  if (auto v = env("CRW_ORACLE_TOKEN")) c.oracle.token = *v;
  if (auto v = env("CRW_MODEL_ENDPOINT")) c.policy.endpoint = *v;
  if (auto v = env("CRW_MODEL_TOKEN")) c.policy.token = *v;
}

inline PipelineConfig load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env) {
  PipelineConfig c = path ? config_from_json(parse_json(read_file(*path), path->string())) : config_from_json(json::object());
  apply_env_overrides(c, env);
  return c;
}

/// Resolved configuration without secrets.
inline json to_json(const PipelineConfig& c) {
  json policy = {{"endpoint", c.policy.endpoint},
                 {"model", c.policy.model},
                 {"family", to_string(c.policy.family)},
                 {"sampling", to_json(c.policy.sampling)}};
  json stats = {{"consensus_mode", c.stats.mode == ConsensusMode::StrictConsensus ? "strict-consensus" : "all-decisive"},
                {"bootstrap_resamples", c.stats.bootstrap_resamples},
                {"bonferroni_arms", c.stats.bonferroni_arms}};
  return json{{"corpus", c.corpus},
              {"output", c.output},
              {"seed", c.seed},
              {"max_tokens", c.max_tokens},
              {"workers", c.workers},
              {"oracle", to_json(c.oracle)},
              {"policy", policy},
              {"reward", {{"profile", to_string(c.reward_profile)}}},
              {"merge", to_json(c.merge)},
              {"serve", to_json(c.serve)},
              {"stats", stats}};
}

}  // namespace crw
