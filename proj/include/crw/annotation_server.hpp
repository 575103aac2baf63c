#pragma once

// HTTP JSON API over AnnotationStore and CaseCatalog. Every route except
// /health requires "Authorization: Bearer <token>"; the token decides the
// rater id.

#include <map>
#include <string>

#include <httplib.h>

#include "crw/annotation.hpp"
#include "crw/random.hpp"

namespace crw {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  double redisplay_probability = 0.0;
  std::uint64_t seed = kDefaultSeed;
};

inline json to_json(const ServeOptions& o) {
  return json{{"host", o.host}, {"port", o.port}, {"redisplay_probability", o.redisplay_probability}, {"seed", o.seed}};
}

/// Tokens file: JSON object mapping bearer token to rater id.
inline std::map<std::string, std::string> load_tokens(const std::filesystem::path& path) {
  const auto doc = parse_json(read_file(path), path.string());
  if (!doc.is_object()) fail(ErrorCode::ConfigError, "tokens file must map token to rater id");
  std::map<std::string, std::string> out;
  for (const auto& [token, rater] : doc.items()) {
    if (!rater.is_string() || token.empty()) fail(ErrorCode::ConfigError, "bad token entry");
    out[token] = rater.get<std::string>();
  }
  if (out.empty()) fail(ErrorCode::ConfigError, "no tokens configured");
  return out;
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::SchemaViolation:
    case ErrorCode::MalformedJson:
    case ErrorCode::InvalidArgument: return 400;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::NotFound:
    case ErrorCode::NoDraft: return 404;
    case ErrorCode::FinalizedRecordExists: return 409;
    case ErrorCode::GuardFailed: return 422;
    default: return 500;
  }
}

/// "<sample_id>:<submission_type>", split at the last colon.
inline std::pair<std::string, std::string> split_submission_key(const std::string& key) {
  const auto pos = key.rfind(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == key.size()) {
    fail(ErrorCode::InvalidArgument, "submission key must be <sample_id>:<submission_type>");
  }
  return {key.substr(0, pos), key.substr(pos + 1)};
}

class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, const CaseCatalog& cases, std::map<std::string, std::string> tokens,
                   ServeOptions opt = {})
      : store_(store), cases_(cases), tokens_(std::move(tokens)), opt_(std::move(opt)) {
    routes();
  }

  /// Binds an ephemeral port when port is 0; returns the bound port.
  int bind() {
    if (opt_.port == 0) {
      port_ = server_.bind_to_any_port(opt_.host);
    } else {
      port_ = server_.bind_to_port(opt_.host, opt_.port) ? opt_.port : -1;
    }
    if (port_ <= 0) fail(ErrorCode::IoError, "cannot bind " + opt_.host + ":" + std::to_string(opt_.port));
    return port_;
  }

  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  int port() const { return port_; }

  /// Whether this rater sees the case again for a self-consistency probe.
  bool redisplay(const std::string& rater, const std::string& case_id) const {
    if (opt_.redisplay_probability <= 0) return false;
    Rng rng(derive_seed(opt_.seed, fnv1a64(rater + "|" + case_id)));
    return rng.bernoulli(opt_.redisplay_probability);
  }

 private:
  template <typename Fn>
  auto guarded(Fn fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto rater = authenticate(req);
        fn(req, res, rater);
      } catch (const Error& e) {
        json body{{"error", std::string(to_string(e.code()))}, {"detail", e.detail()}};
        if (e.code() == ErrorCode::GuardFailed) body["missing"] = missing_list(e.detail());
        res.status = http_status(e.code());
        res.set_content(body.dump(), "application/json");
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", "SchemaViolation"}, {"detail", e.what()}}.dump(), "application/json");
      }
    };
  }

  static json missing_list(const std::string& detail) {
    json out = json::array();
    std::size_t start = 0;
    while (start <= detail.size()) {
      auto end = detail.find(", ", start);
      if (end == std::string::npos) end = detail.size();
      if (end > start) out.push_back(detail.substr(start, end - start));
      start = end + 2;
    }
    return out;
  }

  std::string authenticate(const httplib::Request& req) const {
    const auto header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) fail(ErrorCode::Unauthorized, "missing bearer token");
    auto it = tokens_.find(header.substr(prefix.size()));
    if (it == tokens_.end()) fail(ErrorCode::Unauthorized, "unknown token");
    return it->second;
  }

  static void send(httplib::Response& res, const json& body) { res.set_content(body.dump(), "application/json"); }

  void routes() {
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send(res, json{{"ok", true}}); });

    server_.Get("/cases", guarded([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
      send(res, json{{"cases", cases_.list(req.get_param_value("cohort"), req.get_param_value("keyword"))}});
    }));

    server_.Get("/cases/:id", guarded([this](const httplib::Request& req, httplib::Response& res, const std::string& rater) {
      const auto id = req.path_params.at("id");
      json body = cases_.get(id);
      body["redisplay"] = redisplay(rater, id);
      send(res, body);
    }));

    server_.Put("/submissions", guarded([this](const httplib::Request& req, httplib::Response& res, const std::string& rater) {
      json sub = parse_json(req.body, "submission");
      if (!sub.is_object()) fail(ErrorCode::SchemaViolation, "submission must be an object");
      if (sub.contains("rater_id") && sub["rater_id"] != rater) fail(ErrorCode::Unauthorized, "rater_id does not match token");
      sub["rater_id"] = rater;
      send(res, store_.upsert_draft(std::move(sub)));
    }));

    server_.Get("/submissions/:key", guarded([this](const httplib::Request& req, httplib::Response& res, const std::string& rater) {
      const auto [sample, type] = split_submission_key(req.path_params.at("key"));
      const auto rec = store_.get({rater, sample, type});
      if (!rec) fail(ErrorCode::NotFound, "no submission for " + sample);
      send(res, *rec);
    }));

    server_.Post("/submissions/:key/finalize",
                 guarded([this](const httplib::Request& req, httplib::Response& res, const std::string& rater) {
                   const auto [sample, type] = split_submission_key(req.path_params.at("key"));
                   send(res, store_.finalize({rater, sample, type}));
                 }));

    server_.Get("/export", guarded([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
      res.set_content(to_jsonl(store_.export_rows(req.get_param_value("experiment"))), "application/x-ndjson");
    }));
  }

  AnnotationStore& store_;
  const CaseCatalog& cases_;
  std::map<std::string, std::string> tokens_;
  ServeOptions opt_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace crw
