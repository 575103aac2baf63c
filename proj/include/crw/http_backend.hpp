#pragma once

// OpenAI-style chat-completions backend over cpp-httplib. https endpoints need
// CPPHTTPLIB_OPENSSL_SUPPORT at build time.

#include <httplib.h>

#include "crw/oracle.hpp"

namespace crw {

struct EndpointUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline EndpointUrl split_endpoint(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) fail(ErrorCode::ConfigError, "endpoint must be an http(s) URL: " + std::string(url));
  const std::string_view scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorCode::ConfigError, "unsupported scheme: " + std::string(scheme));
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") fail(ErrorCode::ConfigError, "this build has no TLS support; use an http endpoint");
#endif
  const auto slash = url.find('/', scheme_end + 3);
  EndpointUrl out;
  out.base = std::string(url.substr(0, slash));
  out.path = slash == std::string_view::npos ? "/v1/chat/completions" : std::string(url.substr(slash));
  return out;
}

class HttpBackend : public ChatBackend {
 public:
  HttpBackend(std::string endpoint, std::string token, std::string model, double timeout_s)
      : url_(split_endpoint(endpoint)), token_(std::move(token)), model_(std::move(model)), timeout_s_(timeout_s) {}

  /// Request body as sent on the wire.
  json body(const ChatRequest& request) const {
    json b = {{"model", model_},
              {"messages", json::array({{{"role", "system"}, {"content", request.system}},
                                        {{"role", "user"}, {"content", request.user}}})},
              {"temperature", request.sampling.temperature},
              {"top_p", request.sampling.top_p}};
    if (request.sampling.top_k > 0) b["top_k"] = request.sampling.top_k;
    if (request.sampling.max_tokens > 0) b["max_tokens"] = request.sampling.max_tokens;
    if (request.kind != RequestKind::Policy) b["response_format"] = {{"type", "json_object"}};
    return b;
  }

  std::string complete(const ChatRequest& request) override {
    httplib::Client cli(url_.base);
    const auto secs = static_cast<time_t>(timeout_s_);
    const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = cli.Post(url_.path, headers, body(request).dump(), "application/json");
    if (!res) fail(ErrorCode::EndpointUnavailable, "transport error: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500) {
      fail(ErrorCode::EndpointUnavailable, "HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) fail(ErrorCode::ConfigError, "HTTP " + std::to_string(res->status) + ": " + res->body);
    json doc;
    try {
      doc = json::parse(res->body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::SchemaViolation, std::string("unexpected completion envelope: ") + e.what());
    }
  }

 private:
  EndpointUrl url_;
  std::string token_;
  std::string model_;
  double timeout_s_;
};

/// "mock" (synthetic responses), "mock:<file.json>" (scripted), or an URL.
inline std::unique_ptr<ChatBackend> make_backend(const std::string& endpoint, const std::string& token,
                                                 const std::string& model, double timeout_s) {
  if (endpoint == "mock") return std::make_unique<MockBackend>(true);
  if (endpoint.rfind("mock:", 0) == 0) {
    auto mock = std::make_unique<MockBackend>();
    mock->load(parse_json(read_file(endpoint.substr(5)), endpoint));
    return mock;
  }
  if (endpoint.empty()) fail(ErrorCode::ConfigError, "no endpoint configured");
  return std::make_unique<HttpBackend>(endpoint, token, model, timeout_s);
}

}  // namespace crw
