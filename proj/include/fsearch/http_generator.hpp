#pragma once

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "generator.hpp"

namespace fsearch {

/// Posts each request as JSON to a single endpoint and expects
/// `{"text": "..."}` back. A fresh connection per call keeps it thread-safe.
class HttpGeneratorClient : public GeneratorClient {
 public:
  HttpGeneratorClient(std::string base_url, std::string path = "/v1/generate",
                      int timeout_seconds = 120)
      : base_url_(std::move(base_url)), path_(std::move(path)), timeout_(timeout_seconds) {}

  std::string complete(const GeneratorRequest& r) override {
    nlohmann::ordered_json body;
    body["template_id"] = std::string(to_string(r.template_id));
    body["variables"] = r.variables;
    body["temperature"] = r.temperature;
    body["max_tokens"] = r.max_tokens;
    body["prompt"] = r.prompt;

    httplib::Client cli(base_url_);
    cli.set_read_timeout(timeout_, 0);
    cli.set_connection_timeout(10, 0);
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res) throw Error(ErrorCode::GeneratorUnavailable, base_url_, httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error(ErrorCode::GeneratorUnavailable, base_url_, "HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::UnparseableResponse, res->body);
    }
  }

 private:
  std::string base_url_;
  std::string path_;
  int timeout_;
};

}  // namespace fsearch
