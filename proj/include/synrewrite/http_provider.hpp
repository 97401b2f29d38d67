// Copyright 2026 The SynRewrite Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SYNREWRITE_HTTP_PROVIDER_HPP_
#define SYNREWRITE_HTTP_PROVIDER_HPP_

// Chat-completions provider over HTTP(S). Request body:
//   {"model": M, "temperature": 0, "messages": [{"role": "user", "content": P}]}
// The completion is read from choices[0].message.content.

#include <cstdlib>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "synrewrite/synthesis.hpp"

namespace synrewrite {

struct HttpProviderConfig {
  std::string endpoint;  // scheme://host[:port][/path]
  std::string api_key;
  std::string model;
  int timeout_seconds = 60;

  // Reads SYNREWRITE_PROVIDER_URL, SYNREWRITE_API_KEY, SYNREWRITE_MODEL.
  static HttpProviderConfig from_env() {
    auto get = [](const char* name) {
      const char* v = std::getenv(name);
      return v ? std::string(v) : std::string();
    };
    HttpProviderConfig c;
    c.endpoint = get("SYNREWRITE_PROVIDER_URL");
    c.api_key = get("SYNREWRITE_API_KEY");
    c.model = get("SYNREWRITE_MODEL");
    return c;
  }
};

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
      throw ValidationError("provider endpoint is not set (SYNREWRITE_PROVIDER_URL)");
    }
    if (config_.model.empty()) {
      throw ValidationError("provider model is not set (SYNREWRITE_MODEL)");
    }
    auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw ValidationError("provider endpoint needs a scheme: " + config_.endpoint);
    }
    auto path_start = config_.endpoint.find('/', scheme_end + 3);
    base_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string()
                                            : config_.endpoint.substr(path_start);
    if (path_.empty() || path_ == "/") path_ = "/v1/chat/completions";
  }

  std::string complete(const std::string& prompt, const PromptContext&) override {
    httplib::Client client(base_);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    nlohmann::json body = {
        {"model", config_.model},
        {"temperature", 0},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      throw ProviderError("provider request failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw ProviderError("provider returned HTTP " + std::to_string(res->status));
    }
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
  }

  std::string id() const override { return "http:" + config_.model; }

 private:
  HttpProviderConfig config_;
  std::string base_;
  std::string path_;
};

}  // namespace synrewrite

#endif  // SYNREWRITE_HTTP_PROVIDER_HPP_
