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


#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "synrewrite/http_provider.hpp"
#include "synrewrite/toyworld.hpp"
#include "test_util.hpp"

namespace synrewrite {
namespace {

using ::testing::HasSubstr;

// Minimal chat-completions server on a random local port.
class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      ++hits;
      last_auth = req.get_header_value("Authorization");
      last_body = nlohmann::json::parse(req.body);
      if (fail_next > 0) {
        --fail_next;
        res.status = 503;
        return;
      }
      if (malformed) {
        res.set_content("{\"choices\": []}", "application/json");
        return;
      }
      std::string prompt = last_body["messages"][0]["content"];
      nlohmann::json out = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", "echo:" + prompt}}}}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> hits{0};
  std::atomic<int> fail_next{0};
  bool malformed = false;
  std::string last_auth;
  nlohmann::json last_body;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpProviderConfig config_for(const FakeServer& s) {
  HttpProviderConfig c;
  c.endpoint = s.url();
  c.api_key = "k-123";
  c.model = "tiny-chat";
  c.timeout_seconds = 5;
  return c;
}

TEST(HttpProvider, SendsChatRequestAndParsesReply) {
  FakeServer server;
  HttpProvider p(config_for(server));
  EXPECT_EQ(p.complete("rewrite this", {}), "echo:rewrite this");
  EXPECT_EQ(server.last_auth, "Bearer k-123");
  EXPECT_EQ(server.last_body["model"], "tiny-chat");
  EXPECT_EQ(server.last_body["temperature"], 0);
  EXPECT_EQ(server.last_body["messages"][0]["role"], "user");
  EXPECT_EQ(p.id(), "http:tiny-chat");
}

TEST(HttpProvider, ErrorsBecomeProviderErrors) {
  FakeServer server;
  HttpProvider p(config_for(server));
  server.fail_next = 1;
  try {
    p.complete("x", {});
    FAIL() << "expected ProviderError";
  } catch (const ProviderError& e) {
    EXPECT_THAT(e.what(), HasSubstr("503"));
  }
  server.malformed = true;
  EXPECT_THROW(p.complete("x", {}), ProviderError);
}

TEST(HttpProvider, UnreachableServerFails) {
  HttpProviderConfig c;
  c.endpoint = "http://127.0.0.1:1";
  c.model = "m";
  c.timeout_seconds = 1;
  HttpProvider p(c);
  EXPECT_THROW(p.complete("x", {}), ProviderError);
}

TEST(HttpProvider, ValidatesConfig) {
  HttpProviderConfig c;
  c.model = "m";
  EXPECT_THROW(HttpProvider{c}, ValidationError);
  c.endpoint = "localhost:8080";
  EXPECT_THROW(HttpProvider{c}, ValidationError);
  c.endpoint = "http://localhost:8080";
  c.model.clear();
  EXPECT_THROW(HttpProvider{c}, ValidationError);
}

TEST(HttpProvider, ConfigFromEnvironment) {
  ::setenv("SYNREWRITE_PROVIDER_URL", "http://example.invalid/v1/chat/completions", 1);
  ::setenv("SYNREWRITE_API_KEY", "secret", 1);
  ::setenv("SYNREWRITE_MODEL", "m1", 1);
  auto c = HttpProviderConfig::from_env();
  EXPECT_EQ(c.endpoint, "http://example.invalid/v1/chat/completions");
  EXPECT_EQ(c.api_key, "secret");
  EXPECT_EQ(c.model, "m1");
  ::unsetenv("SYNREWRITE_PROVIDER_URL");
  ::unsetenv("SYNREWRITE_API_KEY");
  ::unsetenv("SYNREWRITE_MODEL");
  EXPECT_TRUE(HttpProviderConfig::from_env().endpoint.empty());
}

TEST(HttpProvider, RetriesTransientFailuresInsideSynthesis) {
  FakeServer server;
  HttpProvider p(config_for(server));
  testing::TempDir dir;
  toy::Options o;
  o.n_records = 5;
  auto recs = toy::make_records(o);
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  server.fail_next = 2;
  SynthesisJob job;
  job.records = &recs;
  job.corpus = &corpus;
  job.prompt = &t;
  job.provider = &p;
  job.cache_dir = dir.path();
  job.max_concurrency = 1;
  job.retry.base_delay = std::chrono::milliseconds(0);
  auto res = synthesize(job);
  EXPECT_TRUE(res.failures.empty());
  EXPECT_EQ(res.rewrites.size(), 5u);
  EXPECT_EQ(res.provider_calls, 7u);
  EXPECT_EQ(server.hits.load(), 7);
  // Completions are trimmed to their first line.
  for (const auto& [id, text] : res.rewrites) EXPECT_EQ(text.find('\n'), std::string::npos);
}

}  // namespace
}  // namespace synrewrite
