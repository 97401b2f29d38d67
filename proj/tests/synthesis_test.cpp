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
#include <chrono>
#include <set>
#include <thread>

#include "synrewrite/synthesis.hpp"
#include "synrewrite/textmetrics.hpp"
#include "synrewrite/toyworld.hpp"
#include "test_util.hpp"

namespace synrewrite {
namespace {

using ::testing::HasSubstr;

QueryRecord two_turn_record() {
  QueryRecord r;
  r.record_id = "r7";
  r.history = {{"who runs it now", "Maya Ortiz runs Alpaca Farm."},
               {"tell me about Alpaca Farm", "Alpaca Farm is a farm near Lake Orrin."}};
  r.turn_index = 2;
  r.query = "where is it?";
  r.pos_doc_id = "d1";
  r.gold_answer = "It lies in Kestrel Bay.";
  r.rewrites = RewriteSet(r.query);
  return r;
}

Corpus small_corpus() {
  return Corpus({{"d1", "Alpaca Farm", "Alpaca Farm sits on the coast of Kestrel Bay since 1987."},
                 {"d2", "Other", "Unrelated text."}});
}

std::set<std::string> token_set(std::string_view text) {
  auto t = tokenize(text);
  return {t.begin(), t.end()};
}

TEST(PromptTemplate, ValidatesPlaceholders) {
  EXPECT_THROW(PromptTemplate(Condition::kUnseen, "{history} {pos_doc} {query}"), ValidationError);
  EXPECT_THROW(PromptTemplate(Condition::kUnseen, "{history} {answer} {query}"), ValidationError);
  EXPECT_THROW(PromptTemplate(Condition::kSeen, "{history} {pos_doc} {query}"), ValidationError);
  EXPECT_THROW(PromptTemplate(Condition::kSeen, "{history}"), ValidationError);
  EXPECT_NO_THROW(PromptTemplate(Condition::kSeen, "{query} {pos_doc} {answer}"));
  EXPECT_NO_THROW(PromptTemplate::builtin(Condition::kUnseen));
  EXPECT_NO_THROW(PromptTemplate::builtin(Condition::kSeen));
}

TEST(PromptTemplate, HashTracksText) {
  PromptTemplate a(Condition::kUnseen, "Q: {query}"), b(Condition::kUnseen, "Q:  {query}");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), PromptTemplate(Condition::kUnseen, "Q: {query}").hash());
}

TEST(RenderPrompt, EmptyHistoryUnseenHasOnlyQueryBlock) {
  QueryRecord r;
  r.record_id = "r0";
  r.query = "who founded Blue Tamsin";
  r.rewrites = RewriteSet(r.query);
  PromptTemplate t(Condition::kUnseen, "{history}Current question: {query}\nRewritten query:");
  EXPECT_EQ(render_prompt(r, t, small_corpus()),
            "Current question: who founded Blue Tamsin\nRewritten query:");
  std::string builtin = render_prompt(r, PromptTemplate::builtin(Condition::kUnseen), small_corpus());
  EXPECT_THAT(builtin, ::testing::Not(HasSubstr("Conversation so far")));
  EXPECT_THAT(builtin, HasSubstr("Current question: who founded Blue Tamsin"));
}

TEST(RenderPrompt, SeenContainsTurnsDocAndAnswerInOrder) {
  auto r = two_turn_record();
  std::string p = render_prompt(r, PromptTemplate::builtin(Condition::kSeen), small_corpus());
  auto older = p.find("User: tell me about Alpaca Farm");
  auto newer = p.find("User: who runs it now");
  auto query = p.find("where is it?");
  auto doc = p.find("Alpaca Farm sits on the coast of Kestrel Bay since 1987.");
  auto answer = p.find("It lies in Kestrel Bay.");
  for (auto pos : {older, newer, query, doc, answer}) ASSERT_NE(pos, std::string::npos) << p;
  EXPECT_LT(older, newer);
  EXPECT_LT(newer, query);
  EXPECT_LT(query, doc);
  EXPECT_LT(doc, answer);
}

TEST(RenderPrompt, Deterministic) {
  auto r = two_turn_record();
  for (auto c : {Condition::kUnseen, Condition::kSeen}) {
    auto t = PromptTemplate::builtin(c);
    EXPECT_EQ(render_prompt(r, t, small_corpus()), render_prompt(r, t, small_corpus()));
  }
}

TEST(RenderPrompt, SeenNeedsResolvableDocAndAnswer) {
  auto r = two_turn_record();
  auto seen = PromptTemplate::builtin(Condition::kSeen);
  r.pos_doc_id = "missing";
  EXPECT_THROW(render_prompt(r, seen, small_corpus()), DanglingReferenceError);
  r.pos_doc_id = "d1";
  r.gold_answer.clear();
  EXPECT_THROW(render_prompt(r, seen, small_corpus()), ValidationError);
  // Unseen never needs them.
  r.pos_doc_id.reset();
  EXPECT_NO_THROW(render_prompt(r, PromptTemplate::builtin(Condition::kUnseen), small_corpus()));
}

TEST(RenderPrompt, SubstitutedTextIsNotRescanned) {
  auto r = two_turn_record();
  r.query = "what does {answer} mean";
  PromptTemplate t(Condition::kUnseen, "{query}");
  EXPECT_EQ(render_prompt(r, t, small_corpus()), "what does {answer} mean");
}

TEST(RenderPrompt, UnseenNeverCarriesGoldOnlyTokens) {
  Corpus corpus = toy::make_corpus();
  toy::Options o;
  o.n_records = 300;
  auto records = toy::make_records(o);
  auto tmpl = PromptTemplate::builtin(Condition::kUnseen);
  auto allowed_base = token_set(tmpl.text());
  for (const auto& r : records) {
    auto allowed = allowed_base;
    for (auto& x : token_set(render_history(r))) allowed.insert(x);
    for (auto& x : token_set(r.query)) allowed.insert(x);
    auto gold = token_set(resolve_positive(r, corpus).body + " " + r.gold_answer);
    for (const auto& tok : token_set(render_prompt(r, tmpl, corpus))) {
      ASSERT_TRUE(allowed.count(tok) || !gold.count(tok))
          << r.record_id << " leaks gold-only token '" << tok << "'";
      ASSERT_TRUE(allowed.count(tok)) << r.record_id << ": unexpected token '" << tok << "'";
    }
  }
}

TEST(MockResolve, ReplacesPronounWithLatestCapitalizedPhrase) {
  QueryRecord r;
  r.record_id = "a";
  r.history = {{"what do they grow", "They keep llamas at Alpaca Farm."}};
  r.turn_index = 1;
  r.query = "where is it?";
  EXPECT_EQ(mock_resolve(r, Condition::kUnseen), "where is Alpaca Farm?");
}

TEST(MockResolve, FallsBackToQuestionThenOlderTurns) {
  QueryRecord r;
  r.history = {{"is Kestrel Bay far", "yes, quite far."}, {"tell me about Orrin", "Orrin is old."}};
  r.turn_index = 2;
  r.query = "how big is it";
  EXPECT_EQ(mock_resolve(r, Condition::kUnseen), "how big is Kestrel Bay");
  r.history[0] = {"is that far", "yes."};
  EXPECT_EQ(mock_resolve(r, Condition::kUnseen), "how big is Orrin");
}

TEST(MockResolve, NoPronounsIsNoOp) {
  auto r = two_turn_record();
  r.query = "how tall is the lighthouse";
  EXPECT_EQ(mock_resolve(r, Condition::kUnseen), r.query);
  r.query = "itinerary for Thatcham";
  EXPECT_EQ(mock_resolve(r, Condition::kUnseen), r.query);
}

TEST(MockResolve, SeenAddsAnswerEntityOnTopOfUnseen) {
  auto r = two_turn_record();
  std::string unseen = mock_resolve(r, Condition::kUnseen);
  std::string seen = mock_resolve(r, Condition::kSeen);
  EXPECT_EQ(unseen, "where is Alpaca Farm?");
  EXPECT_EQ(seen, "where is Alpaca Farm Kestrel Bay?");
  auto u = token_set(unseen), s = token_set(seen);
  EXPECT_TRUE(std::includes(s.begin(), s.end(), u.begin(), u.end()));
  EXPECT_TRUE(s.count("kestrel") && s.count("bay"));
}

TEST(MockResolve, SeenSkipsAnswerEntitiesAlreadyInHistory) {
  auto r = two_turn_record();
  r.gold_answer = "Maya Ortiz";
  EXPECT_EQ(mock_resolve(r, Condition::kSeen), mock_resolve(r, Condition::kUnseen));
}

// ---------------------------------------------------------------------------
// Providers and the batch job

class FnProvider : public Provider {
 public:
  explicit FnProvider(std::function<std::string(const QueryRecord&)> fn, std::string id = "fn")
      : fn_(std::move(fn)), id_(std::move(id)) {}
  std::string complete(const std::string&, const PromptContext& ctx) override {
    ++calls;
    return fn_(*ctx.record);
  }
  std::string id() const override { return id_; }
  std::atomic<int> calls{0};

 private:
  std::function<std::string(const QueryRecord&)> fn_;
  std::string id_;
};

std::vector<QueryRecord> ten_records() {
  toy::Options o;
  o.n_records = 10;
  return toy::make_records(o);
}

SynthesisJob make_job(const std::vector<QueryRecord>& recs, const Corpus& corpus,
                      const PromptTemplate& t, Provider& p, const std::filesystem::path& dir) {
  SynthesisJob job;
  job.records = &recs;
  job.corpus = &corpus;
  job.prompt = &t;
  job.provider = &p;
  job.cache_dir = dir;
  job.max_concurrency = 3;
  job.retry.max_retries = 2;
  job.retry.base_delay = std::chrono::milliseconds(0);
  return job;
}

TEST(Synthesize, EchoProviderReturnsQueries) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  FnProvider echo([](const QueryRecord& r) { return r.query; });
  auto res = synthesize(make_job(recs, corpus, t, echo, dir.path()));
  ASSERT_EQ(res.rewrites.size(), recs.size());
  for (const auto& r : recs) EXPECT_EQ(res.rewrites.at(r.record_id), r.query);
  EXPECT_TRUE(res.failures.empty());
  EXPECT_EQ(res.provider_calls, recs.size());
}

TEST(Synthesize, WarmCacheMakesNoProviderCalls) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kSeen);
  MockProvider mock;
  auto first = synthesize(make_job(recs, corpus, t, mock, dir.path()));
  EXPECT_EQ(first.provider_calls, 10u);

  // Same provider id, but it would fail if called.
  FnProvider disabled([](const QueryRecord&) -> std::string { throw Error("offline"); },
                      mock.id());
  auto second = synthesize(make_job(recs, corpus, t, disabled, dir.path()));
  EXPECT_EQ(second.provider_calls, 0u);
  EXPECT_EQ(disabled.calls.load(), 0);
  EXPECT_EQ(second.cache_hits, 10u);
  EXPECT_EQ(second.rewrites, first.rewrites);
  EXPECT_TRUE(second.failures.empty());
}

TEST(Synthesize, CacheKeyIncludesTemplateAndProvider) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t1 = PromptTemplate::builtin(Condition::kUnseen);
  PromptTemplate t2(Condition::kUnseen, "Rewrite: {history}{query}");
  MockProvider mock;
  synthesize(make_job(recs, corpus, t1, mock, dir.path()));
  EXPECT_EQ(synthesize(make_job(recs, corpus, t2, mock, dir.path())).provider_calls, 10u);
  FnProvider other([](const QueryRecord& r) { return r.query; }, "other");
  EXPECT_EQ(synthesize(make_job(recs, corpus, t1, other, dir.path())).provider_calls, 10u);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    EXPECT_EQ(e.path().extension(), ".jsonl") << "stray temp file " << e.path();
    ++files;
  }
  EXPECT_EQ(files, 3u);
}

TEST(Synthesize, FailingRecordIsReportedAndJobContinues) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  const std::string bad = recs[4].record_id;
  FnProvider flaky([&](const QueryRecord& r) -> std::string {
    if (r.record_id == bad) throw Error("HTTP 500");
    return "rewrite of " + r.record_id;
  });
  auto res = synthesize(make_job(recs, corpus, t, flaky, dir.path()));
  EXPECT_EQ(res.rewrites.size(), 9u);
  ASSERT_EQ(res.failures.size(), 1u);
  EXPECT_EQ(res.failures[0].record_id, bad);
  EXPECT_THAT(res.failures[0].reason, HasSubstr("HTTP 500"));
  EXPECT_EQ(res.provider_calls, 9u + 3u);  // 1 + max_retries attempts on the bad record

  // The failure is not cached: a rerun retries only that record.
  FnProvider fixed([](const QueryRecord& r) { return "rewrite of " + r.record_id; }, "fn");
  auto rerun = synthesize(make_job(recs, corpus, t, fixed, dir.path()));
  EXPECT_EQ(rerun.provider_calls, 1u);
  EXPECT_EQ(rerun.rewrites.size(), 10u);
}

TEST(Synthesize, EmptyResponseIsFailure) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  FnProvider blank([](const QueryRecord&) { return std::string(" \n "); });
  auto res = synthesize(make_job(recs, corpus, t, blank, dir.path()));
  EXPECT_TRUE(res.rewrites.empty());
  ASSERT_EQ(res.failures.size(), 10u);
  EXPECT_THAT(res.failures[0].reason, HasSubstr("empty"));
}

TEST(Synthesize, TransientErrorsRecoverWithinRetries) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  std::mutex mu;
  std::set<std::string> failed_once;
  FnProvider flaky([&](const QueryRecord& r) -> std::string {
    std::lock_guard lock(mu);
    if (failed_once.insert(r.record_id).second) throw Error("timeout");
    return "  " + r.query + "\nextra commentary";
  });
  auto res = synthesize(make_job(recs, corpus, t, flaky, dir.path()));
  EXPECT_TRUE(res.failures.empty());
  EXPECT_EQ(res.provider_calls, 20u);
  for (const auto& r : recs) EXPECT_EQ(res.rewrites.at(r.record_id), r.query);
}

TEST(Synthesize, ConcurrencyNeverExceedsLimit) {
  toy::Options o;
  o.n_records = 40;
  auto recs = toy::make_records(o);
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  for (int limit : {1, 2, 4}) {
    testing::TempDir dir;
    std::atomic<int> in_flight{0}, peak{0};
    FnProvider slow([&](const QueryRecord& r) {
      int now = ++in_flight;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(3));
      --in_flight;
      return r.query;
    });
    auto job = make_job(recs, corpus, t, slow, dir.path());
    job.max_concurrency = limit;
    auto res = synthesize(job);
    EXPECT_EQ(res.rewrites.size(), 40u);
    EXPECT_LE(peak.load(), limit);
    EXPECT_GE(peak.load(), 1);
  }
}

TEST(Synthesize, RejectsBadJobs) {
  testing::TempDir dir;
  auto recs = ten_records();
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kUnseen);
  MockProvider mock;
  auto job = make_job(recs, corpus, t, mock, dir.path());
  job.max_concurrency = 0;
  EXPECT_THROW(synthesize(job), ValidationError);
  job = make_job(recs, corpus, t, mock, dir.path());
  job.provider = nullptr;
  EXPECT_THROW(synthesize(job), ValidationError);
}

TEST(Synthesize, SeenWithDanglingDocFailsOnlyThatRecord) {
  testing::TempDir dir;
  auto recs = ten_records();
  recs[2].pos_doc_id = "doc-missing";
  Corpus corpus = toy::make_corpus();
  auto t = PromptTemplate::builtin(Condition::kSeen);
  MockProvider mock;
  auto res = synthesize(make_job(recs, corpus, t, mock, dir.path()));
  EXPECT_EQ(res.rewrites.size(), 9u);
  ASSERT_EQ(res.failures.size(), 1u);
  EXPECT_EQ(res.failures[0].record_id, recs[2].record_id);
}

TEST(RetryPolicy, ExponentialBackoffWithJitter) {
  RetryPolicy p;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    auto d0 = p.delay_for(0, rng).count();
    auto d3 = p.delay_for(3, rng).count();
    EXPECT_GE(d0, 1000);
    EXPECT_LT(d0, 1250);
    EXPECT_GE(d3, 8000);
    EXPECT_LT(d3, 10000);
  }
  EXPECT_EQ(p.delay_for(10, rng).count(), 60000);
  p.jitter = 0;
  EXPECT_EQ(p.delay_for(2, rng).count(), 4000);
}

}  // namespace
}  // namespace synrewrite
