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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "synrewrite/textmetrics.hpp"
#include "test_util.hpp"

namespace synrewrite {
namespace {

using Json = nlohmann::json;

std::vector<Json> read_jsonl(const std::string& name) {
  std::vector<Json> rows;
  std::istringstream in(read_file(testing::data_path(name)));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(Json::parse(line));
  }
  return rows;
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("A b, c!"), (TokenSeq{"a", "b", "c"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("White-Collar 2012"), (TokenSeq{"white", "collar", "2012"}));
  EXPECT_EQ(tokenize("snake_case"), (TokenSeq{"snake", "case"}));
  EXPECT_EQ(tokenize("Café Müller"), (TokenSeq{"café", "müller"}));
  EXPECT_TRUE(tokenize(" ,;!? ").empty());
}

TEST(Tokenize, Idempotent) {
  for (const auto& row : read_jsonl("metrics_golden.jsonl")) {
    for (const char* key : {"candidate", "reference"}) {
      auto t = tokenize(row[key].get<std::string>());
      EXPECT_EQ(tokenize(join_tokens(t)), t);
    }
  }
}

TEST(Rouge, Examples) {
  TokenSeq abc{"a", "b", "c"}, acd{"a", "c", "d"};
  EXPECT_DOUBLE_EQ(rouge_n(abc, abc, 1), 100.0);
  EXPECT_DOUBLE_EQ(rouge_n(abc, abc, 2), 100.0);
  EXPECT_DOUBLE_EQ(rouge_n(abc, {"x", "y"}, 1), 0.0);
  EXPECT_NEAR(rouge_n(abc, acd, 1), 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(rouge_l({"a", "b", "c", "d"}, {"b", "d"}), 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(rouge_l({}, abc), 0.0);
  EXPECT_DOUBLE_EQ(rouge_n({"a"}, {"a"}, 2), 0.0);  // no bigrams on either side
}

TEST(Rouge, SymmetricUnderSwap) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 10), word(0, 5);
  for (int i = 0; i < 300; ++i) {
    TokenSeq a, b;
    for (int k = len(rng); k > 0; --k) a.push_back("w" + std::to_string(word(rng)));
    for (int k = len(rng); k > 0; --k) b.push_back("w" + std::to_string(word(rng)));
    EXPECT_NEAR(rouge_n(a, b, 1), rouge_n(b, a, 1), 1e-12);
    EXPECT_NEAR(rouge_n(a, b, 2), rouge_n(b, a, 2), 1e-12);
    EXPECT_NEAR(rouge_l(a, b), rouge_l(b, a), 1e-12);
  }
}

TEST(Bleu, Examples) {
  TokenSeq abcd{"a", "b", "c", "d"};
  EXPECT_DOUBLE_EQ(bleu_4(abcd, abcd), 100.0);
  EXPECT_DOUBLE_EQ(bleu_4({}, abcd), 0.0);
  // p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0 matches of 1 -> 1/2; equal lengths.
  double expected = 100.0 * std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.5, 0.25);
  EXPECT_NEAR(bleu_4(abcd, {"a", "b", "c", "e"}), expected, 1e-10);
  // Brevity penalty: two tokens against four.
  double bp = std::exp(1.0 - 4.0 / 2.0);
  EXPECT_NEAR(bleu_4({"a", "b"}, abcd), 100.0 * bp, 1e-10);
}

TEST(Metrics, MatchReferenceScorerGolden) {
  auto rows = read_jsonl("metrics_golden.jsonl");
  ASSERT_EQ(rows.size(), 50u);
  for (const auto& row : rows) {
    auto c = tokenize(row["candidate"].get<std::string>());
    auto r = tokenize(row["reference"].get<std::string>());
    SCOPED_TRACE(row.dump());
    EXPECT_NEAR(rouge_n(c, r, 1), row["rouge1"].get<double>(), 1e-6);
    EXPECT_NEAR(rouge_n(c, r, 2), row["rouge2"].get<double>(), 1e-6);
    EXPECT_NEAR(rouge_l(c, r), row["rougeL"].get<double>(), 1e-6);
    EXPECT_NEAR(bleu_4(c, r), row["bleu4"].get<double>(), 1e-6);
  }
}

TEST(ExactMatch, HandLabeledGolden) {
  auto rows = read_jsonl("em_golden.jsonl");
  ASSERT_EQ(rows.size(), 20u);
  for (const auto& row : rows) {
    EXPECT_EQ(exact_match(row["candidate"].get<std::string>(),
                          row["reference"].get<std::string>()),
              row["em"].get<int>())
        << row.dump();
  }
}

TEST(ExactMatch, Normalization) {
  EXPECT_EQ(normalize_answer("  The  Alpaca,  an animal! "), "alpaca animal");
  EXPECT_EQ(exact_match("The Alpaca!", "alpaca"), 1);
  EXPECT_EQ(exact_match("", ""), 1);
  EXPECT_EQ(exact_match("alpaca", "llama"), 0);
}

TEST(ScoreCorpus, IdenticalCorporaScoreFull) {
  std::vector<std::string> texts = {"who founded Blue Tamsin", "what is the height of Mount Orrin",
                                    "the budget of Grey Lantern in 2004"};
  auto m = score_corpus(texts, texts);
  EXPECT_DOUBLE_EQ(m.rouge1, 100.0);
  EXPECT_DOUBLE_EQ(m.rouge2, 100.0);
  EXPECT_DOUBLE_EQ(m.rougeL, 100.0);
  EXPECT_DOUBLE_EQ(m.bleu4, 100.0);
  EXPECT_DOUBLE_EQ(m.em, 100.0);
  EXPECT_EQ(m.n_samples, 3u);
  EXPECT_THROW(score_corpus({"a"}, {}), Error);
  EXPECT_EQ(score_corpus({}, {}).n_samples, 0u);
}

TEST(ScoreCorpus, OrderIndependentAndBounded) {
  auto rows = read_jsonl("metrics_golden.jsonl");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& row : rows) pairs.emplace_back(row["candidate"], row["reference"]);
  auto score = [](const auto& ps) {
    std::vector<std::string> c, r;
    for (const auto& [a, b] : ps) {
      c.push_back(a);
      r.push_back(b);
    }
    return score_corpus(c, r);
  };
  auto base = score(pairs);
  std::mt19937_64 rng(3);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  auto shuffled = score(pairs);
  EXPECT_NEAR(base.rouge1, shuffled.rouge1, 1e-9);
  EXPECT_NEAR(base.rougeL, shuffled.rougeL, 1e-9);
  EXPECT_NEAR(base.bleu4, shuffled.bleu4, 1e-9);
  EXPECT_NEAR(base.em, shuffled.em, 1e-9);
  for (double v : {base.rouge1, base.rouge2, base.rougeL, base.bleu4, base.em}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(MetricReport, JsonRoundTrip) {
  MetricReport m{12.5, 3.25, 11.0, 7.75, 50.0, 4};
  EXPECT_EQ(metric_report_from_json(to_json(m)), m);
}

TEST(LengthStats, HandCountedGolden) {
  Json g = Json::parse(read_file(testing::data_path("length_golden.json")));
  for (const auto& [name, variant] : g["variants"].items()) {
    std::vector<std::string> texts;
    for (const auto& t : variant["texts"]) {
      texts.push_back(t["text"]);
      EXPECT_EQ(tokenize(texts.back()).size(), t["tokens"].get<std::size_t>()) << texts.back();
    }
    EXPECT_DOUBLE_EQ(mean_token_length(texts), variant["mean"].get<double>()) << name;
  }
  EXPECT_EQ(mean_token_length({}), 0.0);
}

TEST(CosineMatrix, MatchesBruteForce) {
  NamedVectors v = {{"raw", {{1, 0, 0}, {1, 2, 3}, {0, 5, 1}}},
                    {"manual", {{0, 1, 0}, {2, 1, 0}, {0, 5, 2}}},
                    {"syn", {{1, 1, 0}, {-1, 2, 1}, {3, 0, 1}}}};
  auto m = cosine_matrix(v);
  ASSERT_EQ(m.names, (std::vector<std::string>{"raw", "manual", "syn"}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double sum = 0;
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& a = v[i].second[s];
        const auto& b = v[j].second[s];
        double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
        sum += dot / (na * nb);
      }
      EXPECT_NEAR(m.values[i][j], sum / 3, 1e-12);
      EXPECT_DOUBLE_EQ(m.values[i][j], m.values[j][i]);
    }
    EXPECT_NEAR(m.values[i][i], 1.0, 1e-9);
  }
}

TEST(CosineMatrix, OrthogonalAndErrors) {
  auto m = cosine_matrix({{"x", {{1, 0}}}, {"y", {{0, 1}}}});
  EXPECT_DOUBLE_EQ(m.values[0][1], 0.0);
  EXPECT_THROW(cosine_matrix({{"x", {{1, 0}, {0, 0}}}}), ValidationError);
  EXPECT_THROW(cosine_matrix({{"x", {{1, 0}}}, {"y", {{1, 0}, {0, 1}}}}), ValidationError);
  EXPECT_THROW(cosine_matrix({{"x", {{1, 0}, {1, 0, 0}}}}), ValidationError);
  EXPECT_NE(m.to_csv().find("variant,x,y"), std::string::npos);
}

}  // namespace
}  // namespace synrewrite
