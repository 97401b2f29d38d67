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

#ifndef SYNREWRITE_PIPELINE_HPP_
#define SYNREWRITE_PIPELINE_HPP_

// Rewrite -> retrieve -> generate orchestration, per-stage timing and
// report rendering.

#include <chrono>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/preftrain.hpp"
#include "synrewrite/retrieval.hpp"
#include "synrewrite/synthesis.hpp"
#include "synrewrite/textmetrics.hpp"
#include "synrewrite/tinyseq2seq.hpp"

namespace synrewrite {

// ---------------------------------------------------------------------------
// Rewriters

class Rewriter {
 public:
  virtual ~Rewriter() = default;
  virtual std::string rewrite(const QueryRecord& record) const = 0;
  virtual std::string name() const = 0;
};

// The user's query as-is.
class RawRewriter : public Rewriter {
 public:
  std::string rewrite(const QueryRecord& r) const override { return r.query; }
  std::string name() const override { return "raw"; }
};

// A stored rewrite variant (manual, syn_seen, ...).
class VariantRewriter : public Rewriter {
 public:
  explicit VariantRewriter(std::string variant) : variant_(std::move(variant)) {}
  std::string rewrite(const QueryRecord& r) const override { return r.rewrites.at(variant_); }
  std::string name() const override { return variant_; }

 private:
  std::string variant_;
};

// Greedy decoding from a trained rewriter.
class ModelRewriter : public Rewriter {
 public:
  ModelRewriter(const TinySeq2Seq& model, std::string label = "model", int max_len = 32,
                int max_history_turns = -1)
      : model_(&model), label_(std::move(label)), max_len_(max_len), max_turns_(max_history_turns) {}

  std::string rewrite(const QueryRecord& r) const override {
    TokenIds in = model_->vocab().encode(serialize_rewriter_input(r, max_turns_));
    return join_tokens(model_->vocab().decode(generate(*model_, in, DecodeOptions::greedy(max_len_))));
  }
  std::string name() const override { return label_; }

 private:
  const TinySeq2Seq* model_;
  std::string label_;
  int max_len_;
  int max_turns_;
};

// ---------------------------------------------------------------------------
// Generators

class Generator {
 public:
  virtual ~Generator() = default;
  // `docs` are in rank order. `record` is available for oracle generators in
  // tests; real generators only look at the rewrite and the documents.
  virtual std::string generate(const QueryRecord& record, const std::string& rewrite,
                               std::span<const Document* const> docs) const = 0;
  virtual std::string name() const = 0;
};

// Splits text into sentences ending at '.', '!' or '?' followed by
// whitespace or the end of the text.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur += text[i];
    bool terminal = text[i] == '.' || text[i] == '!' || text[i] == '?';
    bool boundary = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (terminal && boundary) {
      auto b = cur.find_first_not_of(" \t\r\n");
      if (b != std::string::npos) out.push_back(cur.substr(b));
      cur.clear();
    }
  }
  auto b = cur.find_first_not_of(" \t\r\n");
  if (b != std::string::npos) {
    cur = cur.substr(b);
    cur.erase(cur.find_last_not_of(" \t\r\n") + 1);
    out.push_back(cur);
  }
  return out;
}

// The sentence with the highest unigram F1 against the rewrite; ties go to
// the earliest sentence of the highest-ranked document.
inline std::string extractive_generate(const std::string& rewrite,
                                       std::span<const Document* const> docs) {
  const TokenSeq q = tokenize(rewrite);
  std::string best;
  double best_score = -1;
  for (const Document* d : docs) {
    for (auto& s : split_sentences(d->body)) {
      double score = rouge_n(q, tokenize(s), 1);
      if (score > best_score) {
        best_score = score;
        best = std::move(s);
      }
    }
  }
  return best;
}

class ExtractiveGenerator : public Generator {
 public:
  std::string generate(const QueryRecord&, const std::string& rewrite,
                       std::span<const Document* const> docs) const override {
    return extractive_generate(rewrite, docs);
  }
  std::string name() const override { return "extractive"; }
};

// Answers through an LLM provider.
class ProviderGenerator : public Generator {
 public:
  explicit ProviderGenerator(Provider& provider, RetryPolicy retry = {})
      : provider_(&provider), retry_(retry) {}

  static std::string render(const std::string& rewrite, std::span<const Document* const> docs) {
    std::string p = "Answer the question using only the passages below. Reply with a short answer.\n\n";
    for (std::size_t i = 0; i < docs.size(); ++i) {
      p += "Passage " + std::to_string(i + 1) + ": " + document_text(*docs[i]) + "\n";
    }
    p += "\nQuestion: " + rewrite + "\nAnswer:";
    return p;
  }

  std::string generate(const QueryRecord& record, const std::string& rewrite,
                       std::span<const Document* const> docs) const override {
    std::mt19937_64 rng(fnv1a64(record.record_id));
    return complete_with_retry(*provider_, render(rewrite, docs), {&record, Condition::kUnseen},
                               retry_, rng, nullptr);
  }
  std::string name() const override { return "llm:" + provider_->id(); }

 private:
  Provider* provider_;
  RetryPolicy retry_;
};

// ---------------------------------------------------------------------------
// RAG runs

struct RagEnv {
  const Corpus* corpus = nullptr;
  const FlatIndex* index = nullptr;
  const EmbeddingProvider* embedder = nullptr;
  int k = 5;
};

inline RetrievalResult retrieve(const RagEnv& env, const std::string& query_id,
                                const std::string& text) {
  return env.index->search(env.embedder->embed_item(query_id, text), env.k, query_id);
}

inline std::vector<const Document*> resolve_ranked(const RagEnv& env, const RetrievalResult& r) {
  std::vector<const Document*> docs;
  for (const auto& sd : r.ranked) {
    const Document* d = env.corpus->find(sd.doc_id);
    if (d == nullptr) throw DanglingReferenceError("index returned unknown document '" + sd.doc_id + "'");
    docs.push_back(d);
  }
  return docs;
}

struct RagRecordOutput {
  std::string record_id;
  std::string rewrite;
  std::vector<ScoredDoc> retrieved;
  std::string answer;
  bool failed = false;
  std::string error;
  // Wall-clock seconds per stage; not part of the deterministic output.
  double t_rewrite = 0, t_retrieve = 0, t_generate = 0;
};

struct StageTiming {
  double rewrite_s = 0, retrieve_s = 0, generate_s = 0;  // mean seconds per record
  double rewrite_frac = 0, retrieve_frac = 0, generate_frac = 0;

  double total_s() const { return rewrite_s + retrieve_s + generate_s; }
};

struct RagReport {
  std::string method;
  int k = 5;
  std::vector<RagRecordOutput> records;
  MetricReport generation;
  MrrResult retrieval;
  std::size_t n_failed = 0;
  std::optional<StageTiming> timing;  // absent when no record succeeded
};

struct RagRunOptions {
  int workers = 1;
};

inline RagRecordOutput run_one(const RagEnv& env, const Rewriter& rewriter,
                               const Generator& generator, const QueryRecord& rec) {
  using Clock = std::chrono::steady_clock;
  auto secs = [](Clock::duration d) { return std::chrono::duration<double>(d).count(); };
  RagRecordOutput out;
  out.record_id = rec.record_id;
  try {
    auto t0 = Clock::now();
    out.rewrite = rewriter.rewrite(rec);
    auto t1 = Clock::now();
    RetrievalResult rr = retrieve(env, rec.record_id, out.rewrite);
    auto docs = resolve_ranked(env, rr);
    auto t2 = Clock::now();
    out.answer = generator.generate(rec, out.rewrite, docs);
    auto t3 = Clock::now();
    out.retrieved = std::move(rr.ranked);
    out.t_rewrite = secs(t1 - t0);
    out.t_retrieve = secs(t2 - t1);
    out.t_generate = secs(t3 - t2);
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

// Recomputes metrics and timing from per-record outputs.
inline void finalize_report(RagReport& report, const std::vector<QueryRecord>& records) {
  std::map<std::string, const QueryRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;
  std::vector<std::string> cands, refs;
  std::vector<RetrievalResult> results;
  std::map<std::string, std::string> gold;
  StageTiming t;
  std::size_t ok = 0;
  report.n_failed = 0;
  for (const auto& o : report.records) {
    if (o.failed) {
      ++report.n_failed;
      continue;
    }
    const QueryRecord& rec = *by_id.at(o.record_id);
    cands.push_back(o.answer);
    refs.push_back(rec.gold_answer);
    results.push_back({o.record_id, o.retrieved, report.k});
    if (rec.pos_doc_id) gold[o.record_id] = *rec.pos_doc_id;
    t.rewrite_s += o.t_rewrite;
    t.retrieve_s += o.t_retrieve;
    t.generate_s += o.t_generate;
    ++ok;
  }
  report.generation = score_corpus(cands, refs);
  report.retrieval = mrr_at_k(results, gold, report.k);
  if (ok == 0) {
    report.timing.reset();
    return;
  }
  const double total = t.total_s();
  t.rewrite_s /= double(ok);
  t.retrieve_s /= double(ok);
  t.generate_s /= double(ok);
  if (total > 0) {
    t.rewrite_frac = (t.rewrite_s * double(ok)) / total;
    t.retrieve_frac = (t.retrieve_s * double(ok)) / total;
    t.generate_frac = 1.0 - t.rewrite_frac - t.retrieve_frac;
  } else {
    t.rewrite_frac = t.retrieve_frac = t.generate_frac = 1.0 / 3.0;
  }
  report.timing = t;
}

// Per record: rewrite, embed and search top-k, generate from the retrieved
// documents; then score answers against gold answers and retrieval against
// pos_doc_id. Stage failures mark the record failed and the run continues.
inline RagReport run_rag(const RagEnv& env, const Rewriter& rewriter, const Generator& generator,
                         const std::vector<QueryRecord>& records, const RagRunOptions& opts = {}) {
  if (env.corpus == nullptr || env.index == nullptr || env.embedder == nullptr) {
    throw ValidationError("RAG environment is incomplete");
  }
  if (env.k < 1) throw ValidationError("k must be >= 1");
  RagReport report;
  report.method = rewriter.name();
  report.k = env.k;
  report.records.resize(records.size());
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, opts.workers)),
                                                      records.size()));
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      report.records[i] = run_one(env, rewriter, generator, records[i]);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
          report.records[i] = run_one(env, rewriter, generator, records[i]);
        }
      });
    }
  }
  finalize_report(report, records);
  return report;
}

struct GoldEvalResult {
  MetricReport metrics;
  std::vector<std::string> failed_records;
};

// Generation quality of a rewrite variant with the gold document as the only
// context, isolating the rewrite from retrieval.
inline GoldEvalResult eval_gold_docs(const std::vector<QueryRecord>& records,
                                     const std::string& variant_name, const Generator& generator,
                                     const Corpus& corpus) {
  std::string missing;
  for (const auto& r : records) {
    if (!r.rewrites.contains(variant_name)) missing += (missing.empty() ? "" : ", ") + r.record_id;
  }
  if (!missing.empty()) {
    throw ValidationError("variant '" + variant_name + "' missing on records: " + missing);
  }
  GoldEvalResult res;
  std::vector<std::string> cands, refs;
  for (const auto& r : records) {
    try {
      const Document* doc = &resolve_positive(r, corpus);
      cands.push_back(generator.generate(r, r.rewrites.at(variant_name), std::span(&doc, 1)));
      refs.push_back(r.gold_answer);
    } catch (const std::exception&) {
      res.failed_records.push_back(r.record_id);
    }
  }
  res.metrics = score_corpus(cands, refs);
  return res;
}

// Downstream feedback for preference pairs: retrieval reciprocal rank within
// k and ROUGE-L of the generated answer.
inline FeedbackFn make_feedback(const RagEnv& env, const Generator& generator) {
  return [&env, &generator](const QueryRecord& rec, const std::string& rewrite) {
    CandidateFeedback f;
    if (tokenize(rewrite).empty()) return f;
    RetrievalResult rr = retrieve(env, rec.record_id, rewrite);
    if (rec.pos_doc_id) f.reciprocal_rank = reciprocal_rank(rr, *rec.pos_doc_id, env.k);
    auto docs = resolve_ranked(env, rr);
    f.answer_rouge_l = rouge_l(tokenize(generator.generate(rec, rewrite, docs)),
                               tokenize(rec.gold_answer));
    return f;
  };
}

// ---------------------------------------------------------------------------
// Report serialization

inline nlohmann::json to_json(const RagReport& r, bool include_timing = true) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& o : r.records) {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : o.retrieved) docs.push_back({{"doc_id", d.doc_id}, {"score", d.score}});
    nlohmann::json jo = {{"record_id", o.record_id}, {"rewrite", o.rewrite},
                         {"retrieved", std::move(docs)}, {"answer", o.answer},
                         {"failed", o.failed}, {"error", o.error}};
    if (include_timing) {
      jo["seconds"] = {{"rewrite", o.t_rewrite}, {"retrieve", o.t_retrieve}, {"generate", o.t_generate}};
    }
    recs.push_back(std::move(jo));
  }
  nlohmann::json j = {{"method", r.method},
                      {"k", r.k},
                      {"generation", to_json(r.generation)},
                      {"mrr_at_k", r.retrieval.mrr},
                      {"mrr_scored", r.retrieval.n_scored},
                      {"mrr_skipped", r.retrieval.n_skipped},
                      {"n_failed", r.n_failed},
                      {"records", std::move(recs)}};
  if (include_timing && r.timing) {
    const auto& t = *r.timing;
    j["timing"] = {{"mean_seconds", {{"rewrite", t.rewrite_s}, {"retrieve", t.retrieve_s}, {"generate", t.generate_s}}},
                   {"fraction", {{"rewrite", t.rewrite_frac}, {"retrieve", t.retrieve_frac}, {"generate", t.generate_frac}}}};
  }
  return j;
}

inline RagReport rag_report_from_json(const nlohmann::json& j) {
  RagReport r;
  r.method = j.at("method").get<std::string>();
  r.k = j.at("k").get<int>();
  r.generation = metric_report_from_json(j.at("generation"));
  r.retrieval.mrr = j.at("mrr_at_k").get<double>();
  r.retrieval.n_scored = j.at("mrr_scored").get<std::size_t>();
  r.retrieval.n_skipped = j.at("mrr_skipped").get<std::size_t>();
  r.n_failed = j.at("n_failed").get<std::size_t>();
  for (const auto& jo : j.at("records")) {
    RagRecordOutput o;
    o.record_id = jo.at("record_id").get<std::string>();
    o.rewrite = jo.at("rewrite").get<std::string>();
    for (const auto& d : jo.at("retrieved")) {
      o.retrieved.push_back({d.at("doc_id").get<std::string>(), d.at("score").get<double>()});
    }
    o.answer = jo.at("answer").get<std::string>();
    o.failed = jo.at("failed").get<bool>();
    o.error = jo.at("error").get<std::string>();
    if (auto it = jo.find("seconds"); it != jo.end()) {
      o.t_rewrite = it->at("rewrite").get<double>();
      o.t_retrieve = it->at("retrieve").get<double>();
      o.t_generate = it->at("generate").get<double>();
    }
    r.records.push_back(std::move(o));
  }
  if (auto it = j.find("timing"); it != j.end()) {
    StageTiming t;
    const auto& ms = it->at("mean_seconds");
    const auto& fr = it->at("fraction");
    t.rewrite_s = ms.at("rewrite").get<double>();
    t.retrieve_s = ms.at("retrieve").get<double>();
    t.generate_s = ms.at("generate").get<double>();
    t.rewrite_frac = fr.at("rewrite").get<double>();
    t.retrieve_frac = fr.at("retrieve").get<double>();
    t.generate_frac = fr.at("generate").get<double>();
    r.timing = t;
  }
  return r;
}

enum class ReportFormat { kJson, kMarkdown, kCsv };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "md" || s == "markdown") return ReportFormat::kMarkdown;
  if (s == "csv") return ReportFormat::kCsv;
  throw ValidationError("unknown report format '" + s + "' (json|md|csv)");
}

namespace detail {
inline std::string fixed(double v, int digits = 2) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}
}  // namespace detail

// One row per report: method x {Rouge-1, Rouge-2, Rouge-L, Bleu-4, MRR@k, EM},
// followed by a stage timing table when timings are present.
inline std::string emit_report(const std::vector<RagReport>& reports, ReportFormat format,
                               bool include_timing = true) {
  using detail::fixed;
  std::ostringstream out;
  if (format == ReportFormat::kJson) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(to_json(r, include_timing));
    out << (reports.size() == 1 ? arr[0] : arr).dump(2) << "\n";
    return out.str();
  }
  const std::string k = reports.empty() ? "5" : std::to_string(reports.front().k);
  if (format == ReportFormat::kCsv) {
    out << "method,rouge1,rouge2,rougeL,bleu4,mrr_at_" << k << ",em,n_samples";
    if (include_timing) out << ",rewrite_s,retrieve_s,generate_s,rewrite_frac,retrieve_frac,generate_frac";
    out << "\n";
    for (const auto& r : reports) {
      const auto& g = r.generation;
      out << r.method << ',' << fixed(g.rouge1, 4) << ',' << fixed(g.rouge2, 4) << ','
          << fixed(g.rougeL, 4) << ',' << fixed(g.bleu4, 4) << ',' << fixed(r.retrieval.mrr, 4)
          << ',' << fixed(g.em, 4) << ',' << g.n_samples;
      if (include_timing) {
        if (r.timing) {
          const auto& t = *r.timing;
          out << ',' << fixed(t.rewrite_s, 6) << ',' << fixed(t.retrieve_s, 6) << ','
              << fixed(t.generate_s, 6) << ',' << fixed(t.rewrite_frac, 6) << ','
              << fixed(t.retrieve_frac, 6) << ',' << fixed(t.generate_frac, 6);
        } else {
          out << ",,,,,,";
        }
      }
      out << "\n";
    }
    return out.str();
  }
  out << "| Method | Rouge-1 | Rouge-2 | Rouge-L | Bleu-4 | MRR@" << k << " | EM |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const auto& g = r.generation;
    out << "| " << r.method << " | " << fixed(g.rouge1) << " | " << fixed(g.rouge2) << " | "
        << fixed(g.rougeL) << " | " << fixed(g.bleu4) << " | " << fixed(r.retrieval.mrr) << " | "
        << fixed(g.em) << " |\n";
  }
  if (include_timing) {
    bool any = false;
    for (const auto& r : reports) any = any || r.timing.has_value();
    if (any) {
      out << "\n| Method | Rewrite (s) | Retrieve (s) | Generate (s) | Total (s) | Rewrite % | Retrieve % | Generate % |\n";
      out << "|---|---|---|---|---|---|---|---|\n";
      for (const auto& r : reports) {
        if (!r.timing) continue;
        const auto& t = *r.timing;
        out << "| " << r.method << " | " << fixed(t.rewrite_s, 6) << " | " << fixed(t.retrieve_s, 6)
            << " | " << fixed(t.generate_s, 6) << " | " << fixed(t.total_s(), 6) << " | "
            << fixed(100 * t.rewrite_frac, 1) << " | " << fixed(100 * t.retrieve_frac, 1) << " | "
            << fixed(100 * t.generate_frac, 1) << " |\n";
      }
    }
  }
  return out.str();
}

inline std::string emit_report(const RagReport& report, ReportFormat format,
                               bool include_timing = true) {
  return emit_report(std::vector<RagReport>{report}, format, include_timing);
}

}  // namespace synrewrite

#endif  // SYNREWRITE_PIPELINE_HPP_
