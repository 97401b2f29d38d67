// Copyright 2026 The SynRewrite Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// `synrewrite` command-line front end. dispatch() is callable in-process so
// tests can drive it without spawning a shell.
//
// Option values resolve as: command-line flag, then --config file (INI/TOML,
// one [section] per subcommand), then environment variable.

#ifndef SYNREWRITE_TOOLS_CLI_HPP_
#define SYNREWRITE_TOOLS_CLI_HPP_

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "checks.hpp"
#include "synrewrite/http_provider.hpp"
#include "synrewrite/synrewrite.hpp"
#include "synrewrite/toyworld.hpp"

#ifndef SYNREWRITE_VERSION
#define SYNREWRITE_VERSION "0.0.0"
#endif

namespace synrewrite::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // validation or runtime error
inline constexpr int kUsage = 2;    // unknown flag, missing argument

struct Global {
  std::uint64_t seed = 17;
  std::string manifest;
};

// Written before a subcommand runs: what ran, with which resolved options,
// on which inputs. Contains no timestamps, so identical invocations produce
// identical manifests.
inline Json build_manifest(const CLI::App& sub, const Global& g,
                           const std::vector<std::string>& inputs) {
  Json config = Json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help") continue;
    if (!o->results().empty()) {
      Json vals = Json::array();
      for (const auto& r : o->results()) vals.push_back(r);
      config[name] = vals.size() == 1 ? vals[0] : vals;
    } else if (!o->get_default_str().empty()) {
      config[name] = o->get_default_str();
    } else {
      config[name] = nullptr;
    }
  }
  Json hashes = Json::object();
  for (const auto& p : inputs) {
    if (p.empty()) continue;
    if (fs::is_regular_file(p)) {
      hashes[p] = hex64(fnv1a64(read_file(p)));
    } else if (fs::is_directory(p)) {
      std::uint64_t h = kFnvOffset;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        h = fnv1a64(f.filename().string(), h);
        h = fnv1a64(read_file(f), h);
      }
      hashes[p] = hex64(h);
    } else {
      hashes[p] = nullptr;
    }
  }
  return {{"command", sub.get_name()},
          {"config", config},
          {"inputs", hashes},
          {"seeds", {g.seed}},
          {"version", SYNREWRITE_VERSION}};
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

inline void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

// Loads an index directory and the embedder recorded with it. Precomputed
// indexes take query vectors (keyed by record_id) from a separate file pair.
struct LoadedIndex {
  FlatIndex index;
  EmbeddingProvider embedder;
};

inline LoadedIndex load_index(const std::string& dir, const std::string& query_embeddings,
                              const std::string& query_ids) {
  require_file(dir, "index directory");
  auto [index, provider] = FlatIndex::load(dir);
  if (provider.at("kind") == "precomputed_file") {
    if (query_embeddings.empty() || query_ids.empty()) {
      throw ValidationError(
          "index uses precomputed embeddings; pass --query-embeddings and --query-ids");
    }
    return {std::move(index), EmbeddingProvider::precomputed(query_embeddings, query_ids)};
  }
  return {std::move(index), EmbeddingProvider::from_json(provider)};
}

inline std::string fmt_fixed(double v, int digits) { return detail::fixed(v, digits); }

// ---------------------------------------------------------------------------

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    app_.description("Synthetic query rewriting, leakage auditing, rewriter training and RAG evaluation.");
    app_.require_subcommand(1);
    app_.set_config("--config", "", "INI/TOML config file; one [section] per subcommand");
    app_.set_version_flag("--version", SYNREWRITE_VERSION);
    app_.add_option("--seed", g_.seed, "Random seed")->envname("SYNREWRITE_SEED")->capture_default_str();
    app_.add_option("--manifest", g_.manifest,
                    "Manifest path (default: <out>.manifest.json when --out is given)");
    add_make_fixture();
    add_synthesize();
    add_analyze_leakage();
    add_build_index();
    add_eval_retrieval();
    add_eval_generation();
    add_train_sft();
    add_build_pairs();
    add_train_pref();
    add_run_rag();
    add_report();
    add_selftest();
  }

  int run(int argc, char** argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out_ << app_.help();
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::CallForVersion&) {
      out_ << SYNREWRITE_VERSION << "\n";
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n\n";
      const CLI::App* sub = app_.get_subcommands().empty() ? &app_ : app_.get_subcommands()[0];
      err_ << sub->help();
      return kUsage;
    }
    const CLI::App* sub = app_.get_subcommands()[0];
    try {
      const Action& action = actions_.at(sub->get_name());
      std::string manifest_path = g_.manifest;
      if (manifest_path.empty() && !action.out().empty() && action.out() != "-") {
        manifest_path = action.out() + ".manifest.json";
      }
      if (!manifest_path.empty()) {
        write_file_atomic(manifest_path, build_manifest(*sub, g_, action.inputs()).dump(2) + "\n");
      }
      return action.run();
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      return kFailure;
    }
  }

 private:
  struct Action {
    std::function<int()> run;
    std::function<std::vector<std::string>()> inputs;
    std::function<std::string()> out;
  };

  CLI::App* sub(const std::string& name, const std::string& desc) {
    return app_.add_subcommand(name, desc);
  }

  static void add_format(CLI::App* s, std::string& format) {
    s->add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"json", "md", "csv"}))
        ->capture_default_str();
  }

  // --------------------------------------------------------------------- fixtures
  struct FixtureOpts {
    std::size_t records = 300;
    std::string out_dialogues, out_corpus, id_prefix = "toy";
    std::size_t sloppy_attributes = 0;
    double sloppy_rate = 0.0;
  } fx_;

  void add_make_fixture() {
    auto* s = sub("make-fixture", "Write the synthetic coreference dialogues and corpus");
    s->add_option("--records", fx_.records, "Number of dialogue records")->capture_default_str();
    s->add_option("--out", fx_.out_dialogues, "Dialogue JSONL output")->required();
    s->add_option("--out-corpus", fx_.out_corpus, "Corpus JSONL output");
    s->add_option("--id-prefix", fx_.id_prefix, "Record id prefix")->capture_default_str();
    s->add_option("--sloppy-attributes", fx_.sloppy_attributes,
                  "Attributes whose manual rewrites are noisy")->capture_default_str();
    s->add_option("--sloppy-rate", fx_.sloppy_rate, "Noise rate on those attributes")
        ->check(CLI::Range(0.0, 1.0))->capture_default_str();
    actions_["make-fixture"] = {[this] {
                                  toy::Options o;
                                  o.n_records = fx_.records;
                                  o.seed = g_.seed;
                                  o.id_prefix = fx_.id_prefix;
                                  o.sloppy_attributes = fx_.sloppy_attributes;
                                  o.sloppy_rate = fx_.sloppy_rate;
                                  save_jsonl(fx_.out_dialogues, toy::make_records(o));
                                  if (!fx_.out_corpus.empty()) {
                                    save_jsonl(fx_.out_corpus, toy::make_corpus().docs());
                                  }
                                  return kOk;
                                },
                                [] { return std::vector<std::string>{}; },
                                [this] { return fx_.out_dialogues; }};
  }

  // --------------------------------------------------------------------- synthesize
  struct SynthOpts {
    std::string dialogues, corpus, condition = "unseen", provider = "mock", tmpl, cache_dir = ".synrewrite-cache";
    std::string out, url, model = "gpt-4o", summary;
    int max_concurrency = 4, max_retries = 3;
    long base_delay_ms = 1000;
  } sy_;

  void add_synthesize() {
    auto* s = sub("synthesize", "Produce syn_unseen / syn_seen rewrites through a provider");
    s->add_option("--dialogues", sy_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--corpus", sy_.corpus, "Corpus JSONL")->required();
    s->add_option("--condition", sy_.condition, "unseen|seen")
        ->check(CLI::IsMember({"unseen", "seen"}))->capture_default_str();
    s->add_option("--provider", sy_.provider, "mock|http")
        ->check(CLI::IsMember({"mock", "http"}))->capture_default_str();
    s->add_option("--template", sy_.tmpl, "Prompt template file (default: shipped template)");
    s->add_option("--cache-dir", sy_.cache_dir, "Cache directory")
        ->envname("SYNREWRITE_CACHE_DIR")->capture_default_str();
    s->add_option("--max-concurrency", sy_.max_concurrency, "Concurrent provider calls")
        ->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--max-retries", sy_.max_retries, "Retries per record")
        ->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--base-delay-ms", sy_.base_delay_ms, "Initial backoff")->capture_default_str();
    s->add_option("--provider-url", sy_.url, "Provider base URL")->envname("SYNREWRITE_PROVIDER_URL");
    s->add_option("--model", sy_.model, "Provider model name")
        ->envname("SYNREWRITE_MODEL")->capture_default_str();
    s->add_option("--out", sy_.out, "Dialogue JSONL with the new variant")->required();
    s->add_option("--summary", sy_.summary, "Summary JSON (default: stdout)");
    actions_["synthesize"] = {[this] { return run_synthesize(); },
                              [this] { return std::vector<std::string>{sy_.dialogues, sy_.corpus, sy_.tmpl}; },
                              [this] { return sy_.out; }};
  }

  int run_synthesize() {
    auto records = load_dialogues(sy_.dialogues);
    Corpus corpus = load_corpus(sy_.corpus);
    Condition cond = condition_from_string(sy_.condition);
    PromptTemplate tmpl = sy_.tmpl.empty() ? PromptTemplate::builtin(cond) : PromptTemplate::load(cond, sy_.tmpl);
    std::unique_ptr<Provider> provider;
    if (sy_.provider == "mock") {
      provider = std::make_unique<MockProvider>();
    } else {
      HttpProviderConfig hc = HttpProviderConfig::from_env();
      if (!sy_.url.empty()) hc.endpoint = sy_.url;
      hc.model = sy_.model;
      if (hc.endpoint.empty()) throw ValidationError("http provider needs --provider-url or SYNREWRITE_PROVIDER_URL");
      provider = std::make_unique<HttpProvider>(hc);
    }
    SynthesisJob job;
    job.records = &records;
    job.corpus = &corpus;
    job.prompt = &tmpl;
    job.provider = provider.get();
    job.cache_dir = sy_.cache_dir;
    job.max_concurrency = sy_.max_concurrency;
    job.retry.max_retries = sy_.max_retries;
    job.retry.base_delay = std::chrono::milliseconds(sy_.base_delay_ms);
    job.seed = g_.seed;
    SynthesisResult res = synthesize(job);
    const char* var = variant_for(cond);
    for (auto& r : records) {
      if (auto it = res.rewrites.find(r.record_id); it != res.rewrites.end()) r.rewrites.set(var, it->second);
    }
    save_jsonl(sy_.out, records);
    Json failures = Json::array();
    for (const auto& f : res.failures) failures.push_back({{"record_id", f.record_id}, {"reason", f.reason}});
    Json summary = {{"variant", var},
                    {"records", records.size()},
                    {"rewritten", res.rewrites.size()},
                    {"provider_calls", res.provider_calls},
                    {"cache_hits", res.cache_hits},
                    {"failures", failures}};
    write_output(sy_.summary, summary.dump(2) + "\n", out_);
    return kOk;
  }

  // --------------------------------------------------------------------- leakage
  struct LeakOpts {
    std::string dialogues, corpus, variant = "syn_seen", extractor = "builtin", entities, out, format = "json";
  } lk_;

  void add_analyze_leakage() {
    auto* s = sub("analyze-leakage", "Entity leakage ratios (LR, PureLR) of a rewrite variant");
    s->add_option("--dialogues", lk_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--corpus", lk_.corpus, "Corpus JSONL")->required();
    s->add_option("--variant", lk_.variant, "Rewrite variant to audit")->capture_default_str();
    s->add_option("--extractor", lk_.extractor, "builtin|sidecar")
        ->check(CLI::IsMember({"builtin", "sidecar"}))->capture_default_str();
    s->add_option("--entities", lk_.entities, "Entity JSONL for the sidecar extractor");
    s->add_option("--out", lk_.out, "Output file (default: stdout)");
    add_format(s, lk_.format);
    actions_["analyze-leakage"] = {[this] { return run_leakage(); },
                                   [this] { return std::vector<std::string>{lk_.dialogues, lk_.corpus, lk_.entities}; },
                                   [this] { return lk_.out; }};
  }

  int run_leakage() {
    auto records = load_dialogues(lk_.dialogues);
    Corpus corpus = load_corpus(lk_.corpus);
    EntityExtractor ex;
    if (lk_.extractor == "sidecar") {
      if (lk_.entities.empty()) throw ValidationError("--extractor sidecar requires --entities");
      ex = EntityExtractor::sidecar_file(lk_.entities);
    }
    LeakageReport rep = dataset_leakage(records, lk_.variant, ex, corpus);
    std::string text;
    if (lk_.format == "json") {
      text = to_json(rep).dump(2) + "\n";
    } else if (lk_.format == "md") {
      text = "| Variant | Avg_LR | Avg_PureLR | Records |\n|---|---|---|---|\n| " + rep.variant + " | " +
             fmt_fixed(rep.avg_lr, 4) + " | " + fmt_fixed(rep.avg_pure_lr, 4) + " | " +
             std::to_string(rep.records.size()) + " |\n";
    } else {
      text = "record_id,N,M,K,lr,pure_lr\n";
      for (const auto& r : rep.records) {
        text += r.record_id + "," + std::to_string(r.stats.n_query_entities) + "," +
                std::to_string(r.stats.m_not_in_history) + "," + std::to_string(r.stats.k_solely_from_docans) +
                "," + fmt_fixed(r.stats.lr, 6) + "," + fmt_fixed(r.stats.pure_lr, 6) + "\n";
      }
    }
    write_output(lk_.out, text, out_);
    return kOk;
  }

  // --------------------------------------------------------------------- index
  struct IndexOpts {
    std::string corpus, out, embedder = "hashed_tfidf", embeddings, embedding_ids;
    int dim = EmbeddingProvider::kDefaultDim;
  } ix_;

  void add_build_index() {
    auto* s = sub("build-index", "Embed the corpus and write a flat inner-product index");
    s->add_option("--corpus", ix_.corpus, "Corpus JSONL")->required();
    s->add_option("--out", ix_.out, "Index directory")->required();
    s->add_option("--embedder", ix_.embedder, "hashed_tfidf|precomputed")
        ->check(CLI::IsMember({"hashed_tfidf", "precomputed"}))->capture_default_str();
    s->add_option("--dim", ix_.dim, "Hashed embedding dimension")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--embeddings", ix_.embeddings, "Precomputed f32 matrix (u64 n, u64 dim, rows)");
    s->add_option("--embedding-ids", ix_.embedding_ids, "JSON array of row ids");
    actions_["build-index"] = {[this] {
                                 Corpus corpus = load_corpus(ix_.corpus);
                                 EmbeddingProvider p;
                                 if (ix_.embedder == "precomputed") {
                                   if (ix_.embeddings.empty() || ix_.embedding_ids.empty()) {
                                     throw ValidationError("precomputed embedder needs --embeddings and --embedding-ids");
                                   }
                                   p = EmbeddingProvider::precomputed(ix_.embeddings, ix_.embedding_ids);
                                 } else {
                                   p = fit_hashed_tfidf(corpus, ix_.dim);
                                 }
                                 build_index(corpus, p).save(ix_.out, p.to_json());
                                 return kOk;
                               },
                               [this] { return std::vector<std::string>{ix_.corpus, ix_.embeddings, ix_.embedding_ids}; },
                               [this] { return ix_.out; }};
  }

  // --------------------------------------------------------------------- retrieval
  struct RetrievalOpts {
    std::string dialogues, index, rewriter = "raw", checkpoint, out, format = "json", query_embeddings, query_ids;
    int k = 5;
  } rt_;

  static void add_query_embedding_opts(CLI::App* s, std::string& emb, std::string& ids) {
    s->add_option("--query-embeddings", emb, "Query vectors for precomputed indexes");
    s->add_option("--query-ids", ids, "Record ids of those vectors");
  }

  std::unique_ptr<Rewriter> make_rewriter(const std::string& spec, const std::string& checkpoint,
                                          std::optional<TinySeq2Seq>& model_holder) {
    if (spec == "raw") return std::make_unique<RawRewriter>();
    if (spec == "model") {
      if (checkpoint.empty()) throw ValidationError("--rewriter model requires --checkpoint");
      model_holder = load_checkpoint(checkpoint);
      return std::make_unique<ModelRewriter>(*model_holder);
    }
    if (spec.rfind("variant:", 0) == 0) return std::make_unique<VariantRewriter>(spec.substr(8));
    return std::make_unique<VariantRewriter>(spec);
  }

  void add_eval_retrieval() {
    auto* s = sub("eval-retrieval", "MRR@k of a rewriter against pos_doc_id");
    s->add_option("--dialogues", rt_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--index", rt_.index, "Index directory")->required();
    s->add_option("--rewriter", rt_.rewriter, "raw|manual|model|variant:<name>|<variant>")->capture_default_str();
    s->add_option("--checkpoint", rt_.checkpoint, "Rewriter checkpoint for --rewriter model");
    s->add_option("--k", rt_.k, "Cutoff")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--out", rt_.out, "Output file (default: stdout)");
    add_query_embedding_opts(s, rt_.query_embeddings, rt_.query_ids);
    add_format(s, rt_.format);
    actions_["eval-retrieval"] = {[this] { return run_eval_retrieval(); },
                                  [this] { return std::vector<std::string>{rt_.dialogues, rt_.index, rt_.checkpoint}; },
                                  [this] { return rt_.out; }};
  }

  int run_eval_retrieval() {
    auto records = load_dialogues(rt_.dialogues);
    LoadedIndex li = load_index(rt_.index, rt_.query_embeddings, rt_.query_ids);
    std::optional<TinySeq2Seq> holder;
    auto rw = make_rewriter(rt_.rewriter, rt_.checkpoint, holder);
    std::vector<RetrievalResult> results;
    std::map<std::string, std::string> gold;
    Json per = Json::array();
    for (const auto& r : records) {
      std::string q = rw->rewrite(r);
      RetrievalResult res = li.index.search(li.embedder.embed_item(r.record_id, q), rt_.k, r.record_id);
      double rr = r.pos_doc_id ? reciprocal_rank(res, *r.pos_doc_id, rt_.k) : 0.0;
      if (r.pos_doc_id) gold[r.record_id] = *r.pos_doc_id;
      per.push_back({{"record_id", r.record_id}, {"rewrite", q}, {"reciprocal_rank", rr}});
      results.push_back(std::move(res));
    }
    MrrResult m = mrr_at_k(results, gold, rt_.k);
    std::string text;
    if (rt_.format == "json") {
      text = Json{{"rewriter", rw->name()}, {"k", rt_.k}, {"mrr", m.mrr}, {"n_scored", m.n_scored},
                  {"n_skipped", m.n_skipped}, {"records", per}}.dump(2) + "\n";
    } else if (rt_.format == "md") {
      text = "| Rewriter | MRR@" + std::to_string(rt_.k) + " | Scored | Skipped |\n|---|---|---|---|\n| " +
             rw->name() + " | " + fmt_fixed(m.mrr, 2) + " | " + std::to_string(m.n_scored) + " | " +
             std::to_string(m.n_skipped) + " |\n";
    } else {
      text = "rewriter,k,mrr,n_scored,n_skipped\n" + rw->name() + "," + std::to_string(rt_.k) + "," +
             fmt_fixed(m.mrr, 4) + "," + std::to_string(m.n_scored) + "," + std::to_string(m.n_skipped) + "\n";
    }
    write_output(rt_.out, text, out_);
    return kOk;
  }

  // --------------------------------------------------------------------- generation
  struct GenOpts {
    std::string dialogues, corpus, variant = "manual", out, format = "json";
  } gn_;

  void add_eval_generation() {
    auto* s = sub("eval-generation", "Answer quality of a rewrite variant with the gold document as context");
    s->add_option("--dialogues", gn_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--corpus", gn_.corpus, "Corpus JSONL")->required();
    s->add_option("--variant", gn_.variant, "Rewrite variant")->capture_default_str();
    s->add_option("--out", gn_.out, "Output file (default: stdout)");
    add_format(s, gn_.format);
    actions_["eval-generation"] = {[this] {
                                     auto records = load_dialogues(gn_.dialogues);
                                     Corpus corpus = load_corpus(gn_.corpus);
                                     ExtractiveGenerator gen;
                                     GoldEvalResult res = eval_gold_docs(records, gn_.variant, gen, corpus);
                                     const auto& m = res.metrics;
                                     std::string text;
                                     if (gn_.format == "json") {
                                       Json j = to_json(m);
                                       j["variant"] = gn_.variant;
                                       j["failed_records"] = res.failed_records;
                                       text = j.dump(2) + "\n";
                                     } else if (gn_.format == "md") {
                                       text = "| Variant | Rouge-1 | Rouge-2 | Rouge-L | Bleu-4 | EM |\n|---|---|---|---|---|---|\n| " +
                                              gn_.variant + " | " + fmt_fixed(m.rouge1, 2) + " | " + fmt_fixed(m.rouge2, 2) +
                                              " | " + fmt_fixed(m.rougeL, 2) + " | " + fmt_fixed(m.bleu4, 2) + " | " +
                                              fmt_fixed(m.em, 2) + " |\n";
                                     } else {
                                       text = "variant,rouge1,rouge2,rougeL,bleu4,em,n_samples\n" + gn_.variant + "," +
                                              fmt_fixed(m.rouge1, 4) + "," + fmt_fixed(m.rouge2, 4) + "," +
                                              fmt_fixed(m.rougeL, 4) + "," + fmt_fixed(m.bleu4, 4) + "," +
                                              fmt_fixed(m.em, 4) + "," + std::to_string(m.n_samples) + "\n";
                                     }
                                     write_output(gn_.out, text, out_);
                                     return kOk;
                                   },
                                   [this] { return std::vector<std::string>{gn_.dialogues, gn_.corpus}; },
                                   [this] { return gn_.out; }};
  }

  // --------------------------------------------------------------------- SFT
  struct SftOpts {
    std::string dialogues, target = "manual", out, history_out, schedule = "cosine";
    int epochs = 2, batch = 1, hidden = TinySeq2Seq::kDefaultHidden, max_turns = -1;
    double lr = 1e-4, warmup = 0.3;
    std::size_t vocab_cap = Vocab::kDefaultCap;
  } sf_;

  static void add_adam_opts(CLI::App* s, double& lr, double& warmup, std::string& schedule) {
    s->add_option("--lr", lr, "Peak learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--warmup", warmup, "Warmup ratio")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    s->add_option("--schedule", schedule, "cosine|linear|constant")
        ->check(CLI::IsMember({"cosine", "linear", "constant"}))->capture_default_str();
  }

  void add_train_sft() {
    auto* s = sub("train-sft", "Supervised training of the seq2seq rewriter");
    s->add_option("--dialogues", sf_.dialogues, "Training dialogue JSONL")->required();
    s->add_option("--target", sf_.target, "Rewrite variant used as target")->capture_default_str();
    s->add_option("--out", sf_.out, "Checkpoint path (metadata goes to <out>.json)")->required();
    s->add_option("--history-out", sf_.history_out, "Per-epoch loss JSON");
    s->add_option("--epochs", sf_.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--batch", sf_.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--hidden", sf_.hidden, "Hidden size")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--vocab-cap", sf_.vocab_cap, "Vocabulary size cap")->capture_default_str();
    s->add_option("--max-turns", sf_.max_turns, "History turns fed to the model (-1 = all)")->capture_default_str();
    add_adam_opts(s, sf_.lr, sf_.warmup, sf_.schedule);
    actions_["train-sft"] = {[this] { return run_train_sft(); },
                             [this] { return std::vector<std::string>{sf_.dialogues}; },
                             [this] { return sf_.out; }};
  }

  int run_train_sft() {
    auto records = load_dialogues(sf_.dialogues);
    std::vector<TokenSeq> texts;
    for (const auto& r : records) {
      texts.push_back(serialize_rewriter_input(r, sf_.max_turns));
      texts.push_back(tokenize(r.rewrites.at(sf_.target)));
    }
    TinySeq2Seq model(Vocab::build(texts, sf_.vocab_cap), sf_.hidden, g_.seed);
    std::vector<Seq2SeqExample> ex;
    for (const auto& r : records) {
      ex.push_back({model.vocab().encode(serialize_rewriter_input(r, sf_.max_turns)),
                    model.vocab().encode_target(tokenize(r.rewrites.at(sf_.target)))});
    }
    SftConfig cfg;
    cfg.epochs = sf_.epochs;
    cfg.batch = sf_.batch;
    cfg.adam.lr = sf_.lr;
    cfg.adam.warmup_ratio = sf_.warmup;
    cfg.adam.schedule = lr_schedule_from_string(sf_.schedule);
    cfg.seed = g_.seed;
    auto hist = train_sft(model, ex, cfg, [this](const SftEpochLog& l) {
      err_ << "epoch " << l.epoch << " loss " << l.mean_loss << "\n";
      return true;
    });
    save_checkpoint(model, sf_.out);
    if (!sf_.history_out.empty()) {
      Json h = Json::array();
      for (const auto& l : hist) h.push_back({{"epoch", l.epoch}, {"mean_loss", l.mean_loss}});
      write_file_atomic(sf_.history_out, h.dump(2) + "\n");
    }
    return kOk;
  }

  // --------------------------------------------------------------------- pairs
  struct PairOpts {
    std::string dialogues, corpus, index, checkpoint, out, summary, query_embeddings, query_ids;
    int k = 5, candidates = 8, max_len = 32;
    double temperature = 1.0, threshold = 0.05, w_retrieval = 0.5, w_generation = 0.5;
  } pr_;

  void add_build_pairs() {
    auto* s = sub("build-pairs", "Sample rewrites from a checkpoint and keep best/worst by RAG feedback");
    s->add_option("--dialogues", pr_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--corpus", pr_.corpus, "Corpus JSONL")->required();
    s->add_option("--index", pr_.index, "Index directory")->required();
    s->add_option("--checkpoint", pr_.checkpoint, "SFT checkpoint")->required();
    s->add_option("--out", pr_.out, "Pairs JSONL")->required();
    s->add_option("--summary", pr_.summary, "Summary JSON (default: stdout)");
    s->add_option("--k", pr_.k, "Retrieval cutoff")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--candidates", pr_.candidates, "Samples per record")->check(CLI::Range(2, 1000))->capture_default_str();
    s->add_option("--temperature", pr_.temperature, "Sampling temperature")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--threshold", pr_.threshold, "Minimum score margin")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--w-retrieval", pr_.w_retrieval, "Weight of reciprocal rank")->capture_default_str();
    s->add_option("--w-generation", pr_.w_generation, "Weight of answer ROUGE-L")->capture_default_str();
    s->add_option("--max-len", pr_.max_len, "Max rewrite length")->check(CLI::PositiveNumber)->capture_default_str();
    add_query_embedding_opts(s, pr_.query_embeddings, pr_.query_ids);
    actions_["build-pairs"] = {[this] { return run_build_pairs(); },
                               [this] { return std::vector<std::string>{pr_.dialogues, pr_.corpus, pr_.index, pr_.checkpoint}; },
                               [this] { return pr_.out; }};
  }

  int run_build_pairs() {
    auto records = load_dialogues(pr_.dialogues);
    Corpus corpus = load_corpus(pr_.corpus);
    LoadedIndex li = load_index(pr_.index, pr_.query_embeddings, pr_.query_ids);
    TinySeq2Seq model = load_checkpoint(pr_.checkpoint);
    RagEnv env{&corpus, &li.index, &li.embedder, pr_.k};
    ExtractiveGenerator gen;
    PairConfig pc;
    pc.num_candidates = pr_.candidates;
    pc.temperature = pr_.temperature;
    pc.threshold = pr_.threshold;
    pc.retrieval_weight = pr_.w_retrieval;
    pc.generation_weight = pr_.w_generation;
    pc.max_len = pr_.max_len;
    pc.seed = g_.seed;
    PairSummary sum;
    auto pairs = build_preference_pairs(records, model, make_feedback(env, gen), pc, &sum);
    write_file_atomic(pr_.out, pairs_to_jsonl(pairs, model.vocab()));
    Json j = {{"records", sum.records}, {"pairs", sum.pairs}, {"skipped_identical", sum.skipped_identical},
              {"skipped_margin", sum.skipped_margin}};
    write_output(pr_.summary, j.dump(2) + "\n", out_);
    return kOk;
  }

  // --------------------------------------------------------------------- preference
  struct PrefOpts {
    std::string checkpoint, pairs, out, history_out, loss = "dpo", schedule = "linear";
    double beta = 0.3, lr = 1e-5, warmup = 0.1;
    int epochs = 4, batch = 2, grad_accum = 8;
  } pf_;

  void add_train_pref() {
    auto* s = sub("train-pref", "Preference training (dpo|apo|apo_zero) from an SFT checkpoint");
    s->add_option("--checkpoint", pf_.checkpoint, "SFT checkpoint")->required();
    s->add_option("--pairs", pf_.pairs, "Pairs JSONL")->required();
    s->add_option("--out", pf_.out, "Output checkpoint")->required();
    s->add_option("--history-out", pf_.history_out, "Per-epoch loss/margin JSON");
    s->add_option("--loss", pf_.loss, "dpo|apo|apo_zero")
        ->check(CLI::IsMember({"dpo", "apo", "apo_zero"}))->capture_default_str();
    s->add_option("--beta", pf_.beta, "Temperature beta")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--epochs", pf_.epochs, "Epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--batch", pf_.batch, "Pairs per micro-batch")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--grad-accum", pf_.grad_accum, "Micro-batches per update")->check(CLI::PositiveNumber)->capture_default_str();
    add_adam_opts(s, pf_.lr, pf_.warmup, pf_.schedule);
    actions_["train-pref"] = {[this] { return run_train_pref(); },
                              [this] { return std::vector<std::string>{pf_.checkpoint, pf_.pairs}; },
                              [this] { return pf_.out; }};
  }

  int run_train_pref() {
    TinySeq2Seq sft = load_checkpoint(pf_.checkpoint);
    auto pairs = pairs_from_jsonl(read_file(pf_.pairs), sft.vocab());
    PrefLossConfig cfg;
    cfg.beta = pf_.beta;
    cfg.variant = pref_variant_from_string(pf_.loss);
    cfg.epochs = pf_.epochs;
    cfg.batch = pf_.batch;
    cfg.grad_accum = pf_.grad_accum;
    cfg.adam.lr = pf_.lr;
    cfg.adam.warmup_ratio = pf_.warmup;
    cfg.adam.schedule = lr_schedule_from_string(pf_.schedule);
    cfg.seed = g_.seed;
    PrefTrainResult res = train_preference(sft, pairs, cfg);
    for (const auto& h : res.history) {
      err_ << "epoch " << h.epoch << " loss " << h.mean_loss << " margin " << h.mean_margin << "\n";
    }
    save_checkpoint(res.model, pf_.out);
    if (!pf_.history_out.empty()) {
      Json h = to_json(res.history);
      write_file_atomic(pf_.history_out, Json{{"aborted", res.aborted}, {"reason", res.abort_reason}, {"epochs", h}}.dump(2) + "\n");
    }
    if (res.aborted) {
      err_ << "error: training aborted: " << res.abort_reason << " (last good parameters saved)\n";
      return kFailure;
    }
    return kOk;
  }

  // --------------------------------------------------------------------- RAG
  struct RagOpts {
    std::string dialogues, corpus, index, rewriter = "raw", checkpoint, generator = "extractive", out, format = "json";
    std::string query_embeddings, query_ids, provider_url, model = "gpt-4o", label;
    int k = 5, workers = 1;
    bool no_timing = false;
  } rg_;

  void add_run_rag() {
    auto* s = sub("run-rag", "Rewrite, retrieve and generate; report metrics and stage timing");
    s->add_option("--dialogues", rg_.dialogues, "Dialogue JSONL")->required();
    s->add_option("--corpus", rg_.corpus, "Corpus JSONL")->required();
    s->add_option("--index", rg_.index, "Index directory")->required();
    s->add_option("--rewriter", rg_.rewriter, "raw|manual|model|variant:<name>|<variant>")->capture_default_str();
    s->add_option("--checkpoint", rg_.checkpoint, "Rewriter checkpoint for --rewriter model");
    s->add_option("--generator", rg_.generator, "extractive|provider")
        ->check(CLI::IsMember({"extractive", "provider"}))->capture_default_str();
    s->add_option("--provider-url", rg_.provider_url, "Provider base URL")->envname("SYNREWRITE_PROVIDER_URL");
    s->add_option("--model", rg_.model, "Provider model name")->envname("SYNREWRITE_MODEL")->capture_default_str();
    s->add_option("--k", rg_.k, "Documents retrieved")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--workers", rg_.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_flag("--no-timing", rg_.no_timing, "Omit timing fields");
    s->add_option("--label", rg_.label, "Method name in the report (default: rewriter name)");
    s->add_option("--out", rg_.out, "Report file (default: stdout)");
    add_query_embedding_opts(s, rg_.query_embeddings, rg_.query_ids);
    add_format(s, rg_.format);
    actions_["run-rag"] = {[this] { return run_rag_cmd(); },
                           [this] { return std::vector<std::string>{rg_.dialogues, rg_.corpus, rg_.index, rg_.checkpoint}; },
                           [this] { return rg_.out; }};
  }

  int run_rag_cmd() {
    auto records = load_dialogues(rg_.dialogues);
    Corpus corpus = load_corpus(rg_.corpus);
    LoadedIndex li = load_index(rg_.index, rg_.query_embeddings, rg_.query_ids);
    std::optional<TinySeq2Seq> holder;
    auto rw = make_rewriter(rg_.rewriter, rg_.checkpoint, holder);
    std::unique_ptr<Provider> provider;
    std::unique_ptr<Generator> gen;
    if (rg_.generator == "provider") {
      HttpProviderConfig hc = HttpProviderConfig::from_env();
      if (!rg_.provider_url.empty()) hc.endpoint = rg_.provider_url;
      hc.model = rg_.model;
      if (hc.endpoint.empty()) throw ValidationError("provider generator needs --provider-url or SYNREWRITE_PROVIDER_URL");
      provider = std::make_unique<HttpProvider>(hc);
      gen = std::make_unique<ProviderGenerator>(*provider);
    } else {
      gen = std::make_unique<ExtractiveGenerator>();
    }
    RagEnv env{&corpus, &li.index, &li.embedder, rg_.k};
    RagReport rep = run_rag(env, *rw, *gen, records, {rg_.workers});
    if (!rg_.label.empty()) rep.method = rg_.label;
    write_output(rg_.out, emit_report(rep, report_format_from_string(rg_.format), !rg_.no_timing), out_);
    return kOk;
  }

  // --------------------------------------------------------------------- report
  struct ReportOpts {
    std::vector<std::string> inputs;
    std::string out, format = "md";
    bool no_timing = false;
  } rp_;

  void add_report() {
    auto* s = sub("report", "Combine run-rag JSON reports into one table");
    s->add_option("inputs", rp_.inputs, "run-rag JSON reports")->required();
    s->add_option("--out", rp_.out, "Output file (default: stdout)");
    s->add_flag("--no-timing", rp_.no_timing, "Omit timing table");
    add_format(s, rp_.format);
    actions_["report"] = {[this] {
                            std::vector<RagReport> reps;
                            for (const auto& p : rp_.inputs) {
                              auto j = Json::parse(read_file(p));
                              if (j.is_array()) {
                                for (const auto& x : j) reps.push_back(rag_report_from_json(x));
                              } else {
                                reps.push_back(rag_report_from_json(j));
                              }
                            }
                            write_output(rp_.out, emit_report(reps, report_format_from_string(rp_.format), !rp_.no_timing), out_);
                            return kOk;
                          },
                          [this] { return rp_.inputs; },
                          [this] { return rp_.out; }};
  }

  // --------------------------------------------------------------------- selftest
  void add_selftest() {
    sub("selftest", "Run the gradient checks and oracle suites");
    actions_["selftest"] = {[this] {
                              bool ok = true;
                              for (const auto& r : checks::selftest_suite(g_.seed)) {
                                out_ << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
                                ok = ok && r.pass;
                              }
                              return ok ? kOk : kFailure;
                            },
                            [] { return std::vector<std::string>{}; },
                            [] { return std::string(); }};
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"synrewrite"};
  Global g_;
  std::map<std::string, Action> actions_;
};

inline int dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Cli cli(out, err);
  return cli.run(argc, argv);
}

}  // namespace synrewrite::cli

#endif  // SYNREWRITE_TOOLS_CLI_HPP_
