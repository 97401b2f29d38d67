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

#ifndef SYNREWRITE_SYNTHESIS_HPP_
#define SYNREWRITE_SYNTHESIS_HPP_

// Synthetic rewrite generation: prompt rendering for the two annotation
// conditions, a provider abstraction with retry and bounded concurrency, a
// JSONL result cache, and a deterministic rule-based provider for offline
// work.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/leakage.hpp"

namespace synrewrite {

// unseen: the annotator sees history and query only.
// seen: the annotator also sees the positive document and gold answer.
enum class Condition { kUnseen, kSeen };

inline const char* to_string(Condition c) {
  return c == Condition::kSeen ? "seen" : "unseen";
}

inline Condition condition_from_string(const std::string& s) {
  if (s == "seen") return Condition::kSeen;
  if (s == "unseen") return Condition::kUnseen;
  throw ValidationError("unknown condition '" + s + "' (expected seen|unseen)");
}

inline const char* variant_for(Condition c) {
  return c == Condition::kSeen ? variant::kSynSeen : variant::kSynUnseen;
}

class PromptTemplate {
 public:
  PromptTemplate(Condition condition, std::string text)
      : condition_(condition), text_(std::move(text)) {
    const bool has_doc = text_.find("{pos_doc}") != std::string::npos;
    const bool has_answer = text_.find("{answer}") != std::string::npos;
    if (text_.find("{query}") == std::string::npos) {
      throw ValidationError("prompt template lacks the {query} placeholder");
    }
    if (condition_ == Condition::kUnseen && (has_doc || has_answer)) {
      throw ValidationError(
          "unseen templates must not reference {pos_doc} or {answer}");
    }
    if (condition_ == Condition::kSeen && !(has_doc && has_answer)) {
      throw ValidationError("seen templates must contain {pos_doc} and {answer}");
    }
  }

  static PromptTemplate load(Condition condition,
                             const std::filesystem::path& path) {
    return PromptTemplate(condition, read_file(path));
  }

  // Templates shipped in the source tree's templates/ directory.
  static PromptTemplate builtin(Condition condition) {
#ifdef SYNREWRITE_TEMPLATE_DIR
    std::filesystem::path dir = SYNREWRITE_TEMPLATE_DIR;
#else
    std::filesystem::path dir = "templates";
#endif
    return load(condition, dir / (condition == Condition::kSeen
                                      ? "syn_seen.txt"
                                      : "syn_unseen.txt"));
  }

  Condition condition() const { return condition_; }
  const std::string& text() const { return text_; }
  std::string hash() const { return hex64(fnv1a64(text_)); }

 private:
  Condition condition_;
  std::string text_;
};

// History block, oldest turn first so the prompt reads as a conversation.
// Empty history renders as nothing.
inline std::string render_history(const QueryRecord& record) {
  if (record.history.empty()) return "";
  std::string out = "Conversation so far:\n";
  for (auto it = record.history.rbegin(); it != record.history.rend(); ++it) {
    out += "User: " + it->question + "\n";
    out += "Assistant: " + it->answer + "\n";
  }
  out += "\n";
  return out;
}

// Placeholders are substituted in one left-to-right pass; substituted text is
// never rescanned.
inline std::string render_prompt(const QueryRecord& record,
                                 const PromptTemplate& tmpl,
                                 const Corpus& corpus) {
  std::map<std::string, std::string, std::less<>> values;
  values["history"] = render_history(record);
  values["query"] = record.query;
  if (tmpl.condition() == Condition::kSeen) {
    const Document& doc = resolve_positive(record, corpus);
    if (record.gold_answer.empty()) {
      throw ValidationError("record '" + record.record_id +
                            "' has no gold answer for the seen condition");
    }
    values["pos_doc"] = doc.title.empty() ? doc.body : doc.title + "\n" + doc.body;
    values["answer"] = record.gold_answer;
  }

  const std::string& t = tmpl.text();
  std::string out;
  std::size_t pos = 0;
  while (pos < t.size()) {
    auto open = t.find('{', pos);
    if (open == std::string::npos) {
      out.append(t, pos);
      break;
    }
    auto close = t.find('}', open);
    if (close == std::string::npos) {
      out.append(t, pos);
      break;
    }
    std::string_view name(t.data() + open + 1, close - open - 1);
    auto it = values.find(name);
    if (it == values.end()) {
      out.append(t, pos, close + 1 - pos);
    } else {
      out.append(t, pos, open - pos);
      out += it->second;
    }
    pos = close + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic stand-in annotator

namespace detail {

inline bool is_resolvable_pronoun(const std::string& lower) {
  return lower == "it" || lower == "they" || lower == "their" ||
         lower == "he" || lower == "she" || lower == "this" || lower == "that";
}

// Last capitalized phrase in `text`, or empty.
inline std::string last_capitalized_phrase(std::string_view text) {
  std::string found;
  for (auto& m : scan_entity_mentions(text)) {
    if (!m.is_number) found = std::move(m.surface);
  }
  return found;
}

}  // namespace detail

// Rule-based rewrite. Pronouns in the query are replaced by the most recent
// capitalized phrase in the history (latest answer first, then its question,
// then older turns). Under `seen`, the first gold-answer entity that the
// history does not mention is appended before any trailing punctuation.
inline std::string mock_resolve(const QueryRecord& record, Condition condition) {
  std::string antecedent;
  for (const auto& turn : record.history) {
    antecedent = detail::last_capitalized_phrase(turn.answer);
    if (antecedent.empty()) antecedent = detail::last_capitalized_phrase(turn.question);
    if (!antecedent.empty()) break;
  }

  std::string out;
  const std::string& q = record.query;
  std::size_t i = 0;
  while (i < q.size()) {
    if (std::isalpha(static_cast<unsigned char>(q[i]))) {
      std::size_t j = i;
      while (j < q.size() && std::isalpha(static_cast<unsigned char>(q[j]))) ++j;
      std::string word = q.substr(i, j - i);
      if (!antecedent.empty() && detail::is_resolvable_pronoun(to_lower_ascii(word))) {
        out += antecedent;
      } else {
        out += word;
      }
      i = j;
    } else {
      out += q[i++];
    }
  }

  if (condition == Condition::kSeen) {
    EntitySet history_entities = extract_entities(history_text(record));
    for (const auto& e : extract_entity_spans(record.gold_answer)) {
      if (history_entities.count(e)) continue;
      // Recover the original casing from the answer text.
      std::string surface = e;
      for (auto& m : scan_entity_mentions(record.gold_answer)) {
        if (to_lower_ascii(m.surface) == e) {
          surface = m.surface;
          break;
        }
      }
      std::size_t end = out.size();
      while (end > 0 && std::ispunct(static_cast<unsigned char>(out[end - 1]))) --end;
      out.insert(end, " " + surface);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Providers

// Extra information a provider may use. Remote providers only see the prompt.
struct PromptContext {
  const QueryRecord* record = nullptr;
  Condition condition = Condition::kUnseen;
};

class Provider {
 public:
  virtual ~Provider() = default;
  // Returns the model's completion for `prompt`. Throws on transport errors.
  virtual std::string complete(const std::string& prompt,
                               const PromptContext& context) = 0;
  // Stable identifier used in cache keys.
  virtual std::string id() const = 0;
};

class MockProvider : public Provider {
 public:
  std::string complete(const std::string&, const PromptContext& ctx) override {
    if (ctx.record == nullptr) throw Error("mock provider needs the record");
    return mock_resolve(*ctx.record, ctx.condition);
  }
  std::string id() const override { return "mock-rules-v1"; }
};

// Exponential backoff with multiplicative jitter: attempt k (0-based) waits
// base * factor^k * (1 + U[0, jitter)).
struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
  double jitter = 0.25;
  std::chrono::milliseconds max_delay{60000};

  std::chrono::milliseconds delay_for(int attempt, std::mt19937_64& rng) const {
    double d = double(base_delay.count()) * std::pow(factor, attempt);
    std::uniform_real_distribution<double> u(0.0, jitter);
    d *= 1.0 + (jitter > 0 ? u(rng) : 0.0);
    d = std::min(d, double(max_delay.count()));
    return std::chrono::milliseconds(static_cast<long long>(d));
  }
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

// Calls the provider until it returns a non-empty completion or retries run
// out. Leading/trailing whitespace is trimmed; only the first line is kept.
inline std::string complete_with_retry(Provider& provider,
                                       const std::string& prompt,
                                       const PromptContext& ctx,
                                       const RetryPolicy& policy,
                                       std::mt19937_64& rng,
                                       std::atomic<std::size_t>* call_counter) {
  std::string last_error;
  for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(policy.delay_for(attempt - 1, rng));
    try {
      if (call_counter) ++*call_counter;
      std::string text = provider.complete(prompt, ctx);
      auto b = text.find_first_not_of(" \t\r\n");
      if (b == std::string::npos) {
        last_error = "empty response";
        continue;
      }
      text = text.substr(b);
      text = text.substr(0, text.find('\n'));
      text.erase(text.find_last_not_of(" \t\r") + 1);
      return text;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw ProviderError(last_error);
}

// ---------------------------------------------------------------------------
// Cache

// One JSONL file per (condition, template hash, provider id); each line holds
// one record's rewrite. Files are rewritten atomically.
class SynthesisCache {
 public:
  SynthesisCache(std::filesystem::path dir, Condition condition,
                 std::string template_hash, std::string provider_id)
      : condition_(condition),
        template_hash_(std::move(template_hash)),
        provider_id_(std::move(provider_id)) {
    std::string key = std::string(to_string(condition_)) + "-" + template_hash_ +
                      "-" + hex64(fnv1a64(provider_id_));
    path_ = std::move(dir) / ("synth-" + key + ".jsonl");
    if (std::filesystem::exists(path_)) {
      for (const auto& [line, text] : split_jsonl(read_file(path_))) {
        Json j = detail::parse_line(text, line);
        entries_[j.at("record_id").get<std::string>()] =
            j.at("rewrite").get<std::string>();
      }
    }
  }

  const std::filesystem::path& path() const { return path_; }

  const std::string* find(const std::string& record_id) const {
    auto it = entries_.find(record_id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void put(const std::string& record_id, std::string rewrite) {
    entries_[record_id] = std::move(rewrite);
    dirty_ = true;
  }

  void flush() {
    if (!dirty_) return;
    std::string out;
    for (const auto& [id, rewrite] : entries_) {
      Json j = {{"record_id", id},
                {"condition", to_string(condition_)},
                {"template_hash", template_hash_},
                {"provider_id", provider_id_},
                {"rewrite", rewrite}};
      out += j.dump() + "\n";
    }
    write_file_atomic(path_, out);
    dirty_ = false;
  }

 private:
  Condition condition_;
  std::string template_hash_;
  std::string provider_id_;
  std::filesystem::path path_;
  std::map<std::string, std::string> entries_;
  bool dirty_ = false;
};

// ---------------------------------------------------------------------------
// Batch job

struct SynthesisJob {
  const std::vector<QueryRecord>* records = nullptr;
  const Corpus* corpus = nullptr;
  const PromptTemplate* prompt = nullptr;
  Provider* provider = nullptr;
  std::filesystem::path cache_dir;
  int max_concurrency = 4;
  RetryPolicy retry;
  std::uint64_t seed = 17;
  std::size_t flush_every = 64;
};

struct SynthesisFailure {
  std::string record_id;
  std::string reason;
};

struct SynthesisResult {
  std::map<std::string, std::string> rewrites;
  std::vector<SynthesisFailure> failures;
  std::size_t provider_calls = 0;
  std::size_t cache_hits = 0;
};

inline SynthesisResult synthesize(const SynthesisJob& job) {
  if (job.records == nullptr || job.corpus == nullptr || job.prompt == nullptr ||
      job.provider == nullptr) {
    throw ValidationError("synthesis job is incomplete");
  }
  if (job.max_concurrency < 1) {
    throw ValidationError("max_concurrency must be >= 1");
  }
  if (job.retry.max_retries < 0) {
    throw ValidationError("max_retries must be >= 0");
  }

  const Condition condition = job.prompt->condition();
  SynthesisCache cache(job.cache_dir, condition, job.prompt->hash(),
                       job.provider->id());
  SynthesisResult result;

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < job.records->size(); ++i) {
    const auto& rec = (*job.records)[i];
    if (const std::string* hit = cache.find(rec.record_id)) {
      result.rewrites[rec.record_id] = *hit;
      ++result.cache_hits;
    } else {
      pending.push_back(i);
    }
  }

  struct Outcome {
    std::size_t index;
    bool ok;
    std::string text;
  };
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Outcome> done;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};

  auto worker = [&](std::uint64_t worker_seed) {
    std::mt19937_64 rng(worker_seed);
    for (;;) {
      std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const auto& rec = (*job.records)[pending[slot]];
      Outcome out{pending[slot], false, {}};
      try {
        std::string prompt = render_prompt(rec, *job.prompt, *job.corpus);
        out.text = complete_with_retry(*job.provider, prompt, {&rec, condition},
                                       job.retry, rng, &calls);
        out.ok = true;
      } catch (const std::exception& e) {
        out.text = e.what();
      }
      {
        std::lock_guard lock(mu);
        done.push_back(std::move(out));
      }
      cv.notify_one();
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(job.max_concurrency), pending.size());
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back(worker, job.seed + w);
  }

  // Single collector: assembles results and persists them.
  std::size_t collected = 0;
  std::size_t since_flush = 0;
  while (collected < pending.size()) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return !done.empty(); });
    Outcome out = std::move(done.front());
    done.pop_front();
    lock.unlock();
    ++collected;
    const auto& rec = (*job.records)[out.index];
    if (out.ok) {
      cache.put(rec.record_id, out.text);
      result.rewrites[rec.record_id] = std::move(out.text);
      if (++since_flush >= job.flush_every) {
        cache.flush();
        since_flush = 0;
      }
    } else {
      result.failures.push_back({rec.record_id, std::move(out.text)});
    }
  }
  workers.clear();
  cache.flush();
  result.provider_calls = calls.load();
  std::sort(result.failures.begin(), result.failures.end(),
            [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
  return result;
}

}  // namespace synrewrite

#endif  // SYNREWRITE_SYNTHESIS_HPP_
