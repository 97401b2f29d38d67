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

#ifndef SYNREWRITE_RETRIEVAL_HPP_
#define SYNREWRITE_RETRIEVAL_HPP_

// Embedding providers, an exact inner-product index and MRR@k.
//
// On-disk index layout (a directory):
//   index.bin      "SRFLATIP" magic, u64 n, u64 dim, n*dim little-endian f64
//   manifest.json  {"format": 1, "dim", "doc_ids": [...], "provider": {...}}
//
// Precomputed embedding import: a binary file with u64 n, u64 dim followed
// by n*dim row-major little-endian f32, plus a JSON array of ids (one per
// row).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/textmetrics.hpp"

namespace synrewrite {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

class EmbeddingProvider {
 public:
  enum class Kind { kHashedTfidf, kPrecomputed };

  static constexpr int kDefaultDim = 512;

  // Signed feature hashing of tf-idf weights into `dim` buckets. idf uses
  // smoothed document frequencies fitted on `texts`:
  //   idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1
  static EmbeddingProvider hashed_tfidf(const std::vector<std::string>& texts,
                                        int dim = kDefaultDim) {
    if (dim < 1) throw ValidationError("embedding dim must be positive");
    EmbeddingProvider p;
    p.kind_ = Kind::kHashedTfidf;
    p.dim_ = dim;
    p.n_docs_ = texts.size();
    for (const auto& text : texts) {
      auto toks = tokenize(text);
      std::sort(toks.begin(), toks.end());
      toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
      for (auto& t : toks) ++p.df_[t];
    }
    return p;
  }

  // Vectors keyed by id (document ids, record ids, ...). Rows are
  // L2-normalized on load.
  static EmbeddingProvider precomputed(const std::filesystem::path& matrix_path,
                                       const std::filesystem::path& ids_path) {
    std::ifstream in(matrix_path, std::ios::binary);
    if (!in) throw Error("cannot open " + matrix_path.string());
    std::uint64_t n = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    if (!in || dim == 0) throw ValidationError("bad embedding header in " + matrix_path.string());
    auto ids = nlohmann::json::parse(read_file(ids_path));
    if (!ids.is_array() || ids.size() != n) {
      throw ValidationError("id manifest does not match embedding row count");
    }
    EmbeddingProvider p;
    p.kind_ = Kind::kPrecomputed;
    p.dim_ = static_cast<int>(dim);
    std::vector<float> row(dim);
    for (std::uint64_t r = 0; r < n; ++r) {
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(dim * sizeof(float)));
      if (!in) throw ValidationError("truncated embedding file " + matrix_path.string());
      Vec v(row.begin(), row.end());
      double norm = l2_norm(v);
      auto id = ids[r].get<std::string>();
      if (!(norm > 0) || !std::isfinite(norm)) {
        throw ValidationError("embedding for '" + id + "' has zero or invalid norm");
      }
      for (auto& x : v) x /= norm;
      p.vectors_[id] = std::move(v);
    }
    return p;
  }

  static void write_precomputed(const std::filesystem::path& matrix_path,
                                const std::filesystem::path& ids_path,
                                const std::vector<std::string>& ids,
                                const std::vector<std::vector<float>>& rows) {
    std::string bin;
    std::uint64_t n = rows.size(), dim = rows.empty() ? 0 : rows[0].size();
    bin.append(reinterpret_cast<const char*>(&n), sizeof n);
    bin.append(reinterpret_cast<const char*>(&dim), sizeof dim);
    for (const auto& r : rows) {
      bin.append(reinterpret_cast<const char*>(r.data()), r.size() * sizeof(float));
    }
    write_file_atomic(matrix_path, bin);
    write_file_atomic(ids_path, nlohmann::json(ids).dump());
  }

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }

  Vec embed(std::string_view text) const {
    if (kind_ != Kind::kHashedTfidf) {
      throw Error("precomputed embeddings can only be looked up by id");
    }
    auto toks = tokenize(text);
    if (toks.empty()) throw ValidationError("cannot embed text with no tokens");
    std::map<std::string, int> tf;
    for (auto& t : toks) ++tf[t];
    Vec v(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& [tok, count] : tf) {
      std::uint64_t h = fnv1a64(tok);
      std::uint64_t sign_bits = fnv1a64(tok, 0x9e3779b97f4a7c15ULL);
      auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
      double w = double(count) * idf(tok);
      v[bucket] += (sign_bits & 1) ? w : -w;
    }
    double norm = l2_norm(v);
    if (!(norm > 0)) throw ValidationError("embedding collapsed to zero for: " + std::string(text));
    for (auto& x : v) x /= norm;
    return v;
  }

  const Vec& lookup(const std::string& id) const {
    auto it = vectors_.find(id);
    if (it == vectors_.end()) throw ValidationError("no precomputed embedding for '" + id + "'");
    return it->second;
  }

  // Embeds by id for precomputed providers, by text otherwise.
  Vec embed_item(const std::string& id, std::string_view text) const {
    return kind_ == Kind::kPrecomputed ? lookup(id) : embed(text);
  }

  double idf(const std::string& token) const {
    auto it = df_.find(token);
    double df = it == df_.end() ? 0.0 : double(it->second);
    return std::log((1.0 + double(n_docs_)) / (1.0 + df)) + 1.0;
  }

  nlohmann::json to_json() const {
    if (kind_ == Kind::kPrecomputed) return {{"kind", "precomputed_file"}, {"dim", dim_}};
    return {{"kind", "hashed_tfidf"}, {"dim", dim_}, {"n_docs", n_docs_}, {"df", df_}};
  }

  static EmbeddingProvider from_json(const nlohmann::json& j) {
    if (j.at("kind") != "hashed_tfidf") {
      throw ValidationError("only hashed_tfidf providers can be restored from a manifest");
    }
    EmbeddingProvider p;
    p.kind_ = Kind::kHashedTfidf;
    p.dim_ = j.at("dim").get<int>();
    p.n_docs_ = j.at("n_docs").get<std::size_t>();
    p.df_ = j.at("df").get<std::map<std::string, std::size_t>>();
    return p;
  }

 private:
  Kind kind_ = Kind::kHashedTfidf;
  int dim_ = kDefaultDim;
  std::size_t n_docs_ = 0;
  std::map<std::string, std::size_t> df_;
  std::unordered_map<std::string, Vec> vectors_;
};

inline std::string document_text(const Document& d) {
  return d.title.empty() ? d.body : d.title + " " + d.body;
}

inline EmbeddingProvider fit_hashed_tfidf(const Corpus& corpus,
                                          int dim = EmbeddingProvider::kDefaultDim) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& d : corpus.docs()) texts.push_back(document_text(d));
  return EmbeddingProvider::hashed_tfidf(texts, dim);
}

struct ScoredDoc {
  std::string doc_id;
  double score = 0;

  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<ScoredDoc> ranked;
  int k = 0;
};

// Exact inner-product index over unit vectors (flat, full scan).
class FlatIndex {
 public:
  FlatIndex() = default;
  FlatIndex(int dim, std::vector<std::string> doc_ids, std::vector<double> rows)
      : dim_(dim), doc_ids_(std::move(doc_ids)), rows_(std::move(rows)) {
    if (rows_.size() != doc_ids_.size() * static_cast<std::size_t>(dim_)) {
      throw ValidationError("index row count does not match doc_ids");
    }
    for (std::size_t r = 0; r < doc_ids_.size(); ++r) {
      double sq = 0;
      for (int d = 0; d < dim_; ++d) sq += row(r)[d] * row(r)[d];
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw ValidationError("index row for '" + doc_ids_[r] + "' is not unit norm");
      }
    }
  }

  int dim() const { return dim_; }
  std::size_t size() const { return doc_ids_.size(); }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const double* row(std::size_t r) const {
    return rows_.data() + r * static_cast<std::size_t>(dim_);
  }
  Vec row_vector(std::size_t r) const { return Vec(row(r), row(r) + dim_); }

  // Top-k by inner product; ties go to the smaller doc_id. k larger than the
  // index returns every document.
  RetrievalResult search(const Vec& query, int k, std::string query_id = {}) const {
    if (k < 1) throw ValidationError("k must be >= 1");
    if (query.size() != static_cast<std::size_t>(dim_)) {
      throw ValidationError("query dimension " + std::to_string(query.size()) +
                            " does not match index dimension " + std::to_string(dim_));
    }
    if (std::abs(l2_norm(query) - 1.0) > 1e-6) {
      throw ValidationError("query vector is not unit norm");
    }
    std::vector<double> scores(size());
    for (std::size_t r = 0; r < size(); ++r) {
      const double* p = row(r);
      double s = 0;
      for (int d = 0; d < dim_; ++d) s += p[d] * query[static_cast<std::size_t>(d)];
      scores[r] = s;
    }
    std::vector<std::size_t> order(size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return doc_ids_[a] < doc_ids_[b];
                      });
    RetrievalResult res{std::move(query_id), {}, k};
    for (std::size_t i = 0; i < take; ++i) {
      res.ranked.push_back({doc_ids_[order[i]], scores[order[i]]});
    }
    return res;
  }

  void save(const std::filesystem::path& dir, const nlohmann::json& provider) const {
    std::filesystem::create_directories(dir);
    std::string bin = "SRFLATIP";
    std::uint64_t n = size(), dim = static_cast<std::uint64_t>(dim_);
    bin.append(reinterpret_cast<const char*>(&n), sizeof n);
    bin.append(reinterpret_cast<const char*>(&dim), sizeof dim);
    bin.append(reinterpret_cast<const char*>(rows_.data()), rows_.size() * sizeof(double));
    write_file_atomic(dir / "index.bin", bin);
    nlohmann::json manifest = {
        {"format", 1}, {"dim", dim_}, {"doc_ids", doc_ids_}, {"provider", provider}};
    write_file_atomic(dir / "manifest.json", manifest.dump(1));
  }

  // Returns the index and the provider description stored alongside it.
  static std::pair<FlatIndex, nlohmann::json> load(const std::filesystem::path& dir) {
    auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    std::string bin = read_file(dir / "index.bin");
    constexpr std::size_t kHeader = 8 + 2 * sizeof(std::uint64_t);
    if (bin.size() < kHeader || bin.compare(0, 8, "SRFLATIP") != 0) {
      throw ValidationError("not a flat index: " + (dir / "index.bin").string());
    }
    std::uint64_t n = 0, dim = 0;
    std::memcpy(&n, bin.data() + 8, sizeof n);
    std::memcpy(&dim, bin.data() + 16, sizeof dim);
    if (bin.size() != kHeader + n * dim * sizeof(double)) {
      throw ValidationError("index payload size mismatch");
    }
    std::vector<double> rows(n * dim);
    std::memcpy(rows.data(), bin.data() + kHeader, rows.size() * sizeof(double));
    auto ids = manifest.at("doc_ids").get<std::vector<std::string>>();
    return {FlatIndex(static_cast<int>(dim), std::move(ids), std::move(rows)),
            manifest.at("provider")};
  }

 private:
  int dim_ = 0;
  std::vector<std::string> doc_ids_;
  std::vector<double> rows_;
};

inline FlatIndex build_index(const Corpus& corpus, const EmbeddingProvider& provider) {
  if (corpus.empty()) throw ValidationError("cannot index an empty corpus");
  std::vector<std::string> ids;
  std::vector<double> rows;
  rows.reserve(corpus.size() * static_cast<std::size_t>(provider.dim()));
  for (const auto& d : corpus.docs()) {
    Vec v;
    try {
      v = provider.embed_item(d.doc_id, document_text(d));
    } catch (const Error& e) {
      throw Error("failed to embed document '" + d.doc_id + "': " + e.what());
    }
    ids.push_back(d.doc_id);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return FlatIndex(provider.dim(), std::move(ids), std::move(rows));
}

struct MrrResult {
  double mrr = 0;  // percentage
  std::size_t n_scored = 0;
  std::size_t n_skipped = 0;  // queries without a gold document
};

inline double reciprocal_rank(const RetrievalResult& r, const std::string& gold, int k) {
  auto limit = std::min<std::size_t>(static_cast<std::size_t>(k), r.ranked.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (r.ranked[i].doc_id == gold) return 1.0 / double(i + 1);
  }
  return 0.0;
}

inline MrrResult mrr_at_k(const std::vector<RetrievalResult>& results,
                          const std::map<std::string, std::string>& gold, int k = 5) {
  MrrResult out;
  double total = 0;
  for (const auto& r : results) {
    auto it = gold.find(r.query_id);
    if (it == gold.end()) {
      ++out.n_skipped;
      continue;
    }
    total += reciprocal_rank(r, it->second, k);
    ++out.n_scored;
  }
  if (out.n_scored) out.mrr = 100.0 * total / double(out.n_scored);
  return out;
}

}  // namespace synrewrite

#endif  // SYNREWRITE_RETRIEVAL_HPP_
