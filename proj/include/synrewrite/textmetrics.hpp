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

#ifndef SYNREWRITE_TEXTMETRICS_HPP_
#define SYNREWRITE_TEXTMETRICS_HPP_

// Tokenization and the text-overlap metrics used for rewrite and answer
// evaluation. All scores are on the 0-100 scale.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"

namespace synrewrite {

using TokenSeq = std::vector<std::string>;

namespace detail {

// Decodes one UTF-8 code point starting at s[i]; advances i. Invalid bytes
// decode as themselves.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  auto b0 = static_cast<unsigned char>(s[i]);
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3
                          : (b0 >> 3) == 0x1E ? 4 : 1;
  if (i + static_cast<std::size_t>(len) > s.size()) len = 1;
  char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F)
                                                                  : (b0 & 0x07);
  for (int k = 1; k < len; ++k) {
    auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) {
      len = 1;
      cp = b0;
      break;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// ASCII letters/digits count as alphanumeric, as does every non-ASCII code
// point outside the Latin-1 symbol block and the general/CJK punctuation
// and space blocks.
inline bool is_token_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') ||
           (cp >= 'A' && cp <= 'Z');
  }
  if (cp >= 0x80 && cp <= 0xBF) return false;
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x206F) return false;
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  if (cp == 0xFEFF || (cp >= 0xFF00 && cp <= 0xFF0F)) return false;
  return true;
}

inline char32_t fold_case(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

inline std::string ngram_key(const TokenSeq& tokens, std::size_t start,
                             std::size_t n) {
  std::string key;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) key += '\x1f';
    key += tokens[start + k];
  }
  return key;
}

inline std::unordered_map<std::string, int> ngram_counts(const TokenSeq& t,
                                                         std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (t.size() < n) return counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[ngram_key(t, i, n)];
  return counts;
}

inline int clipped_overlap(const std::unordered_map<std::string, int>& cand,
                           const std::unordered_map<std::string, int>& ref) {
  int overlap = 0;
  for (const auto& [gram, c] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

inline double f1_percent(double overlap, double cand_total, double ref_total) {
  if (cand_total <= 0 || ref_total <= 0 || overlap <= 0) return 0.0;
  double p = overlap / cand_total;
  double r = overlap / ref_total;
  return 100.0 * 2.0 * p * r / (p + r);
}

}  // namespace detail

// Lowercases and splits on runs of non-alphanumeric code points.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = detail::next_code_point(text, i);
    if (detail::is_token_char(cp)) {
      detail::append_utf8(current, detail::fold_case(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::string join_tokens(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ROUGE-N F1 with clipped n-gram counts.
inline double rouge_n(const TokenSeq& candidate, const TokenSeq& reference,
                      int n) {
  if (n < 1) throw Error("rouge_n: n must be >= 1");
  auto un = static_cast<std::size_t>(n);
  auto cand = detail::ngram_counts(candidate, un);
  auto ref = detail::ngram_counts(reference, un);
  double cand_total = candidate.size() >= un ? double(candidate.size() - un + 1) : 0;
  double ref_total = reference.size() >= un ? double(reference.size() - un + 1) : 0;
  return detail::f1_percent(detail::clipped_overlap(cand, ref), cand_total,
                            ref_total);
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// ROUGE-L F1 over the longest common subsequence.
inline double rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  return detail::f1_percent(double(lcs_length(candidate, reference)),
                            double(candidate.size()), double(reference.size()));
}

// Sentence-level BLEU-4: uniform weights, add-one smoothing of zero match
// counts for n >= 2, brevity penalty exp(1 - r/c) when c < r.
inline double bleu_4(const TokenSeq& candidate, const TokenSeq& reference) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto cand = detail::ngram_counts(candidate, n);
    auto ref = detail::ngram_counts(reference, n);
    double matches = detail::clipped_overlap(cand, ref);
    double total = candidate.size() >= n ? double(candidate.size() - n + 1) : 0;
    double p;
    if (n == 1) {
      if (matches == 0) return 0.0;
      p = matches / total;
    } else if (matches == 0) {
      p = 1.0 / (total + 1.0);
    } else {
      p = matches / total;
    }
    log_sum += 0.25 * std::log(p);
  }
  double c = double(candidate.size());
  double r = double(reference.size());
  double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum);
}

// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
// whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    cleaned += static_cast<char>(std::tolower(c));
  }
  std::istringstream in(cleaned);
  std::string word, out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

inline int exact_match(std::string_view candidate, std::string_view reference) {
  return normalize_answer(candidate) == normalize_answer(reference) ? 1 : 0;
}

struct MetricReport {
  double rouge1 = 0;
  double rouge2 = 0;
  double rougeL = 0;
  double bleu4 = 0;
  double em = 0;
  std::size_t n_samples = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline nlohmann::json to_json(const MetricReport& m) {
  return {{"rouge1", m.rouge1}, {"rouge2", m.rouge2}, {"rougeL", m.rougeL},
          {"bleu4", m.bleu4},   {"em", m.em},         {"n_samples", m.n_samples}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport m;
  m.rouge1 = j.at("rouge1").get<double>();
  m.rouge2 = j.at("rouge2").get<double>();
  m.rougeL = j.at("rougeL").get<double>();
  m.bleu4 = j.at("bleu4").get<double>();
  m.em = j.at("em").get<double>();
  m.n_samples = j.at("n_samples").get<std::size_t>();
  return m;
}

// Per-sample scores averaged over the corpus (sentence-level BLEU, then mean).
inline MetricReport score_corpus(const std::vector<std::string>& candidates,
                                 const std::vector<std::string>& references) {
  if (candidates.size() != references.size()) {
    throw Error("score_corpus: candidate/reference count mismatch");
  }
  MetricReport m;
  m.n_samples = candidates.size();
  if (candidates.empty()) return m;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto c = tokenize(candidates[i]);
    auto r = tokenize(references[i]);
    m.rouge1 += rouge_n(c, r, 1);
    m.rouge2 += rouge_n(c, r, 2);
    m.rougeL += rouge_l(c, r);
    m.bleu4 += bleu_4(c, r);
    m.em += 100.0 * exact_match(candidates[i], references[i]);
  }
  double n = double(candidates.size());
  m.rouge1 /= n;
  m.rouge2 /= n;
  m.rougeL /= n;
  m.bleu4 /= n;
  m.em /= n;
  return m;
}

inline double mean_token_length(const std::vector<std::string>& texts) {
  if (texts.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& t : texts) total += tokenize(t).size();
  return double(total) / double(texts.size());
}

// Mean pairwise cosine similarity between aligned embedding lists.
struct CosineMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "variant";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) {
      out << names[i];
      for (double v : values[i]) out << ',' << v;
      out << '\n';
    }
    return out.str();
  }
};

using NamedVectors =
    std::vector<std::pair<std::string, std::vector<std::vector<double>>>>;

inline CosineMatrix cosine_matrix(const NamedVectors& variants) {
  CosineMatrix m;
  if (variants.empty()) return m;
  const std::size_t n_samples = variants.front().second.size();
  std::size_t dim = 0;
  std::vector<std::vector<double>> norms(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto& [name, vecs] = variants[v];
    if (vecs.size() != n_samples) {
      throw ValidationError("variant '" + name + "' has " +
                            std::to_string(vecs.size()) + " samples, expected " +
                            std::to_string(n_samples));
    }
    m.names.push_back(name);
    for (std::size_t s = 0; s < n_samples; ++s) {
      if (dim == 0) dim = vecs[s].size();
      if (vecs[s].size() != dim) {
        throw ValidationError("variant '" + name + "' sample " +
                              std::to_string(s) + " has wrong dimension");
      }
      double sq = 0;
      for (double x : vecs[s]) sq += x * x;
      if (sq == 0.0) {
        throw ValidationError("variant '" + name + "' sample " +
                              std::to_string(s) + " is a zero vector");
      }
      norms[v].push_back(std::sqrt(sq));
    }
  }
  const std::size_t k = variants.size();
  m.values.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      double acc = 0;
      for (std::size_t s = 0; s < n_samples; ++s) {
        const auto& a = variants[i].second[s];
        const auto& b = variants[j].second[s];
        double dot = 0;
        for (std::size_t d = 0; d < dim; ++d) dot += a[d] * b[d];
        acc += dot / (norms[i][s] * norms[j][s]);
      }
      double mean = n_samples ? acc / double(n_samples) : 0.0;
      m.values[i][j] = m.values[j][i] = mean;
    }
  }
  return m;
}

}  // namespace synrewrite

#endif  // SYNREWRITE_TEXTMETRICS_HPP_
