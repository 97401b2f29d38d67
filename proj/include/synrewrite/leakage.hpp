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

#ifndef SYNREWRITE_LEAKAGE_HPP_
#define SYNREWRITE_LEAKAGE_HPP_

// Entity leakage audit. For a rewrite q with entity set Q, history entity
// set H and gold document+answer entity set D:
//
//   N = |Q|,  M = |Q \ H|,  K = |{e in Q : e in D and e not in H}|
//   LR = K / M (0 when M = 0),  PureLR = K / N (0 when N = 0)
//
// Entities found in neither H nor D count toward N and M only.

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"

namespace synrewrite {

namespace detail {

inline bool is_sentence_stopword(const std::string& lower) {
  static const std::unordered_set<std::string> kStop = {
      "a",     "about", "after",  "also",  "an",    "and",   "any",
      "are",   "as",    "at",     "before", "but",  "by",    "can",
      "could", "did",   "do",     "does",  "for",   "from",  "give",
      "he",    "her",   "his",    "how",   "i",     "if",    "in",
      "is",    "it",    "its",    "list",  "my",    "name",  "no",
      "of",    "on",    "or",     "our",   "please", "she",  "should",
      "show",  "so",    "some",   "tell",  "that",  "the",   "their",
      "then",  "there", "these",  "they",  "this",  "those", "to",
      "was",   "we",    "were",   "what",  "when",  "where", "which",
      "who",   "whom",  "whose",  "why",   "will",  "with",  "would",
      "yes",   "you",   "your"};
  return kStop.count(lower) != 0;
}

inline bool is_number_token(std::string_view t) {
  if (t.empty() || !std::isdigit(static_cast<unsigned char>(t.front())) ||
      !std::isdigit(static_cast<unsigned char>(t.back()))) {
    return false;
  }
  for (char c : t) {
    if (!std::isdigit(static_cast<unsigned char>(c)) && c != '.' && c != ',') {
      return false;
    }
  }
  return true;
}

inline bool is_edge_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::ispunct(u) && c != '-' && c != '&';
}

}  // namespace detail

struct EntitySpan {
  std::string surface;  // original casing
  bool is_number = false;
};

// Builtin rule-based extractor. Returns entity mentions in text order:
// maximal runs of capitalized tokens (a sentence-initial stopword never
// starts a run) and standalone numbers, including years.
inline std::vector<EntitySpan> scan_entity_mentions(std::string_view text) {
  std::vector<EntitySpan> out;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) out.push_back({run, false});
    run.clear();
  };

  bool sentence_start = true;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view raw = text.substr(i, j - i);
    i = j;

    std::size_t lead = 0;
    while (lead < raw.size() && detail::is_edge_punct(raw[lead])) ++lead;
    std::size_t trail_start = raw.size();
    while (trail_start > lead && detail::is_edge_punct(raw[trail_start - 1])) {
      --trail_start;
    }
    std::string_view core = raw.substr(lead, trail_start - lead);
    std::string_view trail = raw.substr(trail_start);
    // Possessive suffix belongs to the entity it follows.
    if (core.size() > 2 && core.substr(core.size() - 2) == "'s") {
      core.remove_suffix(2);
    }

    if (lead > 0) flush();
    const bool ends_sentence = trail.find_first_of(".!?") != std::string_view::npos;

    if (core.empty()) {
      flush();
    } else if (detail::is_number_token(core)) {
      flush();
      out.push_back({std::string(core), true});
    } else if (std::isupper(static_cast<unsigned char>(core.front())) &&
               !(sentence_start &&
                 detail::is_sentence_stopword(to_lower_ascii(std::string(core)))) &&
               core != "I") {
      if (!run.empty()) run += ' ';
      run += core;
    } else {
      flush();
    }
    if (!trail.empty()) flush();
    sentence_start = ends_sentence;
  }
  flush();
  return out;
}

// Lowercased, deduplicated entity surfaces in order of first appearance.
inline std::vector<std::string> extract_entity_spans(std::string_view text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (auto& m : scan_entity_mentions(text)) {
    auto lower = to_lower_ascii(std::move(m.surface));
    if (seen.insert(lower).second) out.push_back(std::move(lower));
  }
  return out;
}

inline EntitySet extract_entities(std::string_view text) {
  auto spans = extract_entity_spans(text);
  return EntitySet(spans.begin(), spans.end());
}

// Chooses between the builtin rules and precomputed annotations loaded from
// an entity JSONL file.
class EntityExtractor {
 public:
  enum class Kind { kBuiltinRules, kSidecarFile };

  EntityExtractor() = default;

  static EntityExtractor sidecar(std::vector<EntityAnnotation> annotations) {
    EntityExtractor e;
    e.kind_ = Kind::kSidecarFile;
    for (auto& a : annotations) {
      e.annotations_[{a.record_id, a.field}] = std::move(a.entities);
    }
    return e;
  }

  static EntityExtractor sidecar_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
      throw ValidationError("entity file not found: " + path.string());
    }
    return sidecar(load_entities(path));
  }

  Kind kind() const { return kind_; }

  EntitySet extract(const std::string& record_id, EntityField field,
                    std::string_view text) const {
    if (kind_ == Kind::kBuiltinRules) return extract_entities(text);
    auto it = annotations_.find({record_id, field});
    if (it == annotations_.end()) {
      throw ValidationError("entity file has no '" + std::string(to_string(field)) +
                            "' annotation for record '" + record_id + "'");
    }
    return it->second;
  }

 private:
  Kind kind_ = Kind::kBuiltinRules;
  std::map<std::pair<std::string, EntityField>, EntitySet> annotations_;
};

struct LeakageStats {
  std::size_t n_query_entities = 0;
  std::size_t m_not_in_history = 0;
  std::size_t k_solely_from_docans = 0;
  double lr = 0;
  double pure_lr = 0;
};

inline LeakageStats leakage_for_record(const EntitySet& query,
                                       const EntitySet& history,
                                       const EntitySet& docans) {
  LeakageStats s;
  s.n_query_entities = query.size();
  for (const auto& e : query) {
    if (history.count(e)) continue;
    ++s.m_not_in_history;
    if (docans.count(e)) ++s.k_solely_from_docans;
  }
  if (s.m_not_in_history > 0) {
    s.lr = double(s.k_solely_from_docans) / double(s.m_not_in_history);
  }
  if (s.n_query_entities > 0) {
    s.pure_lr = double(s.k_solely_from_docans) / double(s.n_query_entities);
  }
  return s;
}

// History text: every question and answer; doc+answer text: positive
// document title and body plus the gold answer. Segments are joined with
// sentence breaks so capitalized runs never span them.
inline std::string history_text(const QueryRecord& r) {
  std::string out;
  for (const auto& t : r.history) {
    out += t.question + " . " + t.answer + " . ";
  }
  return out;
}

inline std::string docans_text(const QueryRecord& r, const Corpus& corpus) {
  std::string out;
  if (r.pos_doc_id) {
    const Document& d = resolve_positive(r, corpus);
    out += d.title + " . " + d.body + " . ";
  }
  out += r.gold_answer;
  return out;
}

struct RecordLeakage {
  std::string record_id;
  LeakageStats stats;
};

struct LeakageReport {
  std::string variant;
  double avg_lr = 0;
  double avg_pure_lr = 0;
  std::vector<RecordLeakage> records;
};

inline LeakageReport dataset_leakage(const std::vector<QueryRecord>& records,
                                     const std::string& variant_name,
                                     const EntityExtractor& extractor,
                                     const Corpus& corpus) {
  std::string missing;
  for (const auto& r : records) {
    if (!r.rewrites.contains(variant_name)) {
      missing += (missing.empty() ? "" : ", ") + r.record_id;
    }
  }
  if (!missing.empty()) {
    throw ValidationError("variant '" + variant_name +
                          "' missing on records: " + missing);
  }

  LeakageReport report;
  report.variant = variant_name;
  for (const auto& r : records) {
    auto q = extractor.extract(r.record_id, EntityField::kQueryRewrite,
                               r.rewrites.at(variant_name));
    auto h = extractor.extract(r.record_id, EntityField::kHistory, history_text(r));
    auto d = extractor.extract(r.record_id, EntityField::kDocAndAnswer,
                               docans_text(r, corpus));
    report.records.push_back({r.record_id, leakage_for_record(q, h, d)});
  }
  // Summation in record order keeps the mean bit-reproducible.
  for (const auto& rl : report.records) {
    report.avg_lr += rl.stats.lr;
    report.avg_pure_lr += rl.stats.pure_lr;
  }
  if (!report.records.empty()) {
    report.avg_lr /= double(report.records.size());
    report.avg_pure_lr /= double(report.records.size());
  }
  return report;
}

inline nlohmann::json to_json(const LeakageReport& r) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rl : r.records) {
    recs.push_back({{"record_id", rl.record_id},
                    {"N", rl.stats.n_query_entities},
                    {"M", rl.stats.m_not_in_history},
                    {"K", rl.stats.k_solely_from_docans},
                    {"lr", rl.stats.lr},
                    {"pure_lr", rl.stats.pure_lr}});
  }
  return {{"variant", r.variant},
          {"avg_lr", r.avg_lr},
          {"avg_pure_lr", r.avg_pure_lr},
          {"records", std::move(recs)}};
}

}  // namespace synrewrite

#endif  // SYNREWRITE_LEAKAGE_HPP_
