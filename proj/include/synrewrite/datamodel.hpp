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

#ifndef SYNREWRITE_DATAMODEL_HPP_
#define SYNREWRITE_DATAMODEL_HPP_

// Records, documents and entity annotations, plus their JSONL codecs.
//
// Dialogue history is stored most-recent-first: history[0] is turn n-1 and
// history.back() is turn 0. Every serializer in this library keeps that
// order.

#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"

namespace synrewrite {

using Json = nlohmann::json;

struct DialogueTurn {
  std::string question;
  std::string answer;

  friend bool operator==(const DialogueTurn&, const DialogueTurn&) = default;
};

namespace variant {
inline constexpr const char* kRaw = "raw";
inline constexpr const char* kManual = "manual";
inline constexpr const char* kSynUnseen = "syn_unseen";
inline constexpr const char* kSynSeen = "syn_seen";
inline constexpr const char* kModel = "model";
}  // namespace variant

// Named rewrite variants of one query. The `raw` entry is pinned to the
// query text and cannot be removed or changed.
class RewriteSet {
 public:
  RewriteSet() = default;
  explicit RewriteSet(std::string query) {
    entries_[variant::kRaw] = std::move(query);
  }

  void set(const std::string& name, std::string text) {
    if (name.empty()) throw ValidationError("rewrite variant name is empty");
    if (name == variant::kRaw) {
      if (text != entries_[variant::kRaw]) {
        throw ValidationError("the raw variant must equal the query");
      }
      return;
    }
    entries_[name] = std::move(text);
  }

  void erase(const std::string& name) {
    if (name == variant::kRaw) {
      throw ValidationError("the raw variant cannot be removed");
    }
    entries_.erase(name);
  }

  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }

  const std::string& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw ValidationError("missing rewrite variant '" + name + "'");
    }
    return it->second;
  }

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

  friend bool operator==(const RewriteSet&, const RewriteSet&) = default;

 private:
  std::map<std::string, std::string> entries_;
};

struct QueryRecord {
  std::string record_id;
  int turn_index = 0;
  std::vector<DialogueTurn> history;  // most recent first
  std::string query;
  std::optional<std::string> manual_rewrite;
  std::optional<std::string> pos_doc_id;
  std::string gold_answer;
  RewriteSet rewrites;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string body;

  friend bool operator==(const Document&, const Document&) = default;
};

enum class EntityField { kQueryRewrite, kHistory, kDocAndAnswer };

inline const char* to_string(EntityField f) {
  switch (f) {
    case EntityField::kQueryRewrite:
      return "query_rewrite";
    case EntityField::kHistory:
      return "history";
    case EntityField::kDocAndAnswer:
      return "doc_and_answer";
  }
  return "?";
}

inline EntityField entity_field_from_string(const std::string& s) {
  if (s == "query_rewrite") return EntityField::kQueryRewrite;
  if (s == "history") return EntityField::kHistory;
  if (s == "doc_and_answer") return EntityField::kDocAndAnswer;
  throw ValidationError("unknown entity field '" + s + "'");
}

using EntitySet = std::set<std::string>;

struct EntityAnnotation {
  std::string record_id;
  EntityField field = EntityField::kQueryRewrite;
  EntitySet entities;

  friend bool operator==(const EntityAnnotation&,
                         const EntityAnnotation&) = default;
};

inline std::string to_lower_ascii(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Immutable document store with id lookup.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (!by_id_.emplace(docs_[i].doc_id, i).second) {
        throw ValidationError("duplicate doc_id '" + docs_[i].doc_id + "'");
      }
    }
  }

  const std::vector<Document>& docs() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  const Document* find(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
  }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

inline const Document& resolve_positive(const QueryRecord& record,
                                        const Corpus& corpus) {
  if (!record.pos_doc_id) {
    throw DanglingReferenceError("record '" + record.record_id +
                                 "' has no pos_doc_id");
  }
  const Document* doc = corpus.find(*record.pos_doc_id);
  if (doc == nullptr) {
    throw DanglingReferenceError("record '" + record.record_id +
                                 "' references unknown document '" +
                                 *record.pos_doc_id + "'");
  }
  return *doc;
}

// Record ids whose pos_doc_id is set but does not resolve.
inline std::vector<std::string> dangling_references(
    const std::vector<QueryRecord>& records, const Corpus& corpus) {
  std::vector<std::string> bad;
  for (const auto& r : records) {
    if (r.pos_doc_id && corpus.find(*r.pos_doc_id) == nullptr) {
      bad.push_back(r.record_id);
    }
  }
  return bad;
}

// ---------------------------------------------------------------------------
// JSON codecs

namespace detail {

inline std::string where(std::size_t line) {
  return "line " + std::to_string(line) + ": ";
}

inline const Json& require(const Json& obj, const char* field,
                           std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) {
    throw ValidationError(where(line) + "missing required field '" +
                          std::string(field) + "'");
  }
  return *it;
}

inline std::string require_string(const Json& obj, const char* field,
                                  std::size_t line, bool allow_empty = false) {
  const Json& v = require(obj, field, line);
  if (!v.is_string()) {
    throw ValidationError(where(line) + "field '" + std::string(field) +
                          "' must be a string");
  }
  auto s = v.get<std::string>();
  if (!allow_empty && s.empty()) {
    throw ValidationError(where(line) + "field '" + std::string(field) +
                          "' must be non-empty");
  }
  return s;
}

inline std::optional<std::string> optional_string(const Json& obj,
                                                  const char* field,
                                                  std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw ValidationError(where(line) + "field '" + std::string(field) +
                          "' must be a string");
  }
  return it->get<std::string>();
}

inline Json parse_line(const std::string& text, std::size_t line) {
  try {
    Json j = Json::parse(text);
    if (!j.is_object()) {
      throw ValidationError(where(line) + "expected a JSON object");
    }
    return j;
  } catch (const Json::parse_error& e) {
    throw ValidationError(where(line) + "malformed JSON: " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const QueryRecord& r) {
  Json history = Json::array();
  for (const auto& t : r.history) {
    history.push_back({{"q", t.question}, {"a", t.answer}});
  }
  Json rewrites = Json::object();
  for (const auto& [name, text] : r.rewrites.entries()) rewrites[name] = text;
  Json j = {{"record_id", r.record_id},
            {"turn_index", r.turn_index},
            {"history", std::move(history)},
            {"query", r.query},
            {"gold_answer", r.gold_answer},
            {"rewrites", std::move(rewrites)}};
  j["manual_rewrite"] = r.manual_rewrite ? Json(*r.manual_rewrite) : Json();
  j["pos_doc_id"] = r.pos_doc_id ? Json(*r.pos_doc_id) : Json();
  return j;
}

inline QueryRecord query_record_from_json(const Json& j, std::size_t line = 0) {
  using namespace detail;
  QueryRecord r;
  r.record_id = require_string(j, "record_id", line);
  const Json& ti = require(j, "turn_index", line);
  if (!ti.is_number_integer() || ti.get<long long>() < 0) {
    throw ValidationError(where(line) +
                          "field 'turn_index' must be a non-negative integer");
  }
  r.turn_index = ti.get<int>();
  r.query = require_string(j, "query", line);
  r.manual_rewrite = optional_string(j, "manual_rewrite", line);
  r.pos_doc_id = optional_string(j, "pos_doc_id", line);
  r.gold_answer = optional_string(j, "gold_answer", line).value_or("");

  if (auto it = j.find("history"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) {
      throw ValidationError(where(line) + "field 'history' must be an array");
    }
    for (const auto& turn : *it) {
      if (!turn.is_object()) {
        throw ValidationError(where(line) +
                              "field 'history' entries must be objects");
      }
      r.history.push_back({require_string(turn, "q", line),
                           require_string(turn, "a", line)});
    }
  }
  if (static_cast<int>(r.history.size()) != r.turn_index) {
    throw ValidationError(where(line) + "field 'history' has " +
                          std::to_string(r.history.size()) +
                          " turns but turn_index is " +
                          std::to_string(r.turn_index));
  }

  r.rewrites = RewriteSet(r.query);
  if (auto it = j.find("rewrites"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) {
      throw ValidationError(where(line) + "field 'rewrites' must be an object");
    }
    for (const auto& [name, text] : it->items()) {
      if (!text.is_string()) {
        throw ValidationError(where(line) + "field 'rewrites." + name +
                              "' must be a string");
      }
      try {
        r.rewrites.set(name, text.get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError(where(line) + "field 'rewrites." + name +
                              "': " + e.what());
      }
    }
  }
  if (r.manual_rewrite && !r.rewrites.contains(variant::kManual)) {
    r.rewrites.set(variant::kManual, *r.manual_rewrite);
  }
  return r;
}

inline Json to_json(const Document& d) {
  return {{"doc_id", d.doc_id}, {"title", d.title}, {"body", d.body}};
}

inline Document document_from_json(const Json& j, std::size_t line = 0) {
  using namespace detail;
  return {require_string(j, "doc_id", line),
          optional_string(j, "title", line).value_or(""),
          require_string(j, "body", line)};
}

inline Json to_json(const EntityAnnotation& a) {
  Json ents = Json::array();
  for (const auto& e : a.entities) ents.push_back(e);
  return {{"record_id", a.record_id},
          {"field", to_string(a.field)},
          {"entities", std::move(ents)}};
}

inline EntityAnnotation entity_annotation_from_json(const Json& j,
                                                    std::size_t line = 0) {
  using namespace detail;
  EntityAnnotation a;
  a.record_id = require_string(j, "record_id", line);
  try {
    a.field = entity_field_from_string(require_string(j, "field", line));
  } catch (const ValidationError& e) {
    throw ValidationError(where(line) + "field 'field': " + e.what());
  }
  const Json& ents = require(j, "entities", line);
  if (!ents.is_array()) {
    throw ValidationError(where(line) + "field 'entities' must be an array");
  }
  for (const auto& e : ents) {
    // Entities are plain strings, or {"text": ..., "label": ...} objects as
    // written by the NER exporter.
    std::string text;
    if (e.is_string()) {
      text = e.get<std::string>();
    } else if (e.is_object() && e.contains("text") && e["text"].is_string()) {
      text = e["text"].get<std::string>();
    } else {
      throw ValidationError(where(line) +
                            "field 'entities' items must be strings");
    }
    if (text.empty()) {
      throw ValidationError(where(line) +
                            "field 'entities' contains an empty string");
    }
    a.entities.insert(to_lower_ascii(std::move(text)));
  }
  return a;
}

// ---------------------------------------------------------------------------
// JSONL loading

inline std::vector<QueryRecord> parse_dialogues(std::string_view text) {
  std::vector<QueryRecord> out;
  std::unordered_set<std::string> seen;
  for (const auto& [line, content] : split_jsonl(text)) {
    auto rec = query_record_from_json(detail::parse_line(content, line), line);
    if (!seen.insert(rec.record_id).second) {
      throw ValidationError(detail::where(line) + "duplicate record_id '" +
                            rec.record_id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<Document> parse_corpus(std::string_view text) {
  std::vector<Document> out;
  std::unordered_set<std::string> seen;
  for (const auto& [line, content] : split_jsonl(text)) {
    auto doc = document_from_json(detail::parse_line(content, line), line);
    if (!seen.insert(doc.doc_id).second) {
      throw ValidationError(detail::where(line) + "duplicate doc_id '" +
                            doc.doc_id + "'");
    }
    out.push_back(std::move(doc));
  }
  return out;
}

// A leading {"header": {...}} line (written by the NER exporter) is skipped.
inline std::vector<EntityAnnotation> parse_entities(std::string_view text) {
  std::vector<EntityAnnotation> out;
  std::set<std::pair<std::string, EntityField>> seen;
  bool first = true;
  for (const auto& [line, content] : split_jsonl(text)) {
    Json j = detail::parse_line(content, line);
    if (first && j.contains("header") && !j.contains("record_id")) {
      first = false;
      continue;
    }
    first = false;
    auto ann = entity_annotation_from_json(j, line);
    if (!seen.emplace(ann.record_id, ann.field).second) {
      throw ValidationError(detail::where(line) + "duplicate annotation for '" +
                            ann.record_id + "' field '" + to_string(ann.field) +
                            "'");
    }
    out.push_back(std::move(ann));
  }
  return out;
}

inline std::vector<QueryRecord> load_dialogues(const std::filesystem::path& p) {
  return parse_dialogues(read_file(p));
}

inline Corpus load_corpus(const std::filesystem::path& p) {
  return Corpus(parse_corpus(read_file(p)));
}

inline std::vector<EntityAnnotation> load_entities(
    const std::filesystem::path& p) {
  return parse_entities(read_file(p));
}

// Canonical serialization: keys sorted, one compact object per line.
template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_json(item).dump();
    out += '\n';
  }
  return out;
}

template <typename T>
void save_jsonl(const std::filesystem::path& p, const std::vector<T>& items) {
  write_file_atomic(p, to_jsonl(items));
}

}  // namespace synrewrite

#endif  // SYNREWRITE_DATAMODEL_HPP_
