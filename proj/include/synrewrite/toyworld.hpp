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

#ifndef SYNREWRITE_TOYWORLD_HPP_
#define SYNREWRITE_TOYWORLD_HPP_

// Synthetic conversational retrieval world used by tests, the acceptance
// suite and the demo commands.
//
// 24 named entities of 6 types, 8 attributes each; one document per
// (entity, attribute). A record's most recent history turn introduces the
// entity, an optional older turn introduces a distractor, and the query asks
// for an attribute through a pronoun ("what is their height"). The manual
// rewrite names the entity: "what is the height of Mount Orrin".

#include <array>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "synrewrite/datamodel.hpp"

namespace synrewrite::toy {

struct Entity {
  const char* name;
  const char* type;
};

inline constexpr std::array<Entity, 24> kEntities = {{
    {"Velvet Harbor", "band"},     {"Iron Lantern", "band"},      {"Quiet Meadow", "band"},
    {"Neon Orchard", "band"},      {"Port Alder", "city"},        {"Kestrel Bay", "city"},
    {"New Linden", "city"},        {"Marlow Springs", "city"},    {"Silver Fen", "river"},
    {"Oster Reach", "river"},      {"Calder Run", "river"},       {"Blue Tamsin", "river"},
    {"Harlow Dynamics", "company"}, {"Juniper Labs", "company"},  {"Fenwick Group", "company"},
    {"Garnet Systems", "company"}, {"Neighborhood Watch", "novel"}, {"Paper Tigers", "novel"},
    {"Broken Compass", "novel"},   {"Glass Almanac", "novel"},    {"Mount Orrin", "mountain"},
    {"Tor Avelle", "mountain"},    {"Ben Corrack", "mountain"},   {"Skarn Peak", "mountain"},
}};

inline constexpr std::array<const char*, 8> kAttributes = {
    "founder", "height", "age", "owner", "length", "rating", "budget", "origin"};

inline constexpr std::array<const char*, 4> kQueryForms = {
    "what is the {attr} of it", "what is their {attr}", "tell me the {attr} of that",
    "and what about the {attr} of it"};

inline constexpr std::array<const char*, 10> kPeople = {
    "Maya Ortiz", "Tomas Reyes", "Ada Brennan", "Lars Okafor", "Ines Walsh",
    "Ravi Moreau", "Elena Quist", "Omar Lindqvist", "Hana Duval", "Pavel Sato"};

struct Options {
  std::size_t n_records = 300;
  std::uint64_t seed = 17;
  double p_distractor_turn = 0.5;  // add an older turn about another entity
  double p_year = 0.2;             // query mentions the document's year
  // Annotator noise: for the first `sloppy_attributes` attributes, the
  // manual rewrite names the entity type instead of the entity with
  // probability `sloppy_rate`.
  std::size_t sloppy_attributes = 0;
  double sloppy_rate = 0.0;
  std::string id_prefix = "toy";
};

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

inline std::string doc_id(std::size_t entity, std::size_t attr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "doc-%02zu-%zu", entity, attr);
  return buf;
}

// Deterministic per-document facts.
inline std::string attribute_value(std::size_t entity, std::size_t attr) {
  std::uint64_t h = fnv1a64(doc_id(entity, attr));
  if (attr == 0 || attr == 3) return kPeople[h % kPeople.size()];
  return std::to_string(100 + h % 9000);
}

inline int document_year(std::size_t entity, std::size_t attr) {
  return 1990 + static_cast<int>(fnv1a64(doc_id(entity, attr), 7) % 34);
}

inline Corpus make_corpus() {
  std::vector<Document> docs;
  for (std::size_t e = 0; e < kEntities.size(); ++e) {
    for (std::size_t a = 0; a < kAttributes.size(); ++a) {
      std::string name = kEntities[e].name;
      std::string attr = kAttributes[a];
      docs.push_back({doc_id(e, a), name + " " + attr,
                      "The " + attr + " of " + name + " is " + attribute_value(e, a) + ". " +
                          name + " is a " + kEntities[e].type + ". This figure dates from " +
                          std::to_string(document_year(e, a)) + "."});
    }
  }
  return Corpus(std::move(docs));
}

inline DialogueTurn intro_turn(std::size_t entity) {
  std::string name = kEntities[entity].name;
  return {"tell me about " + name, name + " is a " + kEntities[entity].type + "."};
}

inline std::vector<QueryRecord> make_records(const Options& opt) {
  std::mt19937_64 rng(opt.seed);
  auto uniform = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  std::bernoulli_distribution distractor(opt.p_distractor_turn), year(opt.p_year),
      sloppy(opt.sloppy_rate);
  std::vector<QueryRecord> out;
  for (std::size_t i = 0; i < opt.n_records; ++i) {
    const std::size_t e = uniform(kEntities.size());
    const std::size_t a = uniform(kAttributes.size());
    const std::string attr = kAttributes[a];
    const std::string name = kEntities[e].name;

    QueryRecord r;
    char id[48];
    std::snprintf(id, sizeof id, "%s-%05zu", opt.id_prefix.c_str(), i);
    r.record_id = id;
    r.history.push_back(intro_turn(e));
    if (distractor(rng)) {
      std::size_t other = uniform(kEntities.size() - 1);
      if (other >= e) ++other;
      r.history.push_back(intro_turn(other));
    }
    r.turn_index = static_cast<int>(r.history.size());

    std::string q = replace_all(kQueryForms[uniform(kQueryForms.size())], "{attr}", attr);
    std::string suffix;
    if (year(rng)) suffix = " in " + std::to_string(document_year(e, a));
    r.query = q + suffix;

    std::string rewrite = "what is the " + attr + " of " + name + suffix;
    if (a < opt.sloppy_attributes && sloppy(rng)) {
      rewrite = "what is the " + attr + " of the " + std::string(kEntities[e].type) + suffix;
    }
    r.manual_rewrite = rewrite;
    r.pos_doc_id = doc_id(e, a);
    r.gold_answer = attribute_value(e, a);
    r.rewrites = RewriteSet(r.query);
    r.rewrites.set(variant::kManual, rewrite);
    out.push_back(std::move(r));
  }
  return out;
}

// The correct rewrite regardless of annotator noise.
inline std::string canonical_rewrite(const QueryRecord& r, const Corpus& corpus) {
  const Document& d = resolve_positive(r, corpus);
  // Title is "<entity> <attribute>".
  auto space = d.title.rfind(' ');
  std::string entity = d.title.substr(0, space);
  std::string attr = d.title.substr(space + 1);
  std::string suffix;
  if (auto pos = r.query.find(" in "); pos != std::string::npos) suffix = r.query.substr(pos);
  return "what is the " + attr + " of " + entity + suffix;
}

}  // namespace synrewrite::toy

#endif  // SYNREWRITE_TOYWORLD_HPP_
