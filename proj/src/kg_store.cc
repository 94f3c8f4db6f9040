/*
 * Copyright 2026 The fedngdb Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedngdb/kg_store.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>

namespace fedngdb {

namespace fs = std::filesystem;

int32_t Vocabulary::Intern(std::string_view token) {
  auto it = ids_.find(std::string(token));
  if (it != ids_.end()) return it->second;
  if (frozen_) {
    Fail(ErrorKind::kVocabulary,
         "unknown token '" + std::string(token) + "' under a frozen vocabulary");
  }
  const auto id = static_cast<int32_t>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<int32_t> Vocabulary::Find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::Token(int32_t id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
    Fail(ErrorKind::kVocabulary, "id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

void Vocabulary::Save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << i << '\n';
  }
}

Vocabulary Vocabulary::Load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot read " + path.string());
  Vocabulary vocab;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      Fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": expected token<TAB>id");
    }
    const std::string token = line.substr(0, tab);
    int64_t id = -1;
    try {
      id = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      Fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": bad id");
    }
    if (id != static_cast<int64_t>(vocab.size()) || vocab.Find(token)) {
      Fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": ids must be dense and tokens unique");
    }
    vocab.Intern(token);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Graph

namespace {

bool TailOrder(const Triple& a, const Triple& b) {
  return std::tie(a.tail, a.relation, a.head) <
         std::tie(b.tail, b.relation, b.head);
}

template <typename T>
void SortUnique(std::vector<T>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

Graph Graph::FromTriples(std::vector<Triple> triples) {
  std::vector<EntityId> entities;
  std::vector<RelationId> relations;
  entities.reserve(2 * triples.size());
  for (const Triple& t : triples) {
    entities.push_back(t.head);
    entities.push_back(t.tail);
    relations.push_back(t.relation);
  }
  return FromTriples(std::move(triples), std::move(entities),
                     std::move(relations));
}

Graph Graph::FromTriples(std::vector<Triple> triples,
                         std::vector<EntityId> entities,
                         std::vector<RelationId> relations) {
  Graph g;
  SortUnique(triples);
  SortUnique(entities);
  SortUnique(relations);
  for (const Triple& t : triples) {
    if (!std::binary_search(entities.begin(), entities.end(), t.head) ||
        !std::binary_search(entities.begin(), entities.end(), t.tail) ||
        !std::binary_search(relations.begin(), relations.end(), t.relation)) {
      Fail(ErrorKind::kConfig, "triple references an id outside the graph's "
                               "entity/relation sets");
    }
  }
  g.entities_ = std::move(entities);
  g.relations_ = std::move(relations);
  g.by_tail_ = triples;
  std::sort(g.by_tail_.begin(), g.by_tail_.end(), TailOrder);
  g.by_head_ = std::move(triples);
  return g;
}

bool Graph::Contains(const Triple& t) const {
  return std::binary_search(by_head_.begin(), by_head_.end(), t);
}

bool Graph::HasEntity(EntityId e) const {
  return std::binary_search(entities_.begin(), entities_.end(), e);
}

bool Graph::HasRelation(RelationId r) const {
  return std::binary_search(relations_.begin(), relations_.end(), r);
}

std::span<const Triple> Graph::Outgoing(EntityId head, RelationId r) const {
  auto lo = std::lower_bound(by_head_.begin(), by_head_.end(),
                             Triple{head, r, INT32_MIN});
  auto hi = std::upper_bound(lo, by_head_.end(), Triple{head, r, INT32_MAX});
  return {lo, hi};
}

std::span<const Triple> Graph::Incoming(EntityId tail) const {
  auto lo = std::lower_bound(by_tail_.begin(), by_tail_.end(),
                             Triple{INT32_MIN, INT32_MIN, tail}, TailOrder);
  auto hi = std::upper_bound(lo, by_tail_.end(),
                             Triple{INT32_MAX, INT32_MAX, tail}, TailOrder);
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Loading

const char* SplitModeName(SplitMode mode) {
  return mode == SplitMode::kRelationPartition ? "relation-partition"
                                               : "random-triple";
}

SplitMode ParseSplitMode(std::string_view name) {
  if (name == "relation-partition" || name == "relation") {
    return SplitMode::kRelationPartition;
  }
  if (name == "random-triple" || name == "overlap") {
    return SplitMode::kRandomTriple;
  }
  Fail(ErrorKind::kConfig, "unknown split mode '" + std::string(name) + "'");
}

Graph ParseTriples(std::istream& in, Vocabularies& vocab,
                   std::string_view source_name) {
  std::vector<Triple> triples;
  std::string line;
  int64_t line_no = 0;
  std::string_view fields[3];
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string_view rest(line);
    int n = 0;
    bool too_many = false;
    while (true) {
      const auto tab = rest.find('\t');
      if (n == 3) {
        too_many = true;
        break;
      }
      fields[n++] = rest.substr(0, tab);
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (too_many || n != 3) {
      Fail(ErrorKind::kParse, std::string(source_name) + ":" +
                                  std::to_string(line_no) +
                                  ": expected 3 tab-separated fields");
    }
    // Intern in head, relation, tail order so first-seen ids are stable.
    const EntityId h = vocab.entities.Intern(fields[0]);
    const RelationId r = vocab.relations.Intern(fields[1]);
    const EntityId t = vocab.entities.Intern(fields[2]);
    triples.push_back({h, r, t});
  }
  return Graph::FromTriples(std::move(triples));
}

Graph LoadTriples(const fs::path& path, Vocabularies& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot read " + path.string());
  return ParseTriples(in, vocab, path.string());
}

Graph LoadDataset(const fs::path& path, Vocabularies& vocab) {
  if (!fs::is_directory(path)) return LoadTriples(path, vocab);
  std::vector<Triple> all;
  bool found = false;
  for (const char* stem : {"train", "valid", "test"}) {
    for (const char* ext : {".txt", ".tsv"}) {
      const fs::path file = path / (std::string(stem) + ext);
      if (!fs::exists(file)) continue;
      found = true;
      const Graph part = LoadTriples(file, vocab);
      all.insert(all.end(), part.triples().begin(), part.triples().end());
    }
  }
  if (!found) {
    Fail(ErrorKind::kIo, "no train/valid/test triple files in " + path.string());
  }
  return Graph::FromTriples(std::move(all));
}

// ---------------------------------------------------------------------------
// Splitting and staging

void ValidateRatios(const std::array<double, 3>& ratios) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      Fail(ErrorKind::kConfig, "split ratios must be non-negative");
    }
    sum += r;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    Fail(ErrorKind::kConfig, "split ratios must sum to 1");
  }
}

std::vector<Graph> SplitClients(const Graph& g, const SplitConfig& cfg) {
  if (cfg.n_clients < 1) Fail(ErrorKind::kConfig, "n_clients must be >= 1");
  if (g.empty()) Fail(ErrorKind::kConfig, "cannot split an empty graph");
  ValidateRatios(cfg.ratios);
  if (cfg.n_clients == 1) return {g};

  const auto n = static_cast<size_t>(cfg.n_clients);
  std::vector<std::vector<Triple>> parts(n);
  if (cfg.mode == SplitMode::kRelationPartition) {
    if (n > g.relations().size()) {
      Fail(ErrorKind::kConfig,
           "n_clients (" + std::to_string(n) + ") exceeds the number of "
           "relations (" + std::to_string(g.relations().size()) + ")");
    }
    std::vector<RelationId> order = g.relations();
    Rng rng(DeriveSeed(cfg.seed, "split-relations"));
    rng.Shuffle(order);
    std::unordered_map<RelationId, size_t> owner;
    for (size_t i = 0; i < order.size(); ++i) owner[order[i]] = i % n;
    for (const Triple& t : g.triples()) parts[owner.at(t.relation)].push_back(t);
  } else {
    std::vector<Triple> order = g.triples();
    Rng rng(DeriveSeed(cfg.seed, "split-triples"));
    rng.Shuffle(order);
    for (size_t i = 0; i < order.size(); ++i) parts[i % n].push_back(order[i]);
  }
  std::vector<Graph> out;
  out.reserve(n);
  for (auto& p : parts) out.push_back(Graph::FromTriples(std::move(p)));
  return out;
}

StagedShard StageShard(const Graph& client_graph,
                       const std::array<double, 3>& ratios, uint64_t seed,
                       ClientId client_id) {
  ValidateRatios(ratios);
  std::vector<Triple> order = client_graph.triples();
  Rng rng(seed);
  rng.Shuffle(order);
  const auto n = static_cast<double>(order.size());
  const auto train_end = static_cast<size_t>(
      std::min<long long>(std::llround(ratios[0] * n), order.size()));
  const auto valid_end = std::max(
      train_end, static_cast<size_t>(std::min<long long>(
                     std::llround((ratios[0] + ratios[1]) * n), order.size())));

  const auto& ents = client_graph.entities();
  const auto& rels = client_graph.relations();
  StagedShard shard;
  shard.client_id = client_id;
  shard.train = Graph::FromTriples(
      std::vector<Triple>(order.begin(), order.begin() + train_end), ents, rels);
  shard.valid = Graph::FromTriples(
      std::vector<Triple>(order.begin(), order.begin() + valid_end), ents, rels);
  shard.test = client_graph;
  return shard;
}

StagedShard MergeGlobal(std::span<const StagedShard> shards) {
  if (shards.size() == 1) return shards.front();
  std::vector<EntityId> ents;
  std::vector<RelationId> rels;
  std::vector<Triple> train, valid, test;
  for (const StagedShard& s : shards) {
    ents.insert(ents.end(), s.test.entities().begin(), s.test.entities().end());
    rels.insert(rels.end(), s.test.relations().begin(),
                s.test.relations().end());
    train.insert(train.end(), s.train.triples().begin(), s.train.triples().end());
    valid.insert(valid.end(), s.valid.triples().begin(), s.valid.triples().end());
    test.insert(test.end(), s.test.triples().begin(), s.test.triples().end());
  }
  SortUnique(ents);
  SortUnique(rels);
  StagedShard merged;
  merged.client_id = kGlobalShardId;
  merged.train = Graph::FromTriples(std::move(train), ents, rels);
  merged.valid = Graph::FromTriples(std::move(valid), ents, rels);
  merged.test = Graph::FromTriples(std::move(test), std::move(ents),
                                   std::move(rels));
  return merged;
}

OwnershipMap BuildOwnership(std::span<const StagedShard> shards) {
  OwnershipMap owners;
  for (const StagedShard& s : shards) {
    for (RelationId r : s.test.relations()) owners[r].push_back(s.client_id);
  }
  for (auto& [r, clients] : owners) SortUnique(clients);
  return owners;
}

// ---------------------------------------------------------------------------
// Serialization

void WriteTriples(const fs::path& path, std::span<const Triple> triples,
                  const Vocabularies& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const Triple& t : triples) {
    out << vocab.entities.Token(t.head) << '\t'
        << vocab.relations.Token(t.relation) << '\t'
        << vocab.entities.Token(t.tail) << '\n';
  }
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

void SaveVocabularies(const fs::path& dir, const Vocabularies& vocab) {
  vocab.entities.Save(dir / "entity_vocab.tsv");
  vocab.relations.Save(dir / "relation_vocab.tsv");
}

Vocabularies LoadVocabularies(const fs::path& dir) {
  Vocabularies vocab;
  vocab.entities = Vocabulary::Load(dir / "entity_vocab.tsv");
  vocab.relations = Vocabulary::Load(dir / "relation_vocab.tsv");
  vocab.Freeze();
  return vocab;
}

void WriteShard(const fs::path& dir, const StagedShard& shard,
                const Vocabularies& vocab) {
  fs::create_directories(dir);
  WriteTriples(dir / "train.tsv", shard.train.triples(), vocab);
  WriteTriples(dir / "valid.tsv", shard.valid.triples(), vocab);
  WriteTriples(dir / "test.tsv", shard.test.triples(), vocab);
  SaveVocabularies(dir, vocab);
}

StagedShard ReadShard(const fs::path& dir, Vocabularies& vocab,
                      ClientId client_id) {
  StagedShard shard;
  shard.client_id = client_id;
  shard.test = LoadTriples(dir / "test.tsv", vocab);
  const Graph train = LoadTriples(dir / "train.tsv", vocab);
  const Graph valid = LoadTriples(dir / "valid.tsv", vocab);
  const auto& ents = shard.test.entities();
  const auto& rels = shard.test.relations();
  shard.train = Graph::FromTriples(train.triples(), ents, rels);
  shard.valid = Graph::FromTriples(valid.triples(), ents, rels);
  return shard;
}

}  // namespace fedngdb
