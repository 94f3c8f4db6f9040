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

// Triple stores, client partitioning and train/valid/test staging.
//
// A Graph keeps its triples sorted twice: by (head, relation, tail) for
// forward adjacency and by (tail, relation, head) for the backward walks used
// by the query sampler. Both orders are immutable after construction.

#ifndef FEDNGDB_KG_STORE_H_
#define FEDNGDB_KG_STORE_H_

#include <array>
#include <compare>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedngdb/common.h"

namespace fedngdb {

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

// Token <-> dense id mapping in first-seen order.
class Vocabulary {
 public:
  // Returns the id of `token`, assigning the next id if it is new. Throws a
  // vocabulary error for new tokens once frozen.
  int32_t Intern(std::string_view token);
  std::optional<int32_t> Find(std::string_view token) const;
  const std::string& Token(int32_t id) const;
  size_t size() const { return tokens_.size(); }

  void Freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  // One "token<TAB>id" line per entry, ordered by id.
  void Save(const std::filesystem::path& path) const;
  static Vocabulary Load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> ids_;
  bool frozen_ = false;
};

struct Vocabularies {
  Vocabulary entities;
  Vocabulary relations;

  void Freeze() {
    entities.Freeze();
    relations.Freeze();
  }
};

class Graph {
 public:
  Graph() = default;

  // Entity and relation sets are exactly those referenced by `triples`.
  static Graph FromTriples(std::vector<Triple> triples);
  // Explicit vocabulary; must cover every triple element.
  static Graph FromTriples(std::vector<Triple> triples,
                           std::vector<EntityId> entities,
                           std::vector<RelationId> relations);

  const std::vector<EntityId>& entities() const { return entities_; }
  const std::vector<RelationId>& relations() const { return relations_; }
  // Sorted by (head, relation, tail), no duplicates.
  const std::vector<Triple>& triples() const { return by_head_; }

  bool empty() const { return by_head_.empty(); }
  bool Contains(const Triple& t) const;
  bool HasEntity(EntityId e) const;
  bool HasRelation(RelationId r) const;

  // Triples (head, r, *) in tail order.
  std::span<const Triple> Outgoing(EntityId head, RelationId r) const;
  // Triples (*, *, tail) ordered by (relation, head).
  std::span<const Triple> Incoming(EntityId tail) const;

  bool operator==(const Graph& other) const {
    return by_head_ == other.by_head_ && entities_ == other.entities_ &&
           relations_ == other.relations_;
  }

 private:
  std::vector<EntityId> entities_;
  std::vector<RelationId> relations_;
  std::vector<Triple> by_head_;
  std::vector<Triple> by_tail_;
};

enum class SplitMode { kRelationPartition, kRandomTriple };

const char* SplitModeName(SplitMode mode);
SplitMode ParseSplitMode(std::string_view name);

struct SplitConfig {
  int n_clients = 1;
  SplitMode mode = SplitMode::kRelationPartition;
  std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  uint64_t seed = 0;
};

// Throws a configuration error unless ratios are non-negative and sum to 1.
void ValidateRatios(const std::array<double, 3>& ratios);

// Cumulative stage graphs of one client: train within valid within test.
struct StagedShard {
  ClientId client_id = 0;
  Graph train;
  Graph valid;
  Graph test;
};

// Id carried by the stage-wise union of more than one shard.
inline constexpr ClientId kGlobalShardId = -1;

// Parses head<TAB>relation<TAB>tail lines. With frozen vocabularies unknown
// tokens are a vocabulary error; otherwise new tokens are interned.
Graph ParseTriples(std::istream& in, Vocabularies& vocab,
                   std::string_view source_name = "<stream>");
Graph LoadTriples(const std::filesystem::path& path, Vocabularies& vocab);

// Loads train/valid/test files (.txt or .tsv) found in `dir` into one graph,
// or a single file when `path` is a regular file.
Graph LoadDataset(const std::filesystem::path& path, Vocabularies& vocab);

std::vector<Graph> SplitClients(const Graph& g, const SplitConfig& cfg);

StagedShard StageShard(const Graph& client_graph,
                       const std::array<double, 3>& ratios, uint64_t seed,
                       ClientId client_id = 0);

StagedShard MergeGlobal(std::span<const StagedShard> shards);

// Relation id -> owning client ids (sorted), over the test-stage graphs.
using OwnershipMap = std::unordered_map<RelationId, std::vector<ClientId>>;
OwnershipMap BuildOwnership(std::span<const StagedShard> shards);

// Shard directories: train.tsv, valid.tsv, test.tsv, entity_vocab.tsv and
// relation_vocab.tsv. Triples are written in (head, relation, tail) id order.
void WriteTriples(const std::filesystem::path& path,
                  std::span<const Triple> triples, const Vocabularies& vocab);
void WriteShard(const std::filesystem::path& dir, const StagedShard& shard,
                const Vocabularies& vocab);
StagedShard ReadShard(const std::filesystem::path& dir, Vocabularies& vocab,
                      ClientId client_id);

void SaveVocabularies(const std::filesystem::path& dir,
                      const Vocabularies& vocab);
Vocabularies LoadVocabularies(const std::filesystem::path& dir);

}  // namespace fedngdb

#endif  // FEDNGDB_KG_STORE_H_
