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

// Shared generators and oracles for the test binaries.

#ifndef FEDNGDB_TESTS_TEST_SUPPORT_H_
#define FEDNGDB_TESTS_TEST_SUPPORT_H_

#include <filesystem>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "fedngdb/federation.h"
#include "fedngdb/kg_store.h"
#include "fedngdb/pipeline.h"
#include "fedngdb/query.h"
#include "fedngdb/query_sampler.h"
#include "fedngdb/synth.h"

namespace fedngdb::testing {

// Random multigraph-free triple set over ids [0, n_entities) x [0, n_relations).
inline std::vector<Triple> RandomTriples(Rng& rng, int n_entities, int n_relations,
                                         int n_triples) {
  std::set<Triple> s;
  const int max = n_entities * n_entities * n_relations;
  n_triples = std::min(n_triples, max);
  while (static_cast<int>(s.size()) < n_triples) {
    s.insert({static_cast<EntityId>(rng.Below(n_entities)),
              static_cast<RelationId>(rng.Below(n_relations)),
              static_cast<EntityId>(rng.Below(n_entities))});
  }
  return {s.begin(), s.end()};
}

inline Graph RandomGraph(Rng& rng, int n_entities, int n_relations, int n_triples) {
  std::vector<EntityId> ents(n_entities);
  std::vector<RelationId> rels(n_relations);
  for (int i = 0; i < n_entities; ++i) ents[i] = i;
  for (int i = 0; i < n_relations; ++i) rels[i] = i;
  return Graph::FromTriples(RandomTriples(rng, n_entities, n_relations, n_triples),
                            ents, rels);
}

inline size_t NumAnchors(QueryType t) {
  switch (t) {
    case QueryType::k1p: case QueryType::k2p: return 1;
    case QueryType::k2i: case QueryType::kPi: case QueryType::k2u: case QueryType::kUp: return 2;
    case QueryType::kIp: return 2;
    case QueryType::k3i: return 3;
  }
  return 0;
}

inline size_t NumRelations(QueryType t) {
  switch (t) {
    case QueryType::k1p: return 1;
    case QueryType::k2p: case QueryType::k2i: case QueryType::k2u: return 2;
    case QueryType::kIp: case QueryType::k3i: case QueryType::kPi: case QueryType::kUp: return 3;
  }
  return 0;
}

// Query of type `t` with uniformly random anchors and relations.
inline Query RandomQuery(Rng& rng, QueryType t, int n_entities, int n_relations) {
  std::vector<EntityId> a(NumAnchors(t));
  std::vector<RelationId> r(NumRelations(t));
  for (auto& x : a) x = static_cast<EntityId>(rng.Below(n_entities));
  for (auto& x : r) x = static_cast<RelationId>(rng.Below(n_relations));
  return MakeQuery(t, a, r);
}

// Exhaustive-assignment semantics: holds(node, y) quantifies every
// intermediate variable over the whole entity domain.
class BruteForceAnswerer {
 public:
  BruteForceAnswerer(const std::vector<Triple>& triples, int n_entities)
      : n_(n_entities) {
    for (const Triple& t : triples) edges_.insert({t.head, t.relation, t.tail});
  }

  bool Holds(const QueryNode& node, EntityId y) const {
    switch (node.op) {
      case QueryNode::Op::kAnchor:
        return y == node.anchor;
      case QueryNode::Op::kProjection:
        for (EntityId x = 0; x < n_; ++x) {
          if (edges_.count({x, node.relation, y}) && Holds(node.children[0], x)) return true;
        }
        return false;
      case QueryNode::Op::kIntersection:
        for (const QueryNode& c : node.children) {
          if (!Holds(c, y)) return false;
        }
        return true;
      case QueryNode::Op::kUnion:
        for (const QueryNode& c : node.children) {
          if (Holds(c, y)) return true;
        }
        return false;
    }
    return false;
  }

  EntitySet Answers(const QueryNode& root) const {
    EntitySet out;
    for (EntityId y = 0; y < n_; ++y) {
      if (Holds(root, y)) out.push_back(y);
    }
    return out;
  }

 private:
  int n_;
  std::set<std::tuple<EntityId, RelationId, EntityId>> edges_;
};

// Small end-to-end fixture: synthetic graph, staged shards, benchmark.
struct ToyPipeline {
  ShardSet set;
  BenchmarkSet bench;
};

struct ToyOptions {
  size_t entities = 60;
  size_t relations = 4;
  double edge_prob = 0.6;
  int clients = 2;
  size_t train = 30, valid = 4, test = 4, cross = 4;
  std::vector<QueryType> types = {kAllQueryTypes.begin(), kAllQueryTypes.end()};
  uint64_t seed = 7;
};

inline ToyPipeline MakeToyPipeline(const ToyOptions& o = {}) {
  ToyPipeline p;
  SyntheticKgConfig kg;
  kg.entities = o.entities;
  kg.relations = o.relations;
  kg.edge_prob = o.edge_prob;
  kg.seed = o.seed;
  const Graph g = MakeSyntheticKg(kg, &p.set.vocab);
  p.set.vocab.Freeze();
  SplitConfig sc;
  sc.n_clients = o.clients;
  sc.seed = o.seed;
  p.set.shards = SplitAndStage(g, sc);
  BenchmarkCounts counts;
  counts.types = o.types;
  counts.train = o.train;
  counts.valid = o.valid;
  counts.test = o.test;
  counts.cross_test = o.cross;
  p.bench = BuildBenchmark(p.set.shards, counts, o.seed);
  return p;
}

inline FederationConfig ToyConfig(int clients, int rounds, uint64_t seed = 3) {
  FederationConfig cfg;
  cfg.n_clients = clients;
  cfg.rounds = rounds;
  cfg.dim = 8;
  cfg.batch_size = 16;
  cfg.negatives = 4;
  cfg.dp.noise_scale = 0.0;
  cfg.seed = seed;
  cfg.dh_test_group = false;
  return cfg;
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path TempDir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fedngdb_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fedngdb::testing

#endif  // FEDNGDB_TESTS_TEST_SUPPORT_H_
