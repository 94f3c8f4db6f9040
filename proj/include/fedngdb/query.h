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

// Existential positive first-order queries over a Graph: tree representation,
// DNF normalization, exact set-semantics answering and locality
// classification against a relation ownership map.

#ifndef FEDNGDB_QUERY_H_
#define FEDNGDB_QUERY_H_

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedngdb/common.h"
#include "fedngdb/kg_store.h"
#include "json.hpp"

namespace fedngdb {

enum class QueryType { k1p, k2p, k2i, kIp, k3i, kPi, k2u, kUp };

inline constexpr std::array<QueryType, 8> kAllQueryTypes = {
    QueryType::k1p, QueryType::k2p, QueryType::k2i, QueryType::kIp,
    QueryType::k3i, QueryType::kPi, QueryType::k2u, QueryType::kUp};

const char* QueryTypeName(QueryType type);
QueryType ParseQueryType(std::string_view name);

// One node of a query tree. Leaves are anchors; projections carry a relation
// and exactly one child; intersections and unions have two or more children.
struct QueryNode {
  enum class Op { kAnchor, kProjection, kIntersection, kUnion };

  Op op = Op::kAnchor;
  EntityId anchor = 0;
  RelationId relation = 0;
  std::vector<QueryNode> children;

  static QueryNode Anchor(EntityId e);
  static QueryNode Project(QueryNode child, RelationId r);
  static QueryNode Intersect(std::vector<QueryNode> children);
  static QueryNode Union(std::vector<QueryNode> children);

  bool operator==(const QueryNode&) const = default;
};

struct Query {
  QueryType type = QueryType::k1p;
  QueryNode root;

  bool operator==(const Query&) const = default;
};

// Builds the canonical tree for `type` from its anchors and relations, listed
// in evaluation (post-) order: an atom's inputs come before the atom.
Query MakeQuery(QueryType type, std::span<const EntityId> anchors,
                std::span<const RelationId> relations);

// True when `root` has the canonical shape of `type`, or (for types with a
// union below the root) the shape of its DNF form.
bool MatchesType(const QueryNode& root, QueryType type);

// Pushes every union to the root. Idempotent.
QueryNode ToDnf(const QueryNode& node);
Query ToDnf(const Query& q);

// Disjuncts of a DNF-normalized tree: the root's children when it is a union,
// otherwise the root itself.
std::vector<const QueryNode*> Disjuncts(const QueryNode& dnf_root);

// Sorted entity set.
using EntitySet = std::vector<EntityId>;

EntitySet AnswerQuery(const Graph& g, const QueryNode& node);
inline EntitySet AnswerQuery(const Graph& g, const Query& q) {
  return AnswerQuery(g, q.root);
}

// Relations of every projection atom in post-order.
std::vector<RelationId> AtomRelations(const QueryNode& node);
std::vector<EntityId> AnchorEntities(const QueryNode& node);

struct Locality {
  bool cross_graph = false;
  ClientId client = 0;  // owning client when !cross_graph

  static Locality InGraph(ClientId c) { return {false, c}; }
  static Locality CrossGraph() { return {true, 0}; }
  bool operator==(const Locality&) const = default;
};

std::string LocalityName(const Locality& loc);

// In-graph at the lowest-id client owning every atom's relation, otherwise
// cross-graph. Unknown relations are a classification error.
Locality ClassifyQuery(const QueryNode& node, const OwnershipMap& ownership);

// Owners of each projection atom, in post-order.
std::vector<std::vector<ClientId>> AtomOwners(const QueryNode& node,
                                              const OwnershipMap& ownership);

enum class Split { kTrain, kValid, kTest };
const char* SplitName(Split split);

struct QuerySample {
  Query query;
  EntitySet answers_train;
  EntitySet answers_valid;
  EntitySet answers_test;
  Locality locality;
  std::vector<std::vector<ClientId>> atom_owners;

  bool operator==(const QuerySample&) const = default;
};

// Answers on test minus answers on valid (the novel answers scored at
// evaluation time).
EntitySet NovelAnswers(const QuerySample& sample);

// Nested array encoding: ["anchor",e] | ["proj",r,sub] | ["inter",[subs]] |
// ["union",[subs]].
nlohmann::json QueryTreeToJson(const QueryNode& node);
QueryNode QueryTreeFromJson(const nlohmann::json& j);

nlohmann::json SampleToJson(const QuerySample& sample);
QuerySample SampleFromJson(const nlohmann::json& j);

void WriteSamples(const std::filesystem::path& path,
                  std::span<const QuerySample> samples);
std::vector<QuerySample> ReadSamples(const std::filesystem::path& path);

}  // namespace fedngdb

#endif  // FEDNGDB_QUERY_H_
