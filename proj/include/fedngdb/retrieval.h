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

// Query answering over a trained federation.
//
// The server turns a query into a plan over numbered slots. Projections run
// at clients owning the relation; intersections run at the server with the
// shared operator nets, or inside the client for in-graph queries. Every
// client then scores its local entities against each disjunct embedding
// and the server merges the per-client tables.

#ifndef FEDNGDB_RETRIEVAL_H_
#define FEDNGDB_RETRIEVAL_H_

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedngdb/encoder.h"
#include "fedngdb/federation.h"
#include "fedngdb/query.h"
#include "fedngdb/secure_agg.h"

#include "json.hpp"

namespace fedngdb {

inline constexpr ClientId kServerExecutor = -1;

struct PlanStep {
  enum class Kind {
    kLookup,    // fetch an anchor embedding from clients holding it
    kProject,   // project() at the listed clients, outputs averaged
    kCombine,   // intersect() at `executor` (a client or the server)
  };
  Kind kind = Kind::kLookup;
  std::vector<ClientId> clients;
  ClientId executor = kServerExecutor;
  RelationId relation = -1;
  // Anchor input of a lookup or projection; -1 when `input` is used.
  EntityId anchor = -1;
  int input = -1;
  std::vector<int> inputs;
  int output = 0;

  bool operator==(const PlanStep&) const = default;
};

const char* PlanStepKindName(PlanStep::Kind kind);

struct ExecutionPlan {
  Locality locality;
  std::vector<PlanStep> steps;
  // Output slot of each DNF disjunct.
  std::vector<int> terminals;
  int num_slots = 0;

  // Steps whose result passes through the server.
  size_t ServerRoundTrips() const;
  nlohmann::json ToJson() const;
};

// Everything query answering needs from a trained state.
struct RetrievalContext {
  // Indexed by client id.
  std::vector<const LocalModel*> clients;
  // Operator nets held by the server; null when there is none (local mode).
  const ModelState* server_theta = nullptr;
  ClientRegistry registry;
  OwnershipMap ownership;
  size_t n_entities = 0;
};

// fedngdb and local: one client per party. central: the single model acts as
// one client owning everything and also as the server.
RetrievalContext MakeRetrievalContext(const FederationState& st);

// In-graph when some client owns every relation and holds every anchor (the
// lowest such id runs the plan), otherwise cross-graph. `in_graph_at` forces
// an in-graph plan at that client and fails if it cannot run it.
// Errors: unowned relation or anchor held by no client -> planning error;
// cross-graph query without a server -> retrieval error.
ExecutionPlan PlanQuery(const QueryNode& query, const RetrievalContext& ctx,
                        std::optional<ClientId> in_graph_at = std::nullopt);

// One embedding per disjunct. A step naming an unknown client is a retrieval
// error that names the step.
std::vector<Vector> ExecutePlan(const ExecutionPlan& plan,
                                const RetrievalContext& ctx);

struct ScoreTable {
  std::vector<double> scores;  // by global entity; -inf when unscored
  std::vector<int> coverage;

  static constexpr double kUnscored = -std::numeric_limits<double>::infinity();
};

// Each listed client scores its local entities against every disjunct. Per
// entity and disjunct the scores are averaged over the clients that hold the
// entity; the final score is the max over disjuncts.
ScoreTable ScoreAndAggregate(std::span<const Vector> disjuncts,
                             const RetrievalContext& ctx,
                             std::span<const ClientId> scorers);
// All clients score.
ScoreTable ScoreAndAggregate(std::span<const Vector> disjuncts,
                             const RetrievalContext& ctx);

// 1-based filtered rank: one plus the number of entities outside
// `filter_out` (and other than `target`) with a higher score, or an equal
// score and a smaller id. Reads only the table.
int RankOf(const ScoreTable& table, EntityId target,
           std::span<const EntityId> filter_out);

struct RankedEntity {
  EntityId entity;
  double score;
};

// Scored entities outside `filter_out`, best first.
std::vector<RankedEntity> TopK(const ScoreTable& table, size_t k,
                               std::span<const EntityId> filter_out = {});

struct QueryAnswer {
  ExecutionPlan plan;
  std::vector<Vector> embeddings;
  ScoreTable table;
  std::vector<RankedEntity> top;
  double elapsed_ms = 0.0;

  // {"answers": [{"entity", "score"}], "plan": [...], "locality",
  //  "timing_ms"}
  nlohmann::json ToJson() const;
};

// Plans, executes and scores. In-graph queries are scored by the owning
// client alone; cross-graph queries by every client.
QueryAnswer AnswerQueryFederated(const QueryNode& query,
                                 const RetrievalContext& ctx, size_t k,
                                 std::optional<ClientId> in_graph_at = std::nullopt);

// Parses {"query": <tree>, "k": K}. Parse errors carry the byte position.
std::pair<QueryNode, size_t> ParseQueryRequest(std::string_view json_text);

}  // namespace fedngdb

#endif  // FEDNGDB_RETRIEVAL_H_
