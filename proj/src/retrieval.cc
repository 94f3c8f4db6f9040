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

#include "fedngdb/retrieval.h"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fedngdb {

const char* PlanStepKindName(PlanStep::Kind kind) {
  switch (kind) {
    case PlanStep::Kind::kLookup: return "lookup";
    case PlanStep::Kind::kProject: return "client_project";
    case PlanStep::Kind::kCombine: return "combine";
  }
  return "?";
}

size_t ExecutionPlan::ServerRoundTrips() const {
  // Cross-graph intermediates travel client -> server -> client at every step;
  // in-graph plans stay inside one client.
  return locality.cross_graph ? steps.size() : 0;
}

nlohmann::json ExecutionPlan::ToJson() const {
  nlohmann::json steps_j = nlohmann::json::array();
  for (size_t i = 0; i < steps.size(); ++i) {
    const PlanStep& s = steps[i];
    nlohmann::json j = {{"step", i}, {"kind", PlanStepKindName(s.kind)},
                        {"output", s.output}};
    if (s.kind == PlanStep::Kind::kCombine) {
      j["executor"] = s.executor == kServerExecutor
                          ? nlohmann::json("server")
                          : nlohmann::json(ClientName(s.executor));
      j["inputs"] = s.inputs;
    } else {
      j["clients"] = s.clients;
      if (s.kind == PlanStep::Kind::kProject) j["relation"] = s.relation;
      if (s.anchor >= 0) j["anchor"] = s.anchor;
      else j["input"] = s.input;
    }
    steps_j.push_back(std::move(j));
  }
  return {{"locality", LocalityName(locality)},
          {"steps", std::move(steps_j)},
          {"terminals", terminals}};
}

RetrievalContext MakeRetrievalContext(const FederationState& st) {
  RetrievalContext ctx;
  ctx.n_entities = st.n_entities;
  if (st.config.mode == TrainingMode::kCentral) {
    const LocalModel& m = st.parties.at(0).model;
    ctx.clients = {&m};
    ctx.server_theta = &m.params;
    ctx.registry = ClientRegistry(st.n_entities, {m.vocab.entities()});
    for (RelationId r : m.vocab.relations()) ctx.ownership[r] = {0};
    return ctx;
  }
  for (const Party& p : st.parties) ctx.clients.push_back(&p.model);
  if (st.config.mode == TrainingMode::kFedNgdb) ctx.server_theta = &st.server.params;
  ctx.registry = st.registry;
  ctx.ownership = st.ownership;
  return ctx;
}

namespace {

class Planner {
 public:
  Planner(const RetrievalContext& ctx, ExecutionPlan& plan)
      : ctx_(ctx), plan_(plan) {}

  int Plan(const QueryNode& n) {
    switch (n.op) {
      case QueryNode::Op::kAnchor: {
        PlanStep s;
        s.kind = PlanStep::Kind::kLookup;
        s.clients = AnchorHolders(n.anchor);
        s.anchor = n.anchor;
        return Emit(std::move(s));
      }
      case QueryNode::Op::kProjection: {
        const QueryNode& child = n.children[0];
        const std::vector<ClientId> owners = Owners(n.relation);
        PlanStep s;
        s.kind = PlanStep::Kind::kProject;
        s.relation = n.relation;
        if (child.op == QueryNode::Op::kAnchor) {
          // Owners that also hold the anchor project it in place.
          std::vector<ClientId> here;
          for (ClientId c : owners) {
            if (ctx_.registry.Exists(c, child.anchor)) here.push_back(c);
          }
          if (!here.empty()) {
            s.clients = std::move(here);
            s.anchor = child.anchor;
            return Emit(std::move(s));
          }
        }
        s.input = Plan(child);
        s.clients = owners;
        return Emit(std::move(s));
      }
      case QueryNode::Op::kIntersection: {
        PlanStep s;
        s.kind = PlanStep::Kind::kCombine;
        s.executor = plan_.locality.cross_graph ? kServerExecutor
                                                : plan_.locality.client;
        for (const auto& c : n.children) s.inputs.push_back(Plan(c));
        return Emit(std::move(s));
      }
      case QueryNode::Op::kUnion:
        Fail(ErrorKind::kPlanning, "union below the root after DNF normalization");
    }
    return -1;
  }

 private:
  int Emit(PlanStep s) {
    s.output = plan_.num_slots++;
    plan_.steps.push_back(std::move(s));
    return plan_.steps.back().output;
  }

  std::vector<ClientId> Owners(RelationId r) const {
    if (!plan_.locality.cross_graph) return {plan_.locality.client};
    return ctx_.ownership.at(r);
  }

  std::vector<ClientId> AnchorHolders(EntityId e) const {
    if (!plan_.locality.cross_graph) return {plan_.locality.client};
    auto h = ctx_.registry.Holders(e);
    return {h.begin(), h.end()};
  }

  const RetrievalContext& ctx_;
  ExecutionPlan& plan_;
};

bool CanRunInGraph(const RetrievalContext& ctx, ClientId c,
                   std::span<const RelationId> rels,
                   std::span<const EntityId> anchors) {
  for (RelationId r : rels) {
    const auto& o = ctx.ownership.at(r);
    if (!std::binary_search(o.begin(), o.end(), c)) return false;
  }
  for (EntityId a : anchors) {
    if (!ctx.registry.Exists(c, a)) return false;
  }
  return true;
}

const LocalModel& ClientModel(const RetrievalContext& ctx, ClientId c,
                              size_t step) {
  if (c < 0 || static_cast<size_t>(c) >= ctx.clients.size() || !ctx.clients[c]) {
    Fail(ErrorKind::kRetrieval, "step " + std::to_string(step) + ": " +
                                    ClientName(c) + " is unavailable");
  }
  return *ctx.clients[c];
}

Vector AnchorRow(const LocalModel& m, EntityId a, size_t step) {
  auto row = m.vocab.FindEntity(a);
  if (!row) {
    Fail(ErrorKind::kRetrieval, "step " + std::to_string(step) + ": entity " +
                                    std::to_string(a) + " not held by the client");
  }
  return m.params.entities.row(*row).transpose();
}

}  // namespace

ExecutionPlan PlanQuery(const QueryNode& query, const RetrievalContext& ctx,
                        std::optional<ClientId> in_graph_at) {
  const QueryNode dnf = ToDnf(query);
  std::vector<RelationId> rels = AtomRelations(dnf);
  std::vector<EntityId> anchors = AnchorEntities(dnf);
  for (RelationId r : rels) {
    auto it = ctx.ownership.find(r);
    if (it == ctx.ownership.end() || it->second.empty()) {
      Fail(ErrorKind::kPlanning, "relation " + std::to_string(r) + " has no owner");
    }
  }
  for (EntityId a : anchors) {
    if (a < 0 || static_cast<size_t>(a) >= ctx.registry.num_entities()) {
      Fail(ErrorKind::kPlanning, "anchor " + std::to_string(a) + " is held by no client");
    }
  }

  ExecutionPlan plan;
  if (in_graph_at) {
    if (*in_graph_at < 0 || static_cast<size_t>(*in_graph_at) >= ctx.clients.size() ||
        !CanRunInGraph(ctx, *in_graph_at, rels, anchors)) {
      Fail(ErrorKind::kPlanning, ClientName(*in_graph_at) +
                                     " cannot answer the query in-graph");
    }
    plan.locality = Locality::InGraph(*in_graph_at);
  } else {
    plan.locality = Locality::CrossGraph();
    for (size_t c = 0; c < ctx.clients.size(); ++c) {
      if (CanRunInGraph(ctx, static_cast<ClientId>(c), rels, anchors)) {
        plan.locality = Locality::InGraph(static_cast<ClientId>(c));
        break;
      }
    }
  }
  if (plan.locality.cross_graph && ctx.server_theta == nullptr) {
    Fail(ErrorKind::kRetrieval,
         "cross-graph query is not answerable without collaboration");
  }
  Planner planner(ctx, plan);
  for (const QueryNode* d : Disjuncts(dnf)) plan.terminals.push_back(planner.Plan(*d));
  return plan;
}

std::vector<Vector> ExecutePlan(const ExecutionPlan& plan,
                                const RetrievalContext& ctx) {
  std::vector<Vector> slots(static_cast<size_t>(plan.num_slots));
  for (size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& s = plan.steps[i];
    switch (s.kind) {
      case PlanStep::Kind::kLookup:
      case PlanStep::Kind::kProject: {
        if (s.clients.empty()) {
          Fail(ErrorKind::kRetrieval, "step " + std::to_string(i) + " has no clients");
        }
        Vector sum;
        for (ClientId c : s.clients) {
          const LocalModel& m = ClientModel(ctx, c, i);
          Vector v = s.anchor >= 0 ? AnchorRow(m, s.anchor, i) : slots.at(s.input);
          if (s.kind == PlanStep::Kind::kProject) {
            if (!m.vocab.FindRelation(s.relation)) {
              Fail(ErrorKind::kRetrieval, "step " + std::to_string(i) + ": " +
                                              ClientName(c) + " lacks relation " +
                                              std::to_string(s.relation));
            }
            v = Project(v, s.relation, m);
          }
          if (sum.size() == 0) sum = std::move(v);
          else sum += v;
        }
        slots[s.output] = sum / static_cast<double>(s.clients.size());
        break;
      }
      case PlanStep::Kind::kCombine: {
        const ModelState* theta = nullptr;
        if (s.executor == kServerExecutor) {
          theta = ctx.server_theta;
          if (!theta) {
            Fail(ErrorKind::kRetrieval, "step " + std::to_string(i) +
                                            ": no server operator networks");
          }
        } else {
          theta = &ClientModel(ctx, s.executor, i).params;
        }
        std::vector<Vector> ins;
        for (int in : s.inputs) ins.push_back(slots.at(in));
        slots[s.output] = Intersect(ins, *theta);
        break;
      }
    }
  }
  std::vector<Vector> out;
  for (int t : plan.terminals) out.push_back(slots.at(t));
  return out;
}

ScoreTable ScoreAndAggregate(std::span<const Vector> disjuncts,
                             const RetrievalContext& ctx,
                             std::span<const ClientId> scorers) {
  const size_t n = ctx.n_entities;
  const size_t k = disjuncts.size();
  std::vector<double> sums(n * k, 0.0);
  ScoreTable t;
  t.coverage.assign(n, 0);
  std::vector<ClientId> order(scorers.begin(), scorers.end());
  std::sort(order.begin(), order.end());
  for (ClientId c : order) {
    const LocalModel& m = ClientModel(ctx, c, 0);
    const auto& ids = m.vocab.entities();
    for (size_t l = 0; l < ids.size(); ++l) {
      const size_t e = static_cast<size_t>(ids[l]);
      const auto row = m.params.entities.row(static_cast<Eigen::Index>(l));
      for (size_t j = 0; j < k; ++j) {
        sums[e * k + j] += -(disjuncts[j].transpose() - row).norm();
      }
      ++t.coverage[e];
    }
  }
  t.scores.assign(n, ScoreTable::kUnscored);
  for (size_t e = 0; e < n; ++e) {
    if (t.coverage[e] == 0) continue;
    for (size_t j = 0; j < k; ++j) {
      t.scores[e] = std::max(t.scores[e], sums[e * k + j] / t.coverage[e]);
    }
  }
  return t;
}

ScoreTable ScoreAndAggregate(std::span<const Vector> disjuncts,
                             const RetrievalContext& ctx) {
  std::vector<ClientId> all;
  for (size_t c = 0; c < ctx.clients.size(); ++c) all.push_back(static_cast<ClientId>(c));
  return ScoreAndAggregate(disjuncts, ctx, all);
}

int RankOf(const ScoreTable& table, EntityId target,
           std::span<const EntityId> filter_out) {
  if (target < 0 || static_cast<size_t>(target) >= table.scores.size()) {
    Fail(ErrorKind::kEvaluation, "rank target " + std::to_string(target) +
                                     " outside the score table");
  }
  const double ts = table.scores[target];
  int rank = 1;
  for (size_t e = 0; e < table.scores.size(); ++e) {
    const auto id = static_cast<EntityId>(e);
    if (id == target) continue;
    const double s = table.scores[e];
    if (s > ts || (s == ts && id < target)) {
      if (!std::binary_search(filter_out.begin(), filter_out.end(), id)) ++rank;
    }
  }
  return rank;
}

std::vector<RankedEntity> TopK(const ScoreTable& table, size_t k,
                               std::span<const EntityId> filter_out) {
  std::vector<RankedEntity> all;
  for (size_t e = 0; e < table.scores.size(); ++e) {
    const auto id = static_cast<EntityId>(e);
    if (table.coverage[e] == 0) continue;
    if (std::binary_search(filter_out.begin(), filter_out.end(), id)) continue;
    all.push_back({id, table.scores[e]});
  }
  auto better = [](const RankedEntity& a, const RankedEntity& b) {
    return a.score > b.score || (a.score == b.score && a.entity < b.entity);
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k),
                    all.end(), better);
  all.resize(k);
  return all;
}

nlohmann::json QueryAnswer::ToJson() const {
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& r : top) answers.push_back({{"entity", r.entity}, {"score", r.score}});
  nlohmann::json p = plan.ToJson();
  return {{"answers", std::move(answers)},
          {"locality", p["locality"]},
          {"plan", p["steps"]},
          {"timing_ms", elapsed_ms}};
}

QueryAnswer AnswerQueryFederated(const QueryNode& query,
                                 const RetrievalContext& ctx, size_t k,
                                 std::optional<ClientId> in_graph_at) {
  const auto t0 = std::chrono::steady_clock::now();
  QueryAnswer a;
  a.plan = PlanQuery(query, ctx, in_graph_at);
  a.embeddings = ExecutePlan(a.plan, ctx);
  if (a.plan.locality.cross_graph) {
    a.table = ScoreAndAggregate(a.embeddings, ctx);
  } else {
    std::vector<ClientId> one = {a.plan.locality.client};
    a.table = ScoreAndAggregate(a.embeddings, ctx, one);
  }
  a.top = TopK(a.table, k);
  a.elapsed_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  return a;
}

std::pair<QueryNode, size_t> ParseQueryRequest(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    Fail(ErrorKind::kParse, "malformed query JSON at byte " +
                                std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("query")) {
    Fail(ErrorKind::kParse, "query request must be an object with a \"query\" tree");
  }
  size_t k = 10;
  if (j.contains("k")) {
    if (!j["k"].is_number_integer() || j["k"].get<int64_t>() < 0) {
      Fail(ErrorKind::kParse, "\"k\" must be a non-negative integer");
    }
    k = j["k"].get<size_t>();
  }
  return {QueryTreeFromJson(j["query"]), k};
}

}  // namespace fedngdb
