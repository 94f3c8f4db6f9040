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


#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "fedngdb/retrieval.h"
#include "test_support.h"

namespace fedngdb {
namespace {

using testing::MakeToyPipeline;
using testing::ToyConfig;

struct Trained {
  testing::ToyPipeline toy;
  FederationState st;
};

const Trained& TrainedToy() {
  static const Trained t = [] {
    Trained x;
    testing::ToyOptions o;
    o.clients = 2;
    x.toy = MakeToyPipeline(o);
    x.st = RunTraining(ToyConfig(2, 5), x.toy.set.shards, x.toy.bench);
    return x;
  }();
  return t;
}

// Independent recursive reading of the federated semantics: anchors are
// averaged over holders, projections over owners (owners holding an anchor
// project their own row), intersections use the server nets.
Vector FederatedOracle(const QueryNode& n, const RetrievalContext& ctx) {
  auto row = [&](ClientId c, EntityId e) -> Vector {
    const LocalModel& m = *ctx.clients[c];
    return m.params.entities.row(m.vocab.EntityRow(e)).transpose();
  };
  switch (n.op) {
    case QueryNode::Op::kAnchor: {
      Vector s = Vector::Zero(ctx.server_theta->dim());
      auto h = ctx.registry.Holders(n.anchor);
      for (ClientId c : h) s += row(c, n.anchor);
      return s / static_cast<double>(h.size());
    }
    case QueryNode::Op::kProjection: {
      const auto& owners = ctx.ownership.at(n.relation);
      const QueryNode& ch = n.children[0];
      std::vector<ClientId> here;
      if (ch.op == QueryNode::Op::kAnchor) {
        for (ClientId c : owners) {
          if (ctx.registry.Exists(c, ch.anchor)) here.push_back(c);
        }
      }
      Vector s = Vector::Zero(ctx.server_theta->dim());
      if (!here.empty()) {
        for (ClientId c : here) s += Project(row(c, ch.anchor), n.relation, *ctx.clients[c]);
        return s / static_cast<double>(here.size());
      }
      const Vector in = FederatedOracle(ch, ctx);
      for (ClientId c : owners) s += Project(in, n.relation, *ctx.clients[c]);
      return s / static_cast<double>(owners.size());
    }
    case QueryNode::Op::kIntersection: {
      std::vector<Vector> ins;
      for (const auto& c : n.children) ins.push_back(FederatedOracle(c, ctx));
      return Intersect(ins, *ctx.server_theta);
    }
    case QueryNode::Op::kUnion:
      break;
  }
  ADD_FAILURE() << "union in conjunctive oracle";
  return {};
}

TEST(Plan, InGraphMatchesLocalEncoding) {
  const Trained& t = TrainedToy();
  const RetrievalContext ctx = MakeRetrievalContext(t.st);
  size_t n = 0;
  for (size_t c = 0; c < t.toy.bench.clients.size(); ++c) {
    for (const QuerySample& s : t.toy.bench.clients[c].test) {
      const auto cid = static_cast<ClientId>(c);
      const ExecutionPlan plan = PlanQuery(s.query.root, ctx, cid);
      EXPECT_FALSE(plan.locality.cross_graph);
      EXPECT_EQ(plan.ServerRoundTrips(), 0u);
      for (const PlanStep& st : plan.steps) {
        if (st.kind == PlanStep::Kind::kCombine) EXPECT_EQ(st.executor, cid);
        else EXPECT_EQ(st.clients, std::vector<ClientId>{cid});
      }
      const auto got = ExecutePlan(plan, ctx);
      const auto want = EncodeQuery(s.query.root, *ctx.clients[c]);
      ASSERT_EQ(got.size(), want.size());
      for (size_t i = 0; i < got.size(); ++i) {
        EXPECT_TRUE(got[i] == want[i]) << QueryTypeName(s.query.type);
      }
      ++n;
    }
  }
  EXPECT_GT(n, 20u);
}

TEST(Plan, CrossGraphMatchesRecursiveOracle) {
  const Trained& t = TrainedToy();
  const RetrievalContext ctx = MakeRetrievalContext(t.st);
  ASSERT_FALSE(t.toy.bench.cross_test.empty());
  for (const QuerySample& s : t.toy.bench.cross_test) {
    const ExecutionPlan plan = PlanQuery(s.query.root, ctx);
    EXPECT_TRUE(plan.locality.cross_graph);
    EXPECT_EQ(plan.ServerRoundTrips(), plan.steps.size());
    const auto got = ExecutePlan(plan, ctx);
    const QueryNode dnf = ToDnf(s.query.root);
    const auto ds = Disjuncts(dnf);
    ASSERT_EQ(got.size(), ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
      const Vector want = FederatedOracle(*ds[i], ctx);
      EXPECT_LT((got[i] - want).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Plan, ForcedInGraphAtWrongClientFails) {
  const Trained& t = TrainedToy();
  const RetrievalContext ctx = MakeRetrievalContext(t.st);
  const QuerySample& s = t.toy.bench.cross_test.front();
  for (ClientId c = 0; c < 2; ++c) {
    try {
      PlanQuery(s.query.root, ctx, c);
      ADD_FAILURE() << "expected planning error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kPlanning);
    }
  }
  try {
    PlanQuery(s.query.root, ctx, 9);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPlanning);
  }
}

TEST(Plan, UnownedRelationAndUnknownAnchor) {
  const Trained& t = TrainedToy();
  const RetrievalContext ctx = MakeRetrievalContext(t.st);
  try {
    PlanQuery(QueryNode::Project(QueryNode::Anchor(0), 999), ctx);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPlanning);
  }
  try {
    PlanQuery(QueryNode::Project(QueryNode::Anchor(100000), 0), ctx);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPlanning);
  }
}

TEST(Plan, LocalModeCannotAnswerCrossGraph) {
  const Trained& t = TrainedToy();
  FederationConfig cfg = ToyConfig(2, 2);
  cfg.mode = TrainingMode::kLocal;
  const FederationState st = RunTraining(cfg, t.toy.set.shards, t.toy.bench);
  const RetrievalContext ctx = MakeRetrievalContext(st);
  EXPECT_EQ(ctx.server_theta, nullptr);
  try {
    AnswerQueryFederated(t.toy.bench.cross_test.front().query.root, ctx, 5);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRetrieval);
    EXPECT_NE(std::string(e.what()).find("without collaboration"), std::string::npos);
  }
  // In-graph still works.
  const QuerySample& s = t.toy.bench.clients[0].test.front();
  EXPECT_NO_THROW(AnswerQueryFederated(s.query.root, ctx, 5));
}

TEST(Plan, CentralAnswersEverythingInGraph) {
  const Trained& t = TrainedToy();
  FederationConfig cfg = ToyConfig(2, 2);
  cfg.mode = TrainingMode::kCentral;
  const FederationState st = RunTraining(cfg, t.toy.set.shards, t.toy.bench);
  const RetrievalContext ctx = MakeRetrievalContext(st);
  ASSERT_EQ(ctx.clients.size(), 1u);
  for (const QuerySample& s : t.toy.bench.cross_test) {
    const ExecutionPlan plan = PlanQuery(s.query.root, ctx);
    EXPECT_FALSE(plan.locality.cross_graph);
  }
}

TEST(Plan, UnavailableClientNamesStep) {
  const Trained& t = TrainedToy();
  RetrievalContext ctx = MakeRetrievalContext(t.st);
  const QuerySample& s = t.toy.bench.cross_test.front();
  ExecutionPlan plan = PlanQuery(s.query.root, ctx);
  plan.steps[0].clients = {7};
  try {
    ExecutePlan(plan, ctx);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRetrieval);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

// Two clients, d = 1, hand-set rows.
struct TinyWorld {
  LocalModel a, b;
  ModelState theta;
  RetrievalContext ctx;

  TinyWorld() {
    a.vocab = LocalVocab({0, 1, 2}, {0});
    a.params = InitState(3, 1, 1, 1);
    a.params.entities << 0.0, 1.0, 2.0;
    b.vocab = LocalVocab({1, 2, 3}, {0});
    b.params = InitState(3, 1, 1, 2);
    b.params.entities << 1.5, 2.0, 5.0;
    theta = a.params;
    ctx.clients = {&a, &b};
    ctx.server_theta = &theta;
    ctx.registry = ClientRegistry(4, {{0, 1, 2}, {1, 2, 3}});
    ctx.ownership[0] = {0, 1};
    ctx.n_entities = 4;
  }
};

TEST(Score, CoverageAveragedThenMaxOverDisjuncts) {
  TinyWorld w;
  Vector q0(1), q1(1);
  q0 << 0.0;
  q1 << 4.0;
  const std::vector<Vector> ds = {q0, q1};
  const ScoreTable t = ScoreAndAggregate(ds, w.ctx);
  ASSERT_EQ(t.scores.size(), 4u);
  EXPECT_EQ(t.coverage, (std::vector<int>{1, 2, 2, 1}));
  // Entity 1: rows 1.0 (a) and 1.5 (b). Disjunct 0 -> mean(-1, -1.5).
  EXPECT_DOUBLE_EQ(t.scores[0], 0.0);
  EXPECT_DOUBLE_EQ(t.scores[1], std::max(-1.25, -2.75));
  EXPECT_DOUBLE_EQ(t.scores[2], -2.0);
  EXPECT_DOUBLE_EQ(t.scores[3], -1.0);
}

TEST(Score, SingleScorerLeavesOthersUnscored) {
  TinyWorld w;
  Vector q(1);
  q << 0.0;
  const std::vector<Vector> ds = {q};
  const std::vector<ClientId> one = {0};
  const ScoreTable t = ScoreAndAggregate(ds, w.ctx, one);
  EXPECT_EQ(t.coverage[3], 0);
  EXPECT_EQ(t.scores[3], ScoreTable::kUnscored);
  const auto top = TopK(t, 10);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].entity, 0);
  EXPECT_EQ(top[2].entity, 2);
}

TEST(Score, TwoUnionTakesMax) {
  // 2u over anchors 0 and 3 with the relation a no-op shift of zero.
  TinyWorld w;
  w.a.params.relations.setZero();
  w.b.params.relations.setZero();
  const QueryNode q = QueryNode::Union({QueryNode::Project(QueryNode::Anchor(0), 0),
                                        QueryNode::Project(QueryNode::Anchor(3), 0)});
  const QueryAnswer ans = AnswerQueryFederated(q, w.ctx, 4);
  ASSERT_EQ(ans.embeddings.size(), 2u);
  EXPECT_TRUE(ans.plan.locality.cross_graph);
  const auto proj = [&](const LocalModel& m, double x) {
    Vector v(1);
    v << x;
    return Project(v, 0, m)(0);
  };
  EXPECT_DOUBLE_EQ(ans.embeddings[0](0), proj(w.a, 0.0));
  EXPECT_DOUBLE_EQ(ans.embeddings[1](0), proj(w.b, 5.0));
  for (EntityId e = 0; e < 4; ++e) {
    double best = ScoreTable::kUnscored;
    for (const Vector& d : ans.embeddings) {
      double s = 0.0;
      int c = 0;
      for (const LocalModel* m : {&w.a, &w.b}) {
        if (auto r = m->vocab.FindEntity(e)) {
          s += Score(d, m->params.entities.row(*r).transpose());
          ++c;
        }
      }
      best = std::max(best, s / c);
    }
    EXPECT_DOUBLE_EQ(ans.table.scores[e], best) << e;
  }
}

TEST(Rank, TiesBreakById) {
  ScoreTable t;
  t.scores = {0.5, 0.9, 0.5, 0.5, ScoreTable::kUnscored};
  t.coverage = {1, 1, 1, 1, 0};
  EXPECT_EQ(RankOf(t, 1, {}), 1);
  EXPECT_EQ(RankOf(t, 0, {}), 2);
  EXPECT_EQ(RankOf(t, 2, {}), 3);
  EXPECT_EQ(RankOf(t, 3, {}), 4);
  EXPECT_EQ(RankOf(t, 4, {}), 5);
}

TEST(Rank, FilterRemovesOtherAnswers) {
  ScoreTable t;
  t.scores = {0.1, 0.9, 0.8, 0.7};
  t.coverage = {1, 1, 1, 1};
  const std::vector<EntityId> f = {1, 2, 3};
  EXPECT_EQ(RankOf(t, 0, f), 1);
  const std::vector<EntityId> f2 = {1, 3};
  EXPECT_EQ(RankOf(t, 3, f2), 2);
  // The target itself may appear in the filter.
  EXPECT_EQ(RankOf(t, 2, f2), 1);
}

TEST(Rank, OutOfRangeTarget) {
  ScoreTable t;
  t.scores = {0.0};
  t.coverage = {1};
  try {
    RankOf(t, 3, {});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEvaluation);
  }
}

TEST(Rank, PropertyMatchesSortPosition) {
  Rng rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 1 + rng.Below(30);
    ScoreTable t;
    for (size_t i = 0; i < n; ++i) {
      // Coarse values so ties are common.
      t.scores.push_back(static_cast<double>(rng.Below(5)));
      t.coverage.push_back(1);
    }
    std::vector<EntityId> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<EntityId>(i);
    std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
      return t.scores[a] > t.scores[b];
    });
    for (size_t pos = 0; pos < n; ++pos) {
      EXPECT_EQ(RankOf(t, order[pos], {}), static_cast<int>(pos + 1));
    }
    const auto top = TopK(t, n);
    ASSERT_EQ(top.size(), n);
    for (size_t pos = 0; pos < n; ++pos) EXPECT_EQ(top[pos].entity, order[pos]);
  }
}

TEST(TopK, ZeroAndFilter) {
  ScoreTable t;
  t.scores = {0.1, 0.9, 0.8};
  t.coverage = {1, 1, 1};
  EXPECT_TRUE(TopK(t, 0).empty());
  const std::vector<EntityId> f = {1};
  const auto top = TopK(t, 5, f);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].entity, 2);
  EXPECT_EQ(top[1].entity, 0);
}

TEST(Request, DefaultsAndErrors) {
  auto [q, k] = ParseQueryRequest(R"({"query": ["proj", 1, ["anchor", 4]]})");
  EXPECT_EQ(k, 10u);
  EXPECT_EQ(q, QueryNode::Project(QueryNode::Anchor(4), 1));
  EXPECT_EQ(ParseQueryRequest(R"({"query": ["anchor", 0], "k": 3})").second, 3u);

  auto expect_parse = [](std::string_view text, const std::string& needle) {
    try {
      ParseQueryRequest(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kParse) << text;
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_parse(R"({"query": [)", "at byte");
  expect_parse("[1, 2]", "object");
  expect_parse(R"({"k": 3})", "object");
  expect_parse(R"({"query": ["anchor", 0], "k": -1})", "non-negative");
  expect_parse(R"({"query": ["anchor", 0], "k": "3"})", "non-negative");
}

TEST(Answer, JsonShape) {
  const Trained& t = TrainedToy();
  const RetrievalContext ctx = MakeRetrievalContext(t.st);
  const QueryAnswer a = AnswerQueryFederated(t.toy.bench.cross_test.front().query.root, ctx, 3);
  const nlohmann::json j = a.ToJson();
  EXPECT_EQ(j["answers"].size(), 3u);
  EXPECT_EQ(j["locality"], "cross-graph");
  EXPECT_TRUE(j["plan"].is_array() || j["plan"].is_object());
  EXPECT_TRUE(j["timing_ms"].is_number());
  const double s0 = j["answers"][0]["score"];
  const double s1 = j["answers"][1]["score"];
  EXPECT_GE(s0, s1);
}

}  // namespace
}  // namespace fedngdb
