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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "fedngdb/federation.h"
#include "test_support.h"

namespace fedngdb {
namespace {

using testing::MakeToyPipeline;
using testing::ToyConfig;

const testing::ToyPipeline& Toy() {
  static const testing::ToyPipeline toy = [] {
    testing::ToyOptions o;
    o.clients = 2;
    return MakeToyPipeline(o);
  }();
  return toy;
}

const testing::ToyPipeline& Toy3() {
  static const testing::ToyPipeline toy = [] {
    testing::ToyOptions o;
    o.clients = 3;
    o.relations = 5;
    o.entities = 80;
    return MakeToyPipeline(o);
  }();
  return toy;
}

double MaxAbsDiff(const Matrix& a, const Matrix& b) {
  if (a.size() == 0 && b.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

double MaxParamDiff(const ModelState& a, const ModelState& b) {
  return std::max({MaxAbsDiff(a.entities, b.entities), MaxAbsDiff(a.relations, b.relations),
                   MaxAbsDiff(a.w1, b.w1), MaxAbsDiff(a.w2, b.w2),
                   (a.b1 - b.b1).cwiseAbs().maxCoeff(), (a.b2 - b.b2).cwiseAbs().maxCoeff()});
}

TEST(Config, ParseAllKeys) {
  const FederationConfig c = ParseConfig(R"(
    # comment
    mode = local
    n_clients = 4
    client_fraction = 0.5
    rounds = 7
    local_epochs = 2
    batch_size = 8
    dim = 16
    margin = 0.5
    negatives = 3
    learning_rate = 0.2
    beta1 = 0.8
    beta2 = 0.9
    adam_epsilon = 1e-6
    weight_decay = 0.01
    dp_clip = 0.3
    dp_lambda = 0.6
    dp_mode = step
    seed = 99
    secure_aggregation = false
    remask_each_round = true
    dh_test_group = true
    k_list = 1, 5
    filtered = false
  )");
  EXPECT_EQ(c.mode, TrainingMode::kLocal);
  EXPECT_EQ(c.n_clients, 4);
  EXPECT_EQ(c.client_fraction, 0.5);
  EXPECT_EQ(c.rounds, 7);
  EXPECT_EQ(c.local_epochs, 2);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.dim, 16);
  EXPECT_EQ(c.margin, 0.5);
  EXPECT_EQ(c.negatives, 3);
  EXPECT_EQ(c.adamw.learning_rate, 0.2);
  EXPECT_EQ(c.adamw.beta1, 0.8);
  EXPECT_EQ(c.adamw.beta2, 0.9);
  EXPECT_EQ(c.adamw.epsilon, 1e-6);
  EXPECT_EQ(c.adamw.weight_decay, 0.01);
  EXPECT_EQ(c.dp.clip, 0.3);
  EXPECT_EQ(c.dp.noise_scale, 0.6);
  EXPECT_EQ(c.dp_mode, DpMode::kStep);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_FALSE(c.secure_aggregation);
  EXPECT_TRUE(c.remask_each_round);
  EXPECT_TRUE(c.dh_test_group);
  EXPECT_EQ(c.k_list, (std::vector<int>{1, 5}));
  EXPECT_FALSE(c.filtered);
  // Formatting round-trips exactly.
  EXPECT_EQ(FormatConfig(ParseConfig(FormatConfig(c))), FormatConfig(c));
}

TEST(Config, Errors) {
  auto expect_config = [](const char* text) {
    try {
      ParseConfig(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfig) << text;
    }
  };
  expect_config("bogus = 1");
  expect_config("dim = 3\ndim = 4");
  expect_config("dim = four");
  expect_config("dim");
  expect_config("client_fraction = 0");
  expect_config("client_fraction = 1.5");
  expect_config("dp_clip = 0");
  expect_config("k_list = 0,1");
  expect_config("mode = federated");
  EXPECT_NO_THROW(ParseConfig("dp_mode = off\ndp_clip = 0"));
}

TEST(SelectClients, ReproducibleSortedAndSized) {
  for (int n : {1, 3, 5, 10}) {
    for (double f : {0.1, 0.3, 0.5, 1.0}) {
      FederationConfig c;
      c.n_clients = n;
      c.client_fraction = f;
      const int m = c.SelectedPerRound();
      EXPECT_EQ(m, std::max(1, static_cast<int>(std::ceil(n * f - 1e-9))));
      for (int64_t t = 0; t < 5; ++t) {
        const auto a = SelectClients(1, n, f, t);
        EXPECT_EQ(a, SelectClients(1, n, f, t));
        EXPECT_EQ(static_cast<int>(a.size()), m);
        EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
        EXPECT_EQ(std::set<ClientId>(a.begin(), a.end()).size(), a.size());
        for (ClientId c2 : a) EXPECT_TRUE(c2 >= 0 && c2 < n);
      }
    }
  }
  // Different rounds draw different subsets at least sometimes.
  std::set<std::vector<ClientId>> distinct;
  for (int64_t t = 0; t < 20; ++t) distinct.insert(SelectClients(2, 10, 0.3, t));
  EXPECT_GT(distinct.size(), 1u);
  FederationConfig ten;
  ten.n_clients = 10;
  ten.client_fraction = 0.3;
  EXPECT_EQ(ten.SelectedPerRound(), 3);
}

TEST(Federation, InitAveragesEntitiesAcrossHolders) {
  const auto& toy = Toy();
  const FederationConfig cfg = ToyConfig(2, 0);
  const FederationState st = InitFederation(cfg, toy.set.shards, toy.bench);
  ASSERT_EQ(st.parties.size(), 2u);
  // Shared entities carry identical rows after the setup aggregation.
  for (EntityId e = 0; e < static_cast<EntityId>(st.n_entities); ++e) {
    const auto h = st.registry.Holders(e);
    if (h.size() < 2) continue;
    const auto r0 = *st.registry.GlobalToLocal(h[0], e);
    const auto r1 = *st.registry.GlobalToLocal(h[1], e);
    EXPECT_LT((st.parties[h[0]].model.params.entities.row(r0) -
               st.parties[h[1]].model.params.entities.row(r1)).norm(), 1e-12);
  }
  // Operator nets start out identical at the server and every client.
  for (const Party& p : st.parties) {
    EXPECT_EQ(MaxAbsDiff(p.model.params.w1, st.server.params.w1), 0.0);
    EXPECT_EQ((p.model.params.b2 - st.server.params.b2).norm(), 0.0);
  }
}

TEST(Federation, DeterministicForSeed) {
  const auto& toy = Toy();
  const FederationConfig cfg = ToyConfig(2, 3);
  const FederationState a = RunTraining(cfg, toy.set.shards, toy.bench);
  const FederationState b = RunTraining(cfg, toy.set.shards, toy.bench);
  for (size_t i = 0; i < a.parties.size(); ++i) {
    EXPECT_TRUE(a.parties[i].model.params == b.parties[i].model.params);
  }
  EXPECT_TRUE(a.server.params == b.server.params);
}

TEST(Federation, BaselinesSendNoMessages) {
  const auto& toy = Toy();
  for (TrainingMode m : {TrainingMode::kLocal, TrainingMode::kCentral}) {
    FederationConfig cfg = ToyConfig(2, 3);
    cfg.mode = m;
    Transcript tr;
    TrainingHooks hooks;
    hooks.transcript = &tr;
    const FederationState st = RunTraining(cfg, toy.set.shards, toy.bench, hooks);
    EXPECT_EQ(tr.size(), 0u) << TrainingModeName(m);
    EXPECT_EQ(st.round, 3);
    EXPECT_EQ(st.parties.size(), m == TrainingMode::kCentral ? 1u : 2u);
  }
}

TEST(Federation, RoundMessagesFollowProtocol) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 1);
  Transcript tr;
  TrainingHooks hooks;
  hooks.transcript = &tr;
  RunTraining(cfg, toy.set.shards, toy.bench, hooks);
  std::map<std::pair<int64_t, std::string>, int> phases;
  for (const auto& r : tr.records()) phases[{r.round, r.phase}]++;
  EXPECT_EQ((phases[{-1, "dh-public"}]), 2);
  EXPECT_EQ((phases[{-1, "mask-share"}]), 2);
  EXPECT_EQ((phases[{-1, "upload-entities"}]), 2);
  EXPECT_EQ((phases[{0, "upload-entities"}]), 2);
  EXPECT_EQ((phases[{0, "upload-theta"}]), 2);
  EXPECT_EQ((phases[{0, "aggregate-entities"}]), 2);
  EXPECT_EQ((phases[{0, "broadcast-theta"}]), 2);
  EXPECT_EQ((phases[{0, "upload-entities-plain"}]), 0);
}

// A payload corrupted in transit aborts the round and leaves every party
// exactly as it was before the round.
TEST(Federation, FailedRoundRollsBack) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 0);
  FederationState st = InitFederation(cfg, toy.set.shards, toy.bench);
  RunRound(st);
  const std::vector<Party> before = st.parties;
  const LocalModel server_before = st.server;
  TrainingHooks bad;
  bad.payload_hook = [](MaskedPayload& p) {
    if (p.client == 1) p.rows.pop_back();
  };
  try {
    RunRound(st, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  EXPECT_EQ(st.round, 1);
  EXPECT_EQ(st.telemetry.size(), 1u);
  for (size_t i = 0; i < before.size(); ++i) {
    EXPECT_TRUE(st.parties[i].model.params == before[i].model.params);
    EXPECT_TRUE(st.parties[i].opt == before[i].opt);
    EXPECT_EQ(st.parties[i].rng.SerializeState(), before[i].rng.SerializeState());
  }
  EXPECT_TRUE(st.server.params == server_before.params);
  // The next clean round proceeds normally.
  RunRound(st);
  EXPECT_EQ(st.round, 2);
}

TEST(Federation, RunTrainingReportsAbortedRound) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 3);
  TrainingHooks hooks;
  int calls = 0;
  hooks.payload_hook = [&](MaskedPayload& p) {
    // Setup round uploads 2 payloads, round 0 another 2; break round 1.
    if (++calls == 6) p.rows[0] ^= 1;
    if (calls == 6) p.rows.resize(p.rows.size() + 1);
  };
  try {
    RunTraining(cfg, toy.set.shards, toy.bench, hooks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    EXPECT_NE(std::string(e.what()).find("round 1 aborted"), std::string::npos) << e.what();
  }
}

// Per round, the unmasked tables equal the plaintext mean of the uploaded
// tables over the selected holders.
TEST(Federation, SecureRoundsMatchPlaintextOracle) {
  const auto& toy = Toy3();
  FederationConfig cfg = ToyConfig(3, 0);
  cfg.client_fraction = 0.67;
  FederationState st = InitFederation(cfg, toy.set.shards, toy.bench);
  std::map<ClientId, Matrix> uploaded;
  TrainingHooks hooks;
  hooks.payload_hook = [&](MaskedPayload& p) {
    uploaded[p.client] = st.parties[p.client].model.params.entities;
  };
  for (int round = 0; round < 6; ++round) {
    uploaded.clear();
    std::map<ClientId, Matrix> prior;
    for (const Party& p : st.parties) prior[p.id] = p.model.params.entities;
    RunRound(st, hooks);
    const auto& sel = st.telemetry.back().selected;
    ASSERT_EQ(uploaded.size(), sel.size());
    for (const Party& p : st.parties) {
      const auto ids = st.registry.LocalToGlobal(p.id);
      const bool selected = std::count(sel.begin(), sel.end(), p.id) > 0;
      if (!selected) {
        EXPECT_EQ(MaxAbsDiff(p.model.params.entities, prior[p.id]), 0.0);
        continue;
      }
      for (size_t l = 0; l < ids.size(); ++l) {
        Vector sum = Vector::Zero(cfg.dim);
        int cnt = 0;
        for (ClientId h : sel) {
          if (auto hl = st.registry.GlobalToLocal(h, ids[l])) {
            sum += uploaded[h].row(*hl).transpose();
            ++cnt;
          }
        }
        const Vector want = sum / cnt;
        const Vector got = p.model.params.entities.row(l).transpose();
        ASSERT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(Federation, SecureAndPlaintextModesAgree) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 4);
  const FederationState secure = RunTraining(cfg, toy.set.shards, toy.bench);
  cfg.secure_aggregation = false;
  const FederationState plain = RunTraining(cfg, toy.set.shards, toy.bench);
  for (size_t i = 0; i < secure.parties.size(); ++i) {
    EXPECT_LT(MaxParamDiff(secure.parties[i].model.params, plain.parties[i].model.params), 1e-7);
  }
}

// With one client and LDP off, federated training differs from local
// training only by fixed-point rounding.
TEST(Federation, SingleClientMatchesLocal) {
  testing::ToyOptions o;
  o.clients = 1;
  const auto toy = MakeToyPipeline(o);
  FederationConfig cfg = ToyConfig(1, 4);
  cfg.dp_mode = DpMode::kOff;
  const FederationState fed = RunTraining(cfg, toy.set.shards, toy.bench);
  cfg.mode = TrainingMode::kLocal;
  const FederationState loc = RunTraining(cfg, toy.set.shards, toy.bench);
  EXPECT_LT(MaxParamDiff(fed.parties[0].model.params, loc.parties[0].model.params), 1e-8);
}

TEST(Federation, LossDecreasesOverFirstRounds) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 10);
  cfg.dp.noise_scale = 0.0;
  const FederationState st = RunTraining(cfg, toy.set.shards, toy.bench);
  ASSERT_EQ(st.telemetry.size(), 10u);
  for (size_t t = 1; t < st.telemetry.size(); ++t) {
    EXPECT_LT(st.telemetry[t].mean_client_loss, st.telemetry[t - 1].mean_client_loss)
        << "round " << t;
  }
}

TEST(Federation, StepModeLdpBoundsEveryGradient) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 2);
  cfg.dp_mode = DpMode::kStep;
  cfg.dp.noise_scale = 0.2;
  cfg.dp.clip = 0.1;
  EXPECT_EQ(cfg.dp.EpsilonBound(), 1.0);
  const FederationState st = RunTraining(cfg, toy.set.shards, toy.bench);
  EXPECT_EQ(st.round, 2);
  for (const Party& p : st.parties) EXPECT_TRUE(AllFinite(p.model.params));
}

TEST(Federation, DeltaModeClipsOutgoingUpdate) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(2, 0);
  cfg.dp.clip = 1e-3;
  cfg.dp.noise_scale = 0.0;
  cfg.adamw.learning_rate = 0.5;
  FederationState st = InitFederation(cfg, toy.set.shards, toy.bench);
  Party p = st.parties[0];
  const ClientUpdateResult r = ClientUpdate(p, cfg, &st.keyrings[0], 0);
  ForEachBlock(r.delta, [&](std::span<const double> b) {
    for (double x : b) EXPECT_LE(std::fabs(x), 1e-3);
  });
}

TEST(Federation, MismatchedInputsAreConfigErrors) {
  const auto& toy = Toy();
  FederationConfig cfg = ToyConfig(3, 1);
  EXPECT_THROW(InitFederation(cfg, toy.set.shards, toy.bench), Error);
  EXPECT_THROW(RunBaseline(TrainingMode::kFedNgdb, ToyConfig(2, 1), toy.set.shards, toy.bench),
               Error);
}

TEST(MakeExamples, PositivesAreTrainAnswers) {
  const auto& toy = Toy();
  const FederationConfig cfg = ToyConfig(2, 0);
  const FederationState st = InitFederation(cfg, toy.set.shards, toy.bench);
  const Party& p = st.parties[0];
  Rng rng(1);
  const auto ex = MakeExamples(p.train, p.model.vocab, 5, rng);
  EXPECT_EQ(ex.size(), p.train.size());
  for (const TrainExample& e : ex) {
    EXPECT_EQ(e.negatives.size(), 5u);
    const EntityId pos = p.model.vocab.entities()[e.positive];
    bool found = false;
    for (const QuerySample& s : p.train) {
      if (ToDnf(s.query.root) == e.query &&
          std::binary_search(s.answers_train.begin(), s.answers_train.end(), pos)) {
        found = true;
      }
    }
    EXPECT_TRUE(found);
  }
}

TEST(Telemetry, CsvLayout) {
  const auto dir = testing::TempDir("telemetry");
  std::vector<RoundTelemetry> rows = {{0, 1.5, {0, 2}, 3.0}};
  WriteTelemetry(dir / "t.csv", rows);
  std::ifstream in(dir / "t.csv");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header, "round,mean_client_loss,selected_clients,wall_ms");
  EXPECT_EQ(line, "0,1.5,0;2,3");
}

}  // namespace
}  // namespace fedngdb
