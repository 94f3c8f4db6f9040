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
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "fedngdb/secure_agg.h"

namespace fedngdb {
namespace {

DhParams ToyDh() { return DhParams::Custom(BigInt(23), BigInt(5), true); }

// Random registry: each entity held by a random non-empty client subset.
ClientRegistry RandomRegistry(Rng& rng, int n_clients, int n_entities) {
  std::vector<std::vector<EntityId>> lists(n_clients);
  for (EntityId e = 0; e < n_entities; ++e) {
    bool any = false;
    for (int c = 0; c < n_clients; ++c) {
      if (rng.Uniform01() < 0.5) {
        lists[c].push_back(e);
        any = true;
      }
    }
    if (!any) lists[rng.Below(n_clients)].push_back(e);
  }
  for (auto& l : lists) std::sort(l.begin(), l.end());
  return ClientRegistry(n_entities, lists);
}

Matrix RandomTable(Rng& rng, size_t rows, size_t dim, double scale = 1.0) {
  Matrix m(rows, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-scale, scale);
  return m;
}

TEST(FixedPoint, RoundTripWithinResolution) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.Uniform(-1000, 1000);
    EXPECT_LE(std::fabs(DecodeFixed(EncodeFixed(x)) - x), std::ldexp(1.0, -kFractionalBits - 1));
  }
  EXPECT_EQ(DecodeFixed(EncodeFixed(0.0)), 0.0);
  EXPECT_EQ(DecodeFixed(EncodeFixed(-1.5)), -1.5);
}

TEST(FixedPoint, RejectsOutOfRange) {
  for (double bad : {kFixedPointLimit, -kFixedPointLimit * 2, std::nan(""), std::numeric_limits<double>::infinity()}) {
    try {
      EncodeFixed(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    }
  }
}

TEST(FixedPoint, MeanOfRingSum) {
  const uint64_t s = EncodeFixed(1.25) + EncodeFixed(-3.5) + EncodeFixed(0.25);
  EXPECT_NEAR(DecodeMean(s, 3), -2.0 / 3.0, 1e-12);
}

TEST(Registry, RoundTripProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.Below(6));
    const int ne = 1 + static_cast<int>(rng.Below(40));
    const ClientRegistry reg = RandomRegistry(rng, n, ne);
    for (ClientId c = 0; c < n; ++c) {
      const auto l2g = reg.LocalToGlobal(c);
      for (size_t l = 0; l < l2g.size(); ++l) {
        ASSERT_EQ(reg.GlobalToLocal(c, l2g[l]), static_cast<int>(l));
        ASSERT_TRUE(reg.Exists(c, l2g[l]));
      }
    }
    std::vector<ClientId> all(n);
    for (int c = 0; c < n; ++c) all[c] = c;
    for (EntityId e = 0; e < ne; ++e) {
      const auto h = reg.Holders(e);
      ASSERT_FALSE(h.empty());
      ASSERT_TRUE(std::is_sorted(h.begin(), h.end()));
      for (ClientId c = 0; c < n; ++c) {
        ASSERT_EQ(reg.Exists(c, e), std::find(h.begin(), h.end(), c) != h.end());
        ASSERT_EQ(reg.GlobalToLocal(c, e).has_value(), reg.Exists(c, e));
      }
      ASSERT_EQ(reg.Count(e, all), static_cast<int>(h.size()));
    }
  }
}

TEST(Registry, Validation) {
  EXPECT_THROW(ClientRegistry(3, {{0, 1}, {1}}), Error);        // 2 uncovered
  EXPECT_THROW(ClientRegistry(2, {{0, 0, 1}}), Error);          // duplicate
  EXPECT_THROW(ClientRegistry(2, {{0, 1, 2}}), Error);          // out of range
  const ClientRegistry ok(2, {{0}, {1}});
  EXPECT_THROW(ok.LocalToGlobal(5), Error);
}

TEST(MaskShare, SerializeRoundTrip) {
  MaskShare s;
  s.owner = 3;
  s.rows = 2;
  s.dim = 2;
  s.entity = {1, 2, 3, UINT64_MAX};
  s.operator_block = {9};
  s.remask_seed = 77;
  EXPECT_EQ(MaskShare::Deserialize(s.Serialize()), s);
  auto bytes = s.Serialize();
  bytes.pop_back();
  EXPECT_THROW(MaskShare::Deserialize(bytes), Error);
}

TEST(MaskShare, RemaskChangesPerRoundOnlyWhenSeeded) {
  MaskShare s;
  s.rows = 1;
  s.dim = 4;
  s.entity = {1, 2, 3, 4};
  EXPECT_EQ(s.EntityMaskForRound(0), s.entity);
  EXPECT_EQ(s.EntityMaskForRound(5), s.entity);
  s.remask_seed = 11;
  EXPECT_NE(s.EntityMaskForRound(0), s.EntityMaskForRound(1));
  EXPECT_EQ(s.EntityMaskForRound(3), s.EntityMaskForRound(3));
}

struct AggRun {
  std::vector<Matrix> unmasked;
  PerturbedTable table;
  std::vector<MaskedPayload> payloads;
};

AggRun Aggregate(const ClientRegistry& reg, const std::vector<Matrix>& tables,
                 const std::vector<MaskKeyring>& keys, const std::vector<ClientId>& selected,
                 int64_t round) {
  AggRun run;
  for (ClientId c : selected) {
    run.payloads.push_back(MaskedUpload(c, tables[c], keys[c].Get(c), round));
  }
  run.table = ServerAggregateEntities(run.payloads, reg, selected, round);
  for (ClientId c : selected) {
    run.unmasked.push_back(ClientUnmask(run.table, keys[c], reg, c, tables[c]));
  }
  return run;
}

// Plaintext oracle: mean over selected holders, computed directly in doubles.
TEST(SecureAggregation, MatchesPlaintextMeanOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = trial % 2 ? 5 : 3;
    const int ne = 5 + static_cast<int>(rng.Below(20));
    const size_t dim = trial % 3 ? 8 : 1;
    const ClientRegistry reg = RandomRegistry(rng, n, ne);
    MaskSetupConfig cfg;
    cfg.dh = ToyDh();
    cfg.seed = trial;
    cfg.remask_each_round = trial % 4 == 0;
    const auto keys = SetupMasks(reg, static_cast<int>(dim), cfg);
    std::vector<Matrix> tables;
    for (int c = 0; c < n; ++c) tables.push_back(RandomTable(rng, reg.LocalToGlobal(c).size(), dim, 3.0));
    std::vector<ClientId> selected;
    for (int c = 0; c < n; ++c) {
      if (rng.Uniform01() < 0.7) selected.push_back(c);
    }
    if (selected.empty()) selected.push_back(0);
    const AggRun run = Aggregate(reg, tables, keys, selected, trial);
    for (size_t si = 0; si < selected.size(); ++si) {
      const ClientId c = selected[si];
      const auto l2g = reg.LocalToGlobal(c);
      for (size_t l = 0; l < l2g.size(); ++l) {
        const EntityId e = l2g[l];
        for (size_t k = 0; k < dim; ++k) {
          double sum = 0;
          int cnt = 0;
          for (ClientId h : selected) {
            if (auto hl = reg.GlobalToLocal(h, e)) {
              sum += tables[h](*hl, k);
              ++cnt;
            }
          }
          ASSERT_GE(cnt, 1);
          ASSERT_NEAR(run.unmasked[si](l, k), sum / cnt, 1e-9);
        }
      }
    }
    // Untouched rows keep the previous value.
    for (EntityId e = 0; e < ne; ++e) {
      if (run.table.counts[e] == 0) {
        EXPECT_TRUE(std::isnan(run.table.PerturbedRow(e)[0]));
      }
    }
  }
}

// The ring sum is order independent, so the result is bit-exact.
TEST(SecureAggregation, BitExactUnderPayloadReordering) {
  Rng rng(4);
  const ClientRegistry reg = RandomRegistry(rng, 4, 30);
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  const auto keys = SetupMasks(reg, 4, cfg);
  std::vector<Matrix> tables;
  for (int c = 0; c < 4; ++c) tables.push_back(RandomTable(rng, reg.LocalToGlobal(c).size(), 4));
  const std::vector<ClientId> sel = {0, 1, 2, 3};
  AggRun a = Aggregate(reg, tables, keys, sel, 0);
  std::vector<MaskedPayload> rev(a.payloads.rbegin(), a.payloads.rend());
  const PerturbedTable t2 = ServerAggregateEntities(rev, reg, sel, 0);
  EXPECT_EQ(t2.sums, a.table.sums);
  for (ClientId c : sel) {
    const Matrix u = ClientUnmask(t2, keys[c], reg, c, tables[c]);
    EXPECT_EQ((u - a.unmasked[c]).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(SecureAggregation, SingleHolderRecoversOwnRowsUpToQuantization) {
  const ClientRegistry reg(2, {{0}, {1}});
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  const auto keys = SetupMasks(reg, 3, cfg);
  Matrix t0(1, 3), t1(1, 3);
  t0 << 0.5, -0.25, 1.0;
  t1 << 2.0, 3.0, -4.0;
  const AggRun run = Aggregate(reg, {t0, t1}, keys, {0, 1}, 0);
  EXPECT_EQ((run.unmasked[0] - t0).norm(), 0.0);
  EXPECT_EQ((run.unmasked[1] - t1).norm(), 0.0);
}

// What the server holds never equals a client's plaintext encoding.
TEST(SecureAggregation, ServerViewIsBlind) {
  Rng rng(5);
  const ClientRegistry reg = RandomRegistry(rng, 3, 40);
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  const auto keys = SetupMasks(reg, 8, cfg);
  std::vector<Matrix> tables;
  for (int c = 0; c < 3; ++c) tables.push_back(RandomTable(rng, reg.LocalToGlobal(c).size(), 8));
  const AggRun run = Aggregate(reg, tables, keys, {0, 1, 2}, 0);
  size_t words = 0, high_bits = 0;
  for (const MaskedPayload& p : run.payloads) {
    const Matrix& t = tables[p.client];
    for (size_t i = 0; i < p.rows.size(); ++i) {
      ASSERT_NE(p.rows[i], EncodeFixed(t.data()[i]));
      high_bits += p.rows[i] >> 63;
      ++words;
    }
  }
  // Uniform ring words: the top bit is a fair coin.
  const double frac = static_cast<double>(high_bits) / words;
  EXPECT_NEAR(frac, 0.5, 4.0 * 0.5 / std::sqrt(static_cast<double>(words)));
  // The perturbed server mean is far from the true mean.
  for (EntityId e = 0; e < 40; ++e) {
    const auto row = run.table.PerturbedRow(e);
    const ClientId c = reg.Holders(e)[0];
    const double truth = run.unmasked[c](*reg.GlobalToLocal(c, e), 0);
    EXPECT_GT(std::fabs(row[0] - truth), 1e-3);
  }
}

TEST(SecureAggregation, ZeroMaskModeIsPlaintext) {
  const ClientRegistry reg(1, {{0}});
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  cfg.mode = MaskMode::kZero;
  const auto keys = SetupMasks(reg, 2, cfg);
  Matrix t(1, 2);
  t << 1.5, -2.0;
  const auto p = MaskedUpload(0, t, keys[0].Get(0), 0);
  EXPECT_EQ(p.rows[0], EncodeFixed(1.5));
}

TEST(SecureAggregation, ProtocolViolations) {
  Rng rng(6);
  const ClientRegistry reg = RandomRegistry(rng, 3, 10);
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  const auto keys = SetupMasks(reg, 2, cfg);
  std::vector<Matrix> tables;
  for (int c = 0; c < 3; ++c) tables.push_back(RandomTable(rng, reg.LocalToGlobal(c).size(), 2));
  std::vector<MaskedPayload> ps;
  for (ClientId c : {0, 1}) ps.push_back(MaskedUpload(c, tables[c], keys[c].Get(c), 0));
  auto expect_protocol = [](auto&& fn) {
    try {
      fn();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kProtocol) << e.what();
    }
  };
  const std::vector<ClientId> sel3 = {0, 1, 2};
  expect_protocol([&] { ServerAggregateEntities(ps, reg, sel3, 0); });  // missing client
  auto bad = ps;
  bad[1].rows.pop_back();
  const std::vector<ClientId> sel2 = {0, 1};
  expect_protocol([&] { ServerAggregateEntities(bad, reg, sel2, 0); });
  bad = ps;
  bad[1].client = 0;
  expect_protocol([&] { ServerAggregateEntities(bad, reg, sel2, 0); });
  MaskKeyring partial;
  partial.self = 0;
  expect_protocol([&] { partial.Get(1); });
}

TEST(MaskSetup, SharesReachEveryClientAndAreLogged) {
  Rng rng(7);
  const ClientRegistry reg = RandomRegistry(rng, 4, 12);
  MaskSetupConfig cfg;
  cfg.seed = 3;
  Transcript tr;
  const auto keys = SetupMasks(reg, 3, cfg, &tr);  // default 2048-bit group
  ASSERT_EQ(keys.size(), 4u);
  for (const MaskKeyring& k : keys) {
    ASSERT_EQ(k.shares.size(), 4u);
    for (const auto& [owner, share] : k.shares) EXPECT_EQ(share, keys[owner].Get(owner));
  }
  size_t pubs = 0, shares = 0;
  for (const auto& r : tr.records()) {
    EXPECT_EQ(r.round, -1);
    pubs += r.phase == "dh-public";
    shares += r.phase == "mask-share";
  }
  EXPECT_EQ(pubs, 4u);
  EXPECT_EQ(shares, 12u);
  // Different clients' masks are independent.
  EXPECT_NE(keys[0].Get(0).entity, keys[1].Get(1).entity);
}

TEST(MaskSetup, TamperedRelayIsRejected) {
  const ClientRegistry reg(2, {{0, 1}, {1}});
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  cfg.relay_hook = [](EncryptedEnvelope& env) { env.ciphertext[0] ^= 0x80; };
  try {
    SetupMasks(reg, 2, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
    EXPECT_NE(std::string(e.what()).find("authentication"), std::string::npos);
  }
}

TEST(MaskSetup, DeterministicForSeed) {
  const ClientRegistry reg(3, {{0, 1}, {1, 2}});
  MaskSetupConfig cfg;
  cfg.dh = ToyDh();
  cfg.seed = 9;
  const auto a = SetupMasks(reg, 2, cfg);
  const auto b = SetupMasks(reg, 2, cfg);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].shares, b[i].shares);
}

TEST(GenericMaskedMean, RecoversMean) {
  Rng rng(8);
  const size_t n = 5, len = 17;
  std::vector<std::vector<double>> vals(n, std::vector<double>(len));
  std::vector<std::vector<uint64_t>> masks(n, std::vector<uint64_t>(len));
  std::vector<std::vector<uint64_t>> ups;
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < len; ++k) {
      vals[i][k] = rng.Uniform(-5, 5);
      masks[i][k] = rng.NextU64();
    }
    ups.push_back(MaskVector(vals[i], masks[i]));
  }
  const auto mean = UnmaskMean(RingSum(ups), masks);
  for (size_t k = 0; k < len; ++k) {
    double s = 0;
    for (size_t i = 0; i < n; ++i) s += vals[i][k];
    EXPECT_NEAR(mean[k], s / n, 1e-9);
  }
}

TEST(Transcript, StoresDigestsOnly) {
  Transcript tr;
  std::vector<uint8_t> seen;
  tr.set_observer([&](const ServerMessage& m) { seen.assign(m.bytes.begin(), m.bytes.end()); });
  const std::vector<uint8_t> payload = {'a', 'b', 'c'};
  tr.Log(2, "upload", "client:0", "server", payload);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr.records()[0].payload_digest, Sha256Hex(std::string_view("abc")));
  EXPECT_EQ(tr.records()[0].payload_bytes, 3u);
  EXPECT_EQ(seen, payload);
}

}  // namespace
}  // namespace fedngdb
