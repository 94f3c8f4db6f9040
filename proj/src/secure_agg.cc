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

#include "fedngdb/secure_agg.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace fedngdb {
namespace {

class ByteWriter {
 public:
  void U32(uint32_t v) { Le(v, 4); }
  void U64(uint64_t v) { Le(v, 8); }
  void Words(std::span<const uint64_t> w) {
    for (uint64_t v : w) U64(v);
  }
  std::vector<uint8_t> Take() { return std::move(out_); }

 private:
  void Le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> in) : in_(in) {}
  uint32_t U32() { return static_cast<uint32_t>(Le(4)); }
  uint64_t U64() { return Le(8); }
  std::vector<uint64_t> Words(uint64_t n) {
    if (n > remaining() / 8) Fail(ErrorKind::kProtocol, "truncated message");
    std::vector<uint64_t> w(n);
    for (auto& v : w) v = U64();
    return w;
  }
  size_t remaining() const { return in_.size() - pos_; }

 private:
  uint64_t Le(int n) {
    if (remaining() < static_cast<size_t>(n)) {
      Fail(ErrorKind::kProtocol, "truncated message");
    }
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};


}  // namespace

uint64_t EncodeFixed(double x) {
  if (!std::isfinite(x) || std::fabs(x) >= kFixedPointLimit) {
    Fail(ErrorKind::kNumeric,
         "value outside the fixed-point range: " + std::to_string(x));
  }
  int64_t v = std::llround(std::ldexp(x, kFractionalBits));
  return static_cast<uint64_t>(v);
}

double DecodeFixed(uint64_t word) {
  return std::ldexp(static_cast<double>(static_cast<int64_t>(word)),
                    -kFractionalBits);
}

double DecodeMean(uint64_t sum, int count) {
  return DecodeFixed(sum) / static_cast<double>(count);
}

ClientRegistry::ClientRegistry(size_t n_global,
                               std::vector<std::vector<EntityId>> client_entities)
    : local_to_global_(std::move(client_entities)), holders_(n_global) {
  for (size_t c = 0; c < local_to_global_.size(); ++c) {
    auto& ids = local_to_global_[c];
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      Fail(ErrorKind::kVocabulary,
           "duplicate entity in the index map of client " + std::to_string(c));
    }
    for (EntityId e : ids) {
      if (e < 0 || static_cast<size_t>(e) >= n_global) {
        Fail(ErrorKind::kVocabulary, "entity id out of range in client " +
                                         std::to_string(c));
      }
      holders_[e].push_back(static_cast<ClientId>(c));
    }
  }
  for (size_t e = 0; e < n_global; ++e) {
    if (holders_[e].empty()) {
      Fail(ErrorKind::kVocabulary,
           "entity " + std::to_string(e) + " belongs to no client");
    }
  }
}

void ClientRegistry::CheckClient(ClientId c) const {
  if (c < 0 || static_cast<size_t>(c) >= local_to_global_.size()) {
    Fail(ErrorKind::kProtocol, "unknown client " + std::to_string(c));
  }
}

std::span<const EntityId> ClientRegistry::LocalToGlobal(ClientId c) const {
  CheckClient(c);
  return local_to_global_[c];
}

std::optional<int> ClientRegistry::GlobalToLocal(ClientId c, EntityId e) const {
  CheckClient(c);
  const auto& ids = local_to_global_[c];
  auto it = std::lower_bound(ids.begin(), ids.end(), e);
  if (it == ids.end() || *it != e) return std::nullopt;
  return static_cast<int>(it - ids.begin());
}

bool ClientRegistry::Exists(ClientId c, EntityId e) const {
  return GlobalToLocal(c, e).has_value();
}

std::span<const ClientId> ClientRegistry::Holders(EntityId e) const {
  if (e < 0 || static_cast<size_t>(e) >= holders_.size()) {
    Fail(ErrorKind::kVocabulary, "unknown entity " + std::to_string(e));
  }
  return holders_[e];
}

int ClientRegistry::Count(EntityId e, std::span<const ClientId> selected) const {
  int n = 0;
  for (ClientId c : Holders(e)) {
    if (std::find(selected.begin(), selected.end(), c) != selected.end()) ++n;
  }
  return n;
}

std::vector<uint8_t> MaskShare::Serialize() const {
  ByteWriter w;
  w.U32(static_cast<uint32_t>(owner));
  w.U64(rows);
  w.U64(dim);
  w.U64(operator_block.size());
  w.U64(remask_seed);
  w.Words(entity);
  w.Words(operator_block);
  return w.Take();
}

MaskShare MaskShare::Deserialize(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  MaskShare s;
  s.owner = static_cast<ClientId>(r.U32());
  s.rows = r.U64();
  s.dim = r.U64();
  uint64_t n_op = r.U64();
  s.remask_seed = r.U64();
  if (s.dim != 0 && s.rows > std::numeric_limits<uint64_t>::max() / s.dim) {
    Fail(ErrorKind::kProtocol, "malformed mask share");
  }
  s.entity = r.Words(s.rows * s.dim);
  s.operator_block = r.Words(n_op);
  if (r.remaining() != 0) Fail(ErrorKind::kProtocol, "malformed mask share");
  return s;
}

std::vector<uint64_t> MaskShare::EntityMaskForRound(int64_t round) const {
  if (remask_seed == 0) return entity;
  Rng rng(DeriveSeed(remask_seed, "remask", {static_cast<uint64_t>(round)}));
  std::vector<uint64_t> out = entity;
  for (auto& v : out) v += rng.NextU64();
  return out;
}

const MaskShare& MaskKeyring::Get(ClientId owner) const {
  auto it = shares.find(owner);
  if (it == shares.end()) {
    Fail(ErrorKind::kProtocol, "client " + std::to_string(self) +
                                   " holds no mask share of client " +
                                   std::to_string(owner));
  }
  return it->second;
}

std::string ClientName(ClientId c) { return "client:" + std::to_string(c); }

void Transcript::Log(int64_t round, const std::string& phase,
                     const std::string& sender, const std::string& receiver,
                     std::span<const uint8_t> bytes) {
  records_.push_back(
      {round, phase, sender, receiver, Sha256Hex(bytes), bytes.size()});
  if (observer_) observer_(ServerMessage{round, phase, sender, receiver, bytes});
}

void Transcript::WriteJsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : records_) {
    nlohmann::json j = {{"round", r.round},
                        {"phase", r.phase},
                        {"sender", r.sender},
                        {"receiver", r.receiver},
                        {"payload_digest", r.payload_digest},
                        {"payload_bytes", r.payload_bytes}};
    out << j.dump() << '\n';
  }
}

std::vector<MaskKeyring> SetupMasks(const ClientRegistry& registry, int dim,
                                    const MaskSetupConfig& cfg,
                                    Transcript* transcript) {
  const size_t n = registry.num_clients();
  if (n == 0) Fail(ErrorKind::kProtocol, "mask setup needs at least one client");
  if (dim <= 0) Fail(ErrorKind::kConfig, "embedding dimension must be positive");
  if (!cfg.operator_sizes.empty() && cfg.operator_sizes.size() != n) {
    Fail(ErrorKind::kConfig, "operator_sizes must list every client");
  }

  std::vector<MaskShare> own(n);
  for (size_t i = 0; i < n; ++i) {
    MaskShare& s = own[i];
    s.owner = static_cast<ClientId>(i);
    s.rows = registry.LocalToGlobal(s.owner).size();
    s.dim = static_cast<size_t>(dim);
    s.entity.assign(s.rows * s.dim, 0);
    s.operator_block.assign(cfg.operator_sizes.empty() ? 0 : cfg.operator_sizes[i], 0);
    if (cfg.mode == MaskMode::kUniform) {
      Rng rng(DeriveSeed(cfg.seed, "mask-share", {i}));
      for (auto& v : s.entity) v = rng.NextU64();
      for (auto& v : s.operator_block) v = rng.NextU64();
    }
    if (cfg.remask_each_round && cfg.mode == MaskMode::kUniform) {
      s.remask_seed = DeriveSeed(cfg.seed, "remask-seed", {i}) | 1;
    }
  }

  // Each client's DH key pair; the public halves are broadcast via the server.
  std::vector<BigInt> secrets, publics;
  for (size_t i = 0; i < n; ++i) {
    Rng rng(DeriveSeed(cfg.seed, "dh-secret", {i}));
    secrets.push_back(DhRandomSecret(cfg.dh, rng));
    publics.push_back(DhPublic(cfg.dh, secrets.back()));
    if (transcript) {
      auto bytes = publics.back().ToBytes();
      transcript->Log(-1, "dh-public", ClientName(static_cast<ClientId>(i)),
                      "all", bytes);
    }
  }

  std::vector<MaskKeyring> keyrings(n);
  for (size_t j = 0; j < n; ++j) {
    keyrings[j].self = static_cast<ClientId>(j);
    keyrings[j].shares.emplace(static_cast<ClientId>(j), own[j]);
  }
  for (size_t i = 0; i < n; ++i) {
    const std::vector<uint8_t> plain = own[i].Serialize();
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const ClientId si = static_cast<ClientId>(i), rj = static_cast<ClientId>(j);
      SymmetricKey send_key = DeriveChannelKey(
          cfg.dh, DhSharedSecret(cfg.dh, secrets[i], publics[j]), si, rj);
      std::array<uint8_t, 12> nonce;
      Rng nrng(DeriveSeed(cfg.seed, "nonce", {i, j}));
      for (auto& b : nonce) b = static_cast<uint8_t>(nrng.NextU64());
      EncryptedEnvelope env = Seal(send_key, si, rj, nonce, plain);

      // Server relay.
      if (cfg.relay_hook) cfg.relay_hook(env);
      if (transcript) {
        auto bytes = env.Serialize();
        transcript->Log(-1, "mask-share", ClientName(si), ClientName(rj), bytes);
      }

      SymmetricKey recv_key = DeriveChannelKey(
          cfg.dh, DhSharedSecret(cfg.dh, secrets[j], publics[i]), rj, si);
      MaskShare got = MaskShare::Deserialize(Open(recv_key, env));
      if (got.owner != si) {
        Fail(ErrorKind::kProtocol, "mask share owner mismatch");
      }
      keyrings[j].shares.emplace(si, std::move(got));
    }
  }
  return keyrings;
}

MaskShare MakeShare(ClientId owner, const Matrix& entity_mask,
                    std::span<const double> operator_mask) {
  MaskShare s;
  s.owner = owner;
  s.rows = static_cast<size_t>(entity_mask.rows());
  s.dim = static_cast<size_t>(entity_mask.cols());
  for (Eigen::Index k = 0; k < entity_mask.size(); ++k) {
    s.entity.push_back(EncodeFixed(entity_mask.data()[k]));
  }
  for (double v : operator_mask) s.operator_block.push_back(EncodeFixed(v));
  return s;
}

std::vector<uint8_t> MaskedPayload::Serialize() const {
  ByteWriter w;
  w.U32(static_cast<uint32_t>(client));
  w.U64(dim);
  w.Words(rows);
  return w.Take();
}

MaskedPayload MaskedUpload(ClientId client, const Matrix& entities,
                           const MaskShare& own, int64_t round) {
  if (own.owner != client || own.rows != static_cast<size_t>(entities.rows()) ||
      own.dim != static_cast<size_t>(entities.cols())) {
    Fail(ErrorKind::kProtocol, "mask share does not fit the entity table of " +
                                   ClientName(client));
  }
  std::vector<uint64_t> mask = own.EntityMaskForRound(round);
  MaskedPayload p;
  p.client = client;
  p.dim = own.dim;
  p.rows.resize(mask.size());
  for (size_t k = 0; k < mask.size(); ++k) {
    p.rows[k] = EncodeFixed(entities.data()[k]) + mask[k];
  }
  return p;
}

std::vector<uint8_t> PerturbedTable::Serialize() const {
  ByteWriter w;
  w.U64(static_cast<uint64_t>(round));
  w.U64(dim);
  w.U64(counts.size());
  for (int c : counts) w.U32(static_cast<uint32_t>(c));
  w.Words(sums);
  return w.Take();
}

std::vector<double> PerturbedTable::PerturbedRow(EntityId e) const {
  std::vector<double> row(dim, std::numeric_limits<double>::quiet_NaN());
  if (counts.at(e) == 0) return row;
  for (size_t k = 0; k < dim; ++k) row[k] = DecodeMean(sums[e * dim + k], counts[e]);
  return row;
}

PerturbedTable ServerAggregateEntities(std::span<const MaskedPayload> payloads,
                                       const ClientRegistry& registry,
                                       std::span<const ClientId> selected,
                                       int64_t round) {
  std::vector<ClientId> sel(selected.begin(), selected.end());
  std::sort(sel.begin(), sel.end());
  if (std::adjacent_find(sel.begin(), sel.end()) != sel.end()) {
    Fail(ErrorKind::kProtocol, "duplicate client in the selected set");
  }
  if (payloads.size() != sel.size()) {
    Fail(ErrorKind::kProtocol, "expected " + std::to_string(sel.size()) +
                                   " payloads, got " +
                                   std::to_string(payloads.size()));
  }
  // Fixed summation order: ascending client id.
  std::vector<const MaskedPayload*> ordered(sel.size(), nullptr);
  size_t dim = payloads.empty() ? 0 : payloads[0].dim;
  for (const auto& p : payloads) {
    auto it = std::lower_bound(sel.begin(), sel.end(), p.client);
    if (it == sel.end() || *it != p.client) {
      Fail(ErrorKind::kProtocol, "payload from unselected " + ClientName(p.client));
    }
    auto& slot = ordered[it - sel.begin()];
    if (slot) Fail(ErrorKind::kProtocol, "two payloads from " + ClientName(p.client));
    slot = &p;
    if (p.dim != dim || dim == 0 ||
        p.rows.size() != registry.LocalToGlobal(p.client).size() * dim) {
      Fail(ErrorKind::kProtocol, "payload shape mismatch from " +
                                     ClientName(p.client));
    }
  }

  PerturbedTable t;
  t.dim = dim;
  t.round = round;
  t.selected = sel;
  t.sums.assign(registry.num_entities() * dim, 0);
  t.counts.assign(registry.num_entities(), 0);
  for (const MaskedPayload* p : ordered) {
    auto ids = registry.LocalToGlobal(p->client);
    for (size_t l = 0; l < ids.size(); ++l) {
      const size_t e = static_cast<size_t>(ids[l]);
      ++t.counts[e];
      for (size_t k = 0; k < dim; ++k) t.sums[e * dim + k] += p->rows[l * dim + k];
    }
  }
  return t;
}

Matrix ClientUnmask(const PerturbedTable& table, const MaskKeyring& keys,
                    const ClientRegistry& registry, ClientId client,
                    const Matrix& previous) {
  auto ids = registry.LocalToGlobal(client);
  const size_t d = table.dim;
  if (previous.rows() != static_cast<Eigen::Index>(ids.size()) ||
      previous.cols() != static_cast<Eigen::Index>(d)) {
    Fail(ErrorKind::kProtocol, "entity table shape mismatch at " + ClientName(client));
  }
  std::map<ClientId, std::vector<uint64_t>> masks;
  for (ClientId j : table.selected) {
    masks.emplace(j, keys.Get(j).EntityMaskForRound(table.round));
  }
  Matrix out = previous;
  for (size_t l = 0; l < ids.size(); ++l) {
    const EntityId e = ids[l];
    const int c = table.counts[e];
    if (c == 0) continue;
    std::vector<uint64_t> acc(table.sums.begin() + e * d,
                              table.sums.begin() + (e + 1) * d);
    for (ClientId j : registry.Holders(e)) {
      auto it = masks.find(j);
      if (it == masks.end()) continue;
      const size_t row = static_cast<size_t>(*registry.GlobalToLocal(j, e));
      for (size_t k = 0; k < d; ++k) acc[k] -= it->second[row * d + k];
    }
    for (size_t k = 0; k < d; ++k) out(l, k) = DecodeMean(acc[k], c);
  }
  return out;
}

std::vector<uint64_t> MaskVector(std::span<const double> values,
                                 std::span<const uint64_t> mask) {
  if (values.size() != mask.size()) {
    Fail(ErrorKind::kProtocol, "mask length does not match the values");
  }
  std::vector<uint64_t> out(values.size());
  for (size_t k = 0; k < values.size(); ++k) out[k] = EncodeFixed(values[k]) + mask[k];
  return out;
}

std::vector<uint64_t> RingSum(std::span<const std::vector<uint64_t>> uploads) {
  if (uploads.empty()) Fail(ErrorKind::kProtocol, "nothing to aggregate");
  std::vector<uint64_t> sum(uploads[0].size(), 0);
  for (const auto& u : uploads) {
    if (u.size() != sum.size()) Fail(ErrorKind::kProtocol, "upload length mismatch");
    for (size_t k = 0; k < sum.size(); ++k) sum[k] += u[k];
  }
  return sum;
}

std::vector<double> UnmaskMean(std::span<const uint64_t> sum,
                               std::span<const std::vector<uint64_t>> masks) {
  if (masks.empty()) Fail(ErrorKind::kProtocol, "no masks supplied");
  std::vector<uint64_t> acc(sum.begin(), sum.end());
  for (const auto& m : masks) {
    if (m.size() != acc.size()) Fail(ErrorKind::kProtocol, "mask length mismatch");
    for (size_t k = 0; k < acc.size(); ++k) acc[k] -= m[k];
  }
  std::vector<double> out(acc.size());
  const int n = static_cast<int>(masks.size());
  for (size_t k = 0; k < acc.size(); ++k) out[k] = DecodeMean(acc[k], n);
  return out;
}

}  // namespace fedngdb
