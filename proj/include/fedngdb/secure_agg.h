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

// Masked secret aggregation of entity embeddings.
//
// Every client adds a pre-shared random mask to its local entity rows before
// upload. The server averages perturbed rows per global entity over the
// selected clients that hold it; each client then subtracts the average of
// the masks of those same holders and obtains the plaintext mean.
//
// Values travel as 64-bit fixed point (40 fractional bits) in the ring of
// integers mod 2^64. Masks are uniform over the whole ring, so a masked word
// is uniform whatever the plaintext, and mask cancellation is exact integer
// arithmetic rather than a floating-point approximation.

#ifndef FEDNGDB_SECURE_AGG_H_
#define FEDNGDB_SECURE_AGG_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedngdb/common.h"
#include "fedngdb/crypto.h"
#include "fedngdb/encoder.h"

namespace fedngdb {

constexpr int kFractionalBits = 40;
// Plaintext magnitudes must stay below this; leaves headroom for sums of
// up to 127 clients without leaving the signed range.
constexpr double kFixedPointLimit = 65536.0;

// Throws a numeric error for non-finite or out-of-range values.
uint64_t EncodeFixed(double x);
double DecodeFixed(uint64_t word);
// Mean of `count` encoded values whose ring sum is `sum`.
double DecodeMean(uint64_t sum, int count);

// Global entity table plus, per client, the sorted local->global index map
// (the sparse form of the mapping matrix) and the induced existence
// indicator. Immutable after construction.
class ClientRegistry {
 public:
  ClientRegistry() = default;
  // `client_entities[i]` lists client i's global entity ids. Each list must
  // be duplicate-free with ids in [0, n_global); every global id must belong
  // to at least one client.
  ClientRegistry(size_t n_global,
                 std::vector<std::vector<EntityId>> client_entities);

  size_t num_clients() const { return local_to_global_.size(); }
  size_t num_entities() const { return holders_.size(); }

  std::span<const EntityId> LocalToGlobal(ClientId c) const;
  std::optional<int> GlobalToLocal(ClientId c, EntityId e) const;
  // v^c(e)
  bool Exists(ClientId c, EntityId e) const;
  // Clients holding e, ascending.
  std::span<const ClientId> Holders(EntityId e) const;
  // c(e) over a set of selected clients.
  int Count(EntityId e, std::span<const ClientId> selected) const;

 private:
  void CheckClient(ClientId c) const;

  std::vector<std::vector<EntityId>> local_to_global_;
  std::vector<std::vector<ClientId>> holders_;
};

// A client's perturbation: one ring word per local entity coordinate, plus a
// block shaped like its operator parameters for generic parameter
// aggregation.
struct MaskShare {
  ClientId owner = 0;
  size_t rows = 0;
  size_t dim = 0;
  std::vector<uint64_t> entity;    // rows x dim, row-major
  std::vector<uint64_t> operator_block;
  // Seed for per-round remasking; 0 when the mask is static.
  uint64_t remask_seed = 0;

  bool operator==(const MaskShare&) const = default;

  std::vector<uint8_t> Serialize() const;
  static MaskShare Deserialize(std::span<const uint8_t> bytes);

  // The entity mask in effect for `round` (the static mask when
  // remask_seed is 0).
  std::vector<uint64_t> EntityMaskForRound(int64_t round) const;
};

enum class MaskMode {
  kUniform,  // uniform over the ring
  kZero,     // plaintext passthrough, tests only
};

// One message the server can see. `bytes` is the exact content.
struct ServerMessage {
  int64_t round = 0;
  std::string phase;
  std::string sender;
  std::string receiver;
  std::span<const uint8_t> bytes;
};

using MessageObserver = std::function<void(const ServerMessage&)>;

// Audit log of server-visible traffic. Only digests are retained.
class Transcript {
 public:
  struct Record {
    int64_t round;
    std::string phase, sender, receiver, payload_digest;
    size_t payload_bytes;
  };

  void set_observer(MessageObserver observer) { observer_ = std::move(observer); }
  void Log(int64_t round, const std::string& phase, const std::string& sender,
           const std::string& receiver, std::span<const uint8_t> bytes);

  const std::vector<Record>& records() const { return records_; }
  size_t size() const { return records_.size(); }
  void WriteJsonl(const std::filesystem::path& path) const;

 private:
  std::vector<Record> records_;
  MessageObserver observer_;
};

std::string ClientName(ClientId c);

struct MaskSetupConfig {
  DhParams dh = DhParams::Default();
  MaskMode mode = MaskMode::kUniform;
  bool remask_each_round = false;
  uint64_t seed = 0;
  // Shape of each client's operator block (entries); may be empty.
  std::vector<size_t> operator_sizes;
  // Called on every envelope while the server relays it. Tests use it to
  // tamper with ciphertexts.
  std::function<void(EncryptedEnvelope&)> relay_hook;
};

// What one client knows after setup: its DH secret and every owner's share.
struct MaskKeyring {
  ClientId self = 0;
  std::map<ClientId, MaskShare> shares;

  const MaskShare& Get(ClientId owner) const;
};

// Builds every client's share from its own stream, runs pairwise DH, and
// relays each share to every other client as an authenticated envelope
// through the server. Throws a protocol error if any envelope fails.
std::vector<MaskKeyring> SetupMasks(const ClientRegistry& registry, int dim,
                                    const MaskSetupConfig& cfg,
                                    Transcript* transcript = nullptr);

// Builds a share from explicit real-valued masks (encoded to fixed point).
MaskShare MakeShare(ClientId owner, const Matrix& entity_mask,
                    std::span<const double> operator_mask = {});

struct MaskedPayload {
  ClientId client = 0;
  size_t dim = 0;
  std::vector<uint64_t> rows;  // local rows x dim, E + mask

  std::vector<uint8_t> Serialize() const;
};

// E_t^i + E_r^i over the client's local rows.
MaskedPayload MaskedUpload(ClientId client, const Matrix& entities,
                           const MaskShare& own, int64_t round);

// Server side of the entity aggregation: per-entity ring sums over the
// selected holders and the counts c(e). Rows with c(e) = 0 are untouched.
struct PerturbedTable {
  size_t dim = 0;
  std::vector<uint64_t> sums;  // n_global x dim
  std::vector<int> counts;     // n_global
  std::vector<ClientId> selected;
  int64_t round = 0;

  std::vector<uint8_t> Serialize() const;
  // Perturbed mean of row e (what the server computes as E^r[e]); NaN for
  // untouched rows.
  std::vector<double> PerturbedRow(EntityId e) const;
};

// Requires payloads from exactly the selected clients with shapes matching
// the registry; otherwise a protocol error.
PerturbedTable ServerAggregateEntities(std::span<const MaskedPayload> payloads,
                                       const ClientRegistry& registry,
                                       std::span<const ClientId> selected,
                                       int64_t round);

// Client side: subtracts the holders' mask average from the client's slice.
// Rows with c(e) = 0 keep their value from `previous`.
Matrix ClientUnmask(const PerturbedTable& table, const MaskKeyring& keys,
                    const ClientRegistry& registry, ClientId client,
                    const Matrix& previous);

// Generic masked mean of equal-length vectors (every client holds every
// coordinate): each party uploads values + mask, the server sums, and any
// party holding all masks recovers the mean.
std::vector<uint64_t> MaskVector(std::span<const double> values,
                                 std::span<const uint64_t> mask);
std::vector<uint64_t> RingSum(std::span<const std::vector<uint64_t>> uploads);
std::vector<double> UnmaskMean(std::span<const uint64_t> sum,
                               std::span<const std::vector<uint64_t>> masks);

}  // namespace fedngdb

#endif  // FEDNGDB_SECURE_AGG_H_
