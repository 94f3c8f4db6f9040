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

// Federated training rounds and the local / central baselines.
//
// In fedngdb mode every client owns a local model over the entities and
// relations of its shard. Each round a seeded subset of clients trains on
// its in-graph queries; entity tables are then averaged through masked
// secret aggregation while the operator networks and relation embeddings
// are averaged in plaintext by the server and broadcast back to everyone.

#ifndef FEDNGDB_FEDERATION_H_
#define FEDNGDB_FEDERATION_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedngdb/encoder.h"
#include "fedngdb/kg_store.h"
#include "fedngdb/query_sampler.h"
#include "fedngdb/secure_agg.h"

namespace fedngdb {

enum class TrainingMode { kFedNgdb, kLocal, kCentral };
const char* TrainingModeName(TrainingMode mode);
TrainingMode ParseTrainingMode(std::string_view name);

// Where local differential privacy is applied.
enum class DpMode {
  kDelta,  // once per round on the outgoing parameter delta
  kStep,   // on every gradient before the optimizer step
  kOff,
};
const char* DpModeName(DpMode mode);
DpMode ParseDpMode(std::string_view name);

struct FederationConfig {
  TrainingMode mode = TrainingMode::kFedNgdb;
  int n_clients = 3;
  double client_fraction = 1.0;
  int rounds = 100;
  int local_epochs = 1;
  int batch_size = 64;
  int dim = 32;
  double margin = 1.0;
  int negatives = 16;
  AdamWConfig adamw;
  DpConfig dp;
  DpMode dp_mode = DpMode::kDelta;
  uint64_t seed = 0;
  // false: entity tables are averaged in plaintext (test oracle).
  bool secure_aggregation = true;
  bool remask_each_round = false;
  // Use the toy p=23 DH group (tests only).
  bool dh_test_group = false;
  // Evaluation.
  std::vector<int> k_list = {1, 3, 10};
  bool filtered = true;

  int SelectedPerRound() const;
};

// Throws a configuration error naming the offending field.
void ValidateConfig(const FederationConfig& cfg);

// Flat "key = value" document; '#' starts a comment. Unknown keys and
// malformed values are configuration errors.
FederationConfig ParseConfig(std::string_view text,
                             const FederationConfig& defaults = {});
FederationConfig LoadConfig(const std::filesystem::path& path,
                            const FederationConfig& defaults = {});
std::string FormatConfig(const FederationConfig& cfg);

// Sorted ids of the clients selected in `round`; a pure function of
// (seed, n, fraction, round).
std::vector<ClientId> SelectClients(uint64_t seed, int n_clients,
                                    double fraction, int64_t round);

struct Party {
  ClientId id = 0;
  LocalModel model;
  AdamWState opt;
  std::vector<QuerySample> train;
  Rng rng;
};

struct RoundTelemetry {
  int64_t round = 0;
  double mean_client_loss = 0.0;
  std::vector<ClientId> selected;
  double wall_ms = 0.0;
};

struct FederationState {
  FederationConfig config;
  // One party per client, or a single party in central mode.
  std::vector<Party> parties;
  // fedngdb only: operator nets and the global relation table. The entity
  // block is always empty.
  LocalModel server;
  ClientRegistry registry;
  OwnershipMap ownership;
  std::vector<MaskKeyring> keyrings;
  size_t n_entities = 0;
  size_t n_relations = 0;
  int64_t round = 0;
  std::vector<RoundTelemetry> telemetry;
};

// Optional instrumentation.
struct TrainingHooks {
  // Receives every server-visible message.
  Transcript* transcript = nullptr;
  // Applied to each masked payload on its way to the server (fault
  // injection in tests).
  std::function<void(MaskedPayload&)> payload_hook;
  std::function<void(const RoundTelemetry&)> on_round;
};

// Training examples for one pass over `samples`: a uniformly drawn
// positive per sample and `negatives` non-answers, as local rows.
std::vector<TrainExample> MakeExamples(std::span<const QuerySample> samples,
                                       const LocalVocab& vocab, int negatives,
                                       Rng& rng);

// Builds parties, registry and ownership, initializes every model from
// per-party seeds and, in fedngdb mode, runs mask setup and the initial
// aggregation. `shards[i].client_id` must be i.
FederationState InitFederation(const FederationConfig& cfg,
                               std::span<const StagedShard> shards,
                               const BenchmarkSet& benchmark,
                               const TrainingHooks& hooks = {});

struct ClientUpdateResult {
  MaskedPayload entities;  // empty rows in plaintext-oracle mode
  ModelState theta;        // operator nets and local relation rows
  ModelState delta;        // clipped (and noised) update, for inspection
  double mean_loss = 0.0;
};

// Runs local_epochs of training on party `p` and packages its upload.
ClientUpdateResult ClientUpdate(Party& p, const FederationConfig& cfg,
                                const MaskKeyring* keys, int64_t round);

// One round. Atomic: on error the state is left as it was and the error is
// rethrown.
void RunRound(FederationState& state, const TrainingHooks& hooks = {});

// InitFederation followed by cfg.rounds rounds. A failing round becomes a
// training error naming the round.
FederationState RunTraining(const FederationConfig& cfg,
                            std::span<const StagedShard> shards,
                            const BenchmarkSet& benchmark,
                            const TrainingHooks& hooks = {});

// RunTraining with cfg.mode forced to `mode` (local or central).
FederationState RunBaseline(TrainingMode mode, const FederationConfig& cfg,
                            std::span<const StagedShard> shards,
                            const BenchmarkSet& benchmark);

void WriteTelemetry(const std::filesystem::path& path,
                    std::span<const RoundTelemetry> rows);

}  // namespace fedngdb

#endif  // FEDNGDB_FEDERATION_H_
