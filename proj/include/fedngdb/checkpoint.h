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

// Checkpoint files.
//
// A party checkpoint is the 8-byte magic "FNGDBCK1", a little-endian u64
// header length, a JSON header (kind, party id, dim, row vocabularies,
// optimizer step, RNG state) and then the raw doubles of the parameters, the
// first moments and the second moments, each in ForEachBlock order.

#ifndef FEDNGDB_CHECKPOINT_H_
#define FEDNGDB_CHECKPOINT_H_

#include <filesystem>
#include <string>

#include "fedngdb/federation.h"

namespace fedngdb {

// Party id recorded in server.ckpt.
inline constexpr ClientId kServerParty = -2;

struct PartyCheckpoint {
  std::string kind;  // "client", "server" or "central"
  ClientId party_id = 0;
  LocalModel model;
  AdamWState opt;
  std::string rng_state;
};

void WritePartyCheckpoint(const std::filesystem::path& path,
                          const PartyCheckpoint& ckpt);
PartyCheckpoint ReadPartyCheckpoint(const std::filesystem::path& path);

// Writes client_<i>.ckpt (fedngdb, local), server.ckpt (fedngdb) or
// central.ckpt, plus metadata.json with the config and round counter.
void SaveFederation(const std::filesystem::path& dir, const FederationState& st);

// Restores a state saved by SaveFederation. Registry and ownership are
// rebuilt from `shards`; in fedngdb mode with secure aggregation the mask
// setup is replayed from the seed. Training queries come from `benchmark`
// when given.
FederationState LoadFederation(const std::filesystem::path& dir,
                               std::span<const StagedShard> shards,
                               const BenchmarkSet* benchmark = nullptr);

}  // namespace fedngdb

#endif  // FEDNGDB_CHECKPOINT_H_
