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

// Directory layouts shared by the command-line tool and the bindings.
//
//   <shards>/entity_vocab.tsv, relation_vocab.tsv
//   <shards>/client_<i>/{train,valid,test}.tsv (+ vocab copies)

#ifndef FEDNGDB_PIPELINE_H_
#define FEDNGDB_PIPELINE_H_

#include <filesystem>
#include <string>
#include <vector>

#include "fedngdb/kg_store.h"

namespace fedngdb {

struct ShardSet {
  Vocabularies vocab;
  std::vector<StagedShard> shards;
};

void WriteShardSet(const std::filesystem::path& dir, const ShardSet& set);
// Reads client_0, client_1, ... until the first missing index.
ShardSet ReadShardSet(const std::filesystem::path& dir);

// Splits `graph` into cfg.n_clients staged shards. Each client's stage
// split uses DeriveSeed(cfg.seed, "stage", {client}).
std::vector<StagedShard> SplitAndStage(const Graph& graph, const SplitConfig& cfg);

// SHA-256 over the relative paths and contents of every regular file below
// `dir`, in lexicographic path order. Files named in `exclude` are skipped.
std::string DirectoryDigest(const std::filesystem::path& dir,
                            const std::vector<std::string>& exclude = {});
std::string FileDigest(const std::filesystem::path& path);

}  // namespace fedngdb

#endif  // FEDNGDB_PIPELINE_H_
