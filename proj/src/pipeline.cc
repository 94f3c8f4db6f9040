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

#include "fedngdb/pipeline.h"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace fedngdb {

namespace fs = std::filesystem;

namespace {

fs::path ClientDir(const fs::path& dir, size_t i) {
  return dir / ("client_" + std::to_string(i));
}

std::string ReadAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void WriteShardSet(const fs::path& dir, const ShardSet& set) {
  fs::create_directories(dir);
  SaveVocabularies(dir, set.vocab);
  for (size_t i = 0; i < set.shards.size(); ++i) {
    WriteShard(ClientDir(dir, i), set.shards[i], set.vocab);
  }
}

ShardSet ReadShardSet(const fs::path& dir) {
  if (!fs::is_directory(dir)) Fail(ErrorKind::kIo, "no shard directory " + dir.string());
  ShardSet set;
  set.vocab = LoadVocabularies(dir);
  for (size_t i = 0; fs::is_directory(ClientDir(dir, i)); ++i) {
    set.shards.push_back(ReadShard(ClientDir(dir, i), set.vocab, static_cast<ClientId>(i)));
  }
  if (set.shards.empty()) Fail(ErrorKind::kIo, "no client_0 shard in " + dir.string());
  return set;
}

std::vector<StagedShard> SplitAndStage(const Graph& graph, const SplitConfig& cfg) {
  std::vector<Graph> parts = SplitClients(graph, cfg);
  std::vector<StagedShard> out;
  for (size_t i = 0; i < parts.size(); ++i) {
    out.push_back(StageShard(parts[i], cfg.ratios, DeriveSeed(cfg.seed, "stage", {i}),
                             static_cast<ClientId>(i)));
  }
  return out;
}

std::string FileDigest(const fs::path& path) { return Sha256Hex(ReadAll(path)); }

std::string DirectoryDigest(const fs::path& dir, const std::vector<std::string>& exclude) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (std::find(exclude.begin(), exclude.end(), name) != exclude.end()) continue;
    files.push_back(fs::relative(entry.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const fs::path& f : files) {
    acc += f.generic_string();
    acc += '\0';
    acc += FileDigest(dir / f);
    acc += '\n';
  }
  return Sha256Hex(acc);
}

}  // namespace fedngdb
