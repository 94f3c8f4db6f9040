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

#include "fedngdb/query_sampler.h"

#include <algorithm>
#include <fstream>
#include <set>

namespace fedngdb {

namespace fs = std::filesystem;

namespace {

const Graph& StageGraph(const StagedShard& shard, Split split) {
  switch (split) {
    case Split::kTrain: return shard.train;
    case Split::kValid: return shard.valid;
    case Split::kTest: return shard.test;
  }
  return shard.test;
}

// Fills relations and anchors of a template by walking backwards from
// `target`. Returns false when some node has no incoming edge to follow.
bool FillBackward(QueryNode& n, EntityId target, const Graph& g, Rng& rng) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      n.anchor = target;
      return true;
    case QueryNode::Op::kProjection: {
      const auto in = g.Incoming(target);
      if (in.empty()) return false;
      const Triple& edge = in[rng.Below(in.size())];
      n.relation = edge.relation;
      return FillBackward(n.children[0], edge.head, g, rng);
    }
    case QueryNode::Op::kIntersection:
    case QueryNode::Op::kUnion:
      for (auto& c : n.children) {
        if (!FillBackward(c, target, g, rng)) return false;
      }
      return true;
  }
  return false;
}

// Rejects operators with two identical operands; they collapse the structure
// to a smaller query type.
bool HasDuplicateOperands(const QueryNode& n) {
  for (size_t i = 0; i < n.children.size(); ++i) {
    if (HasDuplicateOperands(n.children[i])) return true;
    for (size_t j = i + 1; j < n.children.size(); ++j) {
      if (n.children[i] == n.children[j]) return true;
    }
  }
  return false;
}

Query Template(QueryType type) {
  static const size_t kAnchors[] = {1, 1, 2, 2, 3, 2, 2, 2};
  static const size_t kRelations[] = {1, 2, 2, 3, 3, 3, 2, 3};
  const auto idx = static_cast<size_t>(type);
  const std::vector<EntityId> a(kAnchors[idx], 0);
  const std::vector<RelationId> r(kRelations[idx], 0);
  return MakeQuery(type, a, r);
}

bool Retained(const QuerySample& s, Split split) {
  switch (split) {
    case Split::kTrain: return !s.answers_train.empty();
    case Split::kValid: return s.answers_valid != s.answers_train;
    case Split::kTest: return s.answers_test != s.answers_valid;
  }
  return false;
}

}  // namespace

std::vector<QuerySample> SampleQueries(const StagedShard& shard,
                                       const SamplerConfig& cfg,
                                       const OwnershipMap& ownership) {
  std::vector<QuerySample> out;
  if (cfg.count == 0) return out;
  if (shard.test.empty()) Fail(ErrorKind::kSampling, "empty test graph");
  if (cfg.cross_graph && cfg.type == QueryType::k1p) {
    throw SamplingError("sampling error: a 1p query has a single atom and "
                        "cannot be cross-graph",
                        {});
  }

  const Graph& stage = StageGraph(shard, cfg.split);
  std::vector<EntityId> targets;
  for (EntityId e : stage.entities()) {
    if (!stage.Incoming(e).empty()) targets.push_back(e);
  }

  Rng rng(DeriveSeed(cfg.seed, "sample",
                     {static_cast<uint64_t>(cfg.type),
                      static_cast<uint64_t>(cfg.split),
                      static_cast<uint64_t>(cfg.cross_graph),
                      static_cast<uint64_t>(static_cast<int64_t>(shard.client_id))}));
  const Query tmpl = Template(cfg.type);
  std::set<std::string> seen;
  const size_t budget = std::max<size_t>(1, cfg.attempt_factor) * cfg.count;

  for (size_t attempt = 0; attempt < budget && out.size() < cfg.count;
       ++attempt) {
    if (targets.empty()) break;
    QuerySample s;
    s.query = tmpl;
    const EntityId target = targets[rng.Below(targets.size())];
    if (!FillBackward(s.query.root, target, stage, rng)) continue;
    if (HasDuplicateOperands(s.query.root)) continue;

    const Locality loc = ClassifyQuery(s.query.root, ownership);
    if (!cfg.any_locality && cfg.cross_graph != loc.cross_graph) continue;
    s.locality = (loc.cross_graph || shard.client_id == kGlobalShardId)
                     ? loc
                     : Locality::InGraph(shard.client_id);

    s.answers_train = AnswerQuery(shard.train, s.query.root);
    s.answers_valid = AnswerQuery(shard.valid, s.query.root);
    s.answers_test = AnswerQuery(shard.test, s.query.root);
    if (!Retained(s, cfg.split)) continue;

    if (!seen.insert(QueryTreeToJson(s.query.root).dump()).second) continue;
    s.atom_owners = AtomOwners(s.query.root, ownership);
    out.push_back(std::move(s));
  }

  if (out.size() < cfg.count) {
    const size_t got = out.size();
    throw SamplingError(
        "sampling error: attempt budget exhausted for " +
            std::string(QueryTypeName(cfg.type)) + "/" + SplitName(cfg.split) +
            (cfg.cross_graph ? "/cross-graph" : "/in-graph") + ": achieved " +
            std::to_string(got) + " of " + std::to_string(cfg.count),
        std::move(out));
  }
  return out;
}

bool SampleIsValid(const QuerySample& s, Split split,
                   const OwnershipMap& ownership) {
  if (!Retained(s, split)) return false;
  if (!std::includes(s.answers_valid.begin(), s.answers_valid.end(),
                     s.answers_train.begin(), s.answers_train.end()) ||
      !std::includes(s.answers_test.begin(), s.answers_test.end(),
                     s.answers_valid.begin(), s.answers_valid.end())) {
    return false;
  }
  const Locality loc = ClassifyQuery(s.query.root, ownership);
  if (s.locality.cross_graph) return loc.cross_graph;
  if (loc.cross_graph) return false;
  for (const auto& owners : AtomOwners(s.query.root, ownership)) {
    if (!std::binary_search(owners.begin(), owners.end(), s.locality.client)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Benchmark assembly

namespace {

void SampleInto(const StagedShard& shard, SamplerConfig cfg,
                const OwnershipMap& ownership, std::vector<QuerySample>& dst,
                BenchmarkStats* stats) {
  try {
    auto got = SampleQueries(shard, cfg, ownership);
    std::move(got.begin(), got.end(), std::back_inserter(dst));
  } catch (const SamplingError& e) {
    dst.insert(dst.end(), e.partial().begin(), e.partial().end());
    if (stats) {
      stats->failures.push_back("shard " + std::to_string(shard.client_id) +
                                ": " + e.what());
    }
  }
}

}  // namespace

BenchmarkSet BuildBenchmark(std::span<const StagedShard> shards,
                            const BenchmarkCounts& counts, uint64_t seed,
                            BenchmarkStats* stats) {
  if (shards.empty()) Fail(ErrorKind::kConfig, "no shards");
  const OwnershipMap ownership = BuildOwnership(shards);
  const StagedShard global = MergeGlobal(shards);
  BenchmarkStats local_stats;
  BenchmarkStats* st = stats ? stats : &local_stats;

  BenchmarkSet b;
  b.seed = seed;
  b.clients.resize(shards.size());
  for (QueryType type : counts.types) {
    SamplerConfig cfg;
    cfg.type = type;
    cfg.seed = seed;
    cfg.attempt_factor = counts.attempt_factor;
    for (size_t i = 0; i < shards.size(); ++i) {
      cfg.cross_graph = false;
      cfg.split = Split::kTrain;
      cfg.count = counts.train;
      SampleInto(shards[i], cfg, ownership, b.clients[i].train, st);
      cfg.split = Split::kValid;
      cfg.count = counts.valid;
      SampleInto(shards[i], cfg, ownership, b.clients[i].valid, st);
      cfg.split = Split::kTest;
      cfg.count = counts.test;
      SampleInto(shards[i], cfg, ownership, b.clients[i].test, st);
    }
    // Central-baseline training queries: the same per-client budget over the
    // merged graphs. With one client this reproduces client 0's set.
    cfg.cross_graph = false;
    cfg.split = Split::kTrain;
    cfg.count = counts.train * shards.size();
    cfg.any_locality = true;
    SampleInto(global, cfg, ownership, b.global.train, st);
    cfg.any_locality = false;

    if (type != QueryType::k1p && shards.size() > 1) {
      cfg.cross_graph = true;
      cfg.split = Split::kTest;
      cfg.count = counts.cross_test;
      SampleInto(global, cfg, ownership, b.cross_test, st);
    }
  }
  const auto failures = std::move(st->failures);
  *st = ComputeStats(b);
  st->failures = failures;
  return b;
}

BenchmarkStats ComputeStats(const BenchmarkSet& b) {
  BenchmarkStats st;
  auto bump = [&](const std::vector<QuerySample>& v,
                  size_t BenchmarkStats::Row::*field) {
    for (const auto& s : v) {
      ++(st.per_type[QueryTypeName(s.query.type)].*field);
      ++(st.total.*field);
    }
  };
  for (const auto& c : b.clients) {
    bump(c.train, &BenchmarkStats::Row::train);
    bump(c.valid, &BenchmarkStats::Row::valid);
    bump(c.test, &BenchmarkStats::Row::test);
  }
  bump(b.cross_test, &BenchmarkStats::Row::cross_test);
  return st;
}

void WriteStats(const fs::path& path, const BenchmarkStats& st) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "type\tin_graph_train\tin_graph_valid\tin_graph_test\t"
         "cross_graph_test\n";
  for (QueryType t : kAllQueryTypes) {
    auto it = st.per_type.find(QueryTypeName(t));
    if (it == st.per_type.end()) continue;
    const auto& r = it->second;
    out << QueryTypeName(t) << '\t' << r.train << '\t' << r.valid << '\t'
        << r.test << '\t' << r.cross_test << '\n';
  }
  out << "total\t" << st.total.train << '\t' << st.total.valid << '\t'
      << st.total.test << '\t' << st.total.cross_test << '\n';
}

void WriteBenchmark(const fs::path& dir, const BenchmarkSet& b) {
  fs::create_directories(dir);
  for (size_t i = 0; i < b.clients.size(); ++i) {
    const fs::path cdir = dir / ("client_" + std::to_string(i));
    fs::create_directories(cdir);
    WriteSamples(cdir / "train.jsonl", b.clients[i].train);
    WriteSamples(cdir / "valid.jsonl", b.clients[i].valid);
    WriteSamples(cdir / "test.jsonl", b.clients[i].test);
  }
  fs::create_directories(dir / "global");
  WriteSamples(dir / "global" / "train.jsonl", b.global.train);
  fs::create_directories(dir / "cross");
  WriteSamples(dir / "cross" / "test.jsonl", b.cross_test);
  nlohmann::json meta;
  meta["n_clients"] = b.clients.size();
  meta["seed"] = b.seed;
  std::ofstream out(dir / "benchmark.json", std::ios::binary);
  out << meta.dump(2) << '\n';
}

BenchmarkSet ReadBenchmark(const fs::path& dir) {
  std::ifstream in(dir / "benchmark.json", std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot read " + (dir / "benchmark.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kParse, std::string("benchmark.json: ") + e.what());
  }
  BenchmarkSet b;
  b.seed = meta.value("seed", uint64_t{0});
  const size_t n = meta.value("n_clients", size_t{0});
  b.clients.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const fs::path cdir = dir / ("client_" + std::to_string(i));
    b.clients[i].train = ReadSamples(cdir / "train.jsonl");
    b.clients[i].valid = ReadSamples(cdir / "valid.jsonl");
    b.clients[i].test = ReadSamples(cdir / "test.jsonl");
  }
  b.global.train = ReadSamples(dir / "global" / "train.jsonl");
  b.cross_test = ReadSamples(dir / "cross" / "test.jsonl");
  return b;
}

}  // namespace fedngdb
