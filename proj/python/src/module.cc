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


// Python extension module. Structured results cross the boundary as JSON
// text; the package wrapper decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedngdb/checkpoint.h"
#include "fedngdb/common.h"
#include "fedngdb/crypto.h"
#include "fedngdb/evalbench.h"
#include "fedngdb/federation.h"
#include "fedngdb/pipeline.h"
#include "fedngdb/query.h"
#include "fedngdb/query_sampler.h"
#include "fedngdb/retrieval.h"
#include "fedngdb/synth.h"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace fedngdb {
namespace {

std::vector<QueryType> TypesFrom(const std::vector<std::string>& names) {
  std::vector<QueryType> out;
  for (const auto& n : names) out.push_back(ParseQueryType(n));
  if (out.empty()) out.assign(kAllQueryTypes.begin(), kAllQueryTypes.end());
  return out;
}

std::vector<EntityId> AnswerTriples(const std::vector<std::tuple<int, int, int>>& triples,
                                    const std::string& query_json) {
  std::vector<Triple> ts;
  for (const auto& [h, r, t] : triples) ts.push_back({h, r, t});
  const Graph g = Graph::FromTriples(std::move(ts));
  return AnswerQuery(g, QueryTreeFromJson(nlohmann::json::parse(query_json)));
}

std::pair<double, std::map<int, double>> MetricFromRanks(const std::vector<int>& ranks,
                                                         const std::vector<int>& ks) {
  QuerySample s;
  s.query = MakeQuery(QueryType::k1p, std::vector<EntityId>{0}, std::vector<RelationId>{0});
  for (size_t i = 0; i < ranks.size(); ++i) s.answers_test.push_back(static_cast<EntityId>(i));
  const QueryScores q =
      QueryMetric(s, [&](EntityId v) { return ranks.at(static_cast<size_t>(v)); }, ks);
  return {q.mrr, q.hits};
}

uint64_t ToyDh(uint64_t p, uint64_t g, uint64_t mine, uint64_t peer_public) {
  const DhParams params = DhParams::Custom(BigInt(p), BigInt(g), true);
  if (peer_public == 0) return DhPublic(params, BigInt(mine)).ToU64();
  return DhSharedSecret(params, BigInt(mine), BigInt(peer_public)).ToU64();
}

ShardSet SyntheticShards(size_t entities, size_t relations, int clients, uint64_t seed,
                         double edge_prob, const std::string& split_mode) {
  SyntheticKgConfig kg;
  kg.entities = entities;
  kg.relations = relations;
  kg.edge_prob = edge_prob;
  kg.seed = seed;
  ShardSet set;
  const Graph g = MakeSyntheticKg(kg, &set.vocab);
  set.vocab.Freeze();
  SplitConfig sc;
  sc.n_clients = clients;
  sc.mode = ParseSplitMode(split_mode);
  sc.seed = seed;
  set.shards = SplitAndStage(g, sc);
  return set;
}

struct Benchmark {
  BenchmarkSet set;
  BenchmarkStats stats;
};

Benchmark Sample(const ShardSet& shards, size_t train, size_t valid, size_t test,
                 size_t cross, uint64_t seed, const std::vector<std::string>& types) {
  BenchmarkCounts c;
  c.types = TypesFrom(types);
  c.train = train;
  c.valid = valid;
  c.test = test;
  c.cross_test = cross;
  Benchmark b;
  b.set = BuildBenchmark(shards.shards, c, seed, &b.stats);
  return b;
}

std::string QueryJson(const FederationState& st, const std::string& request) {
  auto [q, k] = ParseQueryRequest(request);
  const RetrievalContext ctx = MakeRetrievalContext(st);
  return AnswerQueryFederated(q, ctx, k).ToJson().dump();
}

std::string EvaluateJson(const FederationState& st, const Benchmark& b,
                         const std::vector<int>& ks, bool filtered,
                         const std::vector<std::string>& types) {
  EvalOptions o;
  o.ks = ks;
  o.filtered = filtered;
  if (!types.empty()) o.types = TypesFrom(types);
  return Evaluate(st, b.set, o).ToJson().dump();
}

}  // namespace
}  // namespace fedngdb

PYBIND11_MODULE(_fedngdb, m) {
  using namespace fedngdb;
  m.doc() = "Federated neural graph database core";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "FedngdbError", PyExc_RuntimeError);

  m.def("answer_query", &AnswerTriples, py::arg("triples"), py::arg("query_json"),
        "Exact answers of a query tree over (head, relation, tail) id triples.");
  m.def("query_metric", &MetricFromRanks, py::arg("ranks"), py::arg("ks"),
        "(MRR, {K: HR@K}) for the given 1-based ranks of novel answers.");
  m.def("expected_random_mrr", &ExpectedRandomMrr, py::arg("n_candidates"));
  m.def("dh_toy", &ToyDh, py::arg("p"), py::arg("g"), py::arg("secret"),
        py::arg("peer_public") = 0,
        "Diffie-Hellman over a small group: the public value when peer_public "
        "is 0, otherwise the shared secret.");
  m.def("sha256_hex", [](const std::string& s) { return Sha256Hex(s); });

  py::class_<ShardSet>(m, "ShardSet")
      .def_static("synthetic", &SyntheticShards, py::arg("entities") = 200,
                  py::arg("relations") = 5, py::arg("clients") = 3, py::arg("seed") = 0,
                  py::arg("edge_prob") = 0.5, py::arg("split_mode") = "relation-partition")
      .def_static("read", &ReadShardSet, py::arg("dir"))
      .def("write", [](const ShardSet& s, const fs::path& dir) { WriteShardSet(dir, s); },
           py::arg("dir"))
      .def_property_readonly("num_clients", [](const ShardSet& s) { return s.shards.size(); })
      .def_property_readonly("num_entities",
                             [](const ShardSet& s) { return s.vocab.entities.size(); })
      .def_property_readonly("num_relations",
                             [](const ShardSet& s) { return s.vocab.relations.size(); });

  py::class_<Benchmark>(m, "Benchmark")
      .def_static("sample", &Sample, py::arg("shards"), py::arg("train") = 100,
                  py::arg("valid") = 10, py::arg("test") = 10, py::arg("cross") = 10,
                  py::arg("seed") = 0, py::arg("types") = std::vector<std::string>{})
      .def_static("read",
                  [](const fs::path& dir) {
                    Benchmark b;
                    b.set = ReadBenchmark(dir);
                    b.stats = ComputeStats(b.set);
                    return b;
                  },
                  py::arg("dir"))
      .def("write", [](const Benchmark& b, const fs::path& dir) { WriteBenchmark(dir, b.set); },
           py::arg("dir"))
      .def_property_readonly("failures", [](const Benchmark& b) { return b.stats.failures; })
      .def_property_readonly("num_cross_test",
                             [](const Benchmark& b) { return b.set.cross_test.size(); });

  py::class_<FederationState>(m, "Federation")
      .def_static("train",
                  [](const ShardSet& s, const Benchmark& b, const std::string& config) {
                    FederationConfig cfg;
                    cfg.n_clients = static_cast<int>(s.shards.size());
                    cfg = ParseConfig(config, cfg);
                    ValidateConfig(cfg);
                    py::gil_scoped_release release;
                    return RunTraining(cfg, s.shards, b.set);
                  },
                  py::arg("shards"), py::arg("benchmark"), py::arg("config") = "")
      .def_static("load",
                  [](const fs::path& dir, const ShardSet& s, const Benchmark* b) {
                    return LoadFederation(dir, s.shards, b ? &b->set : nullptr);
                  },
                  py::arg("dir"), py::arg("shards"), py::arg("benchmark") = nullptr)
      .def("save", [](const FederationState& st, const fs::path& dir) { SaveFederation(dir, st); },
           py::arg("dir"))
      .def("evaluate_json", &EvaluateJson, py::arg("benchmark"),
           py::arg("ks") = std::vector<int>{1, 3, 10}, py::arg("filtered") = true,
           py::arg("types") = std::vector<std::string>{})
      .def("query_json", &QueryJson, py::arg("request"))
      .def_property_readonly("mode",
                             [](const FederationState& st) {
                               return std::string(TrainingModeName(st.config.mode));
                             })
      .def_property_readonly("round", [](const FederationState& st) { return st.round; })
      .def_property_readonly("config",
                             [](const FederationState& st) { return FormatConfig(st.config); })
      .def_property_readonly("losses", [](const FederationState& st) {
        std::vector<double> out;
        for (const auto& t : st.telemetry) out.push_back(t.mean_client_loss);
        return out;
      });
}
