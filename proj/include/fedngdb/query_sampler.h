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

// Rejection sampler for the benchmark query sets.
//
// A query template is instantiated by walking edges backwards from a random
// answer entity on the stage graph of the requested split, so every attempt
// has at least one answer there. Samples are then kept only if the split's
// novelty rule holds:
//
//   train: at least one answer on the training graph
//   valid: answers(valid graph) != answers(train graph)
//   test:  answers(test graph)  != answers(valid graph)
//
// and, for cross-graph sampling, if no single client owns every atom.

#ifndef FEDNGDB_QUERY_SAMPLER_H_
#define FEDNGDB_QUERY_SAMPLER_H_

#include <map>
#include <vector>

#include "fedngdb/kg_store.h"
#include "fedngdb/query.h"

namespace fedngdb {

struct SamplerConfig {
  QueryType type = QueryType::k1p;
  size_t count = 0;
  uint64_t seed = 0;
  Split split = Split::kTrain;
  bool cross_graph = false;
  // Keep queries of either locality (central-baseline training sets).
  bool any_locality = false;
  // Attempts allowed per requested sample.
  size_t attempt_factor = 100;
};

class SamplingError : public Error {
 public:
  SamplingError(const std::string& message, std::vector<QuerySample> partial)
      : Error(ErrorKind::kSampling, message), partial_(std::move(partial)) {}

  size_t achieved() const { return partial_.size(); }
  const std::vector<QuerySample>& partial() const { return partial_; }

 private:
  std::vector<QuerySample> partial_;
};

// Returns exactly cfg.count samples or throws SamplingError holding the
// samples found before the attempt budget ran out. The random stream is
// derived from (seed, type, split, locality, shard id).
std::vector<QuerySample> SampleQueries(const StagedShard& shard,
                                       const SamplerConfig& cfg,
                                       const OwnershipMap& ownership);

// True when the sample satisfies the retention rule of `split` and its stored
// locality agrees with the ownership map: an in-graph tag names a client that
// owns every atom, a cross-graph tag has no such client.
bool SampleIsValid(const QuerySample& sample, Split split,
                   const OwnershipMap& ownership);

struct QuerySet {
  std::vector<QuerySample> train;
  std::vector<QuerySample> valid;
  std::vector<QuerySample> test;
};

// Everything the trainers and evaluator consume. `clients[i]` holds the
// in-graph sets of client i, `global` the sets drawn from the merged graphs
// (training data of the central baseline), `cross_test` the cross-graph test
// queries.
struct BenchmarkSet {
  std::vector<QuerySet> clients;
  QuerySet global;
  std::vector<QuerySample> cross_test;
  uint64_t seed = 0;
};

struct BenchmarkCounts {
  std::vector<QueryType> types = {kAllQueryTypes.begin(), kAllQueryTypes.end()};
  // Per type and client.
  size_t train = 100;
  size_t valid = 10;
  size_t test = 10;
  // Per type over the merged graphs.
  size_t cross_test = 10;
  size_t attempt_factor = 100;
};

// Achieved counts, keyed by query type name, in the layout of the benchmark
// statistics table.
struct BenchmarkStats {
  struct Row {
    size_t train = 0, valid = 0, test = 0, cross_test = 0;
  };
  std::map<std::string, Row> per_type;
  Row total;
  std::vector<std::string> failures;
};

// Samples every set. Budget exhaustion does not throw here: the partial
// samples are kept and the failure is listed in stats.failures.
BenchmarkSet BuildBenchmark(std::span<const StagedShard> shards,
                            const BenchmarkCounts& counts, uint64_t seed,
                            BenchmarkStats* stats = nullptr);

void WriteBenchmark(const std::filesystem::path& dir, const BenchmarkSet& b);
BenchmarkSet ReadBenchmark(const std::filesystem::path& dir);
BenchmarkStats ComputeStats(const BenchmarkSet& b);
void WriteStats(const std::filesystem::path& path, const BenchmarkStats& stats);

}  // namespace fedngdb

#endif  // FEDNGDB_QUERY_SAMPLER_H_
