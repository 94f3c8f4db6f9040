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

// HR@K and MRR over novel answers.
//
// For one query with novel answers V = answers(test) \ answers(valid):
//
//   metric(q) = (1/|V|) * sum_{v in V} m(rank(v)),
//   m(r) = 1[r <= K] for HR@K and 1/r for MRR.
//
// In-graph figures are averaged per client first and then uniformly over
// clients; cross-graph figures are averaged over the cross-graph test set.

#ifndef FEDNGDB_EVALBENCH_H_
#define FEDNGDB_EVALBENCH_H_

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedngdb/federation.h"
#include "fedngdb/query.h"
#include "fedngdb/query_sampler.h"
#include "fedngdb/retrieval.h"

#include "json.hpp"

namespace fedngdb {

struct QueryScores {
  double mrr = 0.0;
  std::map<int, double> hits;  // K -> HR@K
};

// `rank_fn(v)` is the filtered 1-based rank of novel answer v. An empty
// novel-answer set is an evaluation error.
QueryScores QueryMetric(const QuerySample& sample,
                        const std::function<int(EntityId)>& rank_fn,
                        std::span<const int> ks);

// Mean reciprocal rank of one target placed uniformly among n candidates:
// H_n / n.
double ExpectedRandomMrr(size_t n_candidates);

struct MetricRow {
  std::string type;      // query type name, or "avg"
  std::string locality;  // "in-graph" or "cross-graph"
  bool applicable = true;
  size_t n_queries = 0;
  size_t n_errors = 0;
  double mrr = 0.0;
  std::map<int, double> hits;
};

struct MetricsReport {
  std::string mode;
  uint64_t seed = 0;
  std::string config_digest;
  std::vector<int> ks;
  bool filtered = true;
  std::vector<MetricRow> rows;
  std::vector<std::string> warnings;

  const MetricRow* Find(const std::string& type, const std::string& locality) const;

  nlohmann::json ToJson() const;
  // Raw [0, 1] values; "NA" cells for not-applicable rows.
  std::string ToCsv() const;
  // Values x100, "-" for not-applicable cells.
  std::string ToText() const;
  void Write(const std::filesystem::path& csv_path,
             const std::filesystem::path& json_path) const;
};

// Metric bounds, monotonicity in K and MRR <= HR@K + (1 - HR@K)/(K+1) on
// every row. Throws an evaluation error naming the first violation.
void CheckReportInvariants(const MetricsReport& report);

struct EvalOptions {
  std::vector<int> ks = {1, 3, 10};
  bool filtered = true;
  // Restrict to these types when non-empty.
  std::vector<QueryType> types;
};

// In-graph test queries of client c are answered by c's model over c's
// entities (central: the single model, candidates restricted to c's
// entities). Cross-graph test queries go through federated retrieval; in
// local mode they are reported as not applicable.
MetricsReport Evaluate(const FederationState& st, const BenchmarkSet& benchmark,
                       const EvalOptions& options);

}  // namespace fedngdb

#endif  // FEDNGDB_EVALBENCH_H_
