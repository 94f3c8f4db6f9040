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

#include "fedngdb/evalbench.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fedngdb {

QueryScores QueryMetric(const QuerySample& sample,
                        const std::function<int(EntityId)>& rank_fn,
                        std::span<const int> ks) {
  const EntitySet novel = NovelAnswers(sample);
  if (novel.empty()) {
    Fail(ErrorKind::kEvaluation, "query has no novel test answers");
  }
  QueryScores q;
  for (int k : ks) q.hits[k] = 0.0;
  for (EntityId v : novel) {
    const int r = rank_fn(v);
    if (r < 1) Fail(ErrorKind::kEvaluation, "rank must be >= 1");
    q.mrr += 1.0 / r;
    for (int k : ks) q.hits[k] += r <= k ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(novel.size());
  q.mrr /= n;
  for (auto& [k, h] : q.hits) h /= n;
  return q;
}

double ExpectedRandomMrr(size_t n_candidates) {
  if (n_candidates == 0) return 0.0;
  double h = 0.0;
  for (size_t i = n_candidates; i >= 1; --i) h += 1.0 / static_cast<double>(i);
  return h / static_cast<double>(n_candidates);
}

const MetricRow* MetricsReport::Find(const std::string& type,
                                     const std::string& locality) const {
  for (const MetricRow& r : rows) {
    if (r.type == type && r.locality == locality) return &r;
  }
  return nullptr;
}

nlohmann::json MetricsReport::ToJson() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const MetricRow& r : rows) {
    nlohmann::json hits = nlohmann::json::object();
    for (const auto& [k, h] : r.hits) hits[std::to_string(k)] = h;
    nlohmann::json j = {{"type", r.type},
                        {"locality", r.locality},
                        {"applicable", r.applicable},
                        {"n_queries", r.n_queries},
                        {"n_errors", r.n_errors}};
    if (r.applicable) {
      j["mrr"] = r.mrr;
      j["hits"] = std::move(hits);
    }
    rows_j.push_back(std::move(j));
  }
  return {{"mode", mode},         {"seed", seed},
          {"config_digest", config_digest},
          {"filtered", filtered}, {"ks", ks},
          {"rows", rows_j},       {"warnings", warnings}};
}

namespace {

std::string Num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string MetricsReport::ToCsv() const {
  std::ostringstream os;
  os << "type,locality,applicable,n_queries,n_errors";
  for (int k : ks) os << ",hr@" << k;
  os << ",mrr\n";
  for (const MetricRow& r : rows) {
    os << r.type << ',' << r.locality << ',' << (r.applicable ? "yes" : "no")
       << ',' << r.n_queries << ',' << r.n_errors;
    for (int k : ks) os << ',' << (r.applicable ? Num(r.hits.at(k)) : "NA");
    os << ',' << (r.applicable ? Num(r.mrr) : "NA") << '\n';
  }
  return os.str();
}

std::string MetricsReport::ToText() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-6s %-12s %7s", "type", "locality", "n");
  os << buf;
  for (int k : ks) {
    std::snprintf(buf, sizeof(buf), " %7s", ("HR@" + std::to_string(k)).c_str());
    os << buf;
  }
  os << "     MRR\n";
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-6s %-12s %7zu", r.type.c_str(),
                  r.locality.c_str(), r.n_queries);
    os << buf;
    for (int k : ks) {
      if (r.applicable) std::snprintf(buf, sizeof(buf), " %7.2f", 100.0 * r.hits.at(k));
      else std::snprintf(buf, sizeof(buf), " %7s", "-");
      os << buf;
    }
    if (r.applicable) std::snprintf(buf, sizeof(buf), " %7.2f\n", 100.0 * r.mrr);
    else std::snprintf(buf, sizeof(buf), " %7s\n", "-");
    os << buf;
  }
  return os.str();
}

void MetricsReport::Write(const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path) const {
  std::ofstream csv(csv_path);
  if (!csv) Fail(ErrorKind::kIo, "cannot write " + csv_path.string());
  csv << ToCsv();
  std::ofstream js(json_path);
  if (!js) Fail(ErrorKind::kIo, "cannot write " + json_path.string());
  js << ToJson().dump(2) << '\n';
}

void CheckReportInvariants(const MetricsReport& report) {
  for (const MetricRow& r : report.rows) {
    if (!r.applicable) continue;
    const std::string where = r.type + "/" + r.locality;
    auto bad = [&](const std::string& what) {
      Fail(ErrorKind::kEvaluation, "report invariant violated at " + where + ": " + what);
    };
    if (!(r.mrr >= 0.0 && r.mrr <= 1.0)) bad("MRR outside [0, 1]");
    double prev = -1.0;
    for (const auto& [k, h] : r.hits) {  // ascending K
      if (!(h >= 0.0 && h <= 1.0)) bad("HR@" + std::to_string(k) + " outside [0, 1]");
      if (h + 1e-12 < prev) bad("HR@K decreases with K");
      prev = h;
      if (r.mrr > h + (1.0 - h) / (k + 1) + 1e-12) {
        bad("MRR exceeds the reciprocal-rank bound at K=" + std::to_string(k));
      }
    }
  }
}

namespace {

struct Accumulator {
  size_t n = 0;
  size_t errors = 0;
  double mrr = 0.0;
  std::map<int, double> hits;

  void Add(const QueryScores& q) {
    ++n;
    mrr += q.mrr;
    for (const auto& [k, h] : q.hits) hits[k] += h;
  }
  QueryScores Mean() const {
    QueryScores q;
    q.mrr = mrr / static_cast<double>(n);
    for (const auto& [k, h] : hits) q.hits[k] = h / static_cast<double>(n);
    return q;
  }
};

class Evaluator {
 public:
  Evaluator(const FederationState& st, const EvalOptions& opt)
      : st_(st), opt_(opt), ctx_(MakeRetrievalContext(st)) {}

  // Scores of every candidate for an in-graph query of client c.
  ScoreTable InGraphTable(const QueryNode& q, ClientId c) const {
    if (st_.config.mode == TrainingMode::kCentral) {
      ExecutionPlan plan = PlanQuery(q, ctx_, 0);
      std::vector<ClientId> one = {0};
      ScoreTable t = ScoreAndAggregate(ExecutePlan(plan, ctx_), ctx_, one);
      // Candidates limited to the owning client's entities.
      auto mine = st_.registry.LocalToGlobal(c);
      for (size_t e = 0; e < t.scores.size(); ++e) {
        if (!std::binary_search(mine.begin(), mine.end(), static_cast<EntityId>(e))) {
          t.scores[e] = ScoreTable::kUnscored;
          t.coverage[e] = 0;
        }
      }
      return t;
    }
    ExecutionPlan plan = PlanQuery(q, ctx_, c);
    std::vector<ClientId> one = {c};
    return ScoreAndAggregate(ExecutePlan(plan, ctx_), ctx_, one);
  }

  ScoreTable CrossTable(const QueryNode& q) const {
    if (st_.config.mode == TrainingMode::kCentral) {
      ExecutionPlan plan = PlanQuery(q, ctx_, 0);
      std::vector<ClientId> one = {0};
      return ScoreAndAggregate(ExecutePlan(plan, ctx_), ctx_, one);
    }
    ExecutionPlan plan = PlanQuery(q, ctx_);
    return ScoreAndAggregate(ExecutePlan(plan, ctx_), ctx_);
  }

  QueryScores Score(const QuerySample& s, const ScoreTable& t) const {
    std::span<const EntityId> filter;
    if (opt_.filtered) filter = s.answers_test;
    return QueryMetric(s, [&](EntityId v) { return RankOf(t, v, filter); }, opt_.ks);
  }

 private:
  const FederationState& st_;
  const EvalOptions& opt_;
  RetrievalContext ctx_;
};

MetricRow MakeRow(const std::string& type, const std::string& locality,
                  const QueryScores& q, size_t n, size_t errors) {
  MetricRow r;
  r.type = type;
  r.locality = locality;
  r.n_queries = n;
  r.n_errors = errors;
  r.mrr = q.mrr;
  r.hits = q.hits;
  return r;
}

MetricRow AverageRows(const std::vector<MetricRow>& rows, const std::string& locality,
                      std::span<const int> ks) {
  Accumulator acc;
  size_t n = 0, errors = 0;
  for (const MetricRow& r : rows) {
    if (r.locality != locality) continue;
    errors += r.n_errors;
    if (!r.applicable) continue;
    if (r.n_queries == 0) continue;
    n += r.n_queries;
    acc.Add(QueryScores{r.mrr, r.hits});
  }
  if (acc.n == 0) {
    MetricRow r;
    r.type = "avg";
    r.locality = locality;
    r.applicable = false;
    r.n_errors = errors;
    for (int k : ks) r.hits[k] = 0.0;
    return r;
  }
  return MakeRow("avg", locality, acc.Mean(), n, errors);
}

}  // namespace

MetricsReport Evaluate(const FederationState& st, const BenchmarkSet& benchmark,
                       const EvalOptions& options) {
  if (options.ks.empty()) Fail(ErrorKind::kConfig, "no K values to evaluate");
  MetricsReport rep;
  rep.mode = TrainingModeName(st.config.mode);
  rep.seed = st.config.seed;
  rep.config_digest = Sha256Hex(FormatConfig(st.config));
  rep.ks = options.ks;
  std::sort(rep.ks.begin(), rep.ks.end());
  rep.ks.erase(std::unique(rep.ks.begin(), rep.ks.end()), rep.ks.end());
  rep.filtered = options.filtered;
  EvalOptions opt = options;
  opt.ks = rep.ks;

  std::vector<QueryType> types = options.types;
  if (types.empty()) types.assign(kAllQueryTypes.begin(), kAllQueryTypes.end());

  const Evaluator ev(st, opt);
  const bool local = st.config.mode == TrainingMode::kLocal;
  std::vector<MetricRow> in_rows, cross_rows;

  for (QueryType type : types) {
    const std::string tname = QueryTypeName(type);

    // In-graph: per-client means, then a uniform mean over clients.
    Accumulator over_clients;
    size_t n_total = 0, err_total = 0;
    std::string first_error;
    for (size_t c = 0; c < benchmark.clients.size(); ++c) {
      Accumulator acc;
      for (const QuerySample& s : benchmark.clients[c].test) {
        if (s.query.type != type) continue;
        try {
          acc.Add(ev.Score(s, ev.InGraphTable(s.query.root, static_cast<ClientId>(c))));
        } catch (const Error& e) {
          ++acc.errors;
          if (first_error.empty()) first_error = e.what();
        }
      }
      n_total += acc.n;
      err_total += acc.errors;
      if (acc.n > 0) over_clients.Add(acc.Mean());
    }
    if (err_total > 0) {
      rep.warnings.push_back(std::to_string(err_total) + " in-graph " + tname +
                             " queries excluded: " + first_error);
    }
    if (over_clients.n > 0) {
      in_rows.push_back(MakeRow(tname, "in-graph", over_clients.Mean(), n_total, err_total));
    } else if (err_total > 0) {
      MetricRow r = MakeRow(tname, "in-graph", {}, 0, err_total);
      r.applicable = false;
      in_rows.push_back(r);
    }

    // Cross-graph.
    std::vector<const QuerySample*> cross;
    for (const QuerySample& s : benchmark.cross_test) {
      if (s.query.type == type) cross.push_back(&s);
    }
    if (cross.empty()) continue;
    if (local) {
      MetricRow r;
      r.type = tname;
      r.locality = "cross-graph";
      r.applicable = false;
      r.n_queries = 0;
      for (int k : rep.ks) r.hits[k] = 0.0;
      cross_rows.push_back(r);
      continue;
    }
    Accumulator acc;
    first_error.clear();
    for (const QuerySample* s : cross) {
      try {
        acc.Add(ev.Score(*s, ev.CrossTable(s->query.root)));
      } catch (const Error& e) {
        ++acc.errors;
        if (first_error.empty()) first_error = e.what();
      }
    }
    if (acc.errors > 0) {
      rep.warnings.push_back(std::to_string(acc.errors) + " cross-graph " + tname +
                             " queries excluded: " + first_error);
    }
    if (acc.n > 0) {
      cross_rows.push_back(MakeRow(tname, "cross-graph", acc.Mean(), acc.n, acc.errors));
    } else {
      MetricRow r = MakeRow(tname, "cross-graph", {}, 0, acc.errors);
      r.applicable = false;
      cross_rows.push_back(r);
    }
  }

  for (auto& r : in_rows) rep.rows.push_back(r);
  for (auto& r : cross_rows) rep.rows.push_back(r);
  if (!in_rows.empty()) rep.rows.push_back(AverageRows(in_rows, "in-graph", rep.ks));
  if (!cross_rows.empty()) {
    rep.rows.push_back(AverageRows(cross_rows, "cross-graph", rep.ks));
  }
  if (local && !cross_rows.empty()) {
    rep.warnings.push_back("cross-graph queries are not applicable in local mode");
  }
  CheckReportInvariants(rep);
  return rep;
}

}  // namespace fedngdb
