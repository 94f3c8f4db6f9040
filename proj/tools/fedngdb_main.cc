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

// fedngdb command-line tool: synth, split, sample, train, eval, query.
//
// Exit codes: 0 success, 2 usage, 3 data errors, 4 protocol and training
// errors. Every run writes one manifest.json into its output directory.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedngdb/checkpoint.h"
#include "fedngdb/evalbench.h"
#include "fedngdb/federation.h"
#include "fedngdb/pipeline.h"
#include "fedngdb/query_sampler.h"
#include "fedngdb/retrieval.h"
#include "fedngdb/synth.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fedngdb {
namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitProtocol = 4;

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNumeric:
    case ErrorKind::kProtocol:
    case ErrorKind::kTraining:
      return kExitProtocol;
    default:
      return kExitData;
  }
}

void SetupLogging() {
  auto logger = spdlog::stderr_color_mt("fedngdb");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("FEDNGDB_LOG")) {
    const std::string s = lvl;
    if (s == "error") spdlog::set_level(spdlog::level::err);
    else if (s == "warn") spdlog::set_level(spdlog::level::warn);
    else if (s == "info") spdlog::set_level(spdlog::level::info);
    else if (s == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("ignoring FEDNGDB_LOG={} (expected error, warn, info or debug)", s);
  }
}

std::string UtcTimestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string DigestOf(const fs::path& p) {
  if (fs::is_directory(p)) return DirectoryDigest(p, {"manifest.json"});
  return FileDigest(p);
}

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void Input(const std::string& name, const fs::path& p) {
    inputs_[name] = {{"path", p.string()}, {"sha256", DigestOf(p)}};
  }
  void Output(const fs::path& p) { outputs_.push_back(p); }
  void Config(json c) { config_ = std::move(c); }
  void Seed(uint64_t s) { seed_ = s; }

  void Write(const fs::path& dir) const {
    json outs = json::array();
    for (const fs::path& p : outputs_) {
      json o = {{"path", p.string()}};
      if (fs::exists(p)) o["sha256"] = DigestOf(p);
      outs.push_back(std::move(o));
    }
    const json j = {{"command", command_},      {"config", config_},
                    {"inputs", inputs_},        {"outputs", outs},
                    {"seed", seed_},            {"timestamp", UtcTimestamp()},
                    {"version", kVersion}};
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    if (!out) Fail(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  json config_ = json::object();
  json inputs_ = json::object();
  std::vector<fs::path> outputs_;
  uint64_t seed_ = 0;
};

std::vector<int> ParseIntList(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      Fail(ErrorKind::kConfig, "bad integer list '" + text + "'");
    }
  }
  if (out.empty()) Fail(ErrorKind::kConfig, "empty integer list");
  return out;
}

// Options shared by train, eval and query.
struct FedOptions {
  std::string config;
  std::optional<uint64_t> seed;
  std::string mode;
  std::optional<int> clients;
  std::optional<double> fraction;
  std::optional<int> dim;
  std::optional<int> rounds;
  std::optional<double> dp_clip;
  std::optional<double> dp_lambda;
  std::string k_list;

  void Attach(CLI::App* app) {
    app->add_option("--config", config, "Configuration file (key = value)");
    app->add_option("--seed", seed, "Seed (overrides the config)");
    app->add_option("--mode", mode, "Training mode")
        ->check(CLI::IsMember({"fedngdb", "local", "central"}));
    app->add_option("--clients", clients, "Number of clients");
    app->add_option("--fraction", fraction, "Client fraction per round");
    app->add_option("--dim", dim, "Embedding dimension");
    app->add_option("--rounds", rounds, "Communication rounds");
    app->add_option("--dp-clip", dp_clip, "LDP clipping bound C");
    app->add_option("--dp-lambda", dp_lambda, "LDP Laplace scale lambda");
    app->add_option("--k-list", k_list, "Comma-separated K values, e.g. 1,3,10");
  }

  FederationConfig Resolve(size_t n_shards) const {
    FederationConfig cfg;
    cfg.n_clients = static_cast<int>(n_shards);
    if (!config.empty()) cfg = LoadConfig(config, cfg);
    if (seed) cfg.seed = *seed;
    if (!mode.empty()) cfg.mode = ParseTrainingMode(mode);
    if (clients) cfg.n_clients = *clients;
    if (fraction) cfg.client_fraction = *fraction;
    if (dim) cfg.dim = *dim;
    if (rounds) cfg.rounds = *rounds;
    if (dp_clip) cfg.dp.clip = *dp_clip;
    if (dp_lambda) cfg.dp.noise_scale = *dp_lambda;
    if (!k_list.empty()) cfg.k_list = ParseIntList(k_list);
    ValidateConfig(cfg);
    return cfg;
  }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  uint64_t seed = 0;
  size_t entities = 200;
  size_t relations = 5;
  double edge_prob = 0.5;
  int max_tails = 2;
};

int RunSynth(const SynthArgs& a) {
  SyntheticKgConfig cfg;
  cfg.entities = a.entities;
  cfg.relations = a.relations;
  cfg.edge_prob = a.edge_prob;
  cfg.max_tails = a.max_tails;
  cfg.seed = a.seed;
  Vocabularies vocab;
  const Graph g = MakeSyntheticKg(cfg, &vocab);
  fs::create_directories(a.out);
  const fs::path file = fs::path(a.out) / "train.tsv";
  WriteTriples(file, g.triples(), vocab);
  spdlog::info("synthetic graph: {} entities, {} relations, {} triples",
               g.entities().size(), g.relations().size(), g.triples().size());
  Manifest m("synth");
  m.Config({{"entities", a.entities}, {"relations", a.relations},
            {"edge_prob", a.edge_prob}, {"max_tails", a.max_tails}});
  m.Seed(a.seed);
  m.Output(file);
  m.Write(a.out);
  return 0;
}

struct SplitArgs {
  std::string data;
  std::string out;
  std::string config;
  int clients = 3;
  std::string split_mode = "relation";
  std::string ratios = "0.8,0.1,0.1";
  uint64_t seed = 0;
};

int RunSplit(const SplitArgs& a) {
  SplitConfig cfg;
  cfg.n_clients = a.clients;
  cfg.mode = ParseSplitMode(a.split_mode);
  cfg.seed = a.seed;
  {
    std::vector<double> r;
    std::stringstream ss(a.ratios);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        r.push_back(std::stod(item));
      } catch (const std::exception&) {
        Fail(ErrorKind::kConfig, "bad ratio '" + item + "'");
      }
    }
    if (r.size() != 3) Fail(ErrorKind::kConfig, "--ratios needs three values");
    cfg.ratios = {r[0], r[1], r[2]};
  }
  ShardSet set;
  const Graph g = LoadDataset(a.data, set.vocab);
  set.vocab.Freeze();
  set.shards = SplitAndStage(g, cfg);
  WriteShardSet(a.out, set);
  for (const StagedShard& s : set.shards) {
    spdlog::info("client {}: {} entities, {} relations, {} train / {} valid / {} test triples",
                 s.client_id, s.test.entities().size(), s.test.relations().size(),
                 s.train.triples().size(),
                 s.valid.triples().size() - s.train.triples().size(),
                 s.test.triples().size() - s.valid.triples().size());
  }
  Manifest m("split");
  m.Config({{"clients", a.clients}, {"split_mode", SplitModeName(cfg.mode)},
            {"ratios", cfg.ratios}});
  m.Seed(a.seed);
  m.Input("data", a.data);
  m.Output(a.out);
  m.Write(a.out);
  return 0;
}

struct SampleArgs {
  std::string shards;
  std::string out;
  uint64_t seed = 0;
  size_t train = 100, valid = 10, test = 10, cross = 10;
  size_t attempt_factor = 100;
  std::string types;
};

int RunSample(const SampleArgs& a) {
  const ShardSet set = ReadShardSet(a.shards);
  BenchmarkCounts counts;
  counts.train = a.train;
  counts.valid = a.valid;
  counts.test = a.test;
  counts.cross_test = a.cross;
  counts.attempt_factor = a.attempt_factor;
  if (!a.types.empty()) {
    counts.types.clear();
    std::stringstream ss(a.types);
    std::string item;
    while (std::getline(ss, item, ',')) counts.types.push_back(ParseQueryType(item));
  }
  BenchmarkStats stats;
  const BenchmarkSet b = BuildBenchmark(set.shards, counts, a.seed, &stats);
  WriteBenchmark(a.out, b);
  const fs::path stats_path = fs::path(a.out) / "stats.tsv";
  WriteStats(stats_path, stats);
  Manifest m("sample");
  json types = json::array();
  for (QueryType t : counts.types) types.push_back(QueryTypeName(t));
  m.Config({{"train", a.train}, {"valid", a.valid}, {"test", a.test},
            {"cross_test", a.cross}, {"attempt_factor", a.attempt_factor},
            {"types", types}});
  m.Seed(a.seed);
  m.Input("shards", a.shards);
  m.Output(a.out);
  m.Write(a.out);
  spdlog::info("sampled {} train, {} valid, {} test, {} cross-graph test queries",
               stats.total.train, stats.total.valid, stats.total.test,
               stats.total.cross_test);
  if (!stats.failures.empty()) {
    for (const std::string& f : stats.failures) spdlog::error("{}", f);
    return kExitData;
  }
  return 0;
}

struct TrainArgs {
  std::string shards;
  std::string benchmark;
  std::string out;
  FedOptions fed;
};

int RunTrain(const TrainArgs& a) {
  const ShardSet set = ReadShardSet(a.shards);
  const FederationConfig cfg = a.fed.Resolve(set.shards.size());
  const BenchmarkSet bench = ReadBenchmark(a.benchmark);
  spdlog::info("training mode={} clients={} rounds={} dim={} seed={}",
               TrainingModeName(cfg.mode), cfg.n_clients, cfg.rounds, cfg.dim, cfg.seed);
  TrainingHooks hooks;
  hooks.on_round = [](const RoundTelemetry& t) {
    spdlog::debug("round {}: loss {:.6f} ({:.1f} ms)", t.round, t.mean_client_loss, t.wall_ms);
  };
  const FederationState st = RunTraining(cfg, set.shards, bench, hooks);
  if (!st.telemetry.empty()) {
    spdlog::info("final round loss {:.6f}", st.telemetry.back().mean_client_loss);
  }
  SaveFederation(a.out, st);
  const fs::path tel = fs::path(a.out) / "telemetry.csv";
  WriteTelemetry(tel, st.telemetry);
  Manifest m("train");
  m.Config({{"federation", FormatConfig(cfg)}});
  m.Seed(cfg.seed);
  m.Input("shards", a.shards);
  m.Input("benchmark", a.benchmark);
  m.Output(a.out);
  m.Write(a.out);
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string shards;
  std::string benchmark;
  std::string out;
  bool unfiltered = false;
  std::string k_list;
};

int RunEval(const EvalArgs& a) {
  const ShardSet set = ReadShardSet(a.shards);
  const BenchmarkSet bench = ReadBenchmark(a.benchmark);
  const FederationState st = LoadFederation(a.ckpt, set.shards, &bench);
  EvalOptions opt;
  opt.ks = a.k_list.empty() ? st.config.k_list : ParseIntList(a.k_list);
  opt.filtered = a.unfiltered ? false : st.config.filtered;
  const MetricsReport report = Evaluate(st, bench, opt);
  fs::create_directories(a.out);
  const fs::path csv = fs::path(a.out) / "metrics.csv";
  const fs::path js = fs::path(a.out) / "metrics.json";
  report.Write(csv, js);
  std::cout << report.ToText();
  for (const std::string& w : report.warnings) spdlog::warn("{}", w);
  Manifest m("eval");
  m.Config({{"ks", opt.ks}, {"filtered", opt.filtered},
            {"federation", FormatConfig(st.config)}});
  m.Seed(st.config.seed);
  m.Input("checkpoints", a.ckpt);
  m.Input("shards", a.shards);
  m.Input("benchmark", a.benchmark);
  m.Output(csv);
  m.Output(js);
  m.Write(a.out);
  return 0;
}

struct QueryArgs {
  std::string ckpt;
  std::string shards;
  std::string query;
  std::string out = ".";
  std::optional<size_t> k;
  bool json_output = false;
};

int RunQuery(const QueryArgs& a) {
  const ShardSet set = ReadShardSet(a.shards);
  const FederationState st = LoadFederation(a.ckpt, set.shards);
  std::string text = a.query;
  if (!text.empty() && text[0] == '@') {
    std::ifstream in(text.substr(1));
    if (!in) Fail(ErrorKind::kIo, "cannot read " + text.substr(1));
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto [root, k] = ParseQueryRequest(text);
  if (a.k) k = *a.k;
  const RetrievalContext ctx = MakeRetrievalContext(st);
  const QueryAnswer ans = AnswerQueryFederated(root, ctx, k);
  if (a.json_output) {
    json j = ans.ToJson();
    for (auto& row : j["answers"]) {
      row["token"] = set.vocab.entities.Token(row["entity"].get<EntityId>());
    }
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "locality: " << LocalityName(ans.plan.locality) << '\n';
    std::cout << "plan:\n";
    for (const PlanStep& s : ans.plan.steps) {
      std::cout << "  " << PlanStepKindName(s.kind) << " -> slot " << s.output;
      if (s.executor == kServerExecutor) std::cout << " @server";
      else std::cout << " @client:" << s.executor;
      if (s.relation >= 0) std::cout << " relation=" << set.vocab.relations.Token(s.relation);
      if (s.anchor >= 0) std::cout << " anchor=" << set.vocab.entities.Token(s.anchor);
      std::cout << '\n';
    }
    std::cout << "answers:\n";
    for (size_t i = 0; i < ans.top.size(); ++i) {
      std::cout << "  " << (i + 1) << '\t' << set.vocab.entities.Token(ans.top[i].entity)
                << '\t' << ans.top[i].score << '\n';
    }
    std::cout << "timing_ms: " << ans.elapsed_ms << '\n';
  }
  Manifest m("query");
  m.Config({{"query", json::parse(text)}, {"k", k}});
  m.Seed(st.config.seed);
  m.Input("checkpoints", a.ckpt);
  m.Input("shards", a.shards);
  m.Write(a.out);
  return 0;
}

}  // namespace
}  // namespace fedngdb

int main(int argc, char** argv) {
  using namespace fedngdb;
  SetupLogging();
  CLI::App app{"Federated neural graph database tool"};
  app.set_version_flag("--version", std::string("fedngdb ") + kVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic translational graph");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Seed");
  c_synth->add_option("--entities", synth.entities, "Entity count before pruning");
  c_synth->add_option("--relations", synth.relations, "Relation count");
  c_synth->add_option("--edge-prob", synth.edge_prob, "Edge probability per head and relation");
  c_synth->add_option("--max-tails", synth.max_tails, "Maximum tails per head and relation");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Partition a dataset into staged client shards");
  c_split->add_option("--data", split.data, "Dataset directory or triple file")->required();
  c_split->add_option("--out", split.out, "Shard directory")->required();
  c_split->add_option("--clients", split.clients, "Number of clients");
  c_split->add_option("--split-mode", split.split_mode, "relation-partition or random-triple")
      ->check(CLI::IsMember({"relation", "relation-partition", "random-triple", "overlap"}));
  c_split->add_option("--ratios", split.ratios, "train,valid,test ratios");
  c_split->add_option("--seed", split.seed, "Seed");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Sample benchmark query sets");
  c_sample->add_option("--shards", sample.shards, "Shard directory")->required();
  c_sample->add_option("--out", sample.out, "Benchmark directory")->required();
  c_sample->add_option("--seed", sample.seed, "Seed");
  c_sample->add_option("--train-count", sample.train, "In-graph train queries per type and client");
  c_sample->add_option("--valid-count", sample.valid, "In-graph valid queries per type and client");
  c_sample->add_option("--test-count", sample.test, "In-graph test queries per type and client");
  c_sample->add_option("--cross-count", sample.cross, "Cross-graph test queries per type");
  c_sample->add_option("--attempt-factor", sample.attempt_factor, "Attempts per requested query");
  c_sample->add_option("--types", sample.types, "Comma-separated query types");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--shards", train.shards, "Shard directory")->required();
  c_train->add_option("--benchmark", train.benchmark, "Benchmark directory")->required();
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();
  train.fed.Attach(c_train);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate checkpoints on the test queries");
  c_eval->add_option("--ckpt", eval.ckpt, "Checkpoint directory")->required();
  c_eval->add_option("--shards", eval.shards, "Shard directory")->required();
  c_eval->add_option("--benchmark", eval.benchmark, "Benchmark directory")->required();
  c_eval->add_option("--out", eval.out, "Report directory")->required();
  c_eval->add_option("--k-list", eval.k_list, "Comma-separated K values");
  c_eval->add_flag("--unfiltered", eval.unfiltered, "Raw instead of filtered ranks");

  QueryArgs query;
  auto* c_query = app.add_subcommand("query", "Answer one query");
  c_query->add_option("--ckpt", query.ckpt, "Checkpoint directory")->required();
  c_query->add_option("--shards", query.shards, "Shard directory")->required();
  c_query->add_option("--query", query.query,
                      "Request JSON {\"query\": tree, \"k\": K} or @file")->required();
  c_query->add_option("--k", query.k, "Override K");
  c_query->add_option("--out", query.out, "Directory for the manifest");
  c_query->add_flag("--json", query.json_output, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return RunSynth(synth);
    if (c_split->parsed()) return RunSplit(split);
    if (c_sample->parsed()) return RunSample(sample);
    if (c_train->parsed()) return RunTrain(train);
    if (c_eval->parsed()) return RunEval(eval);
    if (c_query->parsed()) return RunQuery(query);
  } catch (const SamplingError& e) {
    spdlog::error("sampling: {}", e.what());
    return kExitData;
  } catch (const Error& e) {
    spdlog::error("{}: {}", ErrorKindName(e.kind()), e.what());
    return ExitCodeFor(e.kind());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("io: {}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
