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

#include "fedngdb/federation.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace fedngdb {

const char* TrainingModeName(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::kFedNgdb: return "fedngdb";
    case TrainingMode::kLocal: return "local";
    case TrainingMode::kCentral: return "central";
  }
  return "?";
}

TrainingMode ParseTrainingMode(std::string_view name) {
  if (name == "fedngdb") return TrainingMode::kFedNgdb;
  if (name == "local") return TrainingMode::kLocal;
  if (name == "central") return TrainingMode::kCentral;
  Fail(ErrorKind::kConfig, "unknown mode '" + std::string(name) +
                               "' (expected fedngdb, local or central)");
}

const char* DpModeName(DpMode mode) {
  switch (mode) {
    case DpMode::kDelta: return "delta";
    case DpMode::kStep: return "step";
    case DpMode::kOff: return "off";
  }
  return "?";
}

DpMode ParseDpMode(std::string_view name) {
  if (name == "delta") return DpMode::kDelta;
  if (name == "step") return DpMode::kStep;
  if (name == "off") return DpMode::kOff;
  Fail(ErrorKind::kConfig, "unknown dp_mode '" + std::string(name) + "'");
}

int FederationConfig::SelectedPerRound() const {
  // The epsilon keeps products like 10 * 0.3 from rounding up to 4.
  int m = static_cast<int>(std::ceil(n_clients * client_fraction - 1e-9));
  return std::clamp(m, 1, std::max(n_clients, 1));
}

void ValidateConfig(const FederationConfig& cfg) {
  auto require = [](bool ok, const char* msg) {
    if (!ok) Fail(ErrorKind::kConfig, msg);
  };
  require(cfg.n_clients >= 1, "n_clients must be >= 1");
  require(cfg.client_fraction > 0.0 && cfg.client_fraction <= 1.0,
          "client_fraction must be in (0, 1]");
  require(cfg.rounds >= 0, "rounds must be >= 0");
  require(cfg.local_epochs >= 0, "local_epochs must be >= 0");
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.dim >= 1, "dim must be >= 1");
  require(cfg.margin >= 0.0 && std::isfinite(cfg.margin), "margin must be >= 0");
  require(cfg.negatives >= 1, "negatives must be >= 1");
  require(cfg.adamw.learning_rate > 0.0, "learning_rate must be > 0");
  require(cfg.adamw.beta1 >= 0.0 && cfg.adamw.beta1 < 1.0, "beta1 must be in [0, 1)");
  require(cfg.adamw.beta2 >= 0.0 && cfg.adamw.beta2 < 1.0, "beta2 must be in [0, 1)");
  require(cfg.adamw.epsilon > 0.0, "adam_epsilon must be > 0");
  require(cfg.adamw.weight_decay >= 0.0, "weight_decay must be >= 0");
  require(!cfg.k_list.empty(), "k_list must not be empty");
  for (int k : cfg.k_list) require(k >= 1, "k_list entries must be >= 1");
  if (cfg.dp_mode != DpMode::kOff) ValidateDp(cfg.dp);
}

namespace {

std::string Trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    Fail(ErrorKind::kConfig, "bad value for " + key + ": '" + value + "'");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  Fail(ErrorKind::kConfig, "bad value for " + key + ": '" + value + "'");
}

std::vector<int> ParseIntList(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(ParseNumber<int>(key, Trim(item)));
  return out;
}

std::string FormatDouble(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

FederationConfig ParseConfig(std::string_view text,
                             const FederationConfig& defaults) {
  FederationConfig cfg = defaults;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string body = Trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) {
      Fail(ErrorKind::kConfig, "config line " + std::to_string(line_no) +
                                   ": expected key = value");
    }
    const std::string key = Trim(body.substr(0, eq));
    const std::string value = Trim(body.substr(eq + 1));
    if (!seen.insert(key).second) {
      Fail(ErrorKind::kConfig, "config key repeated: " + key);
    }
    if (key == "mode") cfg.mode = ParseTrainingMode(value);
    else if (key == "n_clients") cfg.n_clients = ParseNumber<int>(key, value);
    else if (key == "client_fraction") cfg.client_fraction = ParseNumber<double>(key, value);
    else if (key == "rounds") cfg.rounds = ParseNumber<int>(key, value);
    else if (key == "local_epochs") cfg.local_epochs = ParseNumber<int>(key, value);
    else if (key == "batch_size") cfg.batch_size = ParseNumber<int>(key, value);
    else if (key == "dim") cfg.dim = ParseNumber<int>(key, value);
    else if (key == "margin") cfg.margin = ParseNumber<double>(key, value);
    else if (key == "negatives") cfg.negatives = ParseNumber<int>(key, value);
    else if (key == "learning_rate") cfg.adamw.learning_rate = ParseNumber<double>(key, value);
    else if (key == "beta1") cfg.adamw.beta1 = ParseNumber<double>(key, value);
    else if (key == "beta2") cfg.adamw.beta2 = ParseNumber<double>(key, value);
    else if (key == "adam_epsilon") cfg.adamw.epsilon = ParseNumber<double>(key, value);
    else if (key == "weight_decay") cfg.adamw.weight_decay = ParseNumber<double>(key, value);
    else if (key == "dp_clip") cfg.dp.clip = ParseNumber<double>(key, value);
    else if (key == "dp_lambda") cfg.dp.noise_scale = ParseNumber<double>(key, value);
    else if (key == "dp_mode") cfg.dp_mode = ParseDpMode(value);
    else if (key == "seed") cfg.seed = ParseNumber<uint64_t>(key, value);
    else if (key == "secure_aggregation") cfg.secure_aggregation = ParseBool(key, value);
    else if (key == "remask_each_round") cfg.remask_each_round = ParseBool(key, value);
    else if (key == "dh_test_group") cfg.dh_test_group = ParseBool(key, value);
    else if (key == "k_list") cfg.k_list = ParseIntList(key, value);
    else if (key == "filtered") cfg.filtered = ParseBool(key, value);
    else Fail(ErrorKind::kConfig, "unknown config key: " + key);
  }
  ValidateConfig(cfg);
  return cfg;
}

FederationConfig LoadConfig(const std::filesystem::path& path,
                            const FederationConfig& defaults) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), defaults);
}

std::string FormatConfig(const FederationConfig& cfg) {
  std::ostringstream os;
  os << "mode = " << TrainingModeName(cfg.mode) << '\n'
     << "n_clients = " << cfg.n_clients << '\n'
     << "client_fraction = " << FormatDouble(cfg.client_fraction) << '\n'
     << "rounds = " << cfg.rounds << '\n'
     << "local_epochs = " << cfg.local_epochs << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "dim = " << cfg.dim << '\n'
     << "margin = " << FormatDouble(cfg.margin) << '\n'
     << "negatives = " << cfg.negatives << '\n'
     << "learning_rate = " << FormatDouble(cfg.adamw.learning_rate) << '\n'
     << "beta1 = " << FormatDouble(cfg.adamw.beta1) << '\n'
     << "beta2 = " << FormatDouble(cfg.adamw.beta2) << '\n'
     << "adam_epsilon = " << FormatDouble(cfg.adamw.epsilon) << '\n'
     << "weight_decay = " << FormatDouble(cfg.adamw.weight_decay) << '\n'
     << "dp_clip = " << FormatDouble(cfg.dp.clip) << '\n'
     << "dp_lambda = " << FormatDouble(cfg.dp.noise_scale) << '\n'
     << "dp_mode = " << DpModeName(cfg.dp_mode) << '\n'
     << "seed = " << cfg.seed << '\n'
     << "secure_aggregation = " << (cfg.secure_aggregation ? "true" : "false") << '\n'
     << "remask_each_round = " << (cfg.remask_each_round ? "true" : "false") << '\n'
     << "dh_test_group = " << (cfg.dh_test_group ? "true" : "false") << '\n'
     << "k_list = ";
  for (size_t i = 0; i < cfg.k_list.size(); ++i) {
    os << (i ? "," : "") << cfg.k_list[i];
  }
  os << '\n' << "filtered = " << (cfg.filtered ? "true" : "false") << '\n';
  return os.str();
}

std::vector<ClientId> SelectClients(uint64_t seed, int n_clients,
                                    double fraction, int64_t round) {
  FederationConfig probe;
  probe.n_clients = n_clients;
  probe.client_fraction = fraction;
  const int m = probe.SelectedPerRound();
  std::vector<ClientId> ids(static_cast<size_t>(n_clients));
  for (int i = 0; i < n_clients; ++i) ids[i] = i;
  Rng rng(DeriveSeed(seed, "select",
                     {static_cast<uint64_t>(n_clients), static_cast<uint64_t>(round)}));
  rng.Shuffle(ids);
  ids.resize(static_cast<size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<TrainExample> MakeExamples(std::span<const QuerySample> samples,
                                       const LocalVocab& vocab, int negatives,
                                       Rng& rng) {
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.Shuffle(order);
  const uint64_t n_local = vocab.entities().size();
  std::vector<TrainExample> out;
  if (n_local == 0) return out;
  for (size_t idx : order) {
    const QuerySample& s = samples[idx];
    std::vector<int> pos_rows;
    for (EntityId e : s.answers_train) {
      if (auto row = vocab.FindEntity(e)) pos_rows.push_back(*row);
    }
    if (pos_rows.empty()) continue;
    TrainExample ex;
    ex.query = ToDnf(s.query.root);
    ex.positive = pos_rows[rng.Below(pos_rows.size())];
    for (int k = 0; k < negatives; ++k) {
      int row = 0;
      for (int attempt = 0; attempt < 32; ++attempt) {
        row = static_cast<int>(rng.Below(n_local));
        if (!std::binary_search(pos_rows.begin(), pos_rows.end(), row)) break;
      }
      ex.negatives.push_back(row);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

ModelState Sub(const ModelState& a, const ModelState& b) {
  ModelState d = a;
  d.entities -= b.entities;
  d.relations -= b.relations;
  d.w1 -= b.w1;
  d.b1 -= b.b1;
  d.w2 -= b.w2;
  d.b2 -= b.b2;
  return d;
}

ModelState Add(const ModelState& a, const ModelState& b) {
  ModelState s = a;
  s.entities += b.entities;
  s.relations += b.relations;
  s.w1 += b.w1;
  s.b1 += b.b1;
  s.w2 += b.w2;
  s.b2 += b.b2;
  return s;
}

std::vector<uint8_t> DoubleBytes(const ModelState& s) {
  std::vector<uint8_t> out;
  ForEachBlock(s, [&](std::span<const double> block) {
    const auto* p = reinterpret_cast<const uint8_t*>(block.data());
    out.insert(out.end(), p, p + block.size() * sizeof(double));
  });
  return out;
}

// Operator nets plus relation rows; the entity block is emptied.
ModelState ThetaOf(const ModelState& s) {
  ModelState t = s;
  t.entities.resize(0, s.entities.cols());
  return t;
}

// Theta as seen by party `p`: the server's op nets and p's relation rows.
ModelState ThetaFor(const LocalModel& server, const LocalModel& party) {
  ModelState t;
  t.entities.resize(0, server.params.dim());
  t.relations.resize(static_cast<Eigen::Index>(party.vocab.relations().size()),
                     server.params.dim());
  for (size_t l = 0; l < party.vocab.relations().size(); ++l) {
    t.relations.row(static_cast<Eigen::Index>(l)) = server.params.relations.row(
        server.vocab.RelationRow(party.vocab.relations()[l]));
  }
  t.w1 = server.params.w1;
  t.b1 = server.params.b1;
  t.w2 = server.params.w2;
  t.b2 = server.params.b2;
  return t;
}

void ApplyTheta(const ModelState& theta, LocalModel& party) {
  party.params.relations = theta.relations;
  party.params.w1 = theta.w1;
  party.params.b1 = theta.b1;
  party.params.w2 = theta.w2;
  party.params.b2 = theta.b2;
}

void Broadcast(FederationState& st, int64_t round, Transcript* transcript) {
  for (Party& p : st.parties) {
    ModelState theta = ThetaFor(st.server, p.model);
    if (transcript) {
      transcript->Log(round, "broadcast-theta", "server", ClientName(p.id),
                      DoubleBytes(theta));
    }
    ApplyTheta(theta, p.model);
  }
}

// Unweighted FedAvg of the operator nets over `thetas`; each relation row
// is averaged over the contributors that hold it.
void AverageTheta(std::span<const ModelState> thetas,
                  std::span<const LocalVocab* const> vocabs, LocalModel& server) {
  const double m = static_cast<double>(thetas.size());
  ModelState& s = server.params;
  s.w1.setZero();
  s.b1.setZero();
  s.w2.setZero();
  s.b2.setZero();
  for (const ModelState& t : thetas) {
    s.w1 += t.w1;
    s.b1 += t.b1;
    s.w2 += t.w2;
    s.b2 += t.b2;
  }
  s.w1 /= m;
  s.b1 /= m;
  s.w2 /= m;
  s.b2 /= m;
  const auto& rels = server.vocab.relations();
  for (size_t g = 0; g < rels.size(); ++g) {
    Vector sum = Vector::Zero(s.dim());
    int count = 0;
    for (size_t i = 0; i < thetas.size(); ++i) {
      if (auto row = vocabs[i]->FindRelation(rels[g])) {
        sum += thetas[i].relations.row(*row).transpose();
        ++count;
      }
    }
    if (count > 0) {
      s.relations.row(static_cast<Eigen::Index>(g)) = (sum / count).transpose();
    }
  }
}

// Plaintext per-entity mean over the given parties' tables (oracle path).
void PlainAverageEntities(FederationState& st, std::span<const ClientId> selected,
                          std::span<const Matrix> tables) {
  const int d = st.config.dim;
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(st.n_entities), d);
  std::vector<int> counts(st.n_entities, 0);
  for (size_t k = 0; k < selected.size(); ++k) {
    auto ids = st.registry.LocalToGlobal(selected[k]);
    for (size_t l = 0; l < ids.size(); ++l) {
      sums.row(ids[l]) += tables[k].row(static_cast<Eigen::Index>(l));
      ++counts[ids[l]];
    }
  }
  for (ClientId c : selected) {
    Party& p = st.parties[c];
    auto ids = st.registry.LocalToGlobal(c);
    for (size_t l = 0; l < ids.size(); ++l) {
      if (counts[ids[l]] > 0) {
        p.model.params.entities.row(static_cast<Eigen::Index>(l)) =
            sums.row(ids[l]) / counts[ids[l]];
      }
    }
  }
}

// Runs local_epochs over the party's training queries. `dp_step` applies LDP
// to every gradient. Returns the mean batch loss.
double TrainEpochs(Party& p, const FederationConfig& cfg, bool dp_step) {
  double loss_sum = 0.0;
  size_t batches = 0;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::vector<TrainExample> ex = MakeExamples(p.train, p.model.vocab,
                                                cfg.negatives, p.rng);
    for (size_t b = 0; b < ex.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(ex.size(), b + static_cast<size_t>(cfg.batch_size));
      std::span<const TrainExample> batch(ex.data() + b, e - b);
      LossAndGradients lg = ComputeLossAndGrads(batch, p.model, cfg.margin);
      if (dp_step) ApplyLdp(lg.grads, cfg.dp, p.rng);
      AdamWStep(p.model.params, lg.grads, p.opt, cfg.adamw);
      loss_sum += lg.loss;
      ++batches;
    }
  }
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

double TrainEpochsTagged(Party& p, const FederationConfig& cfg, bool dp_step) {
  try {
    return TrainEpochs(p, cfg, dp_step);
  } catch (const Error& e) {
    Fail(e.kind(), ClientName(p.id) + ": " + e.what());
  }
}

Party MakeParty(const StagedShard& shard, std::vector<QuerySample> train,
                const FederationConfig& cfg) {
  Party p;
  p.id = shard.client_id;
  const uint64_t tag = static_cast<uint64_t>(static_cast<int64_t>(shard.client_id));
  p.model.vocab = LocalVocab(shard.test.entities(), shard.test.relations());
  p.model.params = InitState(shard.test.entities().size(),
                             shard.test.relations().size(), cfg.dim,
                             DeriveSeed(cfg.seed, "init", {tag}));
  p.opt = InitAdamW(p.model.params);
  p.train = std::move(train);
  p.rng = Rng(DeriveSeed(cfg.seed, "party", {tag}));
  return p;
}

DhParams DhFor(const FederationConfig& cfg) {
  if (cfg.dh_test_group) return DhParams::Custom(BigInt(23), BigInt(5), true);
  return DhParams::Default();
}

// Secret aggregation of the selected parties' entity tables followed by
// client-side unmasking.
void SecureAverageEntities(FederationState& st, std::span<const ClientId> selected,
                           std::vector<MaskedPayload> payloads, int64_t round,
                           const TrainingHooks& hooks) {
  for (auto& pl : payloads) {
    if (hooks.payload_hook) hooks.payload_hook(pl);
    if (hooks.transcript) {
      hooks.transcript->Log(round, "upload-entities", ClientName(pl.client),
                            "server", pl.Serialize());
    }
  }
  PerturbedTable table =
      ServerAggregateEntities(payloads, st.registry, selected, round);
  std::vector<uint8_t> table_bytes;
  if (hooks.transcript) table_bytes = table.Serialize();
  for (ClientId c : selected) {
    if (hooks.transcript) {
      hooks.transcript->Log(round, "aggregate-entities", "server", ClientName(c),
                            table_bytes);
    }
    Party& p = st.parties[c];
    p.model.params.entities = ClientUnmask(table, st.keyrings[c], st.registry, c,
                                           p.model.params.entities);
  }
}

void RoundFedNgdb(FederationState& st, const std::vector<ClientId>& selected,
                  const TrainingHooks& hooks, RoundTelemetry& tel) {
  const FederationConfig& cfg = st.config;
  std::vector<MaskedPayload> payloads;
  std::vector<ModelState> thetas;
  std::vector<const LocalVocab*> vocabs;
  std::vector<Matrix> plain_tables;
  double loss = 0.0;
  for (ClientId c : selected) {
    Party& p = st.parties[c];
    ClientUpdateResult r = ClientUpdate(
        p, cfg, cfg.secure_aggregation ? &st.keyrings[c] : nullptr, st.round);
    loss += r.mean_loss;
    if (hooks.transcript) {
      hooks.transcript->Log(st.round, "upload-theta", ClientName(c), "server",
                            DoubleBytes(r.theta));
      if (!cfg.secure_aggregation) {
        // Oracle mode ships plaintext rows; record them so probes see them.
        ModelState e;
        e.entities = p.model.params.entities;
        hooks.transcript->Log(st.round, "upload-entities-plain", ClientName(c),
                              "server", DoubleBytes(e));
      }
    }
    if (cfg.secure_aggregation) payloads.push_back(std::move(r.entities));
    else plain_tables.push_back(p.model.params.entities);
    thetas.push_back(std::move(r.theta));
    vocabs.push_back(&p.model.vocab);
  }
  tel.mean_client_loss = loss / static_cast<double>(selected.size());

  if (cfg.secure_aggregation) {
    SecureAverageEntities(st, selected, std::move(payloads), st.round, hooks);
  } else {
    PlainAverageEntities(st, selected, plain_tables);
  }
  AverageTheta(thetas, vocabs, st.server);
  Broadcast(st, st.round, hooks.transcript);
}

}  // namespace

FederationState InitFederation(const FederationConfig& cfg,
                               std::span<const StagedShard> shards,
                               const BenchmarkSet& benchmark,
                               const TrainingHooks& hooks) {
  ValidateConfig(cfg);
  if (shards.size() != static_cast<size_t>(cfg.n_clients)) {
    Fail(ErrorKind::kConfig, "config expects " + std::to_string(cfg.n_clients) +
                                 " clients but " + std::to_string(shards.size()) +
                                 " shards were given");
  }
  for (size_t i = 0; i < shards.size(); ++i) {
    if (shards[i].client_id != static_cast<ClientId>(i)) {
      Fail(ErrorKind::kConfig, "shard " + std::to_string(i) + " carries client id " +
                                   std::to_string(shards[i].client_id));
    }
  }
  FederationState st;
  st.config = cfg;
  st.ownership = BuildOwnership(shards);
  std::vector<std::vector<EntityId>> held;
  for (const auto& s : shards) {
    held.push_back(s.test.entities());
    for (EntityId e : s.test.entities()) {
      st.n_entities = std::max(st.n_entities, static_cast<size_t>(e) + 1);
    }
    for (RelationId r : s.test.relations()) {
      st.n_relations = std::max(st.n_relations, static_cast<size_t>(r) + 1);
    }
  }
  st.registry = ClientRegistry(st.n_entities, std::move(held));

  if (cfg.mode == TrainingMode::kCentral) {
    st.parties.push_back(MakeParty(MergeGlobal(shards), benchmark.global.train, cfg));
    return st;
  }
  if (benchmark.clients.size() != shards.size()) {
    Fail(ErrorKind::kConfig, "benchmark has " + std::to_string(benchmark.clients.size()) +
                                 " client query sets for " +
                                 std::to_string(shards.size()) + " shards");
  }
  for (size_t i = 0; i < shards.size(); ++i) {
    st.parties.push_back(MakeParty(shards[i], benchmark.clients[i].train, cfg));
  }
  if (cfg.mode == TrainingMode::kLocal) return st;

  // Server Theta starts as the mean of the clients' initial Theta.
  std::vector<RelationId> all_rels;
  for (const auto& [r, owners] : st.ownership) all_rels.push_back(r);
  std::sort(all_rels.begin(), all_rels.end());
  st.server.vocab = LocalVocab({}, all_rels);
  st.server.params = InitState(0, all_rels.size(), cfg.dim, 0);
  std::vector<ModelState> thetas;
  std::vector<const LocalVocab*> vocabs;
  for (const Party& p : st.parties) {
    thetas.push_back(ThetaOf(p.model.params));
    vocabs.push_back(&p.model.vocab);
  }
  AverageTheta(thetas, vocabs, st.server);

  std::vector<ClientId> everyone;
  for (const Party& p : st.parties) everyone.push_back(p.id);
  constexpr int64_t kSetupRound = -1;
  if (cfg.secure_aggregation) {
    MaskSetupConfig mcfg;
    mcfg.dh = DhFor(cfg);
    mcfg.seed = DeriveSeed(cfg.seed, "masks");
    mcfg.remask_each_round = cfg.remask_each_round;
    for (const Party& p : st.parties) {
      size_t n = 0;
      const ModelState theta = ThetaOf(p.model.params);
      ForEachBlock(theta,
                   [&](std::span<const double> b) { n += b.size(); });
      mcfg.operator_sizes.push_back(n);
    }
    st.keyrings = SetupMasks(st.registry, cfg.dim, mcfg, hooks.transcript);
    std::vector<MaskedPayload> payloads;
    for (const Party& p : st.parties) {
      payloads.push_back(MaskedUpload(p.id, p.model.params.entities,
                                      st.keyrings[p.id].Get(p.id), kSetupRound));
    }
    SecureAverageEntities(st, everyone, std::move(payloads), kSetupRound, hooks);
  } else {
    std::vector<Matrix> tables;
    for (const Party& p : st.parties) tables.push_back(p.model.params.entities);
    PlainAverageEntities(st, everyone, tables);
  }
  Broadcast(st, kSetupRound, hooks.transcript);
  return st;
}

ClientUpdateResult ClientUpdate(Party& p, const FederationConfig& cfg,
                                const MaskKeyring* keys, int64_t round) {
  const bool dp_on = cfg.mode == TrainingMode::kFedNgdb;
  const ModelState start = p.model.params;
  ClientUpdateResult r;
  r.mean_loss = TrainEpochsTagged(p, cfg, dp_on && cfg.dp_mode == DpMode::kStep);
  r.delta = Sub(p.model.params, start);
  if (dp_on && cfg.dp_mode == DpMode::kDelta) {
    ApplyLdp(r.delta, cfg.dp, p.rng);
    p.model.params = Add(start, r.delta);
  }
  if (!AllFinite(p.model.params)) {
    Fail(ErrorKind::kNumeric, ClientName(p.id) + ": non-finite parameters");
  }
  if (keys) {
    try {
      r.entities = MaskedUpload(p.id, p.model.params.entities, keys->Get(p.id), round);
    } catch (const Error& e) {
      Fail(e.kind(), ClientName(p.id) + ": " + e.what());
    }
  }
  r.theta = ThetaOf(p.model.params);
  return r;
}

void RunRound(FederationState& st, const TrainingHooks& hooks) {
  const auto t0 = Clock::now();
  const FederationConfig& cfg = st.config;
  RoundTelemetry tel;
  tel.round = st.round;

  const std::vector<Party> parties_backup = st.parties;
  const LocalModel server_backup = st.server;
  try {
    switch (cfg.mode) {
      case TrainingMode::kFedNgdb:
        tel.selected = SelectClients(cfg.seed, cfg.n_clients, cfg.client_fraction,
                                     st.round);
        RoundFedNgdb(st, tel.selected, hooks, tel);
        break;
      case TrainingMode::kLocal:
      case TrainingMode::kCentral: {
        double loss = 0.0;
        for (Party& p : st.parties) {
          tel.selected.push_back(p.id);
          loss += TrainEpochsTagged(p, cfg, false);
        }
        tel.mean_client_loss = loss / static_cast<double>(st.parties.size());
        break;
      }
    }
  } catch (...) {
    st.parties = parties_backup;
    st.server = server_backup;
    throw;
  }
  tel.wall_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  st.telemetry.push_back(tel);
  ++st.round;
  if (hooks.on_round) hooks.on_round(tel);
}

FederationState RunTraining(const FederationConfig& cfg,
                            std::span<const StagedShard> shards,
                            const BenchmarkSet& benchmark,
                            const TrainingHooks& hooks) {
  FederationState st = InitFederation(cfg, shards, benchmark, hooks);
  while (st.round < cfg.rounds) {
    try {
      RunRound(st, hooks);
    } catch (const Error& e) {
      Fail(ErrorKind::kTraining,
           "round " + std::to_string(st.round) + " aborted: " + e.what());
    }
  }
  return st;
}

FederationState RunBaseline(TrainingMode mode, const FederationConfig& cfg,
                            std::span<const StagedShard> shards,
                            const BenchmarkSet& benchmark) {
  if (mode == TrainingMode::kFedNgdb) {
    Fail(ErrorKind::kConfig, "baseline mode must be local or central");
  }
  FederationConfig c = cfg;
  c.mode = mode;
  return RunTraining(c, shards, benchmark);
}

void WriteTelemetry(const std::filesystem::path& path,
                    std::span<const RoundTelemetry> rows) {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "round,mean_client_loss,selected_clients,wall_ms\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.round << ',' << r.mean_client_loss << ',';
    for (size_t i = 0; i < r.selected.size(); ++i) {
      out << (i ? ";" : "") << r.selected[i];
    }
    out << ',' << r.wall_ms << '\n';
  }
}

}  // namespace fedngdb
