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

#include "fedngdb/checkpoint.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedngdb {
namespace {

constexpr char kMagic[8] = {'F', 'N', 'G', 'D', 'B', 'C', 'K', '1'};

std::vector<size_t> BlockSizes(const ModelState& s) {
  std::vector<size_t> out;
  ForEachBlock(s, [&](std::span<const double> b) { out.push_back(b.size()); });
  return out;
}

void WriteBlocks(std::ofstream& out, const ModelState& s) {
  ForEachBlock(s, [&](std::span<const double> b) {
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(b.size() * sizeof(double)));
  });
}

void ReadBlocks(std::ifstream& in, ModelState& s, const std::string& name) {
  ForEachBlock(s, [&](std::span<double> b) {
    in.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(double)));
    if (!in) Fail(ErrorKind::kIo, "truncated checkpoint " + name);
  });
}

ModelState Shaped(size_t n, size_t r, int d) {
  ModelState s;
  s.entities = Matrix::Zero(static_cast<Eigen::Index>(n), d);
  s.relations = Matrix::Zero(static_cast<Eigen::Index>(r), d);
  s.w1 = Matrix::Zero(d, d);
  s.b1 = Vector::Zero(d);
  s.w2 = Matrix::Zero(d, d);
  s.b2 = Vector::Zero(d);
  return s;
}

std::string CheckpointName(const std::string& kind, ClientId id) {
  if (kind == "client") return "client_" + std::to_string(id) + ".ckpt";
  return kind + ".ckpt";
}

}  // namespace

void WritePartyCheckpoint(const std::filesystem::path& path,
                          const PartyCheckpoint& c) {
  nlohmann::json h = {{"kind", c.kind},
                      {"party_id", c.party_id},
                      {"dim", c.model.params.dim()},
                      {"entities", c.model.vocab.entities()},
                      {"relations", c.model.vocab.relations()},
                      {"adam_step", c.opt.step},
                      {"rng_state", c.rng_state},
                      {"blocks", BlockSizes(c.model.params)}};
  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  uint64_t len = header.size();
  uint8_t len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<uint8_t>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  WriteBlocks(out, c.model.params);
  WriteBlocks(out, c.opt.m);
  WriteBlocks(out, c.opt.v);
  if (!out) Fail(ErrorKind::kIo, "failed writing " + path.string());
}

PartyCheckpoint ReadPartyCheckpoint(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "missing checkpoint " + name);
  char magic[8];
  uint8_t len_bytes[8];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    Fail(ErrorKind::kParse, "not a checkpoint file: " + name);
  }
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(len_bytes[i]) << (8 * i);
  if (len > (1u << 30)) Fail(ErrorKind::kParse, "corrupt checkpoint header " + name);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) Fail(ErrorKind::kIo, "truncated checkpoint " + name);

  PartyCheckpoint c;
  try {
    nlohmann::json h = nlohmann::json::parse(header);
    c.kind = h.at("kind").get<std::string>();
    c.party_id = h.at("party_id").get<ClientId>();
    const int d = h.at("dim").get<int>();
    c.model.vocab = LocalVocab(h.at("entities").get<std::vector<EntityId>>(),
                               h.at("relations").get<std::vector<RelationId>>());
    c.opt.step = h.at("adam_step").get<int64_t>();
    c.rng_state = h.at("rng_state").get<std::string>();
    c.model.params = Shaped(c.model.vocab.entities().size(),
                            c.model.vocab.relations().size(), d);
    if (h.at("blocks").get<std::vector<size_t>>() != BlockSizes(c.model.params)) {
      Fail(ErrorKind::kParse, "checkpoint block sizes disagree with header");
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kParse, "bad checkpoint header in " + name + ": " + e.what());
  }
  c.opt.m = ZerosLike(c.model.params);
  c.opt.v = ZerosLike(c.model.params);
  ReadBlocks(in, c.model.params, name);
  ReadBlocks(in, c.opt.m, name);
  ReadBlocks(in, c.opt.v, name);
  if (in.peek() != std::char_traits<char>::eof()) {
    Fail(ErrorKind::kParse, "trailing bytes in checkpoint " + name);
  }
  return c;
}

void SaveFederation(const std::filesystem::path& dir, const FederationState& st) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  const bool central = st.config.mode == TrainingMode::kCentral;
  for (const Party& p : st.parties) {
    PartyCheckpoint c{central ? "central" : "client", p.id, p.model, p.opt,
                      p.rng.SerializeState()};
    const std::string f = CheckpointName(c.kind, p.id);
    WritePartyCheckpoint(dir / f, c);
    files.push_back(f);
  }
  if (st.config.mode == TrainingMode::kFedNgdb) {
    PartyCheckpoint c{"server", kServerParty, st.server, InitAdamW(st.server.params), ""};
    WritePartyCheckpoint(dir / "server.ckpt", c);
    files.push_back("server.ckpt");
  }
  nlohmann::json meta = {{"format", "fedngdb-checkpoint-1"},
                         {"mode", TrainingModeName(st.config.mode)},
                         {"config", FormatConfig(st.config)},
                         {"round", st.round},
                         {"n_entities", st.n_entities},
                         {"n_relations", st.n_relations},
                         {"files", files}};
  std::ofstream out(dir / "metadata.json");
  if (!out) Fail(ErrorKind::kIo, "cannot write " + (dir / "metadata.json").string());
  out << meta.dump(2) << '\n';
}

FederationState LoadFederation(const std::filesystem::path& dir,
                               std::span<const StagedShard> shards,
                               const BenchmarkSet* benchmark) {
  std::ifstream in(dir / "metadata.json");
  if (!in) Fail(ErrorKind::kIo, "missing checkpoint metadata in " + dir.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kParse, std::string("bad checkpoint metadata: ") + e.what());
  }
  const FederationConfig cfg = ParseConfig(meta.at("config").get<std::string>());

  // Rebuild structure (and, for fedngdb, the deterministic mask setup) from a
  // T=0 initialization, then overwrite the parameters.
  FederationConfig init_cfg = cfg;
  init_cfg.rounds = 0;
  BenchmarkSet empty;
  empty.clients.resize(shards.size());
  FederationState st = InitFederation(init_cfg, shards, benchmark ? *benchmark : empty);
  st.config = cfg;
  st.round = meta.at("round").get<int64_t>();

  for (Party& p : st.parties) {
    const bool central = cfg.mode == TrainingMode::kCentral;
    PartyCheckpoint c =
        ReadPartyCheckpoint(dir / CheckpointName(central ? "central" : "client", p.id));
    if (!(c.model.vocab == p.model.vocab)) {
      Fail(ErrorKind::kParse, "checkpoint vocabulary of party " +
                                  std::to_string(p.id) + " does not match the shard");
    }
    p.model = std::move(c.model);
    p.opt = std::move(c.opt);
    p.rng.RestoreState(c.rng_state);
  }
  if (cfg.mode == TrainingMode::kFedNgdb) {
    PartyCheckpoint c = ReadPartyCheckpoint(dir / "server.ckpt");
    st.server = std::move(c.model);
  }
  return st;
}

}  // namespace fedngdb
