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

#include "fedngdb/query.h"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace fedngdb {

using json = nlohmann::json;

namespace {

struct TypeName {
  QueryType type;
  const char* name;
};

constexpr TypeName kTypeNames[] = {
    {QueryType::k1p, "1p"}, {QueryType::k2p, "2p"}, {QueryType::k2i, "2i"},
    {QueryType::kIp, "ip"}, {QueryType::k3i, "3i"}, {QueryType::kPi, "pi"},
    {QueryType::k2u, "2u"}, {QueryType::kUp, "up"},
};

}  // namespace

const char* QueryTypeName(QueryType type) {
  for (const auto& tn : kTypeNames) {
    if (tn.type == type) return tn.name;
  }
  return "?";
}

QueryType ParseQueryType(std::string_view name) {
  for (const auto& tn : kTypeNames) {
    if (name == tn.name) return tn.type;
  }
  Fail(ErrorKind::kParse, "unknown query type '" + std::string(name) + "'");
}

QueryNode QueryNode::Anchor(EntityId e) {
  QueryNode n;
  n.op = Op::kAnchor;
  n.anchor = e;
  return n;
}

QueryNode QueryNode::Project(QueryNode child, RelationId r) {
  QueryNode n;
  n.op = Op::kProjection;
  n.relation = r;
  n.children.push_back(std::move(child));
  return n;
}

QueryNode QueryNode::Intersect(std::vector<QueryNode> children) {
  if (children.size() < 2) {
    Fail(ErrorKind::kParse, "intersection needs at least two operands");
  }
  QueryNode n;
  n.op = Op::kIntersection;
  n.children = std::move(children);
  return n;
}

QueryNode QueryNode::Union(std::vector<QueryNode> children) {
  if (children.size() < 2) {
    Fail(ErrorKind::kParse, "union needs at least two operands");
  }
  QueryNode n;
  n.op = Op::kUnion;
  n.children = std::move(children);
  return n;
}

Query MakeQuery(QueryType type, std::span<const EntityId> a,
                std::span<const RelationId> r) {
  using N = QueryNode;
  auto need = [&](size_t anchors, size_t relations) {
    if (a.size() != anchors || r.size() != relations) {
      Fail(ErrorKind::kParse, std::string("query type ") + QueryTypeName(type) +
                                  " needs " + std::to_string(anchors) +
                                  " anchors and " + std::to_string(relations) +
                                  " relations");
    }
  };
  Query q;
  q.type = type;
  switch (type) {
    case QueryType::k1p:
      need(1, 1);
      q.root = N::Project(N::Anchor(a[0]), r[0]);
      break;
    case QueryType::k2p:
      need(1, 2);
      q.root = N::Project(N::Project(N::Anchor(a[0]), r[0]), r[1]);
      break;
    case QueryType::k2i:
      need(2, 2);
      q.root = N::Intersect({N::Project(N::Anchor(a[0]), r[0]),
                             N::Project(N::Anchor(a[1]), r[1])});
      break;
    case QueryType::k3i:
      need(3, 3);
      q.root = N::Intersect({N::Project(N::Anchor(a[0]), r[0]),
                             N::Project(N::Anchor(a[1]), r[1]),
                             N::Project(N::Anchor(a[2]), r[2])});
      break;
    case QueryType::kIp:
      need(2, 3);
      q.root = N::Project(N::Intersect({N::Project(N::Anchor(a[0]), r[0]),
                                        N::Project(N::Anchor(a[1]), r[1])}),
                          r[2]);
      break;
    case QueryType::kPi:
      need(2, 3);
      q.root = N::Intersect(
          {N::Project(N::Project(N::Anchor(a[0]), r[0]), r[1]),
           N::Project(N::Anchor(a[1]), r[2])});
      break;
    case QueryType::k2u:
      need(2, 2);
      q.root = N::Union({N::Project(N::Anchor(a[0]), r[0]),
                         N::Project(N::Anchor(a[1]), r[1])});
      break;
    case QueryType::kUp:
      need(2, 3);
      q.root = N::Project(N::Union({N::Project(N::Anchor(a[0]), r[0]),
                                    N::Project(N::Anchor(a[1]), r[1])}),
                          r[2]);
      break;
  }
  return q;
}

namespace {

// Order-insensitive structural signature (ids ignored).
std::string Shape(const QueryNode& n) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      return "a";
    case QueryNode::Op::kProjection:
      return "p(" + Shape(n.children.at(0)) + ")";
    case QueryNode::Op::kIntersection:
    case QueryNode::Op::kUnion: {
      std::vector<std::string> parts;
      for (const auto& c : n.children) parts.push_back(Shape(c));
      std::sort(parts.begin(), parts.end());
      std::string s = n.op == QueryNode::Op::kIntersection ? "i(" : "u(";
      for (const auto& p : parts) s += p + ",";
      return s + ")";
    }
  }
  return "";
}

std::vector<QueryNode> DnfDisjuncts(const QueryNode& n) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      return {n};
    case QueryNode::Op::kProjection: {
      std::vector<QueryNode> out;
      for (auto& d : DnfDisjuncts(n.children.at(0))) {
        out.push_back(QueryNode::Project(std::move(d), n.relation));
      }
      return out;
    }
    case QueryNode::Op::kIntersection: {
      // Cartesian product of the operands' disjunct lists.
      std::vector<std::vector<QueryNode>> combos = {{}};
      for (const auto& c : n.children) {
        const auto options = DnfDisjuncts(c);
        std::vector<std::vector<QueryNode>> next;
        for (const auto& partial : combos) {
          for (const auto& o : options) {
            auto extended = partial;
            extended.push_back(o);
            next.push_back(std::move(extended));
          }
        }
        combos = std::move(next);
      }
      std::vector<QueryNode> out;
      for (auto& combo : combos) {
        out.push_back(QueryNode::Intersect(std::move(combo)));
      }
      return out;
    }
    case QueryNode::Op::kUnion: {
      std::vector<QueryNode> out;
      for (const auto& c : n.children) {
        auto ds = DnfDisjuncts(c);
        std::move(ds.begin(), ds.end(), std::back_inserter(out));
      }
      return out;
    }
  }
  return {};
}

}  // namespace

bool MatchesType(const QueryNode& root, QueryType type) {
  const std::vector<EntityId> anchors = {0, 0, 0};
  const std::vector<RelationId> rels = {0, 0, 0};
  static const size_t kAnchors[] = {1, 1, 2, 2, 3, 2, 2, 2};
  static const size_t kRelations[] = {1, 2, 2, 3, 3, 3, 2, 3};
  const auto idx = static_cast<size_t>(type);
  const Query canon =
      MakeQuery(type, std::span(anchors).first(kAnchors[idx]),
                std::span(rels).first(kRelations[idx]));
  const std::string shape = Shape(root);
  return shape == Shape(canon.root) || shape == Shape(ToDnf(canon.root));
}

QueryNode ToDnf(const QueryNode& node) {
  auto ds = DnfDisjuncts(node);
  if (ds.size() == 1) return std::move(ds.front());
  return QueryNode::Union(std::move(ds));
}

Query ToDnf(const Query& q) { return {q.type, ToDnf(q.root)}; }

std::vector<const QueryNode*> Disjuncts(const QueryNode& dnf_root) {
  std::vector<const QueryNode*> out;
  if (dnf_root.op == QueryNode::Op::kUnion) {
    for (const auto& c : dnf_root.children) out.push_back(&c);
  } else {
    out.push_back(&dnf_root);
  }
  return out;
}

EntitySet AnswerQuery(const Graph& g, const QueryNode& n) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      if (g.HasEntity(n.anchor)) return {n.anchor};
      return {};
    case QueryNode::Op::kProjection: {
      EntitySet out;
      for (EntityId e : AnswerQuery(g, n.children.at(0))) {
        for (const Triple& t : g.Outgoing(e, n.relation)) out.push_back(t.tail);
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      return out;
    }
    case QueryNode::Op::kIntersection: {
      EntitySet acc = AnswerQuery(g, n.children.at(0));
      for (size_t i = 1; i < n.children.size() && !acc.empty(); ++i) {
        const EntitySet next = AnswerQuery(g, n.children[i]);
        EntitySet merged;
        std::set_intersection(acc.begin(), acc.end(), next.begin(), next.end(),
                              std::back_inserter(merged));
        acc = std::move(merged);
      }
      return acc;
    }
    case QueryNode::Op::kUnion: {
      EntitySet acc;
      for (const auto& c : n.children) {
        const EntitySet next = AnswerQuery(g, c);
        EntitySet merged;
        std::set_union(acc.begin(), acc.end(), next.begin(), next.end(),
                       std::back_inserter(merged));
        acc = std::move(merged);
      }
      return acc;
    }
  }
  return {};
}

namespace {

void CollectAtoms(const QueryNode& n, std::vector<RelationId>& rels,
                  std::vector<EntityId>& anchors) {
  for (const auto& c : n.children) CollectAtoms(c, rels, anchors);
  if (n.op == QueryNode::Op::kProjection) rels.push_back(n.relation);
  if (n.op == QueryNode::Op::kAnchor) anchors.push_back(n.anchor);
}

}  // namespace

std::vector<RelationId> AtomRelations(const QueryNode& node) {
  std::vector<RelationId> rels;
  std::vector<EntityId> anchors;
  CollectAtoms(node, rels, anchors);
  return rels;
}

std::vector<EntityId> AnchorEntities(const QueryNode& node) {
  std::vector<RelationId> rels;
  std::vector<EntityId> anchors;
  CollectAtoms(node, rels, anchors);
  return anchors;
}

std::string LocalityName(const Locality& loc) {
  if (loc.cross_graph) return "cross-graph";
  return "in-graph:" + std::to_string(loc.client);
}

std::vector<std::vector<ClientId>> AtomOwners(const QueryNode& node,
                                              const OwnershipMap& ownership) {
  std::vector<std::vector<ClientId>> out;
  for (RelationId r : AtomRelations(node)) {
    auto it = ownership.find(r);
    if (it == ownership.end() || it->second.empty()) {
      Fail(ErrorKind::kClassification,
           "relation " + std::to_string(r) + " has no owner");
    }
    out.push_back(it->second);
  }
  return out;
}

Locality ClassifyQuery(const QueryNode& node, const OwnershipMap& ownership) {
  const auto owners = AtomOwners(node, ownership);
  if (owners.empty()) {
    ClientId lowest = 0;
    bool any = false;
    for (const auto& [r, cs] : ownership) {
      for (ClientId c : cs) {
        if (!any || c < lowest) lowest = c;
        any = true;
      }
    }
    return Locality::InGraph(lowest);
  }
  std::vector<ClientId> common = owners.front();
  for (size_t i = 1; i < owners.size() && !common.empty(); ++i) {
    std::vector<ClientId> next;
    std::set_intersection(common.begin(), common.end(), owners[i].begin(),
                          owners[i].end(), std::back_inserter(next));
    common = std::move(next);
  }
  if (common.empty()) return Locality::CrossGraph();
  return Locality::InGraph(common.front());
}

const char* SplitName(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

EntitySet NovelAnswers(const QuerySample& s) {
  EntitySet out;
  std::set_difference(s.answers_test.begin(), s.answers_test.end(),
                      s.answers_valid.begin(), s.answers_valid.end(),
                      std::back_inserter(out));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

json QueryTreeToJson(const QueryNode& n) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      return json::array({"anchor", n.anchor});
    case QueryNode::Op::kProjection:
      return json::array({"proj", n.relation, QueryTreeToJson(n.children[0])});
    case QueryNode::Op::kIntersection:
    case QueryNode::Op::kUnion: {
      json subs = json::array();
      for (const auto& c : n.children) subs.push_back(QueryTreeToJson(c));
      return json::array(
          {n.op == QueryNode::Op::kIntersection ? "inter" : "union", subs});
    }
  }
  return nullptr;
}

QueryNode QueryTreeFromJson(const json& j) {
  auto bad = [&](const std::string& why) -> QueryNode {
    Fail(ErrorKind::kParse, "malformed query tree (" + why + "): " + j.dump());
  };
  if (!j.is_array() || j.empty() || !j[0].is_string()) {
    return bad("expected [tag, ...]");
  }
  const std::string tag = j[0].get<std::string>();
  if (tag == "anchor") {
    if (j.size() != 2 || !j[1].is_number_integer()) return bad("anchor id");
    return QueryNode::Anchor(j[1].get<EntityId>());
  }
  if (tag == "proj") {
    if (j.size() != 3 || !j[1].is_number_integer()) return bad("projection");
    return QueryNode::Project(QueryTreeFromJson(j[2]), j[1].get<RelationId>());
  }
  if (tag == "inter" || tag == "union") {
    if (j.size() != 2 || !j[1].is_array() || j[1].size() < 2) {
      return bad("operator needs a list of at least two operands");
    }
    std::vector<QueryNode> subs;
    for (const auto& s : j[1]) subs.push_back(QueryTreeFromJson(s));
    return tag == "inter" ? QueryNode::Intersect(std::move(subs))
                          : QueryNode::Union(std::move(subs));
  }
  return bad("unknown tag '" + tag + "'");
}

json SampleToJson(const QuerySample& s) {
  json j;
  j["type"] = QueryTypeName(s.query.type);
  j["tree"] = QueryTreeToJson(s.query.root);
  j["answers_train"] = s.answers_train;
  j["answers_val"] = s.answers_valid;
  j["answers_test"] = s.answers_test;
  j["locality"] = LocalityName(s.locality);
  j["atom_owners"] = s.atom_owners;
  return j;
}

QuerySample SampleFromJson(const json& j) {
  QuerySample s;
  try {
    s.query.type = ParseQueryType(j.at("type").get<std::string>());
    s.query.root = QueryTreeFromJson(j.at("tree"));
    s.answers_train = j.at("answers_train").get<EntitySet>();
    s.answers_valid = j.at("answers_val").get<EntitySet>();
    s.answers_test = j.at("answers_test").get<EntitySet>();
    s.atom_owners = j.at("atom_owners").get<std::vector<std::vector<ClientId>>>();
    const std::string loc = j.at("locality").get<std::string>();
    if (loc == "cross-graph") {
      s.locality = Locality::CrossGraph();
    } else if (loc.rfind("in-graph:", 0) == 0) {
      s.locality = Locality::InGraph(std::stoi(loc.substr(9)));
    } else {
      Fail(ErrorKind::kParse, "bad locality '" + loc + "'");
    }
  } catch (const json::exception& e) {
    Fail(ErrorKind::kParse, std::string("malformed query sample: ") + e.what());
  }
  if (!MatchesType(s.query.root, s.query.type)) {
    Fail(ErrorKind::kParse, std::string("tree does not match declared type ") +
                                QueryTypeName(s.query.type));
  }
  return s;
}

void WriteSamples(const std::filesystem::path& path,
                  std::span<const QuerySample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& s : samples) out << SampleToJson(s).dump() << '\n';
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::vector<QuerySample> ReadSamples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<QuerySample> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      Fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": " + e.what());
    }
    out.push_back(SampleFromJson(j));
  }
  return out;
}

}  // namespace fedngdb
