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

#include "fedngdb/synth.h"

#include <algorithm>
#include <cmath>
#include <map>

namespace fedngdb {

Graph MakeSyntheticKg(const SyntheticKgConfig& cfg, Vocabularies* vocab) {
  if (cfg.entities < 2 || cfg.relations < 1 || cfg.shifts.empty() ||
      cfg.max_tails < 1 || !(cfg.span > 0.0) || cfg.edge_prob < 0.0 ||
      cfg.edge_prob > 1.0) {
    Fail(ErrorKind::kConfig, "invalid synthetic graph configuration");
  }
  if (vocab && (vocab->entities.size() || vocab->relations.size())) {
    Fail(ErrorKind::kConfig, "synthetic graph needs empty vocabularies");
  }
  Rng rng(DeriveSeed(cfg.seed, "synthetic-kg"));
  std::vector<double> pos(cfg.entities);
  for (double& x : pos) x = rng.Uniform(0.0, cfg.span);

  // Entities sorted by position for nearest-neighbour lookups.
  std::vector<size_t> by_pos(cfg.entities);
  for (size_t i = 0; i < by_pos.size(); ++i) by_pos[i] = i;
  std::sort(by_pos.begin(), by_pos.end(),
            [&](size_t a, size_t b) { return pos[a] < pos[b]; });

  std::vector<Triple> raw;
  for (size_t r = 0; r < cfg.relations; ++r) {
    const double shift = cfg.shifts[r % cfg.shifts.size()];
    for (size_t h = 0; h < cfg.entities; ++h) {
      const double target = pos[h] + shift;
      if (target < 0.0 || target >= cfg.span) continue;
      if (rng.Uniform01() >= cfg.edge_prob) continue;
      const int n_tails = 1 + static_cast<int>(rng.Below(cfg.max_tails));
      std::vector<size_t> near = by_pos;
      std::partial_sort(near.begin(), near.begin() + n_tails, near.end(),
                        [&](size_t a, size_t b) {
                          const double da = std::fabs(pos[a] - target);
                          const double db = std::fabs(pos[b] - target);
                          return da < db || (da == db && a < b);
                        });
      for (int k = 0; k < n_tails; ++k) {
        if (near[k] == h) continue;
        raw.push_back({static_cast<EntityId>(h), static_cast<RelationId>(r),
                       static_cast<EntityId>(near[k])});
      }
    }
  }

  // Dense renumbering over the entities that occur in some triple.
  std::map<EntityId, EntityId> remap;
  for (const Triple& t : raw) {
    remap.emplace(t.head, 0);
    remap.emplace(t.tail, 0);
  }
  EntityId next = 0;
  for (auto& [orig, id] : remap) id = next++;
  std::vector<RelationId> rels;
  for (const Triple& t : raw) rels.push_back(t.relation);
  std::sort(rels.begin(), rels.end());
  rels.erase(std::unique(rels.begin(), rels.end()), rels.end());
  std::map<RelationId, RelationId> rel_remap;
  for (size_t i = 0; i < rels.size(); ++i) rel_remap[rels[i]] = static_cast<RelationId>(i);

  std::vector<Triple> triples;
  for (const Triple& t : raw) {
    triples.push_back({remap[t.head], rel_remap[t.relation], remap[t.tail]});
  }
  if (vocab) {
    for (const auto& [orig, id] : remap) vocab->entities.Intern("e" + std::to_string(orig));
    for (RelationId r : rels) vocab->relations.Intern("r" + std::to_string(r));
  }
  return Graph::FromTriples(std::move(triples));
}

}  // namespace fedngdb
