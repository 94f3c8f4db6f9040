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

// Synthetic knowledge graphs with a planted translational structure.
//
// Entities get random positions on [0, span). Relation r has a fixed shift
// s_r; each head links through r to the entities nearest to x_h + s_r.
// A translation model can fit such a graph, which makes it a useful toy
// benchmark for end-to-end training checks.

#ifndef FEDNGDB_SYNTH_H_
#define FEDNGDB_SYNTH_H_

#include <cstdint>
#include <vector>

#include "fedngdb/kg_store.h"

namespace fedngdb {

struct SyntheticKgConfig {
  size_t entities = 200;
  size_t relations = 5;
  double span = 10.0;
  // Probability that a given (head, relation) pair has edges.
  double edge_prob = 0.5;
  // Each edge-bearing pair links to 1..max_tails nearest entities.
  int max_tails = 2;
  // Shifts cycle through this list.
  std::vector<double> shifts = {1.0, 2.0, 3.0, -1.0, -2.0};
  uint64_t seed = 0;
};

// Entities that end up in no triple are dropped and the rest renumbered
// densely; tokens are "e<original index>" and "r<index>". When `vocab` is
// given it receives the tokens (it must be empty).
Graph MakeSyntheticKg(const SyntheticKgConfig& cfg, Vocabularies* vocab = nullptr);

}  // namespace fedngdb

#endif  // FEDNGDB_SYNTH_H_
