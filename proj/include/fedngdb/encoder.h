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

// GQE-style query encoder.
//
//   project(v, r)    = v + R[r]
//   intersect(v_1..) = W2 * relu(W1 * m + b1) + b2 + m,   m = mean(v_i)
//   score(q, e)      = -||q - E[e]||_2
//
// Unions are not embedded: a DNF query yields one embedding per disjunct and
// an entity's score is the max over disjuncts.
//
// Parameters are indexed by local row; LocalVocab translates global ids.

#ifndef FEDNGDB_ENCODER_H_
#define FEDNGDB_ENCODER_H_

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedngdb/common.h"
#include "fedngdb/query.h"

namespace fedngdb {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelState {
  Matrix entities;   // n_local x d
  Matrix relations;  // r_local x d
  Matrix w1;         // d x d
  Vector b1;
  Matrix w2;         // d x d
  Vector b2;

  int dim() const { return static_cast<int>(w1.rows()); }

  bool operator==(const ModelState& o) const;
};

// Visits every parameter block as a flat span, always in the order
// entities, relations, w1, b1, w2, b2.
template <typename State, typename Fn>
void ForEachBlock(State& s, Fn&& fn) {
  fn(std::span(s.entities.data(), static_cast<size_t>(s.entities.size())));
  fn(std::span(s.relations.data(), static_cast<size_t>(s.relations.size())));
  fn(std::span(s.w1.data(), static_cast<size_t>(s.w1.size())));
  fn(std::span(s.b1.data(), static_cast<size_t>(s.b1.size())));
  fn(std::span(s.w2.data(), static_cast<size_t>(s.w2.size())));
  fn(std::span(s.b2.data(), static_cast<size_t>(s.b2.size())));
}

// Same shapes, all zero.
ModelState ZerosLike(const ModelState& s);
bool SameShape(const ModelState& a, const ModelState& b);
bool AllFinite(const ModelState& s);

// Entries uniform in [-1/sqrt(d), 1/sqrt(d)] from a stream seeded by `seed`.
ModelState InitState(size_t n_local, size_t r_local, int dim, uint64_t seed);

// Sorted global ids of the rows of a party's tables.
class LocalVocab {
 public:
  LocalVocab() = default;
  LocalVocab(std::vector<EntityId> entities, std::vector<RelationId> relations);

  const std::vector<EntityId>& entities() const { return entities_; }
  const std::vector<RelationId>& relations() const { return relations_; }

  std::optional<int> FindEntity(EntityId e) const;
  std::optional<int> FindRelation(RelationId r) const;
  // Throw a vocabulary (lookup) error for ids outside the party.
  int EntityRow(EntityId e) const;
  int RelationRow(RelationId r) const;

  bool operator==(const LocalVocab&) const = default;

 private:
  std::vector<EntityId> entities_;
  std::vector<RelationId> relations_;
};

// One party's encoder: parameters plus the row vocabulary.
struct LocalModel {
  LocalVocab vocab;
  ModelState params;
};

Vector Project(const Vector& v, RelationId r, const LocalModel& model);
Vector Intersect(std::span<const Vector> inputs, const ModelState& params);

// Embedding of a union-free subtree.
Vector EncodeConjunctive(const QueryNode& node, const LocalModel& model);
// One embedding per disjunct of ToDnf(node).
std::vector<Vector> EncodeQuery(const QueryNode& node, const LocalModel& model);

double Score(const Vector& q, const Vector& entity);
// Scores of every local row, max over the disjunct embeddings.
std::vector<double> ScoreAll(std::span<const Vector> disjuncts,
                             const ModelState& params);

// A training query with local row ids for the positive and negatives.
struct TrainExample {
  QueryNode query;  // DNF form
  int positive = 0;
  std::vector<int> negatives;
};

struct LossAndGradients {
  double loss = 0.0;
  ModelState grads;
};

// Mean over examples of (1/k) * sum_neg max(0, margin - s(pos) + s(neg)),
// where s is the max-over-disjuncts score. Gradients are exact (subgradient 0
// at hinge, relu and norm kinks). Rows not touched by the batch get zero.
LossAndGradients ComputeLossAndGrads(std::span<const TrainExample> batch,
                                     const LocalModel& model, double margin);

// Local differential privacy on an outgoing update.
struct DpConfig {
  double clip = 0.1;         // L-infinity threshold C; +inf disables clipping
  double noise_scale = 0.2;  // Laplace scale lambda; 0 disables noise

  // Upper bound 2C/lambda on epsilon; +inf when noise is disabled.
  double EpsilonBound() const {
    return noise_scale > 0 ? 2.0 * clip / noise_scale
                           : std::numeric_limits<double>::infinity();
  }
};

void ValidateDp(const DpConfig& dp);

// Clamps each coordinate to [-C, C], then adds Laplace(0, lambda) noise.
// Returns the epsilon bound.
double ApplyLdp(std::span<double> update, const DpConfig& dp, Rng& rng);
double ApplyLdp(ModelState& update, const DpConfig& dp, Rng& rng);

struct AdamWConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  ModelState m;
  ModelState v;
  int64_t step = 0;

  bool operator==(const AdamWState&) const = default;
};

AdamWState InitAdamW(const ModelState& params);

// Decoupled weight decay followed by the bias-corrected Adam update.
void AdamWStep(ModelState& params, const ModelState& grads, AdamWState& opt,
               const AdamWConfig& cfg);

}  // namespace fedngdb

#endif  // FEDNGDB_ENCODER_H_
