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

#include "fedngdb/encoder.h"

#include <algorithm>
#include <cmath>

namespace fedngdb {

namespace {

template <typename A, typename B>
bool SameValues(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

bool ModelState::operator==(const ModelState& o) const {
  return SameValues(entities, o.entities) && SameValues(relations, o.relations) &&
         SameValues(w1, o.w1) && SameValues(b1, o.b1) && SameValues(w2, o.w2) &&
         SameValues(b2, o.b2);
}

ModelState ZerosLike(const ModelState& s) {
  ModelState z;
  z.entities = Matrix::Zero(s.entities.rows(), s.entities.cols());
  z.relations = Matrix::Zero(s.relations.rows(), s.relations.cols());
  z.w1 = Matrix::Zero(s.w1.rows(), s.w1.cols());
  z.b1 = Vector::Zero(s.b1.size());
  z.w2 = Matrix::Zero(s.w2.rows(), s.w2.cols());
  z.b2 = Vector::Zero(s.b2.size());
  return z;
}

bool SameShape(const ModelState& a, const ModelState& b) {
  return a.entities.rows() == b.entities.rows() &&
         a.entities.cols() == b.entities.cols() &&
         a.relations.rows() == b.relations.rows() &&
         a.relations.cols() == b.relations.cols() &&
         a.w1.rows() == b.w1.rows() && a.w1.cols() == b.w1.cols() &&
         a.b1.size() == b.b1.size() && a.w2.rows() == b.w2.rows() &&
         a.w2.cols() == b.w2.cols() && a.b2.size() == b.b2.size();
}

bool AllFinite(const ModelState& s) {
  bool ok = true;
  ForEachBlock(s, [&](std::span<const double> block) {
    for (double x : block) ok = ok && std::isfinite(x);
  });
  return ok;
}

ModelState InitState(size_t n_local, size_t r_local, int dim, uint64_t seed) {
  if (dim < 1) Fail(ErrorKind::kConfig, "embedding dimension must be >= 1");
  const auto d = static_cast<Eigen::Index>(dim);
  ModelState s;
  s.entities.resize(static_cast<Eigen::Index>(n_local), d);
  s.relations.resize(static_cast<Eigen::Index>(r_local), d);
  s.w1.resize(d, d);
  s.b1.resize(d);
  s.w2.resize(d, d);
  s.b2.resize(d);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng rng(seed);
  ForEachBlock(s, [&](std::span<double> block) {
    for (double& x : block) x = rng.Uniform(-bound, bound);
  });
  return s;
}

// ---------------------------------------------------------------------------
// LocalVocab

LocalVocab::LocalVocab(std::vector<EntityId> entities,
                       std::vector<RelationId> relations)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  if (!std::is_sorted(entities_.begin(), entities_.end()) ||
      std::adjacent_find(entities_.begin(), entities_.end()) != entities_.end() ||
      !std::is_sorted(relations_.begin(), relations_.end()) ||
      std::adjacent_find(relations_.begin(), relations_.end()) !=
          relations_.end()) {
    Fail(ErrorKind::kConfig, "local vocabularies must be sorted and unique");
  }
}

namespace {

std::optional<int> FindSorted(const std::vector<int32_t>& v, int32_t id) {
  auto it = std::lower_bound(v.begin(), v.end(), id);
  if (it == v.end() || *it != id) return std::nullopt;
  return static_cast<int>(it - v.begin());
}

}  // namespace

std::optional<int> LocalVocab::FindEntity(EntityId e) const {
  return FindSorted(entities_, e);
}

std::optional<int> LocalVocab::FindRelation(RelationId r) const {
  return FindSorted(relations_, r);
}

int LocalVocab::EntityRow(EntityId e) const {
  auto row = FindEntity(e);
  if (!row) Fail(ErrorKind::kVocabulary, "entity " + std::to_string(e) + " is not held locally");
  return *row;
}

int LocalVocab::RelationRow(RelationId r) const {
  auto row = FindRelation(r);
  if (!row) Fail(ErrorKind::kVocabulary, "relation " + std::to_string(r) + " is not held locally");
  return *row;
}

// ---------------------------------------------------------------------------
// Operators

Vector Project(const Vector& v, RelationId r, const LocalModel& model) {
  return v + model.params.relations.row(model.vocab.RelationRow(r)).transpose();
}

namespace {

// Summation in lexicographic order makes the mean, and so intersect(),
// exactly invariant under permutation of the inputs.
Vector Mean(std::span<const Vector> inputs) {
  std::vector<const Vector*> order;
  for (const Vector& v : inputs) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const Vector* a, const Vector* b) {
    return std::lexicographical_compare(a->data(), a->data() + a->size(),
                                        b->data(), b->data() + b->size());
  });
  Vector m = *order[0];
  for (size_t i = 1; i < order.size(); ++i) m += *order[i];
  return m / static_cast<double>(order.size());
}

Vector Relu(const Vector& h) { return h.cwiseMax(0.0); }

}  // namespace

Vector Intersect(std::span<const Vector> inputs, const ModelState& p) {
  if (inputs.size() < 2) {
    Fail(ErrorKind::kNumeric, "intersect needs at least two inputs");
  }
  const Vector m = Mean(inputs);
  return p.w2 * Relu(p.w1 * m + p.b1) + p.b2 + m;
}

Vector EncodeConjunctive(const QueryNode& n, const LocalModel& model) {
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      return model.params.entities.row(model.vocab.EntityRow(n.anchor)).transpose();
    case QueryNode::Op::kProjection:
      return Project(EncodeConjunctive(n.children[0], model), n.relation, model);
    case QueryNode::Op::kIntersection: {
      std::vector<Vector> ins;
      for (const auto& c : n.children) ins.push_back(EncodeConjunctive(c, model));
      return Intersect(ins, model.params);
    }
    case QueryNode::Op::kUnion:
      Fail(ErrorKind::kNumeric, "union below the root; normalize to DNF first");
  }
  return {};
}

std::vector<Vector> EncodeQuery(const QueryNode& node, const LocalModel& model) {
  const QueryNode dnf = ToDnf(node);
  std::vector<Vector> out;
  for (const QueryNode* d : Disjuncts(dnf)) {
    out.push_back(EncodeConjunctive(*d, model));
  }
  return out;
}

double Score(const Vector& q, const Vector& entity) {
  return -(q - entity).norm();
}

std::vector<double> ScoreAll(std::span<const Vector> disjuncts,
                             const ModelState& params) {
  const auto n = static_cast<size_t>(params.entities.rows());
  std::vector<double> out(n, -std::numeric_limits<double>::infinity());
  for (const Vector& q : disjuncts) {
    for (size_t e = 0; e < n; ++e) {
      const double s =
          -(params.entities.row(static_cast<Eigen::Index>(e)).transpose() - q).norm();
      out[e] = std::max(out[e], s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients

namespace {

// Reverse pass through a union-free subtree given d(loss)/d(output).
void Backward(const QueryNode& n, const Vector& grad_out, const LocalModel& model,
              ModelState& g) {
  const ModelState& p = model.params;
  switch (n.op) {
    case QueryNode::Op::kAnchor:
      g.entities.row(model.vocab.EntityRow(n.anchor)) += grad_out.transpose();
      return;
    case QueryNode::Op::kProjection:
      g.relations.row(model.vocab.RelationRow(n.relation)) += grad_out.transpose();
      Backward(n.children[0], grad_out, model, g);
      return;
    case QueryNode::Op::kIntersection: {
      std::vector<Vector> ins;
      for (const auto& c : n.children) ins.push_back(EncodeConjunctive(c, model));
      const Vector m = Mean(ins);
      const Vector h = p.w1 * m + p.b1;
      const Vector a = Relu(h);
      g.w2 += grad_out * a.transpose();
      g.b2 += grad_out;
      const Vector grad_h =
          (p.w2.transpose() * grad_out).cwiseProduct((h.array() > 0.0).cast<double>().matrix());
      g.w1 += grad_h * m.transpose();
      g.b1 += grad_h;
      const Vector grad_m = p.w1.transpose() * grad_h + grad_out;
      const Vector grad_in = grad_m / static_cast<double>(ins.size());
      for (const auto& c : n.children) Backward(c, grad_in, model, g);
      return;
    }
    case QueryNode::Op::kUnion:
      Fail(ErrorKind::kNumeric, "union below the root; normalize to DNF first");
  }
}

struct BestDisjunct {
  double score;
  size_t index;
};

BestDisjunct MaxScore(std::span<const Vector> qs, const Vector& e) {
  BestDisjunct best{-std::numeric_limits<double>::infinity(), 0};
  for (size_t j = 0; j < qs.size(); ++j) {
    const double s = Score(qs[j], e);
    if (s > best.score) best = {s, j};
  }
  return best;
}

// d score / d q for score = -||q - e||; the entity gradient is its negation.
Vector ScoreGradQ(const Vector& q, const Vector& e) {
  const Vector diff = q - e;
  const double norm = diff.norm();
  if (norm == 0.0) return Vector::Zero(q.size());
  return -diff / norm;
}

}  // namespace

LossAndGradients ComputeLossAndGrads(std::span<const TrainExample> batch,
                                     const LocalModel& model, double margin) {
  if (batch.empty()) Fail(ErrorKind::kNumeric, "empty training batch");
  const ModelState& p = model.params;
  LossAndGradients out;
  out.grads = ZerosLike(p);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const TrainExample& ex : batch) {
    if (ex.negatives.empty()) Fail(ErrorKind::kNumeric, "example without negatives");
    const auto disjuncts = Disjuncts(ex.query);
    std::vector<Vector> qs;
    for (const QueryNode* d : disjuncts) qs.push_back(EncodeConjunctive(*d, model));

    const Vector pos = p.entities.row(ex.positive).transpose();
    const BestDisjunct sp = MaxScore(qs, pos);
    const double inv_k = 1.0 / static_cast<double>(ex.negatives.size());
    const double w = inv_batch * inv_k;

    std::vector<Vector> grad_q(qs.size(), Vector::Zero(p.dim()));
    int active = 0;
    for (int neg_row : ex.negatives) {
      const Vector neg = p.entities.row(neg_row).transpose();
      const BestDisjunct sn = MaxScore(qs, neg);
      const double hinge = margin - sp.score + sn.score;
      if (hinge <= 0.0) continue;
      out.loss += w * hinge;
      ++active;
      // + d s(neg)
      const Vector gq = ScoreGradQ(qs[sn.index], neg);
      grad_q[sn.index] += w * gq;
      out.grads.entities.row(neg_row) -= w * gq.transpose();
    }
    if (active > 0) {
      // - d s(pos), once per active negative
      const Vector gq = ScoreGradQ(qs[sp.index], pos);
      grad_q[sp.index] -= (w * active) * gq;
      out.grads.entities.row(ex.positive) += (w * active) * gq.transpose();
    }
    for (size_t j = 0; j < qs.size(); ++j) {
      if (grad_q[j].squaredNorm() > 0.0) {
        Backward(*disjuncts[j], grad_q[j], model, out.grads);
      }
    }
  }
  if (!std::isfinite(out.loss) || !AllFinite(out.grads)) {
    Fail(ErrorKind::kNumeric, "non-finite loss or gradient");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local differential privacy

void ValidateDp(const DpConfig& dp) {
  if (!(dp.clip > 0.0)) Fail(ErrorKind::kConfig, "dp clip threshold must be > 0");
  if (!(dp.noise_scale >= 0.0) || !std::isfinite(dp.noise_scale)) {
    Fail(ErrorKind::kConfig, "dp noise scale must be finite and >= 0");
  }
}

double ApplyLdp(std::span<double> update, const DpConfig& dp, Rng& rng) {
  ValidateDp(dp);
  for (double& x : update) {
    x = std::clamp(x, -dp.clip, dp.clip);
    if (dp.noise_scale > 0.0) x += rng.Laplace(dp.noise_scale);
  }
  return dp.EpsilonBound();
}

double ApplyLdp(ModelState& update, const DpConfig& dp, Rng& rng) {
  ForEachBlock(update, [&](std::span<double> block) { ApplyLdp(block, dp, rng); });
  return dp.EpsilonBound();
}

// ---------------------------------------------------------------------------
// AdamW

AdamWState InitAdamW(const ModelState& params) {
  return {ZerosLike(params), ZerosLike(params), 0};
}

void AdamWStep(ModelState& params, const ModelState& grads, AdamWState& opt,
               const AdamWConfig& cfg) {
  if (!SameShape(params, grads) || !SameShape(params, opt.m) ||
      !SameShape(params, opt.v)) {
    Fail(ErrorKind::kNumeric, "AdamW shape mismatch");
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));

  std::vector<std::span<double>> p_blocks, m_blocks, v_blocks;
  std::vector<std::span<const double>> g_blocks;
  ForEachBlock(params, [&](std::span<double> b) { p_blocks.push_back(b); });
  ForEachBlock(opt.m, [&](std::span<double> b) { m_blocks.push_back(b); });
  ForEachBlock(opt.v, [&](std::span<double> b) { v_blocks.push_back(b); });
  ForEachBlock(grads, [&](std::span<const double> b) { g_blocks.push_back(b); });

  for (size_t b = 0; b < p_blocks.size(); ++b) {
    auto p = p_blocks[b];
    auto m = m_blocks[b];
    auto v = v_blocks[b];
    auto g = g_blocks[b];
    for (size_t i = 0; i < p.size(); ++i) {
      p[i] -= cfg.learning_rate * cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace fedngdb
