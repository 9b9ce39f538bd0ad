#pragma once

#include "irk/params.hpp"

namespace irk {

// One mined triple: anchor, two reference samples, and their relatednesses.
struct Triple {
  int anchor = 0;
  int r1 = 0;
  int r2 = 0;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

struct TripletBatch {
  std::vector<Triple> triples;
  double margin = 0.3;
  int skipped_anchors = 0;  // anchors with no same-identity partner

  size_t count() const { return triples.size(); }
};

enum class MiningMode { All, Hard };

// beta = 1(y_a == y_r) * cos(ft_a, ft_r). Instruction features are the
// mean-pooled F_T vectors.
double relatedness(int y_a, int y_r, const std::vector<double>& ft_a,
                   const std::vector<double>& ft_r);

// Enumerates (anchor, r1, r2) triples over a P*K batch. r1 is a distinct
// same-identity sample; r2 is any other sample, same identity allowed.
// Hard mode keeps, per anchor, the farthest same-identity r1 and the nearest
// different-identity r2, measured by squared Euclidean distance on
// `features` (row-major B x C).
TripletBatch mine_triplets(const std::vector<int>& labels,
                           const std::vector<std::vector<double>>& instruction_feats,
                           const std::vector<double>& features, int feat_dim, double margin,
                           MiningMode mode);

// ---------------------------------------------------------------------------
// Differentiable losses
// ---------------------------------------------------------------------------

// Adaptive triplet loss: mean over triples of
//   { Sign(b1-b2) * [ d(a,r1) + (b1-b2)*m - d(a,r2) ] }_+
// with d the squared Euclidean distance on raw feature rows and Sign(0) = 0,
// so equal-relatedness triples contribute nothing. Fused node with a
// hand-written backward; finite differences vouch for it.
template <typename T>
Var<T> adaptive_triplet_loss(Var<T> features, const TripletBatch& batch) {
  if (features.shape().size() != 2) throw ShapeError("adaptive_triplet_loss: rank-2 features");
  const int b = features.shape()[0], c = features.shape()[1];
  for (const auto& tr : batch.triples)
    if (tr.anchor < 0 || tr.anchor >= b || tr.r1 < 0 || tr.r1 >= b || tr.r2 < 0 || tr.r2 >= b)
      throw ContractError("adaptive_triplet_loss: triple index out of range");
  auto& tape = *features.tape;
  if (batch.triples.empty()) {
    int unused = features.id;
    (void)unused;
    return tape.emplace(Shape{1}, {T(0)}, {});
  }
  const auto& fv = features.val();
  auto sqdist = [&](int i, int j) {
    double acc = 0;
    for (int k = 0; k < c; ++k) {
      double d = double(fv[size_t(i) * c + k]) - double(fv[size_t(j) * c + k]);
      acc += d * d;
    }
    return acc;
  };
  double loss = 0;
  const double m = batch.margin;
  for (const auto& tr : batch.triples) {
    double db = tr.beta1 - tr.beta2;
    double sign = db > 0 ? 1.0 : (db < 0 ? -1.0 : 0.0);
    if (sign == 0.0) continue;
    double bracket = sqdist(tr.anchor, tr.r1) + db * m - sqdist(tr.anchor, tr.r2);
    double hinge = sign * bracket;
    if (hinge > 0) loss += hinge;
  }
  loss /= double(batch.triples.size());
  int fi = features.id;
  auto triples = batch.triples;
  return tape.emplace(Shape{1}, {T(loss)}, [fi, triples, m, b, c](Tape<T>& tp, int self) {
    T go = tp.grad(self)[0];
    const auto& f = tp.val(fi);
    auto& gf = tp.grad(fi);
    const double inv_n = 1.0 / double(triples.size());
    for (const auto& tr : triples) {
      double db = tr.beta1 - tr.beta2;
      double sign = db > 0 ? 1.0 : (db < 0 ? -1.0 : 0.0);
      if (sign == 0.0) continue;
      double d1 = 0, d2 = 0;
      for (int k = 0; k < c; ++k) {
        double e1 = double(f[size_t(tr.anchor) * c + k]) - double(f[size_t(tr.r1) * c + k]);
        double e2 = double(f[size_t(tr.anchor) * c + k]) - double(f[size_t(tr.r2) * c + k]);
        d1 += e1 * e1;
        d2 += e2 * e2;
      }
      if (sign * (d1 + db * m - d2) <= 0) continue;
      const double s = double(go) * inv_n * sign;
      for (int k = 0; k < c; ++k) {
        double e1 = double(f[size_t(tr.anchor) * c + k]) - double(f[size_t(tr.r1) * c + k]);
        double e2 = double(f[size_t(tr.anchor) * c + k]) - double(f[size_t(tr.r2) * c + k]);
        // d/dF of s*(d1 - d2)
        gf[size_t(tr.anchor) * c + k] += T(s * 2.0 * (e1 - e2));
        gf[size_t(tr.r1) * c + k] += T(-s * 2.0 * e1);
        gf[size_t(tr.r2) * c + k] += T(s * 2.0 * e2);
      }
    }
  });
}

// Mean cross-entropy of a linear identity classifier ("idf" or "idfout").
// Features pass through a parameter-free standardization first (the usual
// classifier neck) so the linear map sees unit-scale inputs regardless of
// how far the metric losses have stretched the feature space.
template <typename T>
Var<T> identity_loss(Graph<T>& g, const std::string& head, Var<T> features,
                     const std::vector<int>& labels) {
  const int c = features.cols();
  auto ones = g.constant(Shape{c}, std::vector<T>(size_t(c), T(1)));
  auto zeros = g.constant(Shape{c}, std::vector<T>(size_t(c), T(0)));
  auto neck = layer_norm(features, ones, zeros);
  auto logits = add_bias(matmul(neck, g.param("head." + head + ".w")),
                         g.param("head." + head + ".b"));
  return softmax_cross_entropy(logits, labels);
}

// Symmetric InfoNCE over the in-batch similarity matrix. Inputs are raw
// feature rows; both sides are L2-normalized here so the gradient flows
// through the normalization. Same-identity off-diagonal pairs are removed
// from the denominator's negative set.
template <typename T>
Var<T> contrastive_loss(Var<T> image_feats, Var<T> text_feats, const std::vector<int>& labels,
                        double temperature) {
  if (image_feats.shape() != text_feats.shape())
    throw ShapeError("contrastive_loss: feature shapes differ");
  const int b = image_feats.rows();
  if (b < 2) throw ContractError("contrastive_loss: need at least 2 pairs");
  if (int(labels.size()) != b) throw ContractError("contrastive_loss: label count mismatch");
  if (!(temperature > 0)) throw ContractError("contrastive_loss: temperature must be positive");
  auto img = l2_normalize_rows(image_feats);
  auto txt = l2_normalize_rows(text_feats);
  auto sims = scale(matmul(img, transpose(txt)), 1.0 / temperature);
  std::vector<char> allowed(size_t(b) * b);
  std::vector<int> diag(size_t(b), 0);
  for (int i = 0; i < b; ++i) {
    diag[size_t(i)] = i;
    for (int j = 0; j < b; ++j)
      allowed[size_t(i) * b + j] = char(i == j || labels[size_t(i)] != labels[size_t(j)]);
  }
  auto i2t = masked_softmax_nll(sims, allowed, diag);
  // the mask is symmetric in (i, j), so it serves both directions
  auto t2i = masked_softmax_nll(transpose(sims), allowed, diag);
  return scale(add(i2t, t2i), 0.5);
}

// Mean binary cross-entropy over pair logits (2-way softmax form).
// labels[i] is the positive-class flag: true -> one-hot [0,1].
template <typename T>
Var<T> match_loss(Var<T> logits, const std::vector<bool>& positive) {
  if (logits.cols() != 2) throw ShapeError("match_loss: logits must be Px2");
  std::vector<int> labels(positive.size());
  for (size_t i = 0; i < positive.size(); ++i) labels[i] = positive[i] ? 1 : 0;
  return softmax_cross_entropy(logits, labels);
}

// Retrieval assembly: adaptive triplet plus identity cross-entropy on both
// feature sources, all four terms unweighted over one shared triplet set.
template <typename T>
Var<T> total_loss_retrieval(Graph<T>& g, Var<T> f, Var<T> f_out, const std::vector<int>& labels,
                            const TripletBatch& batch) {
  auto a1 = adaptive_triplet_loss(f, batch);
  auto i1 = identity_loss(g, "idf", f, labels);
  auto a2 = adaptive_triplet_loss(f_out, batch);
  auto i2 = identity_loss(g, "idfout", f_out, labels);
  return add(add(a1, i1), add(a2, i2));
}

// Text-to-image assembly: L_cl(F) + L_match(F_out).
template <typename T>
Var<T> total_loss_t2i(Var<T> image_feats, Var<T> text_feats, Var<T> match_logits,
                      const std::vector<int>& labels, const std::vector<bool>& positive,
                      double temperature) {
  auto cl = contrastive_loss(image_feats, text_feats, labels, temperature);
  auto mt = match_loss(match_logits, positive);
  return add(cl, mt);
}

}  // namespace irk
