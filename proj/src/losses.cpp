#include "irk/losses.hpp"

namespace irk {

double relatedness(int y_a, int y_r, const std::vector<double>& ft_a,
                   const std::vector<double>& ft_r) {
  if (y_a != y_r) return 0.0;
  if (ft_a.size() != ft_r.size()) throw ShapeError("relatedness: instruction vectors differ in size");
  double dot = 0, na = 0, nr = 0;
  for (size_t i = 0; i < ft_a.size(); ++i) {
    dot += ft_a[i] * ft_r[i];
    na += ft_a[i] * ft_a[i];
    nr += ft_r[i] * ft_r[i];
  }
  if (na < 1e-24 || nr < 1e-24) throw NumericError("relatedness: zero-norm instruction vector");
  double cosv = dot / (std::sqrt(na) * std::sqrt(nr));
  return std::max(-1.0, std::min(1.0, cosv));
}

TripletBatch mine_triplets(const std::vector<int>& labels,
                           const std::vector<std::vector<double>>& instruction_feats,
                           const std::vector<double>& features, int feat_dim, double margin,
                           MiningMode mode) {
  const int b = int(labels.size());
  if (int(instruction_feats.size()) != b)
    throw ContractError("mine_triplets: instruction feature count mismatch");
  if (mode == MiningMode::Hard && int64_t(features.size()) != int64_t(b) * feat_dim)
    throw ContractError("mine_triplets: features required for hard mining");

  auto sqdist = [&](int i, int j) {
    double acc = 0;
    for (int k = 0; k < feat_dim; ++k) {
      double d = features[size_t(i) * feat_dim + k] - features[size_t(j) * feat_dim + k];
      acc += d * d;
    }
    return acc;
  };
  auto beta = [&](int a, int r) {
    return relatedness(labels[size_t(a)], labels[size_t(r)], instruction_feats[size_t(a)],
                       instruction_feats[size_t(r)]);
  };

  TripletBatch out;
  out.margin = margin;
  for (int a = 0; a < b; ++a) {
    bool has_partner = false;
    for (int r = 0; r < b; ++r)
      if (r != a && labels[size_t(r)] == labels[size_t(a)]) has_partner = true;
    if (!has_partner) {
      out.skipped_anchors += 1;
      continue;
    }
    if (mode == MiningMode::All) {
      for (int r1 = 0; r1 < b; ++r1) {
        if (r1 == a || labels[size_t(r1)] != labels[size_t(a)]) continue;
        for (int r2 = 0; r2 < b; ++r2) {
          if (r2 == a || r2 == r1) continue;
          out.triples.push_back(Triple{a, r1, r2, beta(a, r1), beta(a, r2)});
        }
      }
    } else {
      int r1 = -1, r2 = -1;
      double worst = -1.0, best = 1e300;
      for (int r = 0; r < b; ++r) {
        if (r == a) continue;
        if (labels[size_t(r)] == labels[size_t(a)]) {
          double d = sqdist(a, r);
          if (d > worst) {
            worst = d;
            r1 = r;
          }
        } else {
          double d = sqdist(a, r);
          if (d < best) {
            best = d;
            r2 = r;
          }
        }
      }
      if (r1 >= 0 && r2 >= 0)
        out.triples.push_back(Triple{a, r1, r2, beta(a, r1), beta(a, r2)});
    }
  }
  return out;
}

}  // namespace irk
