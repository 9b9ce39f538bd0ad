#pragma once

#include <functional>

#include "irk/common.hpp"

namespace irk {

// One side of a retrieval problem: L2-normalized feature rows plus labels.
struct FeatureSet {
  std::vector<std::vector<double>> feats;
  std::vector<int> ids;
  std::vector<int> cameras;
  std::vector<std::string> modalities;  // optional; required for cross-modality modes

  size_t size() const { return feats.size(); }
};

enum class FilterPolicy { None, Standard };

inline const char* filter_name(FilterPolicy p) {
  return p == FilterPolicy::Standard ? "standard" : "none";
}

struct RankingResult {
  int query_index = 0;
  std::vector<int> order;       // gallery indices by descending similarity
  std::vector<char> relevance;  // aligned with order
};

struct EvalReport {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = Top-k
  std::string task;
  std::string mode;
  int num_queries = 0;
  int num_gallery = 0;
  int skipped_queries = 0;  // zero-relevant queries, excluded from mAP
  std::string filter_policy;
  std::vector<double> per_query_ap;
  std::vector<int> per_query_index;

  double top_k(int k) const {
    if (cmc.empty()) return 0.0;
    return cmc[size_t(std::min<int>(k, int(cmc.size())) - 1)];
  }

  std::string to_json() const;  // fixed key order
  static EvalReport from_json(const std::string& text);
  std::string per_query_csv() const;
};

// AP = (1/R) * sum over relevant ranks k of precision@k.
double average_precision(const std::vector<char>& relevance);

// Cosine-ranked retrieval with the conventional protocol: under the
// "standard" policy, gallery entries sharing BOTH identity and camera with
// the query are removed before ranking. Relevance is identity match.
// Zero-relevant queries are counted and excluded. Ties break by gallery index.
EvalReport evaluate(const FeatureSet& queries, const FeatureSet& gallery, FilterPolicy policy,
                    int max_rank = 50);

enum class CrossModalityMode { VisToIr, IrToVis };

// Restricts queries to the source modality and gallery to the target
// modality, then runs evaluate().
EvalReport evaluate_cross_modality(const FeatureSet& queries, const FeatureSet& gallery,
                                   CrossModalityMode mode, FilterPolicy policy, int max_rank = 50);

// Two-stage text-to-image ranking: cosine ordering, then the top K entries
// re-sorted by the match scorer's positive-class score. Entries beyond K
// keep their stage-1 order after the reranked block.
RankingResult t2i_rerank(const std::vector<double>& text_feat,
                         const std::vector<std::vector<double>>& gallery_feats,
                         const std::function<double(int)>& match_scorer, int k);

namespace evaldetail {
double cosine(const std::vector<double>& a, const std::vector<double>& b);
}

}  // namespace irk
