#include "irk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace irk {

namespace evaldetail {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
  double dot = 0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot;  // inputs are L2-normalized
}

}  // namespace evaldetail

double average_precision(const std::vector<char>& relevance) {
  int relevant = 0;
  for (char r : relevance) relevant += r ? 1 : 0;
  if (relevant == 0) throw ContractError("average_precision: no relevant items");
  double ap = 0;
  int hits = 0;
  for (size_t k = 0; k < relevance.size(); ++k) {
    if (!relevance[k]) continue;
    hits += 1;
    ap += double(hits) / double(k + 1);
  }
  return ap / relevant;
}

EvalReport evaluate(const FeatureSet& queries, const FeatureSet& gallery, FilterPolicy policy,
                    int max_rank) {
  if (queries.size() == 0) throw ContractError("evaluate: no queries");
  if (gallery.size() == 0) throw ContractError("evaluate: empty gallery");

  EvalReport rep;
  rep.filter_policy = filter_name(policy);
  rep.num_queries = int(queries.size());
  rep.num_gallery = int(gallery.size());
  int curve_len = std::min<int>(max_rank, int(gallery.size()));
  std::vector<int> first_hit_hist(size_t(curve_len), 0);
  int scored = 0;
  double ap_sum = 0;

  for (size_t qi = 0; qi < queries.size(); ++qi) {
    std::vector<int> keep;
    for (size_t gi = 0; gi < gallery.size(); ++gi) {
      if (policy == FilterPolicy::Standard && gallery.ids[gi] == queries.ids[qi] &&
          gallery.cameras[gi] == queries.cameras[qi])
        continue;  // same identity AND same camera
      keep.push_back(int(gi));
    }
    if (keep.empty()) throw ContractError("evaluate: gallery empty after filtering");

    std::vector<std::pair<double, int>> scored_items;
    scored_items.reserve(keep.size());
    for (int gi : keep)
      scored_items.emplace_back(evaldetail::cosine(queries.feats[qi], gallery.feats[size_t(gi)]),
                                gi);
    std::stable_sort(scored_items.begin(), scored_items.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    std::vector<char> relevance(scored_items.size());
    int relevant = 0;
    for (size_t k = 0; k < scored_items.size(); ++k) {
      relevance[k] = char(gallery.ids[size_t(scored_items[k].second)] == queries.ids[qi]);
      relevant += relevance[k] ? 1 : 0;
    }
    if (relevant == 0) {
      rep.skipped_queries += 1;
      continue;
    }
    double ap = average_precision(relevance);
    ap_sum += ap;
    scored += 1;
    rep.per_query_ap.push_back(ap);
    rep.per_query_index.push_back(int(qi));
    for (size_t k = 0; k < relevance.size(); ++k)
      if (relevance[k]) {
        if (int(k) < curve_len) first_hit_hist[k] += 1;
        break;
      }
  }
  if (scored == 0) throw ContractError("evaluate: every query had zero relevant gallery items");
  rep.mAP = ap_sum / scored;
  rep.cmc.resize(size_t(curve_len));
  int cum = 0;
  for (int k = 0; k < curve_len; ++k) {
    cum += first_hit_hist[size_t(k)];
    rep.cmc[size_t(k)] = double(cum) / scored;
  }
  return rep;
}

EvalReport evaluate_cross_modality(const FeatureSet& queries, const FeatureSet& gallery,
                                   CrossModalityMode mode, FilterPolicy policy, int max_rank) {
  if (queries.modalities.size() != queries.size() || gallery.modalities.size() != gallery.size())
    throw ContractError("evaluate_cross_modality: modality labels required");
  const std::string src = mode == CrossModalityMode::VisToIr ? "visible" : "infrared";
  const std::string dst = mode == CrossModalityMode::VisToIr ? "infrared" : "visible";
  auto filter = [](const FeatureSet& s, const std::string& want) {
    FeatureSet out;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s.modalities[i] != want) continue;
      out.feats.push_back(s.feats[i]);
      out.ids.push_back(s.ids[i]);
      out.cameras.push_back(s.cameras[i]);
      out.modalities.push_back(s.modalities[i]);
    }
    return out;
  };
  FeatureSet q = filter(queries, src);
  FeatureSet g = filter(gallery, dst);
  if (q.size() == 0)
    throw ContractError("evaluate_cross_modality: no queries in source modality " + src);
  auto rep = evaluate(q, g, policy, max_rank);
  rep.mode = mode == CrossModalityMode::VisToIr ? "vis2ir" : "ir2vis";
  return rep;
}

RankingResult t2i_rerank(const std::vector<double>& text_feat,
                         const std::vector<std::vector<double>>& gallery_feats,
                         const std::function<double(int)>& match_scorer, int k) {
  if (k < 1) throw ContractError("t2i_rerank: K must be positive");
  if (k > int(gallery_feats.size())) throw ContractError("t2i_rerank: K exceeds gallery size");

  RankingResult out;
  std::vector<std::pair<double, int>> stage1;
  stage1.reserve(gallery_feats.size());
  for (size_t gi = 0; gi < gallery_feats.size(); ++gi)
    stage1.emplace_back(evaldetail::cosine(text_feat, gallery_feats[gi]), int(gi));
  std::stable_sort(stage1.begin(), stage1.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  // stage 2: match-head scores over the top-K block, stable in stage-1 order
  std::vector<std::pair<double, int>> block;  // (score, stage-1 position)
  for (int i = 0; i < k; ++i) block.emplace_back(match_scorer(stage1[size_t(i)].second), i);
  std::stable_sort(block.begin(), block.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  out.order.reserve(gallery_feats.size());
  for (const auto& [score, pos] : block) out.order.push_back(stage1[size_t(pos)].second);
  for (size_t i = size_t(k); i < stage1.size(); ++i) out.order.push_back(stage1[i].second);
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["mode"] = mode;
  j["filter_policy"] = filter_policy;
  j["num_queries"] = num_queries;
  j["num_gallery"] = num_gallery;
  j["skipped_queries"] = skipped_queries;
  j["mAP"] = mAP;
  j["cmc"] = cmc;
  j["per_query_ap"] = per_query_ap;
  j["per_query_index"] = per_query_index;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.filter_policy = j.at("filter_policy").get<std::string>();
  r.num_queries = j.at("num_queries").get<int>();
  r.num_gallery = j.at("num_gallery").get<int>();
  r.skipped_queries = j.at("skipped_queries").get<int>();
  r.mAP = j.at("mAP").get<double>();
  r.cmc = j.at("cmc").get<std::vector<double>>();
  r.per_query_ap = j.at("per_query_ap").get<std::vector<double>>();
  r.per_query_index = j.at("per_query_index").get<std::vector<int>>();
  return r;
}

std::string EvalReport::per_query_csv() const {
  std::ostringstream os;
  os << "query_index,ap\n";
  for (size_t i = 0; i < per_query_ap.size(); ++i)
    os << per_query_index[i] << "," << per_query_ap[i] << "\n";
  return os.str();
}

}  // namespace irk
