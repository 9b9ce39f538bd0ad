#include "irk/embedder.hpp"

#include <atomic>
#include <thread>

namespace irk {

namespace {

std::string instruction_cache_key(const Instruction& ins) {
  if (ins.is_image()) return "tpl:" + std::to_string(ins.template_clothes);
  std::string key = "txt:";
  for (const auto& s : ins.sentences) {
    key += s;
    key += '\n';
  }
  return key;
}

std::vector<double> normalize_unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) throw NumericError("zero-norm feature vector");
  for (double& x : v) x /= n;
  return v;
}

const ClothesSpec& find_clothes(const Manifest& m, int clothes_id) {
  for (const auto& spec : m.identities)
    for (const auto& c : spec.wardrobe)
      if (c.clothes_id == clothes_id) return c;
  throw ContractError("clothes id not present in manifest: " + std::to_string(clothes_id));
}

}  // namespace

Embedder::Embedder(ModelConfig cfg, ParamStore<float> params, PhraseBank bank)
    : cfg_(std::move(cfg)), params_(std::move(params)), bank_(std::move(bank)) {
  cfg_.validate();
}

const Embedder::EncodedInstruction& Embedder::encode_instruction(const Instruction& ins,
                                                                 const Manifest& m) {
  auto key = instruction_cache_key(ins);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  Graph<float> g(params_);
  Var<float> ft;
  if (ins.is_image()) {
    SynthConfig rc = m.config;
    rc.instr_image_height = cfg_.instr_image_height;
    rc.instr_image_width = cfg_.instr_image_width;
    rc.channels = cfg_.channels;
    ft = encode_image_instruction(g, cfg_, render_template(find_clothes(m, ins.template_clothes), rc));
  } else {
    ft = encode_text_instruction(g, cfg_, ins.sentences);
  }
  EncodedInstruction out;
  const int rows = ft.rows(), c = cfg_.dim;
  out.tokens = Tensor<float>(Shape{rows, c}, ft.val());
  out.pooled.assign(size_t(c), 0.0);
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < c; ++k) out.pooled[size_t(k)] += double(ft.val()[size_t(r) * c + k]) / rows;
  out.pooled_unit = normalize_unit(out.pooled);
  return cache_.emplace(std::move(key), std::move(out)).first->second;
}

Embedder::EncodedInstruction Embedder::encode_instruction_image(const Tensor<float>& image) {
  Graph<float> g(params_);
  auto ft = encode_image_instruction(g, cfg_, image);
  EncodedInstruction out;
  const int rows = ft.rows(), c = cfg_.dim;
  out.tokens = Tensor<float>(Shape{rows, c}, ft.val());
  out.pooled.assign(size_t(c), 0.0);
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < c; ++k) out.pooled[size_t(k)] += double(ft.val()[size_t(r) * c + k]) / rows;
  out.pooled_unit = normalize_unit(out.pooled);
  return out;
}

Embedder::Embedding Embedder::embed_image(const Tensor<float>& image,
                                          const EncodedInstruction& ins) {
  Graph<float> g(params_);
  auto seq = patchify(g, cfg_, image);
  auto vft = g.constant(ins.tokens);
  auto f = editing_transformer_forward(g, cfg_, seq, &vft);
  Embedding out;
  out.f_raw = f.val();
  std::vector<double> fd(f.val().begin(), f.val().end());
  out.f = normalize_unit(std::move(fd));
  return out;
}

Embedder::Embedding Embedder::embed_image_neutral(const Tensor<float>& image) {
  Graph<float> g(params_);
  auto seq = patchify(g, cfg_, image);
  auto vft = neutral_instruction<float>(g, cfg_);
  auto f = editing_transformer_forward(g, cfg_, seq, &vft);
  Embedding out;
  out.f_raw = f.val();
  std::vector<double> fd(f.val().begin(), f.val().end());
  out.f = normalize_unit(std::move(fd));
  return out;
}

double Embedder::match_positive_score(const std::vector<float>& f_raw,
                                      const EncodedInstruction& ins) {
  Graph<float> g(params_);
  auto f = g.constant(Shape{1, cfg_.dim}, f_raw);
  auto vft = g.constant(ins.tokens);
  auto f_out = fusion_forward(g, cfg_, f, vft);
  auto logits = match_head(g, f_out);
  double l0 = logits.val()[0], l1 = logits.val()[1];
  double mx = std::max(l0, l1);
  double p1 = std::exp(l1 - mx) / (std::exp(l0 - mx) + std::exp(l1 - mx));
  return p1;
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

namespace {

struct EmbedPlan {
  std::vector<const SampleRecord*> records;
  std::vector<Instruction> instructions;
};

// deterministic instruction choice for queries: for the clothes-template
// split the target clothes comes from the first same-identity gallery item
// wearing something different; for the language split, the first
// same-identity gallery item's sentences
Instruction query_instruction(TaskKind task, const SampleRecord& rec,
                              const std::vector<const SampleRecord*>& gallery,
                              const PhraseBank& bank, int phrase_index) {
  switch (task) {
    case TaskKind::Trad:
    case TaskKind::CC:
    case TaskKind::VI:
      return gallery_instruction(task, rec, bank, phrase_index);
    case TaskKind::CTCC: {
      const SampleRecord* pick = nullptr;
      for (const auto* g : gallery) {
        if (g->identity != rec.identity) continue;
        if (!pick) pick = g;
        if (g->clothes != rec.clothes) {
          pick = g;
          break;
        }
      }
      if (!pick) throw ContractError("no same-identity gallery item for clothes-template query");
      Instruction ins;
      ins.kind = task;
      ins.template_clothes = pick->clothes;
      return ins;
    }
    case TaskKind::LI: {
      for (const auto* g : gallery)
        if (g->identity == rec.identity) {
          Instruction ins;
          ins.kind = task;
          ins.sentences = g->description;
          return ins;
        }
      throw ContractError("no same-identity gallery item for language-instructed query");
    }
    case TaskKind::T2I: {
      Instruction ins;
      ins.kind = task;
      ins.sentences = rec.description;
      return ins;
    }
  }
  throw ContractError("unreachable task kind");
}

FeatureSet embed_set(Embedder& emb, const Manifest& m, const std::string& dir,
                     const EmbedPlan& plan, bool neutral, bool deterministic) {
  FeatureSet out;
  const size_t n = plan.records.size();
  out.feats.resize(n);
  out.ids.resize(n);
  out.cameras.resize(n);
  out.modalities.resize(n);

  // instruction encodings are cached behind a single-threaded pass
  std::vector<const Embedder::EncodedInstruction*> encs(n, nullptr);
  if (!neutral)
    for (size_t i = 0; i < n; ++i) encs[i] = &emb.encode_instruction(plan.instructions[i], m);

  auto work = [&](size_t i) {
    auto img = load_record_image(m, *plan.records[i], dir);
    auto e = neutral ? emb.embed_image_neutral(img) : emb.embed_image(img, *encs[i]);
    out.feats[i] = std::move(e.f);
    out.ids[i] = plan.records[i]->identity;
    out.cameras[i] = plan.records[i]->camera;
    out.modalities[i] = plan.records[i]->modality;
  };
  int workers = worker_count(deterministic);
  if (workers <= 1 || n < 8) {
    for (size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) work(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

std::vector<const SampleRecord*> tagged_split(const Manifest& m, const std::string& split,
                                              TaskKind task) {
  std::vector<const SampleRecord*> out;
  for (const auto* r : m.split(split))
    for (const auto& t : r->tasks)
      if (t == task_name(task)) {
        out.push_back(r);
        break;
      }
  return out;
}

EvalReport eval_text_or_image_task(Embedder& emb, const Manifest& m, const std::string& dir,
                                   const EvalRequest& req, int phrase_index, bool deterministic) {
  auto queries = tagged_split(m, "query", req.task);
  auto gallery = tagged_split(m, "gallery", req.task);
  if (queries.empty() || gallery.empty())
    throw ContractError(std::string("manifest lacks query/gallery records tagged for task ") +
                        task_name(req.task));

  EmbedPlan qplan, gplan;
  for (const auto* r : queries) {
    qplan.records.push_back(r);
    qplan.instructions.push_back(query_instruction(req.task, *r, gallery, emb.bank(), phrase_index));
  }
  for (const auto* r : gallery) {
    gplan.records.push_back(r);
    gplan.instructions.push_back(gallery_instruction(req.task, *r, emb.bank(), phrase_index));
  }
  auto qset = embed_set(emb, m, dir, qplan, false, deterministic);
  auto gset = embed_set(emb, m, dir, gplan, false, deterministic);

  EvalReport rep;
  if (req.task == TaskKind::VI) {
    auto mode = req.mode.value_or(CrossModalityMode::VisToIr);
    rep = evaluate_cross_modality(qset, gset, mode, req.filter, req.max_rank);
  } else {
    rep = evaluate(qset, gset, req.filter, req.max_rank);
  }
  rep.task = task_name(req.task);
  return rep;
}

EvalReport eval_t2i(Embedder& emb, const Manifest& m, const std::string& dir,
                    const EvalRequest& req, bool deterministic) {
  (void)deterministic;  // gallery embedding is serial: raw features feed the rerank scorer
  auto queries = tagged_split(m, "query", req.task);
  auto gallery = tagged_split(m, "gallery", req.task);
  if (queries.empty() || gallery.empty())
    throw ContractError("manifest lacks query/gallery records tagged for t2i");

  // gallery image features, extracted separately from any instruction
  FeatureSet gset;
  gset.feats.resize(gallery.size());
  std::vector<std::vector<float>> g_raw(gallery.size());
  for (size_t i = 0; i < gallery.size(); ++i) {
    auto img = load_record_image(m, *gallery[i], dir);
    auto e = emb.embed_image_neutral(img);
    gset.feats[i] = std::move(e.f);
    g_raw[i] = std::move(e.f_raw);
  }

  EvalReport rep;
  rep.task = task_name(req.task);
  rep.filter_policy = filter_name(FilterPolicy::None);
  rep.num_queries = int(queries.size());
  rep.num_gallery = int(gallery.size());
  int curve_len = std::min<int>(req.max_rank, int(gallery.size()));
  std::vector<int> first_hit(size_t(curve_len), 0);
  double ap_sum = 0;
  int scored = 0;
  int k = std::min<int>(req.rerank_k, int(gallery.size()));

  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& enc = emb.encode_instruction(query_instruction(TaskKind::T2I, *queries[qi], gallery,
                                                               emb.bank(), 0),
                                             m);
    auto ranking = t2i_rerank(enc.pooled_unit, gset.feats,
                              [&](int gi) { return emb.match_positive_score(g_raw[size_t(gi)], enc); },
                              k);
    std::vector<char> rel(ranking.order.size());
    int relevant = 0;
    for (size_t r = 0; r < ranking.order.size(); ++r) {
      rel[r] = char(gallery[size_t(ranking.order[r])]->identity == queries[qi]->identity);
      relevant += rel[r] ? 1 : 0;
    }
    if (relevant == 0) {
      rep.skipped_queries += 1;
      continue;
    }
    ap_sum += average_precision(rel);
    scored += 1;
    rep.per_query_ap.push_back(average_precision(rel));
    rep.per_query_index.push_back(int(qi));
    for (size_t r = 0; r < rel.size(); ++r)
      if (rel[r]) {
        if (int(r) < curve_len) first_hit[r] += 1;
        break;
      }
  }
  if (scored == 0) throw ContractError("t2i evaluation: no scorable queries");
  rep.mAP = ap_sum / scored;
  rep.cmc.resize(size_t(curve_len));
  int cum = 0;
  for (int r = 0; r < curve_len; ++r) {
    cum += first_hit[size_t(r)];
    rep.cmc[size_t(r)] = double(cum) / scored;
  }
  return rep;
}

}  // namespace

EvalReport run_eval(Embedder& emb, const Manifest& m, const std::string& data_dir,
                    const EvalRequest& req, bool deterministic) {
  if (req.task == TaskKind::T2I) return eval_t2i(emb, m, data_dir, req, deterministic);
  return eval_text_or_image_task(emb, m, data_dir, req, 0, deterministic);
}

SweepReport run_eval_sweep(Embedder& emb, const Manifest& m, const std::string& data_dir,
                           const EvalRequest& req) {
  if (req.task != TaskKind::Trad && req.task != TaskKind::CC && req.task != TaskKind::VI)
    throw ContractError("phrase sweep applies to the text-bank tasks only");
  SweepReport out;
  const int n = int(emb.bank().phrases(req.task).size());
  for (int pi = 0; pi < n; ++pi)
    out.per_phrase.push_back(eval_text_or_image_task(emb, m, data_dir, req, pi, false));
  out.mean = out.per_phrase[0];
  out.mean.mode = "sweep-mean";
  out.mean.per_query_ap.clear();
  out.mean.per_query_index.clear();
  out.mean.mAP = 0;
  std::fill(out.mean.cmc.begin(), out.mean.cmc.end(), 0.0);
  for (const auto& r : out.per_phrase) {
    out.mean.mAP += r.mAP / n;
    for (size_t k = 0; k < out.mean.cmc.size(); ++k) out.mean.cmc[k] += r.cmc[k] / n;
  }
  return out;
}

CtccOrderingReport ctcc_instruction_ordering(Embedder& emb, const Manifest& m,
                                             const std::string& dir) {
  auto queries = tagged_split(m, "query", TaskKind::CTCC);
  auto gallery = tagged_split(m, "gallery", TaskKind::CTCC);
  CtccOrderingReport rep;

  EmbedPlan gplan;
  for (const auto* r : gallery) {
    gplan.records.push_back(r);
    gplan.instructions.push_back(gallery_instruction(TaskKind::CTCC, *r, emb.bank()));
  }
  auto gset = embed_set(emb, m, dir, gplan, false, false);

  for (const auto* q : queries) {
    // target clothes: worn by a same-identity gallery item, different from the
    // query's own when possible
    Instruction ins = query_instruction(TaskKind::CTCC, *q, gallery, emb.bank(), 0);
    int target_clothes = ins.template_clothes;
    bool has_match = false, has_other = false;
    for (const auto* g : gallery)
      if (g->identity == q->identity) {
        if (g->clothes == target_clothes)
          has_match = true;
        else
          has_other = true;
      }
    if (!has_match || !has_other) continue;  // ordering undefined for this query

    const auto& enc = emb.encode_instruction(ins, m);
    auto img = load_record_image(m, *q, dir);
    auto e = emb.embed_image(img, enc);

    double best_match = -2.0, best_other = -2.0;
    for (size_t gi = 0; gi < gallery.size(); ++gi) {
      if (gallery[gi]->identity != q->identity) continue;
      double sim = 0;
      for (size_t d = 0; d < e.f.size(); ++d) sim += e.f[d] * gset.feats[gi][d];
      if (gallery[gi]->clothes == target_clothes)
        best_match = std::max(best_match, sim);
      else
        best_other = std::max(best_other, sim);
    }
    rep.queries += 1;
    if (best_match > best_other) rep.ordered += 1;
  }
  rep.fraction = rep.queries > 0 ? double(rep.ordered) / rep.queries : 0.0;
  return rep;
}

EvalReport self_retrieval_sanity(Embedder& emb, const Manifest& m, const std::string& dir,
                                 TaskKind task) {
  auto queries = m.split("query");
  if (queries.empty()) throw ContractError("manifest has no query split");
  EmbedPlan plan;
  for (const auto* r : queries) {
    plan.records.push_back(r);
    plan.instructions.push_back(gallery_instruction(task, *r, emb.bank()));
  }
  auto set = embed_set(emb, m, dir, plan, false, false);
  // identities made unique so each query's sole relevant item is itself
  FeatureSet q = set, g = set;
  for (size_t i = 0; i < q.size(); ++i) {
    q.ids[i] = int(i);
    g.ids[i] = int(i);
  }
  auto rep = evaluate(q, g, FilterPolicy::None);
  rep.task = task_name(task);
  rep.mode = "self-gallery";
  return rep;
}

}  // namespace irk
