#include "irk/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "irk/checkpoint.hpp"

namespace irk {

namespace {

std::string instr_key(const Instruction& ins) {
  if (ins.is_image()) return "tpl:" + std::to_string(ins.template_clothes);
  std::string key = "txt:";
  for (const auto& s : ins.sentences) {
    key += s;
    key += '\n';
  }
  return key;
}

double wall_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Trainer::Trainer(RunConfig cfg, Manifest manifest, PhraseBank bank)
    : cfg_(std::move(cfg)),
      manifest_(std::move(manifest)),
      bank_(std::move(bank)),
      opt_(AdamWConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}),
      instr_rng_(0),
      aug_rng_(0),
      neg_rng_(0) {
  cfg_.validate();
  train_view_ = manifest_.split("train");
  if (train_view_.empty()) throw ContractError("manifest has no train split");
  for (const auto* r : train_view_)
    if (!class_of_.count(r->identity)) {
      int next = int(class_of_.size());
      class_of_[r->identity] = next;
    }

  Rng root(cfg_.seed);
  Rng init_rng = root.fork(0x1171);
  init_model_params(params_, cfg_.model, int(class_of_.size()), init_rng);
  initial_params_ = params_;
  instr_rng_ = root.fork(0x115);
  aug_rng_ = root.fork(0xA06);
  neg_rng_ = root.fork(0x0E6);
  sampler_ = std::make_unique<PKBatchSampler>(manifest_, cfg_.batch_p, cfg_.batch_k,
                                              root.fork(0x5A0));
  if (cfg_.model.instruction_encoder_frozen)
    for (const auto& n : params_.names())
      if (n.rfind("instr.", 0) == 0) frozen_.insert(n);
}

nlohmann::ordered_json Trainer::checkpoint_meta(int64_t step) const {
  nlohmann::ordered_json meta;
  meta["step"] = step;
  meta["num_identities"] = int(class_of_.size());
  meta["model"] = model_config_to_json(cfg_.model);
  meta["seed"] = cfg_.seed;
  return meta;
}

double Trainer::step_once(int64_t step, TaskKind task) {
  const int b = cfg_.batch_p * cfg_.batch_k;
  auto batch = sampler_->next_batch();

  // per-record inputs
  std::vector<const SampleRecord*> recs;
  recs.reserve(size_t(b));
  for (int idx : batch) recs.push_back(&manifest_.records[size_t(idx)]);

  std::vector<Tensor<float>> images;
  images.reserve(size_t(b));
  AugmentPolicy policy;
  for (int i = 0; i < b; ++i) {
    auto img = load_record_image(manifest_, *recs[size_t(i)], cfg_.data_dir);
    Rng r = aug_rng_.fork(uint64_t(step) * 1000003ull + uint64_t(i));
    images.push_back(augment(img, r, policy));
  }

  // instructions; the frozen encoder allows content-keyed caching
  std::vector<const Tensor<float>*> instr_tokens(size_t(b), nullptr);
  std::vector<std::vector<double>> instr_pooled(size_t(b), std::vector<double>{});
  std::vector<Tensor<float>> scratch;
  scratch.reserve(size_t(b));
  const bool frozen = cfg_.model.instruction_encoder_frozen;
  // the bank phrase is drawn once per mini-batch; template and description
  // instructions stay per-record
  const bool batch_phrase =
      task == TaskKind::Trad || task == TaskKind::CC || task == TaskKind::VI;
  Instruction shared;
  if (batch_phrase)
    shared = sample_instruction(task, *recs[0], manifest_, train_view_, bank_, instr_rng_);
  for (int i = 0; i < b; ++i) {
    auto ins = batch_phrase ? shared
                            : sample_instruction(task, *recs[size_t(i)], manifest_, train_view_,
                                                 bank_, instr_rng_);
    auto key = instr_key(ins);
    if (frozen) {
      auto it = instr_cache_.find(key);
      if (it != instr_cache_.end()) {
        instr_tokens[size_t(i)] = &it->second.first;
        instr_pooled[size_t(i)] = it->second.second;
        continue;
      }
    }
    Graph<float> g(params_);
    Var<float> ft;
    if (ins.is_image()) {
      const ClothesSpec* clothes = nullptr;
      for (const auto& spec : manifest_.identities)
        for (const auto& c : spec.wardrobe)
          if (c.clothes_id == ins.template_clothes) clothes = &c;
      if (!clothes) throw ContractError("template clothes id missing from manifest");
      SynthConfig rc = manifest_.config;
      rc.instr_image_height = cfg_.model.instr_image_height;
      rc.instr_image_width = cfg_.model.instr_image_width;
      ft = encode_image_instruction(g, cfg_.model, render_template(*clothes, rc));
    } else {
      ft = encode_text_instruction(g, cfg_.model, ins.sentences);
    }
    Tensor<float> tokens(ft.shape(), ft.val());
    std::vector<double> pooled(size_t(cfg_.model.dim), 0.0);
    int rows = ft.rows();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cfg_.model.dim; ++c)
        pooled[size_t(c)] += double(ft.val()[size_t(r) * cfg_.model.dim + c]) / rows;
    if (frozen) {
      auto& slot = instr_cache_[key];
      slot = {std::move(tokens), std::move(pooled)};
      instr_tokens[size_t(i)] = &slot.first;
      instr_pooled[size_t(i)] = slot.second;
    } else {
      scratch.push_back(std::move(tokens));
      instr_tokens[size_t(i)] = &scratch.back();
      instr_pooled[size_t(i)] = std::move(pooled);
    }
  }

  // forward: encoders -> editing transformer -> fusion, rows stacked B x C
  // (with a frozen instruction encoder the tokens enter as constants)
  Graph<float> g(params_);
  std::optional<Var<float>> f_rows, fout_rows;
  std::vector<Var<float>> ft_vars;
  ft_vars.reserve(size_t(b));
  for (int i = 0; i < b; ++i) {
    auto vft = g.constant(*instr_tokens[size_t(i)]);
    ft_vars.push_back(vft);
    auto f = editing_transformer_forward(g, cfg_.model, patchify(g, cfg_.model, images[size_t(i)]),
                                         &vft);
    auto f_out = fusion_forward(g, cfg_.model, f, vft);
    f_rows = f_rows ? concat_rows(*f_rows, f) : f;
    fout_rows = fout_rows ? concat_rows(*fout_rows, f_out) : f_out;
  }

  std::vector<int> labels;
  labels.reserve(size_t(b));
  for (int i = 0; i < b; ++i) labels.push_back(class_of_.at(recs[size_t(i)]->identity));

  Var<float> loss;
  StepRecord rec;
  if (task == TaskKind::T2I) {
    // positives are the diagonal; negatives pair each text with a uniformly
    // sampled different-identity image feature from the batch
    std::vector<float> text_rows(size_t(b) * size_t(cfg_.model.dim));
    for (int i = 0; i < b; ++i)
      for (int c = 0; c < cfg_.model.dim; ++c)
        text_rows[size_t(i) * cfg_.model.dim + c] = float(instr_pooled[size_t(i)][size_t(c)]);
    auto vtext = g.constant(Shape{b, cfg_.model.dim}, std::move(text_rows));

    std::optional<Var<float>> match_rows;
    std::vector<bool> positive;
    for (int i = 0; i < b; ++i) {
      auto f_i = slice_rows(*f_rows, i, 1);
      auto pos = match_head(g, fusion_forward(g, cfg_.model, f_i, ft_vars[size_t(i)]));
      match_rows = match_rows ? concat_rows(*match_rows, pos) : pos;
      positive.push_back(true);
    }
    for (int i = 0; i < b; ++i) {
      int j = i;
      for (int tries = 0; tries < 64 && labels[size_t(j)] == labels[size_t(i)]; ++tries)
        j = neg_rng_.uniform_int(b);
      if (labels[size_t(j)] == labels[size_t(i)]) continue;  // single-identity batch
      auto f_j = slice_rows(*f_rows, j, 1);
      auto neg = match_head(g, fusion_forward(g, cfg_.model, f_j, ft_vars[size_t(i)]));
      match_rows = concat_rows(*match_rows, neg);
      positive.push_back(false);
    }
    auto cl = contrastive_loss(*f_rows, vtext, labels, cfg_.tau);
    auto mt = match_loss(*match_rows, positive);
    loss = add(cl, mt);
    rec.terms["contrastive"] = g.value(cl);
    rec.terms["match"] = g.value(mt);
  } else {
    // mining runs on the detached F values of this same forward pass
    std::vector<double> fvals(f_rows->val().begin(), f_rows->val().end());
    auto mode = cfg_.triplet_mode == "hard" ? MiningMode::Hard : MiningMode::All;
    auto tb = mine_triplets(labels, instr_pooled, fvals, cfg_.model.dim, cfg_.margin, mode);
    if (cfg_.loss_variant == "classic") {
      // fixed-margin ablation: different-identity negatives, unit relatedness gap
      TripletBatch classic;
      classic.margin = tb.margin;
      classic.skipped_anchors = tb.skipped_anchors;
      for (auto t : tb.triples) {
        if (labels[size_t(t.r2)] == labels[size_t(t.anchor)]) continue;
        t.beta1 = 1.0;
        t.beta2 = 0.0;
        classic.triples.push_back(t);
      }
      tb = std::move(classic);
    }
    auto a1 = adaptive_triplet_loss(*f_rows, tb);
    auto i1 = identity_loss(g, "idf", *f_rows, labels);
    auto a2 = adaptive_triplet_loss(*fout_rows, tb);
    auto i2 = identity_loss(g, "idfout", *fout_rows, labels);
    loss = add(add(a1, i1), add(a2, i2));
    rec.terms["atri_f"] = g.value(a1);
    rec.terms["id_f"] = g.value(i1);
    rec.terms["atri_fout"] = g.value(a2);
    rec.terms["id_fout"] = g.value(i2);
  }

  double loss_val = g.value(loss);
  if (!std::isfinite(loss_val)) throw NumericError("training loss is not finite");

  params_.zero_grads();
  g.backward(loss);
  opt_.set_lr(warmup_lr(cfg_, step));
  opt_.step(params_, frozen_.empty() ? nullptr : &frozen_);

  rec.step = step;
  rec.task = task_name(task);
  rec.loss = loss_val;
  rec.lr = warmup_lr(cfg_, step);
  log_.push(std::move(rec));
  return loss_val;
}

TrainResult Trainer::run() {
  namespace fs = std::filesystem;
  fs::create_directories(cfg_.out_dir);
  TrainResult res;
  auto t0 = std::chrono::steady_clock::now();
  std::string last_good;

  for (int64_t step = 0; step < cfg_.steps; ++step) {
    TaskKind task = cfg_.tasks[size_t(step % int64_t(cfg_.tasks.size()))];
    double loss;
    try {
      auto s0 = std::chrono::steady_clock::now();
      loss = step_once(step, task);
      log_.steps.back().ms = wall_ms(s0);
    } catch (const NumericError&) {
      res.aborted_nan = true;
      res.checkpoint_path = last_good;  // keep the last good checkpoint
      res.steps_run = step;
      return res;
    }
    if (step == 0) res.first_loss = loss;
    res.last_loss = loss;
    res.steps_run = step + 1;
    if (cfg_.checkpoint_every > 0 && (step + 1) % cfg_.checkpoint_every == 0 &&
        step + 1 < cfg_.steps) {
      auto path = (fs::path(cfg_.out_dir) / ("checkpoint_step" + std::to_string(step + 1) + ".bin"))
                      .string();
      save_checkpoint(path, params_, checkpoint_meta(step + 1));
      last_good = path;
    }
  }

  res.checkpoint_path = (fs::path(cfg_.out_dir) / "checkpoint_final.bin").string();
  save_checkpoint(res.checkpoint_path, params_, checkpoint_meta(cfg_.steps));
  res.metrics_path = (fs::path(cfg_.out_dir) / "metrics.json").string();
  std::ofstream mf(res.metrics_path, std::ios::binary);
  mf << log_.to_json();
  (void)wall_ms(t0);
  return res;
}

}  // namespace irk
