#include "irk/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

namespace irk {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ordered_json model_config_to_json(const ModelConfig& m) {
  return ordered_json{{"image_height", m.image_height},
                      {"image_width", m.image_width},
                      {"patch_size", m.patch_size},
                      {"channels", m.channels},
                      {"dim", m.dim},
                      {"heads", m.heads},
                      {"layers", m.layers},
                      {"instr_blocks", m.instr_blocks},
                      {"fusion_blocks", m.fusion_blocks},
                      {"vocab_size", m.vocab_size},
                      {"max_text_len", m.max_text_len},
                      {"instr_image_height", m.instr_image_height},
                      {"instr_image_width", m.instr_image_width},
                      {"instruction_encoder_frozen", m.instruction_encoder_frozen}};
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "image_height", "image_width", "patch_size", "channels", "dim", "heads", "layers",
      "instr_blocks", "fusion_blocks", "vocab_size", "max_text_len", "instr_image_height",
      "instr_image_width", "instruction_encoder_frozen"};
  reject_unknown(j, known, "model");
  ModelConfig m;
  read(j, "image_height", m.image_height);
  read(j, "image_width", m.image_width);
  read(j, "patch_size", m.patch_size);
  read(j, "channels", m.channels);
  read(j, "dim", m.dim);
  read(j, "heads", m.heads);
  read(j, "layers", m.layers);
  read(j, "instr_blocks", m.instr_blocks);
  read(j, "fusion_blocks", m.fusion_blocks);
  read(j, "vocab_size", m.vocab_size);
  read(j, "max_text_len", m.max_text_len);
  read(j, "instr_image_height", m.instr_image_height);
  read(j, "instr_image_width", m.instr_image_width);
  read(j, "instruction_encoder_frozen", m.instruction_encoder_frozen);
  return m;
}

namespace {

SynthConfig synth_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "train_identities", "samples_per_train_identity", "test_identities",
      "query_per_test_identity", "gallery_per_test_identity", "cameras", "wardrobe",
      "image_height", "image_width", "channels", "instr_image_height", "instr_image_width",
      "seed", "write_images"};
  reject_unknown(j, known, "synth");
  SynthConfig c;
  read(j, "train_identities", c.train_identities);
  read(j, "samples_per_train_identity", c.samples_per_train_identity);
  read(j, "test_identities", c.test_identities);
  read(j, "query_per_test_identity", c.query_per_test_identity);
  read(j, "gallery_per_test_identity", c.gallery_per_test_identity);
  read(j, "cameras", c.cameras);
  read(j, "wardrobe", c.wardrobe);
  read(j, "image_height", c.image_height);
  read(j, "image_width", c.image_width);
  read(j, "channels", c.channels);
  read(j, "instr_image_height", c.instr_image_height);
  read(j, "instr_image_width", c.instr_image_width);
  read(j, "seed", c.seed);
  read(j, "write_images", c.write_images);
  return c;
}

ordered_json synth_config_to_json(const SynthConfig& c) {
  return ordered_json{{"train_identities", c.train_identities},
                      {"samples_per_train_identity", c.samples_per_train_identity},
                      {"test_identities", c.test_identities},
                      {"query_per_test_identity", c.query_per_test_identity},
                      {"gallery_per_test_identity", c.gallery_per_test_identity},
                      {"cameras", c.cameras},
                      {"wardrobe", c.wardrobe},
                      {"image_height", c.image_height},
                      {"image_width", c.image_width},
                      {"channels", c.channels},
                      {"instr_image_height", c.instr_image_height},
                      {"instr_image_width", c.instr_image_width},
                      {"seed", c.seed},
                      {"write_images", c.write_images}};
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be nonnegative");
  if (lr < 0) throw ConfigError("lr must be nonnegative");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (margin < 0) throw ConfigError("margin must be nonnegative");
  if (batch_p < 1 || batch_k < 1) throw ConfigError("sampler P and K must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (triplet_mode != "all" && triplet_mode != "hard")
    throw ConfigError("triplet_mode must be all or hard");
  if (loss_variant != "adaptive" && loss_variant != "classic")
    throw ConfigError("loss_variant must be adaptive or classic");
  if (filter_policy != "standard" && filter_policy != "none")
    throw ConfigError("filter_policy must be standard or none");
  if (tasks.empty()) throw ConfigError("at least one task must be enabled");
  if (t2i_rerank_k < 1) throw ConfigError("t2i_rerank_k must be positive");
}

RunConfig RunConfig::from_json(const json& j) {
  static const std::set<std::string> known = {
      "model", "synth", "tasks", "margin", "tau", "triplet_mode", "loss_variant", "lr",
      "weight_decay", "warmup_start", "warmup_steps", "batch_p", "batch_k", "seed",
      "deterministic", "steps", "checkpoint_every", "t2i_rerank_k", "filter_policy",
      "phrase_sweep", "train_manifest", "data_dir", "out_dir"};
  reject_unknown(j, known, "run config");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) c.tasks.push_back(task_from_name(t.get<std::string>()));
  }
  read(j, "margin", c.margin);
  read(j, "tau", c.tau);
  read(j, "triplet_mode", c.triplet_mode);
  read(j, "loss_variant", c.loss_variant);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "warmup_start", c.warmup_start);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "batch_p", c.batch_p);
  read(j, "batch_k", c.batch_k);
  read(j, "seed", c.seed);
  read(j, "deterministic", c.deterministic);
  read(j, "steps", c.steps);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "t2i_rerank_k", c.t2i_rerank_k);
  read(j, "filter_policy", c.filter_policy);
  read(j, "phrase_sweep", c.phrase_sweep);
  read(j, "train_manifest", c.train_manifest);
  read(j, "data_dir", c.data_dir);
  read(j, "out_dir", c.out_dir);
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["model"] = model_config_to_json(model);
  j["synth"] = synth_config_to_json(synth);
  ordered_json t = ordered_json::array();
  for (auto k : tasks) t.push_back(task_name(k));
  j["tasks"] = t;
  j["margin"] = margin;
  j["tau"] = tau;
  j["triplet_mode"] = triplet_mode;
  j["loss_variant"] = loss_variant;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["warmup_start"] = warmup_start;
  j["warmup_steps"] = warmup_steps;
  j["batch_p"] = batch_p;
  j["batch_k"] = batch_k;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["steps"] = steps;
  j["checkpoint_every"] = checkpoint_every;
  j["t2i_rerank_k"] = t2i_rerank_k;
  j["filter_policy"] = filter_policy;
  j["phrase_sweep"] = phrase_sweep;
  j["train_manifest"] = train_manifest;
  j["data_dir"] = data_dir;
  j["out_dir"] = out_dir;
  return j;
}

double warmup_lr(const RunConfig& cfg, int64_t step) {
  if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr;
  double t = double(step) / double(cfg.warmup_steps);
  return cfg.warmup_start + t * (cfg.lr - cfg.warmup_start);
}

void MetricsLog::push(StepRecord r) { steps.push_back(std::move(r)); }

std::string MetricsLog::to_json() const {
  ordered_json arr = ordered_json::array();
  for (const auto& s : steps) {
    ordered_json terms;
    for (const auto& [k, v] : s.terms) terms[k] = v;
    arr.push_back(ordered_json{{"step", s.step},
                               {"task", s.task},
                               {"loss", s.loss},
                               {"terms", terms},
                               {"lr", s.lr},
                               {"ms", s.ms}});
  }
  return ordered_json{{"steps", arr}}.dump(2);
}

int worker_count(bool deterministic) {
  if (deterministic) return 1;
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("IRK_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return hw;
}

}  // namespace irk
