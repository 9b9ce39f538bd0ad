#pragma once

#include <json.hpp>
#include <map>

#include "irk/dataset.hpp"
#include "irk/instructions.hpp"
#include "irk/model.hpp"

namespace irk {

// Full run configuration. Every field has a documented default; config files
// may set any subset, unknown keys are errors, CLI flags override file values.
struct RunConfig {
  ModelConfig model;
  SynthConfig synth;

  std::vector<TaskKind> tasks = {TaskKind::Trad};

  // losses
  double margin = 0.3;
  double tau = 0.07;
  std::string triplet_mode = "all";       // all | hard
  std::string loss_variant = "adaptive";  // adaptive | classic

  // optimizer and schedule
  double lr = 1e-5;
  double weight_decay = 5e-4;
  double warmup_start = 1e-7;
  int warmup_steps = 1000;

  // sampler
  int batch_p = 32;
  int batch_k = 4;

  uint64_t seed = 1;
  bool deterministic = false;
  int steps = 500;
  int checkpoint_every = 100;
  int t2i_rerank_k = 128;
  std::string filter_policy = "standard";  // standard | none
  bool phrase_sweep = false;

  std::string train_manifest;
  std::string data_dir;  // dataset root for image files; manifest dir if empty
  std::string out_dir = "out";

  void validate() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Linear warmup from warmup_start to lr over warmup_steps, then constant.
// Exact at the endpoints and the midpoint.
double warmup_lr(const RunConfig& cfg, int64_t step);

// Per-step training telemetry.
struct StepRecord {
  int64_t step = 0;
  std::string task;
  double loss = 0;
  std::map<std::string, double> terms;
  double lr = 0;
  double ms = 0;
};

struct MetricsLog {
  std::vector<StepRecord> steps;
  void push(StepRecord r);
  std::string to_json() const;
};

// worker-count policy: IRK_THREADS caps, deterministic forces 1
int worker_count(bool deterministic);

}  // namespace irk
