#pragma once

#include <memory>

#include "irk/adamw.hpp"
#include "irk/embedder.hpp"
#include "irk/losses.hpp"

namespace irk {

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  double first_loss = 0;
  double last_loss = 0;
  int64_t steps_run = 0;
  bool aborted_nan = false;
};

// The training loop: P*K batches, per-task instruction building, editing
// transformer + fusion forward, retrieval or text-to-image loss, AdamW with
// linear warmup then constant lr. Multi-task configs interleave tasks
// round-robin so any window of |tasks| consecutive steps touches every task.
class Trainer {
 public:
  Trainer(RunConfig cfg, Manifest manifest, PhraseBank bank);

  TrainResult run();

  const RunConfig& config() const { return cfg_; }
  const ParamStore<float>& params() const { return params_; }
  const ParamStore<float>& initial_params() const { return initial_params_; }
  const MetricsLog& metrics() const { return log_; }
  int num_identities() const { return int(class_of_.size()); }

  nlohmann::ordered_json checkpoint_meta(int64_t step) const;

 private:
  struct BatchTensors;
  double step_once(int64_t step, TaskKind task);

  RunConfig cfg_;
  Manifest manifest_;
  PhraseBank bank_;
  ParamStore<float> params_;
  ParamStore<float> initial_params_;
  std::map<int, int> class_of_;  // identity label -> classifier index
  std::set<std::string> frozen_;
  AdamW<float> opt_;
  Rng instr_rng_;
  Rng aug_rng_;
  Rng neg_rng_;
  std::unique_ptr<PKBatchSampler> sampler_;
  std::unordered_map<std::string, std::pair<Tensor<float>, std::vector<double>>> instr_cache_;
  MetricsLog log_;
  std::vector<const SampleRecord*> train_view_;
};

}  // namespace irk
