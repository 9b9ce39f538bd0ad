#pragma once

#include <optional>

#include "irk/eval.hpp"
#include "irk/model.hpp"
#include "irk/runconfig.hpp"
#include "irk/synth.hpp"

namespace irk {

// Float32 inference wrapper around a parameter store: per-record feature
// extraction with content-keyed instruction caching. Read-only after
// construction, safe to share across eval worker threads.
class Embedder {
 public:
  Embedder(ModelConfig cfg, ParamStore<float> params, PhraseBank bank);

  const ModelConfig& config() const { return cfg_; }
  const ParamStore<float>& params() const { return params_; }
  const PhraseBank& bank() const { return bank_; }

  struct EncodedInstruction {
    Tensor<float> tokens;            // MxC
    std::vector<double> pooled;      // mean of rows
    std::vector<double> pooled_unit; // L2-normalized mean
  };

  // Encodes an instruction, rendering clothes templates on demand.
  const EncodedInstruction& encode_instruction(const Instruction& ins, const Manifest& m);
  // Encodes a raw template image (uncached; external files).
  EncodedInstruction encode_instruction_image(const Tensor<float>& image);

  struct Embedding {
    std::vector<double> f;      // L2-normalized editing-transformer CLS feature
    std::vector<float> f_raw;   // unnormalized, for fusion input
  };

  Embedding embed_image(const Tensor<float>& image, const EncodedInstruction& ins);
  // text-to-image gallery side: image embedded with the neutral instruction
  Embedding embed_image_neutral(const Tensor<float>& image);

  // positive-class probability of the pair (image feature, instruction)
  double match_positive_score(const std::vector<float>& f_raw, const EncodedInstruction& ins);

 private:
  ModelConfig cfg_;
  ParamStore<float> params_;
  PhraseBank bank_;
  std::unordered_map<std::string, EncodedInstruction> cache_;
  // template renders need the synth config stored in the manifest
};

// ---------------------------------------------------------------------------
// Task-level evaluation harness
// ---------------------------------------------------------------------------

struct EvalRequest {
  TaskKind task = TaskKind::Trad;
  std::optional<CrossModalityMode> mode;  // VI only; both run when unset
  FilterPolicy filter = FilterPolicy::Standard;
  bool phrase_sweep = false;
  int rerank_k = 128;
  int max_rank = 50;
};

// Embeds query and gallery per the task's instruction rules and runs the
// retrieval metrics. For VI with no mode given, vis2ir is used.
EvalReport run_eval(Embedder& emb, const Manifest& m, const std::string& data_dir,
                    const EvalRequest& req, bool deterministic = false);

// Per-phrase sweep for the text tasks: one report per bank phrase plus the
// arithmetic mean in `mean`.
struct SweepReport {
  std::vector<EvalReport> per_phrase;
  EvalReport mean;
};
SweepReport run_eval_sweep(Embedder& emb, const Manifest& m, const std::string& data_dir,
                           const EvalRequest& req);

// Instruction-conditioning probe on the clothes-template split: fraction of
// queries whose best-ranked same-identity gallery item wearing the instructed
// clothes sits above every same-identity item that does not.
struct CtccOrderingReport {
  int queries = 0;
  int ordered = 0;
  double fraction = 0.0;
};
CtccOrderingReport ctcc_instruction_ordering(Embedder& emb, const Manifest& m,
                                             const std::string& data_dir);

// Self-gallery sanity: every query retrieved against the query set itself.
EvalReport self_retrieval_sanity(Embedder& emb, const Manifest& m, const std::string& data_dir,
                                 TaskKind task);

}  // namespace irk
