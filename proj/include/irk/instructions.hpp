#pragma once

#include <unordered_map>

#include "irk/dataset.hpp"
#include "irk/rng.hpp"

namespace irk {

enum class TaskKind { Trad, CC, CTCC, VI, T2I, LI };

const char* task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

// Typed instruction: a text payload (one phrase or several description
// sentences) or a clothes-template image reference.
struct Instruction {
  TaskKind kind = TaskKind::Trad;
  std::vector<std::string> sentences;
  int template_clothes = -1;

  bool is_image() const { return template_clothes >= 0; }
};

// Fixed 20-phrase banks for the text tasks plus the closed attribute
// vocabulary. Loaded from one JSON resource, checksummed.
class PhraseBank {
 public:
  static PhraseBank load(const std::string& path);
  static PhraseBank load_default();

  const std::vector<std::string>& phrases(TaskKind task) const;
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& words(const std::string& category) const;
  bool known_word(const std::string& word) const { return word_category_.count(word) != 0; }
  const std::string& category_of(const std::string& word) const;
  uint64_t checksum() const { return checksum_; }

 private:
  std::vector<std::string> trad_, cc_, vi_;
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::vector<std::string>> attribute_words_;
  std::unordered_map<std::string, std::string> word_category_;
  uint64_t checksum_ = 0;
};

// Training-time instruction for one sample.
//   Trad/CC/VI : uniform draw from the task's bank
//   CTCC       : a wardrobe template of the sample's identity (query role)
//   LI         : description sentences of a same-identity gallery-context record
//   T2I        : the sample's own description sentences
Instruction sample_instruction(TaskKind task, const SampleRecord& rec, const Manifest& manifest,
                               const std::vector<const SampleRecord*>& gallery_context,
                               const PhraseBank& bank, Rng& rng);

// Evaluation-time instruction for a gallery item: its own clothes template
// (CTCC), its own description (LI/T2I), or the canonical phrase (index 0 by
// default, or a chosen sweep index).
Instruction gallery_instruction(TaskKind task, const SampleRecord& rec, const PhraseBank& bank,
                                int phrase_index = 0);

// Serialized query/instruction/target binding. For text-to-image inference
// the query slot stays empty (features are extracted separately).
struct PairRecord {
  TaskKind kind = TaskKind::Trad;
  int query_index = -1;
  Instruction instruction;
  int target_index = -1;
};

PairRecord build_pair(const SampleRecord& query, int query_index, const Instruction& instruction,
                      const SampleRecord& target, int target_index);

// Deterministic rule-based templating over the closed vocabulary. Every
// attribute word appears verbatim in exactly one sentence, so distinct
// attribute sets map to distinct sentence lists.
std::vector<std::string> attribute_to_sentences(const std::vector<std::string>& attributes,
                                                const PhraseBank& bank);

}  // namespace irk
