#include "irk/instructions.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace irk {

namespace {

// FNV-1a of the shipped resources/instruction_banks.json; guards against a
// silently edited phrase bank.
constexpr uint64_t kBankChecksum = 0xc56088036c4affabull;

const char* kTaskNames[] = {"trad", "cc", "ctcc", "vi", "t2i", "li"};

}  // namespace

const char* task_name(TaskKind k) { return kTaskNames[int(k)]; }

TaskKind task_from_name(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kTaskNames[i]) return TaskKind(i);
  throw ConfigError("unknown task: " + name);
}

PhraseBank PhraseBank::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open phrase bank resource: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string raw = ss.str();

  PhraseBank bank;
  bank.checksum_ = fnv1a64(raw);
  if (bank.checksum_ != kBankChecksum)
    throw IoError("phrase bank resource checksum mismatch: " + path);

  auto j = nlohmann::json::parse(raw);
  bank.trad_ = j.at("banks").at("trad").get<std::vector<std::string>>();
  bank.cc_ = j.at("banks").at("cc").get<std::vector<std::string>>();
  bank.vi_ = j.at("banks").at("vi").get<std::vector<std::string>>();
  for (const auto* b : {&bank.trad_, &bank.cc_, &bank.vi_}) {
    if (b->size() != 20) throw IoError("phrase bank must hold exactly 20 phrases");
    std::set<std::string> uniq(b->begin(), b->end());
    if (uniq.size() != 20) throw IoError("phrase bank holds duplicate phrases");
  }
  for (auto it = j.at("attributes").begin(); it != j.at("attributes").end(); ++it) {
    bank.categories_.push_back(it.key());
    auto words = it.value().get<std::vector<std::string>>();
    for (const auto& w : words) {
      if (bank.word_category_.count(w)) throw IoError("attribute word in two categories: " + w);
      bank.word_category_[w] = it.key();
    }
    bank.attribute_words_[it.key()] = std::move(words);
  }
  return bank;
}

PhraseBank PhraseBank::load_default() {
  return load(std::string(IRK_RESOURCE_DIR) + "/instruction_banks.json");
}

const std::vector<std::string>& PhraseBank::phrases(TaskKind task) const {
  switch (task) {
    case TaskKind::Trad: return trad_;
    case TaskKind::CC: return cc_;
    case TaskKind::VI: return vi_;
    default: throw ContractError(std::string("no phrase bank for task ") + task_name(task));
  }
}

const std::vector<std::string>& PhraseBank::words(const std::string& category) const {
  auto it = attribute_words_.find(category);
  if (it == attribute_words_.end()) throw ContractError("unknown attribute category: " + category);
  return it->second;
}

const std::string& PhraseBank::category_of(const std::string& word) const {
  auto it = word_category_.find(word);
  if (it == word_category_.end()) throw ContractError("unknown attribute word: " + word);
  return it->second;
}

Instruction sample_instruction(TaskKind task, const SampleRecord& rec, const Manifest& manifest,
                               const std::vector<const SampleRecord*>& gallery_context,
                               const PhraseBank& bank, Rng& rng) {
  Instruction out;
  out.kind = task;
  switch (task) {
    case TaskKind::Trad:
    case TaskKind::CC:
    case TaskKind::VI: {
      const auto& phrases = bank.phrases(task);
      out.sentences = {phrases[size_t(rng.uniform_int(int(phrases.size())))]};
      return out;
    }
    case TaskKind::CTCC: {
      const auto& wardrobe = manifest.spec_of(rec).wardrobe;
      if (wardrobe.empty()) throw ContractError("identity has no wardrobe for a clothes template");
      out.template_clothes = wardrobe[size_t(rng.uniform_int(int(wardrobe.size())))].clothes_id;
      return out;
    }
    case TaskKind::LI: {
      std::vector<const SampleRecord*> same;
      for (const auto* g : gallery_context)
        if (g->identity == rec.identity && g != &rec) same.push_back(g);
      if (same.empty())
        throw ContractError("language-instructed sampling: no same-identity gallery image");
      out.sentences = same[size_t(rng.uniform_int(int(same.size())))]->description;
      return out;
    }
    case TaskKind::T2I: {
      if (rec.description.empty()) throw ContractError("record has no description sentences");
      out.sentences = rec.description;
      return out;
    }
  }
  throw ContractError("unreachable task kind");
}

Instruction gallery_instruction(TaskKind task, const SampleRecord& rec, const PhraseBank& bank,
                                int phrase_index) {
  Instruction out;
  out.kind = task;
  switch (task) {
    case TaskKind::Trad:
    case TaskKind::CC:
    case TaskKind::VI: {
      const auto& phrases = bank.phrases(task);
      if (phrase_index < 0 || phrase_index >= int(phrases.size()))
        throw ContractError("phrase index out of range");
      out.sentences = {phrases[size_t(phrase_index)]};
      return out;
    }
    case TaskKind::CTCC:
      out.template_clothes = rec.clothes;  // its own cropped clothes
      return out;
    case TaskKind::LI:
    case TaskKind::T2I:
      if (rec.description.empty()) throw ContractError("record has no description sentences");
      out.sentences = rec.description;
      return out;
  }
  throw ContractError("unreachable task kind");
}

PairRecord build_pair(const SampleRecord& query, int query_index, const Instruction& instruction,
                      const SampleRecord& target, int target_index) {
  if (query.identity != target.identity)
    throw ContractError("build_pair: query and target identities differ");
  switch (instruction.kind) {
    case TaskKind::Trad:
      if (query.clothes != target.clothes)
        throw ContractError("build_pair: traditional pair must share a clothes id");
      break;
    case TaskKind::CTCC:
      if (!instruction.is_image()) throw ContractError("build_pair: clothes-template pair needs an image instruction");
      if (instruction.template_clothes != target.clothes)
        throw ContractError("build_pair: target does not wear the instructed clothes");
      break;
    case TaskKind::LI:
      if (instruction.sentences != target.description)
        throw ContractError("build_pair: instruction sentences must describe the target");
      break;
    default:
      if (instruction.is_image()) throw ContractError("build_pair: text task with image instruction");
      break;
  }
  PairRecord out;
  out.kind = instruction.kind;
  out.query_index = query_index;
  out.instruction = instruction;
  out.target_index = target_index;
  return out;
}

std::vector<std::string> attribute_to_sentences(const std::vector<std::string>& attributes,
                                                const PhraseBank& bank) {
  if (attributes.empty()) throw ContractError("attribute_to_sentences: empty attribute list");
  static const std::set<std::string> kWear = {"coat color",    "coat style",  "coat length",
                                              "trousers color", "trousers length", "shoes color",
                                              "shoes style",   "uniform"};
  static const std::set<std::string> kHas = {"hair color", "hair style", "bag style"};

  std::vector<std::string> wear, has, is;
  for (const auto& word : attributes) {
    const auto& cat = bank.category_of(word);  // throws on unknown words
    if (kWear.count(cat))
      wear.push_back(word);
    else if (kHas.count(cat))
      has.push_back(word);
    else
      is.push_back(word);
  }
  auto join = [](const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) out += " and ";
      out += words[i];
    }
    return out;
  };
  std::vector<std::string> sentences;
  if (!wear.empty()) sentences.push_back("The person wears a " + join(wear) + ".");
  if (!has.empty()) sentences.push_back("The person has " + join(has) + ".");
  if (!is.empty()) sentences.push_back("The person is " + join(is) + ".");
  return sentences;
}

}  // namespace irk
