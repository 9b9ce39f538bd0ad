// irk: instruction-conditioned person retrieval toolkit.
// Verbs: synth, train, gradcheck, eval, retrieve. All reports are JSON.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "irk/checkpoint.hpp"
#include "irk/gradcheck_suite.hpp"
#include "irk/train.hpp"

namespace fs = std::filesystem;
using namespace irk;

namespace {

struct CommonFlags {
  std::string config_path;
  int64_t seed = -1;
  bool deterministic = false;
  std::string task;
  std::string out;
};

RunConfig load_config(const CommonFlags& flags) {
  RunConfig cfg;
  if (!flags.config_path.empty()) cfg = RunConfig::from_file(flags.config_path);
  if (flags.seed >= 0) cfg.seed = uint64_t(flags.seed);
  if (flags.deterministic) cfg.deterministic = true;
  if (!flags.task.empty()) {
    cfg.tasks.clear();
    if (flags.task == "all") {
      for (const char* t : {"trad", "cc", "ctcc", "vi", "t2i", "li"})
        cfg.tasks.push_back(task_from_name(t));
    } else {
      cfg.tasks.push_back(task_from_name(flags.task));
    }
  }
  if (!flags.out.empty()) cfg.out_dir = flags.out;
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "run config JSON");
  cmd->add_option("--seed", flags.seed, "override config seed");
  cmd->add_flag("--deterministic", flags.deterministic, "single-threaded, bitwise reproducible");
  cmd->add_option("--task", flags.task, "trad|cc|ctcc|vi|t2i|li|all");
  cmd->add_option("--out", flags.out, "output path");
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write: " + path);
  f << text;
}

std::string default_mode_dir(const RunConfig& cfg) {
  return cfg.out_dir.empty() ? std::string("out") : cfg.out_dir;
}

int cmd_synth(const CommonFlags& flags) {
  RunConfig cfg = load_config(flags);
  auto bank = PhraseBank::load_default();
  if (flags.seed >= 0) cfg.synth.seed = uint64_t(flags.seed);
  auto manifest = generate_manifest(cfg.synth, bank);
  auto dir = default_mode_dir(cfg);
  auto path = write_dataset(manifest, dir);
  std::cout << "{\"manifest\": \"" << path << "\", \"records\": " << manifest.records.size()
            << ", \"train\": " << manifest.split("train").size() << "}\n";
  return 0;
}

Manifest load_train_manifest(RunConfig& cfg) {
  if (cfg.train_manifest.empty()) throw ConfigError("train_manifest not set");
  auto m = load_manifest(cfg.train_manifest);
  if (cfg.data_dir.empty()) cfg.data_dir = fs::path(cfg.train_manifest).parent_path().string();
  return m;
}

int cmd_train(const CommonFlags& flags, const std::string& manifest_override) {
  RunConfig cfg = load_config(flags);
  if (!manifest_override.empty()) cfg.train_manifest = manifest_override;
  auto manifest = load_train_manifest(cfg);
  auto bank = PhraseBank::load_default();
  Trainer trainer(cfg, std::move(manifest), bank);
  auto res = trainer.run();
  if (res.aborted_nan) {
    std::cerr << "error: numeric: training loss became non-finite at step " << res.steps_run
              << "; last good checkpoint: "
              << (res.checkpoint_path.empty() ? "<none>" : res.checkpoint_path) << "\n";
    return 3;
  }
  std::cout << "{\"checkpoint\": \"" << res.checkpoint_path << "\", \"steps\": " << res.steps_run
            << ", \"first_loss\": " << res.first_loss << ", \"last_loss\": " << res.last_loss
            << "}\n";
  return 0;
}

int cmd_gradcheck(const CommonFlags& flags) {
  auto entries = run_gradcheck_suite(flags.seed >= 0 ? uint64_t(flags.seed) : 20240901ull);
  auto table = gradcheck_table(entries);
  std::cout << table;
  if (!flags.out.empty()) write_text(flags.out, table);
  return gradcheck_passed(entries) ? 0 : 2;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& manifest_path, const std::string& mode_str,
             const std::string& filter_str, bool sweep, bool self_sanity,
             const std::string& per_query_csv) {
  RunConfig cfg = load_config(flags);
  if (flags.task.empty()) throw ConfigError("--task is required for eval");
  TaskKind task = task_from_name(flags.task);
  auto ckpt = load_checkpoint(checkpoint_path);
  auto model_cfg = model_config_from_json(ckpt.meta.at("model"));
  auto manifest = load_manifest(manifest_path);
  std::string data_dir = fs::path(manifest_path).parent_path().string();
  auto bank = PhraseBank::load_default();

  // task tag must be present on the manifest records
  bool tagged = false;
  for (const auto& r : manifest.records)
    for (const auto& t : r.tasks)
      if (t == task_name(task)) tagged = true;
  if (!tagged) throw ContractError(std::string("manifest has no records tagged for task ") +
                                   task_name(task));

  Embedder emb(model_cfg, std::move(ckpt.params), bank);
  EvalRequest req;
  req.task = task;
  req.filter = (filter_str.empty() ? cfg.filter_policy : filter_str) == "none"
                   ? FilterPolicy::None
                   : FilterPolicy::Standard;
  req.rerank_k = cfg.t2i_rerank_k;
  if (!mode_str.empty())
    req.mode = mode_str == "ir2vis" ? CrossModalityMode::IrToVis : CrossModalityMode::VisToIr;

  std::string text;
  if (self_sanity) {
    auto rep = self_retrieval_sanity(emb, manifest, data_dir, task);
    text = rep.to_json();
  } else if (sweep || cfg.phrase_sweep) {
    auto rep = run_eval_sweep(emb, manifest, data_dir, req);
    nlohmann::ordered_json j;
    j["mean"] = nlohmann::ordered_json::parse(rep.mean.to_json());
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rep.per_phrase) arr.push_back(nlohmann::ordered_json::parse(r.to_json()));
    j["per_phrase"] = arr;
    text = j.dump(2);
  } else {
    auto rep = run_eval(emb, manifest, data_dir, req, cfg.deterministic);
    text = rep.to_json();
    if (!per_query_csv.empty()) write_text(per_query_csv, rep.per_query_csv());
  }
  if (!flags.out.empty())
    write_text(flags.out, text);
  else
    std::cout << text << "\n";
  return 0;
}

int cmd_retrieve(const CommonFlags& flags, const std::string& checkpoint_path,
                 const std::string& query_path, const std::string& instruction_text,
                 const std::string& template_path, const std::string& manifest_path, int top_n) {
  if (flags.task.empty()) throw ConfigError("--task is required for retrieve");
  TaskKind task = task_from_name(flags.task);
  auto ckpt = load_checkpoint(checkpoint_path);
  auto model_cfg = model_config_from_json(ckpt.meta.at("model"));
  auto manifest = load_manifest(manifest_path);
  std::string data_dir = fs::path(manifest_path).parent_path().string();
  auto bank = PhraseBank::load_default();
  Embedder emb(model_cfg, std::move(ckpt.params), bank);

  auto gallery = manifest.split("gallery");
  if (gallery.empty()) throw ContractError("manifest has no gallery split");

  // query feature
  std::vector<double> qf;
  if (task == TaskKind::T2I) {
    if (instruction_text.empty()) throw ConfigError("t2i retrieval needs --instruction");
    Instruction ins;
    ins.kind = task;
    ins.sentences = {instruction_text};
    qf = emb.encode_instruction(ins, manifest).pooled_unit;
  } else {
    if (query_path.empty()) throw ConfigError("retrieve needs --query image");
    auto img = read_image_file(query_path);
    if (!template_path.empty()) {
      if (task != TaskKind::CTCC) throw ConfigError("--template applies to the ctcc task");
      auto enc = emb.encode_instruction_image(read_image_file(template_path));
      qf = emb.embed_image(img, enc).f;
    } else if (!instruction_text.empty()) {
      if (task == TaskKind::CTCC) throw ConfigError("ctcc retrieval needs --template");
      Instruction ins;
      ins.kind = task;
      ins.sentences = {instruction_text};
      qf = emb.embed_image(img, emb.encode_instruction(ins, manifest)).f;
    } else {
      throw ConfigError("retrieve needs --instruction text or a --template image");
    }
  }

  // gallery features under the task's own-instruction rules
  std::vector<std::pair<double, size_t>> scores;
  for (size_t gi = 0; gi < gallery.size(); ++gi) {
    auto img = load_record_image(manifest, *gallery[gi], data_dir);
    std::vector<double> gf;
    if (task == TaskKind::T2I) {
      gf = emb.embed_image_neutral(img).f;
    } else {
      auto ins = gallery_instruction(task, *gallery[gi], bank, 0);
      gf = emb.embed_image(img, emb.encode_instruction(ins, manifest)).f;
    }
    double dot = 0;
    for (size_t d = 0; d < qf.size(); ++d) dot += qf[d] * gf[d];
    scores.emplace_back(dot, gi);
  }
  std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  int n = std::min<int>(top_n, int(scores.size()));
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (int i = 0; i < n; ++i) {
    const auto& r = *gallery[scores[size_t(i)].second];
    out.push_back(nlohmann::ordered_json{{"rank", i + 1},
                                         {"gallery_index", scores[size_t(i)].second},
                                         {"identity", r.identity},
                                         {"camera", r.camera},
                                         {"clothes", r.clothes},
                                         {"score", scores[size_t(i)].first}});
  }
  auto text = out.dump(2);
  if (!flags.out.empty())
    write_text(flags.out, text);
  else
    std::cout << text << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instruction-conditioned person retrieval toolkit"};
  app.require_subcommand(1);

  CommonFlags synth_flags, train_flags, grad_flags, eval_flags, retr_flags;
  std::string train_manifest_override;
  std::string eval_checkpoint, eval_manifest, eval_mode, eval_filter, eval_csv;
  bool eval_sweep = false, eval_self = false;
  std::string retr_checkpoint, retr_query, retr_instruction, retr_template, retr_manifest;
  int retr_top = 10;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_flags);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_flags);
  train->add_option("--manifest", train_manifest_override, "train manifest path");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite (64-bit)");
  add_common(grad, grad_flags);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
  eval->add_option("--manifest", eval_manifest, "eval manifest path")->required();
  eval->add_option("--mode", eval_mode, "vis2ir|ir2vis (vi task)");
  eval->add_option("--filter", eval_filter, "standard|none");
  eval->add_flag("--sweep", eval_sweep, "evaluate every bank phrase and average");
  eval->add_flag("--self-sanity", eval_self, "queries retrieved against themselves");
  eval->add_option("--per-query-csv", eval_csv, "write per-query AP as CSV");

  auto* retr = app.add_subcommand("retrieve", "rank a gallery for one query");
  add_common(retr, retr_flags);
  retr->add_option("--checkpoint", retr_checkpoint, "checkpoint path")->required();
  retr->add_option("--query", retr_query, "query image file");
  retr->add_option("--instruction", retr_instruction, "instruction text");
  retr->add_option("--template", retr_template, "clothes template image file");
  retr->add_option("--manifest", retr_manifest, "gallery manifest path")->required();
  retr->add_option("--top", retr_top, "list length");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_flags);
    if (train->parsed()) return cmd_train(train_flags, train_manifest_override);
    if (grad->parsed()) return cmd_gradcheck(grad_flags);
    if (eval->parsed())
      return cmd_eval(eval_flags, eval_checkpoint, eval_manifest, eval_mode, eval_filter,
                      eval_sweep, eval_self, eval_csv);
    if (retr->parsed())
      return cmd_retrieve(retr_flags, retr_checkpoint, retr_query, retr_instruction, retr_template,
                          retr_manifest, retr_top);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: contract: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
