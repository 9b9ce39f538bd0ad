#include "irk/gradcheck_suite.hpp"

#include <chrono>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "irk/gradcheck.hpp"
#include "irk/losses.hpp"
#include "irk/model.hpp"

namespace irk {

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_height = 16;
  cfg.image_width = 8;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.instr_blocks = 1;
  cfg.fusion_blocks = 2;
  cfg.vocab_size = 32;
  cfg.max_text_len = 16;
  cfg.instr_image_height = 8;
  cfg.instr_image_width = 8;
  cfg.instruction_encoder_frozen = false;
  return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values) v = rng.uniform(-scale, scale);
  return t;
}

Tensor<double> random_image(const ModelConfig& cfg, Rng& rng, bool instruction_size = false) {
  Shape s = instruction_size
                ? Shape{cfg.channels, cfg.instr_image_height, cfg.instr_image_width}
                : Shape{cfg.channels, cfg.image_height, cfg.image_width};
  Tensor<double> t(std::move(s));
  for (auto& v : t.values) v = rng.uniform(0, 1);
  return t;
}

struct Case {
  std::string name;
  ParamStore<double> params;
  std::function<Var<double>(Graph<double>&)> build;
};

// Init-scale weights (std 0.02) make attention nearly uniform, leaving some
// key-projection gradients at the 1e-8 denominator floor where central
// differences are noise-limited. The check runs at a well-conditioned random
// point instead: every projection re-drawn at macro scale, norm gains near 1,
// gates nonzero so the instruction branch carries signal.
void randomize_all(ParamStore<double>& ps, Rng& rng) {
  for (const auto& name : ps.names()) {
    auto& t = ps.at(name);
    if (name.find(".ln") != std::string::npos && name.rfind(".g") == name.size() - 2) {
      for (auto& v : t.values) v = 1.0 + rng.uniform(-0.3, 0.3);
    } else {
      for (auto& v : t.values) v = rng.uniform(-0.4, 0.4);
    }
  }
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(uint64_t seed) {
  Rng root(seed);
  auto cfg = tiny_config();
  std::vector<Case> cases;

  // --- loss cases on free feature parameters ---
  {
    Case c;
    c.name = "adaptive triplet loss";
    Rng rng = root.fork(1);
    c.params.create("f", random_tensor({6, 5}, rng, 1.0));
    std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    std::vector<std::vector<double>> ifeats(6, std::vector<double>{1, 0, 0});
    ifeats[1] = {0.6, 0.8, 0.0};
    ifeats[3] = {0.0, 1.0, 0.0};
    auto batch = mine_triplets(labels, ifeats, c.params.at("f").values, 5, 0.3, MiningMode::All);
    c.build = [batch](Graph<double>& g) { return adaptive_triplet_loss(g.param("f"), batch); };
    cases.push_back(std::move(c));
  }
  {
    Case c;
    c.name = "identity cross-entropy";
    Rng rng = root.fork(2);
    c.params.create("f", random_tensor({5, 6}, rng, 1.0));
    c.params.create("head.idf.w", random_tensor({6, 4}, rng, 0.3));
    c.params.create("head.idf.b", random_tensor({4}, rng, 0.1));
    std::vector<int> labels = {0, 3, 1, 2, 0};
    c.build = [labels](Graph<double>& g) {
      return identity_loss(g, "idf", g.param("f"), labels);
    };
    cases.push_back(std::move(c));
  }
  {
    Case c;
    c.name = "contrastive loss";
    Rng rng = root.fork(3);
    c.params.create("img", random_tensor({5, 6}, rng, 1.0));
    c.params.create("txt", random_tensor({5, 6}, rng, 1.0));
    std::vector<int> labels = {0, 0, 1, 2, 3};
    c.build = [labels](Graph<double>& g) {
      return contrastive_loss(g.param("img"), g.param("txt"), labels, 0.2);
    };
    cases.push_back(std::move(c));
  }
  {
    Case c;
    c.name = "match binary cross-entropy";
    Rng rng = root.fork(4);
    c.params.create("logits", random_tensor({6, 2}, rng, 1.5));
    std::vector<bool> positive = {true, false, true, true, false, false};
    c.build = [positive](Graph<double>& g) { return match_loss(g.param("logits"), positive); };
    cases.push_back(std::move(c));
  }

  // --- layer cases through the model stack ---
  auto with_model = [&](const std::string& name, uint64_t fork,
                        std::function<Var<double>(Graph<double>&, const ModelConfig&, Rng&)> body) {
    Case c;
    c.name = name;
    Rng rng = root.fork(fork);
    init_model_params(c.params, cfg, 3, rng);
    randomize_all(c.params, rng);
    Rng data_rng = root.fork(fork + 1000);
    auto shared = std::make_shared<Rng>(data_rng);
    c.build = [body, shared, this_cfg = cfg](Graph<double>& g) {
      Rng local = *shared;  // same data every evaluation
      return body(g, this_cfg, local);
    };
    cases.push_back(std::move(c));
  };

  with_model("patch encoder", 10, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto img = random_image(cfg2, rng);
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto seq = patchify(g, cfg2, img);
    return sum_all(gelu(matmul(seq.tokens, g.constant(probe))));
  });
  with_model("text instruction encoder", 12, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto ft = encode_text_instruction(g, cfg2, {"do not change clothes"});
    return sum_all(gelu(matmul(ft, g.constant(probe))));
  });
  with_model("image instruction encoder", 14, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto tpl = random_image(cfg2, rng, true);
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto ft = encode_image_instruction(g, cfg2, tpl);
    return sum_all(gelu(matmul(ft, g.constant(probe))));
  });
  with_model("editing layer", 16, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto img = random_image(cfg2, rng);
    auto ft = random_tensor({3, cfg2.dim}, rng, 1.0);
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto vft = g.constant(ft);
    auto out = editing_layer_forward(g, cfg2, 0, patchify(g, cfg2, img), &vft);
    return sum_all(gelu(matmul(out.tokens, g.constant(probe))));
  });
  with_model("editing transformer", 18, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto img = random_image(cfg2, rng);
    auto ft = random_tensor({2, cfg2.dim}, rng, 1.0);
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto vft = g.constant(ft);
    auto f = editing_transformer_forward(g, cfg2, patchify(g, cfg2, img), &vft);
    return sum_all(matmul(f, g.constant(probe)));
  });
  with_model("fusion module", 20, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto f = random_tensor({1, cfg2.dim}, rng, 1.0);
    auto ft = random_tensor({3, cfg2.dim}, rng, 1.0);
    auto probe = random_tensor({cfg2.dim, 1}, rng, 1.0);
    auto out = fusion_forward(g, cfg2, g.constant(f), g.constant(ft));
    return sum_all(matmul(out, g.constant(probe)));
  });
  with_model("match head", 22, [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
    auto f = random_tensor({1, cfg2.dim}, rng, 1.0);
    auto logits = match_head(g, g.constant(f));
    return match_loss(logits, std::vector<bool>{true});
  });

  // --- full assemblies through the whole network ---
  with_model("retrieval loss assembly", 24,
             [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
               const int b = 4;
               std::vector<int> labels = {0, 0, 1, 1};
               std::vector<std::vector<double>> pooled;
               std::optional<Var<double>> f_rows, fout_rows;
               for (int i = 0; i < b; ++i) {
                 auto img = random_image(cfg2, rng);
                 auto ft = encode_text_instruction(
                     g, cfg2, {i % 2 == 0 ? "do not change clothes" : "ignore clothes"});
                 auto f = editing_transformer_forward(g, cfg2, patchify(g, cfg2, img), &ft);
                 auto fo = fusion_forward(g, cfg2, f, ft);
                 f_rows = f_rows ? concat_rows(*f_rows, f) : f;
                 fout_rows = fout_rows ? concat_rows(*fout_rows, fo) : fo;
                 std::vector<double> p(size_t(cfg2.dim), 0.0);
                 for (int r = 0; r < ft.rows(); ++r)
                   for (int c = 0; c < cfg2.dim; ++c)
                     p[size_t(c)] += ft.val()[size_t(r) * cfg2.dim + c] / ft.rows();
                 pooled.push_back(std::move(p));
               }
               // triples with a spread of betas, indices fixed across evaluations
               TripletBatch tb;
               tb.margin = 0.3;
               tb.triples = {Triple{0, 1, 2, 1.0, 0.0}, Triple{2, 3, 0, 0.8, 0.0},
                             Triple{1, 0, 3, 0.5, 0.0}, Triple{3, 2, 1, 1.0, 0.0}};
               return total_loss_retrieval(g, *f_rows, *fout_rows, labels, tb);
             });
  with_model("text-to-image loss assembly", 26,
             [](Graph<double>& g, const ModelConfig& cfg2, Rng& rng) {
               const int b = 3;
               std::vector<int> labels = {0, 1, 2};
               std::optional<Var<double>> f_rows, text_rows, match_rows;
               std::vector<Var<double>> fts;
               const char* texts[3] = {"red coat", "blue coat and black trousers", "long hair"};
               for (int i = 0; i < b; ++i) {
                 auto img = random_image(cfg2, rng);
                 auto ft = encode_text_instruction(g, cfg2, {texts[i]});
                 fts.push_back(ft);
                 auto f = editing_transformer_forward(g, cfg2, patchify(g, cfg2, img), &ft);
                 f_rows = f_rows ? concat_rows(*f_rows, f) : f;
                 auto pooled = mean_rows(ft);
                 text_rows = text_rows ? concat_rows(*text_rows, pooled) : pooled;
               }
               std::vector<bool> positive;
               for (int i = 0; i < b; ++i) {
                 auto pos = match_head(g, fusion_forward(g, cfg2, slice_rows(*f_rows, i, 1), fts[size_t(i)]));
                 match_rows = match_rows ? concat_rows(*match_rows, pos) : pos;
                 positive.push_back(true);
               }
               auto neg = match_head(g, fusion_forward(g, cfg2, slice_rows(*f_rows, 1, 1), fts[0]));
               match_rows = concat_rows(*match_rows, neg);
               positive.push_back(false);
               return total_loss_t2i(*f_rows, *text_rows, *match_rows, labels, positive, 0.2);
             });

  std::vector<GradCheckEntry> out;
  for (auto& c : cases) {
    auto t0 = std::chrono::steady_clock::now();
    auto rep = finite_diff_check<double>(c.build, c.params, 1e-5);
    GradCheckEntry e;
    e.name = c.name;
    e.max_rel_err = rep.max_rel_err;
    e.checked = rep.checked;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(e));
  }
  return out;
}

bool gradcheck_passed(const std::vector<GradCheckEntry>& entries, double tol) {
  for (const auto& e : entries)
    if (!(e.max_rel_err <= tol)) return false;
  return !entries.empty();
}

std::string gradcheck_table(const std::vector<GradCheckEntry>& entries, double tol) {
  std::ostringstream os;
  os << std::left << std::setw(32) << "case" << std::setw(14) << "max_rel_err" << std::setw(10)
     << "params" << std::setw(10) << "seconds"
     << "status\n";
  for (const auto& e : entries) {
    os << std::left << std::setw(32) << e.name << std::setw(14) << std::scientific
       << std::setprecision(3) << e.max_rel_err << std::setw(10) << e.checked << std::setw(10)
       << std::fixed << std::setprecision(2) << e.seconds
       << (e.max_rel_err <= tol ? "pass" : "FAIL") << "\n";
  }
  return os.str();
}

}  // namespace irk
