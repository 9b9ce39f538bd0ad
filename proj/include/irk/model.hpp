#pragma once

#include <optional>

#include "irk/params.hpp"

namespace irk {

struct ModelConfig {
  int image_height = 64;
  int image_width = 32;
  int patch_size = 8;
  int channels = 3;
  int dim = 64;  // feature width C
  int heads = 4;
  int layers = 2;  // editing transformer depth L
  int instr_blocks = 2;
  int fusion_blocks = 2;
  int vocab_size = 512;
  int max_text_len = 64;
  int instr_image_height = 16;
  int instr_image_width = 16;
  bool instruction_encoder_frozen = true;

  void validate() const {
    if (image_height % patch_size != 0 || image_width % patch_size != 0)
      throw ConfigError("image dimensions must be divisible by patch size");
    if (instr_image_height % patch_size != 0 || instr_image_width % patch_size != 0)
      throw ConfigError("instruction image dimensions must be divisible by patch size");
    if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (layers < 1) throw ConfigError("at least one editing layer required");
    if (vocab_size < 2 || max_text_len < 1) throw ConfigError("bad tokenizer config");
  }

  int n_patches() const { return (image_height / patch_size) * (image_width / patch_size); }
  int n_instr_patches() const {
    return (instr_image_height / patch_size) * (instr_image_width / patch_size);
  }
  int head_dim() const { return dim / heads; }
};

enum class SeqKind { Query, Instruction };

template <typename T>
struct TokenSeq {
  Var<T> tokens;  // query: (N+1)xC with CLS at row 0; instruction: MxC
  SeqKind kind = SeqKind::Query;
};

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, split on whitespace/punctuation, FNV hash into
// vocab_size buckets. Deterministic by construction.
// ---------------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text);
std::vector<int> tokenize(const std::string& text, int vocab_size);
std::vector<int> tokenize(const std::vector<std::string>& sentences, int vocab_size);

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

// Truncated normal (std 0.02) for projections and embeddings, ones for norm
// gains, zeros for biases and gates. Creation order is fixed so checkpoints
// and the optimizer see a stable layout.
template <typename T>
void init_model_params(ParamStore<T>& ps, const ModelConfig& cfg, int num_identities, Rng& rng) {
  cfg.validate();
  const int c = cfg.dim;
  const int pd = cfg.channels * cfg.patch_size * cfg.patch_size;
  const double std_w = 0.02;

  auto w = [&](const std::string& name, Shape shape) {
    ps.create(name, Tensor<T>::trunc_normal(std::move(shape), rng, std_w));
  };
  auto zeros = [&](const std::string& name, Shape shape) { ps.create(name, std::move(shape)); };
  auto ones = [&](const std::string& name, Shape shape) {
    ps.create(name, Tensor<T>::full(std::move(shape), T(1)));
  };
  auto norm_pair = [&](const std::string& prefix) {
    ones(prefix + ".g", {c});
    zeros(prefix + ".b", {c});
  };
  // keys carry no bias: softmax cancels a uniform shift of the scores, so a
  // key bias is an inert parameter
  auto attn_proj = [&](const std::string& prefix, const char* which) {
    w(prefix + ".w" + which, {c, c});
    if (which[0] != 'k') zeros(prefix + ".b" + which, {c});
  };
  auto mlp = [&](const std::string& prefix) {
    w(prefix + ".w1", {c, 4 * c});
    zeros(prefix + ".b1", {4 * c});
    w(prefix + ".w2", {4 * c, c});
    zeros(prefix + ".b2", {c});
  };

  // query image encoder
  w("enc.patch.w", {pd, c});
  zeros("enc.patch.b", {c});
  w("enc.pos", {cfg.n_patches(), c});
  w("enc.cls", {1, c});

  // instruction encoder: text embedding + image projection, shared blocks
  w("instr.embed", {cfg.vocab_size, c});
  w("instr.pos", {cfg.max_text_len, c});
  w("instr.img.w", {pd, c});
  zeros("instr.img.b", {c});
  w("instr.img.pos", {cfg.n_instr_patches(), c});
  for (int b = 0; b < cfg.instr_blocks; ++b) {
    std::string p = "instr.blk" + std::to_string(b);
    norm_pair(p + ".ln1");
    attn_proj(p + ".attn", "q");
    attn_proj(p + ".attn", "k");
    attn_proj(p + ".attn", "v");
    attn_proj(p + ".attn", "o");
    norm_pair(p + ".ln2");
    mlp(p + ".mlp");
  }
  norm_pair("instr.lnf");

  // editing transformer: zero-init gated cross-attention layers
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "edit" + std::to_string(l);
    norm_pair(p + ".ln1");
    attn_proj(p + ".attn", "q");
    attn_proj(p + ".attn", "k");
    attn_proj(p + ".attn", "v");
    attn_proj(p + ".attn", "k2");  // instruction keys
    attn_proj(p + ".attn", "v2");  // instruction values
    zeros(p + ".attn.gate", {cfg.heads});
    attn_proj(p + ".attn", "o");
    norm_pair(p + ".ln2");
    mlp(p + ".mlp");
  }

  // fusion: cross-attention blocks over instruction tokens, plus match head
  for (int b = 0; b < cfg.fusion_blocks; ++b) {
    std::string p = "fuse" + std::to_string(b);
    norm_pair(p + ".ln");
    attn_proj(p + ".attn", "q");
    attn_proj(p + ".attn", "k");
    attn_proj(p + ".attn", "v");
    attn_proj(p + ".attn", "o");
  }
  w("fuse.match.w", {c, 2});
  zeros("fuse.match.b", {2});

  // identity classifiers, one per supervised feature source
  if (num_identities > 0) {
    w("head.idf.w", {c, num_identities});
    zeros("head.idf.b", {num_identities});
    w("head.idfout.w", {c, num_identities});
    zeros("head.idfout.b", {num_identities});
  }
}

// ---------------------------------------------------------------------------
// Forward building blocks
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, const std::string& w, const std::string& b) {
  return add_bias(matmul(x, g.param(w)), g.param(b));
}

// Multi-head scaled dot-product attention of q_tokens against kv_tokens.
// Scaling is 1/sqrt(head_dim), the per-head convention.
template <typename T>
Var<T> mha(Graph<T>& g, const ModelConfig& cfg, const std::string& prefix, Var<T> q_tokens,
           Var<T> kv_tokens) {
  auto q = linear(g, q_tokens, prefix + ".wq", prefix + ".bq");
  auto k = matmul(kv_tokens, g.param(prefix + ".wk"));
  auto v = linear(g, kv_tokens, prefix + ".wv", prefix + ".bv");
  const int hd = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(double(hd));
  std::optional<Var<T>> out;
  for (int h = 0; h < cfg.heads; ++h) {
    auto qh = slice_cols(q, h * hd, hd);
    auto kh = slice_cols(k, h * hd, hd);
    auto vh = slice_cols(v, h * hd, hd);
    auto attn = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt));
    auto oh = matmul(attn, vh);
    out = out ? concat_cols(*out, oh) : oh;
  }
  return linear(g, *out, prefix + ".wo", prefix + ".bo");
}

// Pre-norm self-attention + MLP block (instruction encoder trunk).
template <typename T>
Var<T> encoder_block(Graph<T>& g, const ModelConfig& cfg, const std::string& prefix, Var<T> x) {
  auto h = layer_norm(x, g.param(prefix + ".ln1.g"), g.param(prefix + ".ln1.b"));
  x = add(x, mha(g, cfg, prefix + ".attn", h, h));
  auto u = layer_norm(x, g.param(prefix + ".ln2.g"), g.param(prefix + ".ln2.b"));
  auto m1 = gelu(linear(g, u, prefix + ".mlp.w1", prefix + ".mlp.b1"));
  return add(x, linear(g, m1, prefix + ".mlp.w2", prefix + ".mlp.b2"));
}

// Flattens non-overlapping patches of a CxHxW image into rows. Channel-major
// within each patch.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, int patch, int channels, int h, int w) {
  if (image.shape() != Shape{channels, h, w})
    throw ShapeError("image shape " + shape_str(image.shape()) + " does not match configured " +
                     shape_str({channels, h, w}));
  const int ph = h / patch, pw = w / patch;
  const int pd = channels * patch * patch;
  Tensor<T> out({ph * pw, pd});
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      T* row = out.values.data() + size_t(py * pw + px) * pd;
      int k = 0;
      for (int c = 0; c < channels; ++c)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            row[k++] = image.values[size_t(c) * h * w + size_t(py * patch + dy) * w +
                                    size_t(px * patch + dx)];
    }
  return out;
}

}  // namespace detail

// Query-image tokenization: project patches, add positions, prepend CLS.
template <typename T>
TokenSeq<T> patchify(Graph<T>& g, const ModelConfig& cfg, const Tensor<T>& image) {
  auto patches = detail::extract_patches(image, cfg.patch_size, cfg.channels, cfg.image_height,
                                         cfg.image_width);
  auto tok = detail::linear(g, g.constant(patches), "enc.patch.w", "enc.patch.b");
  tok = add(tok, g.param("enc.pos"));
  auto with_cls = concat_rows(g.param("enc.cls"), tok);
  return TokenSeq<T>{with_cls, SeqKind::Query};
}

// Instruction encoder trunk shared by text and image instructions.
template <typename T>
Var<T> instruction_trunk(Graph<T>& g, const ModelConfig& cfg, Var<T> tokens) {
  for (int b = 0; b < cfg.instr_blocks; ++b)
    tokens = detail::encoder_block(g, cfg, "instr.blk" + std::to_string(b), tokens);
  return layer_norm(tokens, g.param("instr.lnf.g"), g.param("instr.lnf.b"));
}

// Sentences -> F_T (MxC).
template <typename T>
Var<T> encode_text_instruction(Graph<T>& g, const ModelConfig& cfg,
                               const std::vector<std::string>& sentences) {
  auto ids = tokenize(sentences, cfg.vocab_size);
  if (ids.empty()) throw ContractError("encode_text_instruction: empty instruction");
  if (int(ids.size()) > cfg.max_text_len)
    throw ContractError("encode_text_instruction: instruction longer than max_text_len");
  auto emb = gather_rows(g.param("instr.embed"), ids);
  auto pos = slice_rows(g.param("instr.pos"), 0, int(ids.size()));
  return instruction_trunk(g, cfg, add(emb, pos));
}

// Template image -> F_T (MxC). Separate projection, shared trunk.
template <typename T>
Var<T> encode_image_instruction(Graph<T>& g, const ModelConfig& cfg, const Tensor<T>& image) {
  auto patches = detail::extract_patches(image, cfg.patch_size, cfg.channels,
                                         cfg.instr_image_height, cfg.instr_image_width);
  auto tok = detail::linear(g, g.constant(patches), "instr.img.w", "instr.img.b");
  tok = add(tok, g.param("instr.img.pos"));
  return instruction_trunk(g, cfg, tok);
}

// A neutral stand-in used where the protocol embeds images without any
// instruction (text-to-image gallery side): one all-zero instruction token.
template <typename T>
Var<T> neutral_instruction(Graph<T>& g, const ModelConfig& cfg) {
  return g.constant(Shape{1, cfg.dim}, std::vector<T>(size_t(cfg.dim), T(0)));
}

// One zero-init gated cross-attention layer. The attention map is
// [Softmax(S), g*Softmax(S')] over [V, V']: the instruction branch enters
// scaled by a per-head gate that starts at exactly zero, so an untrained
// layer reduces to plain self-attention. Pass f_t = nullptr for the
// gate-free baseline.
template <typename T>
TokenSeq<T> editing_layer_forward(Graph<T>& g, const ModelConfig& cfg, int layer, TokenSeq<T> f_prev,
                                  const Var<T>* f_t) {
  if (f_t && f_t->rows() < 1)
    throw ContractError("editing_layer_forward: instruction sequence is empty");
  const std::string p = "edit" + std::to_string(layer);
  const std::string ap = p + ".attn";
  auto x = f_prev.tokens;
  auto h = layer_norm(x, g.param(p + ".ln1.g"), g.param(p + ".ln1.b"));

  auto q = detail::linear(g, h, ap + ".wq", ap + ".bq");
  auto k = matmul(h, g.param(ap + ".wk"));
  auto v = detail::linear(g, h, ap + ".wv", ap + ".bv");
  std::optional<Var<T>> k2, v2;
  if (f_t) {
    k2 = matmul(*f_t, g.param(ap + ".wk2"));
    v2 = detail::linear(g, *f_t, ap + ".wv2", ap + ".bv2");
  }

  const int hd = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(double(hd));
  auto gates = g.param(ap + ".gate");
  std::optional<Var<T>> heads_out;
  for (int hi = 0; hi < cfg.heads; ++hi) {
    auto qh = slice_cols(q, hi * hd, hd);
    auto kh = slice_cols(k, hi * hd, hd);
    auto vh = slice_cols(v, hi * hd, hd);
    auto self_attn = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt));
    auto oh = matmul(self_attn, vh);
    if (f_t) {
      auto k2h = slice_cols(*k2, hi * hd, hd);
      auto v2h = slice_cols(*v2, hi * hd, hd);
      auto instr_attn = softmax_lastdim(scale(matmul(qh, transpose(k2h)), inv_sqrt));
      auto gated = scale_by(instr_attn, element(gates, hi));
      oh = add(oh, matmul(gated, v2h));
    }
    heads_out = heads_out ? concat_cols(*heads_out, oh) : oh;
  }
  auto attn_out = detail::linear(g, *heads_out, ap + ".wo", ap + ".bo");
  x = add(x, attn_out);

  auto u = layer_norm(x, g.param(p + ".ln2.g"), g.param(p + ".ln2.b"));
  auto m1 = gelu(detail::linear(g, u, p + ".mlp.w1", p + ".mlp.b1"));
  x = add(x, detail::linear(g, m1, p + ".mlp.w2", p + ".mlp.b2"));
  return TokenSeq<T>{x, f_prev.kind};
}

// Full editing transformer: L layers, return the final CLS row (1xC).
template <typename T>
Var<T> editing_transformer_forward(Graph<T>& g, const ModelConfig& cfg, TokenSeq<T> f0,
                                   const Var<T>* f_t) {
  TokenSeq<T> x = f0;
  for (int l = 0; l < cfg.layers; ++l) x = editing_layer_forward(g, cfg, l, x, f_t);
  return slice_rows(x.tokens, 0, 1);
}

// Fusion E_f: the feature vector cross-attends to instruction tokens over
// stacked attention blocks (residual only, so zeroed output projections give
// the identity map).
template <typename T>
Var<T> fusion_forward(Graph<T>& g, const ModelConfig& cfg, Var<T> f, Var<T> f_t) {
  if (f_t.rows() < 1) throw ContractError("fusion_forward: instruction sequence is empty");
  auto x = f;  // 1xC
  for (int b = 0; b < cfg.fusion_blocks; ++b) {
    const std::string p = "fuse" + std::to_string(b);
    auto h = layer_norm(x, g.param(p + ".ln.g"), g.param(p + ".ln.b"));
    x = add(x, detail::mha(g, cfg, p + ".attn", h, f_t));
  }
  return x;
}

// Pair-match head: C -> 2 logits, index 1 scores "positive pair".
template <typename T>
Var<T> match_head(Graph<T>& g, Var<T> f_out) {
  return detail::linear(g, f_out, "fuse.match.w", "fuse.match.b");
}

// Identity classifier logits for one feature source ("idf" or "idfout").
template <typename T>
Var<T> identity_logits(Graph<T>& g, const std::string& head, Var<T> features) {
  return detail::linear(g, features, "head." + head + ".w", "head." + head + ".b");
}

}  // namespace irk
