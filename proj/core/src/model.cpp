#include "atd/model.hpp"

#include <cmath>

#include "atd/errors.hpp"
#include "atd/ops.hpp"

namespace atd {

namespace {

void validate_config(const ModelConfig& c) {
  if (c.dim < 1 || c.blocks < 1 || c.layers_per_block < 1 || c.dict_size < 1 || c.inner_dim < 1 ||
      c.group_size < 1 || c.window < 1 || c.heads < 1) {
    throw ConfigError("model config: all counts must be at least 1");
  }
  if (c.dim % c.heads != 0) {
    throw ConfigError("model config: dim " + std::to_string(c.dim) + " not divisible by heads " +
                      std::to_string(c.heads));
  }
  if (c.scale < 2 || c.scale > 4) {
    throw ConfigError("model config: scale must be 2, 3, or 4, got " + std::to_string(c.scale));
  }
  if (static_cast<int>(std::lround(c.ffn_ratio * c.dim)) < 1) {
    throw ConfigError("model config: ffn_ratio too small");
  }
}

int ffn_hidden(const ModelConfig& c) { return static_cast<int>(std::lround(c.ffn_ratio * c.dim)); }

Tensor init_trunc_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(0.02);
  t.set_requires_grad(true);
  return t;
}

Tensor init_const(Shape shape, double v) {
  Tensor t(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

Tensor ffn_forward(const Tensor& x, const TransformerLayerParams& p) {
  Tensor h = gelu(add_bias(matmul(x, p.ffn_w1), p.ffn_b1));
  return add_bias(matmul(h, p.ffn_w2), p.ffn_b2);
}

}  // namespace

ModelConfig preset(const std::string& name, int scale) {
  ModelConfig c;
  c.scale = scale;
  if (name == "atd") {
    c.dim = 210;
    c.blocks = 6;
    c.layers_per_block = 6;
    c.dict_size = 128;
    c.inner_dim = 20;
    c.group_size = 128;
    c.window = 16;
    c.heads = 6;
  } else if (name == "atd_light") {
    c.dim = 48;
    c.blocks = 4;
    c.layers_per_block = 6;
    c.dict_size = 64;
    c.inner_dim = 8;
    c.group_size = 128;
    c.window = 8;
    c.heads = 4;
  } else if (name == "atd_tiny") {
    c.dim = 24;
    c.blocks = 1;
    c.layers_per_block = 2;
    c.dict_size = 8;
    c.inner_dim = 4;
    c.group_size = 16;
    c.window = 8;
    c.heads = 2;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected atd, atd_light, or atd_tiny)");
  }
  c.ffn_ratio = 1.0;
  validate_config(c);
  return c;
}

LayerResult transformer_layer(const Tensor& x, const TokenDictionary& dict,
                              const TransformerLayerParams& params, const AdrParams& adr,
                              int group_size, int H, int W, Mode mode, uint64_t seed,
                              std::vector<int>* capture_labels) {
  if (x.ndim() != 2 || static_cast<size_t>(x.dim(0)) != static_cast<size_t>(H) * W) {
    throw ContractError("transformer_layer: token count does not match H*W");
  }
  Tensor h = layer_norm(x, params.norm1_g, params.norm1_b);
  TdcaResult td = tdca(h, dict.tokens, params.tdca);
  if (capture_labels != nullptr) *capture_labels = categorize(td.attn);
  Tensor a = ac_msa(h, td.attn, params.acmsa, group_size, mode, seed);
  Tensor wm = window_msa(h, params.wmsa, H, W);
  Tensor x1 = add(add(add(x, td.out), a), wm);
  Tensor out = add(x1, ffn_forward(layer_norm(x1, params.norm2_g, params.norm2_b), params));
  TokenDictionary next = refine(dict, td.attn, out, adr);
  return LayerResult{out, next};
}

Tensor atd_block(const Tensor& x, const AtdBlockParams& params, int group_size, int H, int W,
                 Mode mode, uint64_t seed, CategoryCapture* capture, int block_index) {
  Tensor cur = x;
  TokenDictionary dict = params.dict;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    std::vector<int>* want_labels = nullptr;
    if (capture != nullptr && capture->block == block_index &&
        capture->layer == static_cast<int>(l)) {
      want_labels = &capture->labels;
      capture->captured = true;
    }
    LayerResult r = transformer_layer(cur, dict, params.layers[l], params.adr, group_size, H, W,
                                      mode, mix_seed(seed, l), want_labels);
    cur = r.out;
    dict = r.dict;
  }
  Tensor conv_out = conv2d(tokens_to_chw(cur, H, W), params.conv_w, params.conv_b);
  return add(x, chw_to_tokens(conv_out));
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  validate_config(cfg);
  Model m;
  m.cfg_ = cfg;
  Rng rng(seed);
  const int d = cfg.dim;
  const int hidden = ffn_hidden(cfg);

  auto reg = [&m](const std::string& name, const Tensor& t) { m.registry_.emplace_back(name, t); };

  m.shallow_w = init_trunc_normal(Shape{d, 3, 3, 3}, rng);
  m.shallow_b = init_const(Shape{d}, 0.0);
  reg("shallow.w", m.shallow_w);
  reg("shallow.b", m.shallow_b);

  for (int b = 0; b < cfg.blocks; ++b) {
    AtdBlockParams blk;
    const std::string bp = "blocks." + std::to_string(b) + ".";
    for (int l = 0; l < cfg.layers_per_block; ++l) {
      TransformerLayerParams lp;
      const std::string pp = bp + "layers." + std::to_string(l) + ".";
      lp.norm1_g = init_const(Shape{d}, 1.0);
      lp.norm1_b = init_const(Shape{d}, 0.0);
      lp.norm2_g = init_const(Shape{d}, 1.0);
      lp.norm2_b = init_const(Shape{d}, 0.0);
      // Shift alternates 0, w/2 on consecutive layers.
      const int shift = (l % 2 == 0) ? 0 : cfg.window / 2;
      lp.wmsa = WindowAttentionParams::init(d, cfg.heads, cfg.window, shift, rng);
      lp.wmsa.use_rel_pos_bias = cfg.use_rel_pos_bias;
      lp.tdca = TdcaParams::init(d, cfg.inner_dim, rng);
      lp.acmsa = AcMsaParams::init(d, cfg.heads, rng);
      lp.ffn_w1 = init_trunc_normal(Shape{d, hidden}, rng);
      lp.ffn_b1 = init_const(Shape{hidden}, 0.0);
      lp.ffn_w2 = init_trunc_normal(Shape{hidden, d}, rng);
      lp.ffn_b2 = init_const(Shape{d}, 0.0);

      reg(pp + "norm1.g", lp.norm1_g);
      reg(pp + "norm1.b", lp.norm1_b);
      reg(pp + "norm2.g", lp.norm2_g);
      reg(pp + "norm2.b", lp.norm2_b);
      reg(pp + "wmsa.w_q", lp.wmsa.w_q);
      reg(pp + "wmsa.b_q", lp.wmsa.b_q);
      reg(pp + "wmsa.w_k", lp.wmsa.w_k);
      reg(pp + "wmsa.b_k", lp.wmsa.b_k);
      reg(pp + "wmsa.w_v", lp.wmsa.w_v);
      reg(pp + "wmsa.b_v", lp.wmsa.b_v);
      reg(pp + "wmsa.w_o", lp.wmsa.w_o);
      reg(pp + "wmsa.b_o", lp.wmsa.b_o);
      reg(pp + "wmsa.rel_pos", lp.wmsa.rel_pos_bias);
      reg(pp + "tdca.w_q", lp.tdca.w_q);
      reg(pp + "tdca.w_k", lp.tdca.w_k);
      reg(pp + "tdca.w_v", lp.tdca.w_v);
      reg(pp + "tdca.tau", lp.tdca.tau);
      reg(pp + "acmsa.w_q", lp.acmsa.w_q);
      reg(pp + "acmsa.b_q", lp.acmsa.b_q);
      reg(pp + "acmsa.w_k", lp.acmsa.w_k);
      reg(pp + "acmsa.b_k", lp.acmsa.b_k);
      reg(pp + "acmsa.w_v", lp.acmsa.w_v);
      reg(pp + "acmsa.b_v", lp.acmsa.b_v);
      reg(pp + "ffn.w1", lp.ffn_w1);
      reg(pp + "ffn.b1", lp.ffn_b1);
      reg(pp + "ffn.w2", lp.ffn_w2);
      reg(pp + "ffn.b2", lp.ffn_b2);
      blk.layers.push_back(std::move(lp));
    }
    blk.dict = init_dictionary(cfg.dict_size, d, rng.next_u64());
    blk.adr = AdrParams::init();
    blk.conv_w = init_trunc_normal(Shape{d, d, 3, 3}, rng);
    blk.conv_b = init_const(Shape{d}, 0.0);
    reg(bp + "dict", blk.dict.tokens);
    reg(bp + "adr.sigma_raw", blk.adr.sigma_raw);
    reg(bp + "adr.norm_gamma", blk.adr.norm_gamma);
    reg(bp + "adr.norm_beta", blk.adr.norm_beta);
    reg(bp + "conv.w", blk.conv_w);
    reg(bp + "conv.b", blk.conv_b);
    m.blocks_.push_back(std::move(blk));
  }

  const int out_ch = 3 * cfg.scale * cfg.scale;
  m.tail_w = init_trunc_normal(Shape{out_ch, d, 3, 3}, rng);
  m.tail_b = init_const(Shape{out_ch}, 0.0);
  reg("tail.w", m.tail_w);
  reg("tail.b", m.tail_b);
  return m;
}

Tensor Model::forward(const Tensor& img_lr, Mode mode, uint64_t seed,
                      CategoryCapture* capture) const {
  if (img_lr.ndim() != 3 || img_lr.dim(0) != 3) {
    throw ContractError("Model::forward: input must be [3 x H x W], got " +
                        shape_str(img_lr.shape()));
  }
  const int H = img_lr.dim(1);
  const int W = img_lr.dim(2);
  if (capture != nullptr) {
    if (capture->block < 0 || capture->block >= cfg_.blocks || capture->layer < 0 ||
        capture->layer >= cfg_.layers_per_block) {
      throw ContractError("Model::forward: capture indices out of range");
    }
  }

  Tensor f0 = conv2d(img_lr, shallow_w, shallow_b);
  Tensor x = chw_to_tokens(f0);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    x = atd_block(x, blocks_[b], cfg_.group_size, H, W, mode, mix_seed(seed, b), capture,
                  static_cast<int>(b));
  }
  Tensor f = tokens_to_chw(x, H, W);
  if (cfg_.global_residual) f = add(f, f0);
  Tensor t = conv2d(f, tail_w, tail_b);
  return pixel_shuffle(t, cfg_.scale);
}

size_t count_params(const std::vector<std::pair<std::string, Tensor>>& registry) {
  size_t n = 0;
  for (const auto& [name, t] : registry) n += t.numel();
  return n;
}

size_t count_params(const Model& model) { return count_params(model.parameters()); }

void clamp_temperatures(Model& model) {
  for (auto& blk : model.blocks())
    for (auto& layer : blk.layers) clamp_tau(layer.tdca);
}

}  // namespace atd
