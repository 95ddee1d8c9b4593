// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/nn.hpp"

#include <cmath>

#include "ctcadapt/error.hpp"

namespace ctcadapt {

namespace {

double init_scale(int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

// ---- Linear ----------------------------------------------------------------

Linear Linear::init(int64_t in, int64_t out, Rng& rng) {
  double s = init_scale(in);
  Linear l;
  l.w = Tensor::uniform({in, out}, -s, s, rng, true);
  l.b = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, w), b); }

void Linear::collect(const std::string& prefix, ParamMap& out) const {
  out.emplace(prefix + ".w", w);
  out.emplace(prefix + ".b", b);
}

// ---- LayerNorm ----------------------------------------------------------------

LayerNorm LayerNorm::init(int64_t h) {
  LayerNorm ln;
  ln.gamma = Tensor::full({h}, 1.0, true);
  ln.beta = Tensor::zeros({h}, true);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != gamma.dim(0))
    throw ShapeError("layer_norm: expected n x " + std::to_string(gamma.dim(0)) +
                     ", got " + shape_str(x.shape()));
  Tensor mu = mean(x, 1);                    // n x 1
  Tensor xc = sub(x, mu);
  Tensor var = mean(mul(xc, xc), 1);         // n x 1
  Tensor inv = exp(mul(log(add(var, eps)), -0.5));
  return add(mul(mul(xc, inv), gamma), beta);
}

void LayerNorm::collect(const std::string& prefix, ParamMap& out) const {
  out.emplace(prefix + ".gamma", gamma);
  out.emplace(prefix + ".beta", beta);
}

// ---- MultiHeadSelfAttention ------------------------------------------------------

MultiHeadSelfAttention MultiHeadSelfAttention::init(int64_t h, int heads, Rng& rng) {
  if (heads < 1 || h % heads != 0)
    throw ValueError("attention: head count " + std::to_string(heads) +
                     " must divide hidden dim " + std::to_string(h));
  double s = init_scale(h);
  MultiHeadSelfAttention a;
  a.wq = Tensor::uniform({h, h}, -s, s, rng, true);
  a.wk = Tensor::uniform({h, h}, -s, s, rng, true);
  a.wv = Tensor::uniform({h, h}, -s, s, rng, true);
  a.wo = Tensor::uniform({h, h}, -s, s, rng, true);
  a.heads = heads;
  return a;
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) const {
  int64_t h = wq.dim(0);
  if (x.rank() != 2 || x.dim(1) != h)
    throw ShapeError("attention: expected t x " + std::to_string(h) + ", got " +
                     shape_str(x.shape()));
  int64_t dh = h / heads;
  Tensor q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int i = 0; i < heads; ++i) {
    Tensor qh = slice(q, 1, i * dh, dh);
    Tensor kh = slice(k, 1, i * dh, dh);
    Tensor vh = slice(v, 1, i * dh, dh);
    Tensor scores = mul(matmul(qh, transpose(kh)), scale);  // t x t
    ctx.push_back(matmul(softmax(scores), vh));             // t x dh
  }
  return matmul(concat(ctx, 1), wo);
}

void MultiHeadSelfAttention::collect(const std::string& prefix, ParamMap& out) const {
  out.emplace(prefix + ".wq", wq);
  out.emplace(prefix + ".wk", wk);
  out.emplace(prefix + ".wv", wv);
  out.emplace(prefix + ".wo", wo);
}

// ---- EncoderBlock -------------------------------------------------------------------

EncoderBlock EncoderBlock::init(int64_t h, int heads, int64_t ffn, Rng& rng) {
  EncoderBlock b;
  b.ln1 = LayerNorm::init(h);
  b.attn = MultiHeadSelfAttention::init(h, heads, rng);
  b.ln2 = LayerNorm::init(h);
  b.ffn1 = Linear::init(h, ffn, rng);
  b.ffn2 = Linear::init(ffn, h, rng);
  return b;
}

Tensor EncoderBlock::forward(const Tensor& x) const {
  Tensor a = add(x, attn.forward(ln1.forward(x)));
  return add(a, ffn2.forward(tanh(ffn1.forward(ln2.forward(a)))));
}

void EncoderBlock::collect(const std::string& prefix, ParamMap& out) const {
  ln1.collect(prefix + ".ln1", out);
  attn.collect(prefix + ".attn", out);
  ln2.collect(prefix + ".ln2", out);
  ffn1.collect(prefix + ".ffn1", out);
  ffn2.collect(prefix + ".ffn2", out);
}

// ---- Encoder -------------------------------------------------------------------------

Tensor positional_encoding(int64_t t, int64_t h) {
  Tensor pe = Tensor::zeros({t, h});
  auto v = pe.values_mut();
  for (int64_t pos = 0; pos < t; ++pos)
    for (int64_t j = 0; j < h; ++j) {
      double rate = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(h));
      double angle = static_cast<double>(pos) / rate;
      v[static_cast<size_t>(pos * h + j)] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

Encoder Encoder::init(const EncoderConfig& cfg, Rng& rng) {
  Encoder e;
  e.cfg = cfg;
  e.in_proj = Linear::init(cfg.input_dim, cfg.hidden_dim, rng);
  e.blocks.reserve(static_cast<size_t>(cfg.blocks));
  for (int i = 0; i < cfg.blocks; ++i)
    e.blocks.push_back(EncoderBlock::init(cfg.hidden_dim, cfg.heads, cfg.ffn_dim, rng));
  e.ln_f = LayerNorm::init(cfg.hidden_dim);
  e.out_proj = Linear::init(cfg.hidden_dim, cfg.vocab_size, rng);
  return e;
}

EncoderOut Encoder::encode(const Tensor& frames) const {
  if (frames.rank() != 2 || frames.dim(1) != cfg.input_dim)
    throw ShapeError("encoder: expected t x " + std::to_string(cfg.input_dim) +
                     " input, got " + shape_str(frames.shape()));
  if (frames.dim(0) < 1) throw ShapeError("encoder: empty input");
  EncoderOut out;
  Tensor x = add(in_proj.forward(frames), positional_encoding(frames.dim(0), cfg.hidden_dim));
  out.layer_states.reserve(blocks.size());
  for (const EncoderBlock& b : blocks) {
    x = b.forward(x);
    out.layer_states.push_back(x);
  }
  out.final_state = ln_f.forward(x);
  return out;
}

Tensor Encoder::project_logits(const Tensor& final_state, const Tensor& context) const {
  return out_proj.forward(add(final_state, context));
}

EncoderOut Encoder::forward(const Tensor& frames) const {
  EncoderOut out = encode(frames);
  Tensor zero_ctx = Tensor::zeros({frames.dim(0), cfg.hidden_dim});
  out.logits = project_logits(out.final_state, zero_ctx);
  return out;
}

void Encoder::collect(const std::string& prefix, ParamMap& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  ln_f.collect(prefix + ".ln_f", out);
  out_proj.collect(prefix + ".out_proj", out);
}

// ---- LstmCell --------------------------------------------------------------------------

LstmCell LstmCell::init(int64_t e, int64_t h, Rng& rng) {
  double sx = init_scale(e), sh = init_scale(h);
  LstmCell c;
  auto gate = [&](Tensor& wx, Tensor& wh, Tensor& b) {
    wx = Tensor::uniform({e, h}, -sx, sx, rng, true);
    wh = Tensor::uniform({h, h}, -sh, sh, rng, true);
    b = Tensor::zeros({h}, true);
  };
  gate(c.wxi, c.whi, c.bi);
  gate(c.wxf, c.whf, c.bf);
  gate(c.wxo, c.who, c.bo);
  gate(c.wxg, c.whg, c.bg);
  return c;
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h,
                                         const Tensor& c) const {
  auto pre = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
    return add(add(matmul(x, wx), matmul(h, wh)), b);
  };
  Tensor i = sigmoid(pre(wxi, whi, bi));
  Tensor f = sigmoid(pre(wxf, whf, bf));
  Tensor o = sigmoid(pre(wxo, who, bo));
  Tensor g = tanh(pre(wxg, whg, bg));
  Tensor c2 = add(mul(f, c), mul(i, g));
  Tensor h2 = mul(o, tanh(c2));
  return {h2, c2};
}

void LstmCell::collect(const std::string& prefix, ParamMap& out) const {
  out.emplace(prefix + ".wxi", wxi);
  out.emplace(prefix + ".whi", whi);
  out.emplace(prefix + ".bi", bi);
  out.emplace(prefix + ".wxf", wxf);
  out.emplace(prefix + ".whf", whf);
  out.emplace(prefix + ".bf", bf);
  out.emplace(prefix + ".wxo", wxo);
  out.emplace(prefix + ".who", who);
  out.emplace(prefix + ".bo", bo);
  out.emplace(prefix + ".wxg", wxg);
  out.emplace(prefix + ".whg", whg);
  out.emplace(prefix + ".bg", bg);
}

// ---- SubwordEmbedding ---------------------------------------------------------------------

SubwordEmbedding SubwordEmbedding::init(int64_t v, int64_t e, Rng& rng) {
  double s = init_scale(e);
  SubwordEmbedding emb;
  emb.table = Tensor::uniform({v, e}, -s, s, rng, true);
  return emb;
}

Tensor SubwordEmbedding::forward(const std::vector<int>& ids) const {
  return embedding_gather(table, ids);
}

void SubwordEmbedding::collect(const std::string& prefix, ParamMap& out) const {
  out.emplace(prefix + ".table", table);
}

Tensor encode_sequence(const SubwordEmbedding& emb, const LstmCell& cell,
                       const std::vector<int>& tokens) {
  if (tokens.empty()) throw ValueError("encode_sequence: empty token sequence");
  Tensor embs = emb.forward(tokens);  // n x e
  int64_t hd = cell.hidden_dim();
  Tensor h = Tensor::zeros({1, hd});
  Tensor c = Tensor::zeros({1, hd});
  for (int64_t t = 0; t < embs.dim(0); ++t) {
    auto [h2, c2] = cell.step(slice(embs, 0, t, 1), h, c);
    h = h2;
    c = c2;
  }
  return h;
}

}  // namespace ctcadapt
