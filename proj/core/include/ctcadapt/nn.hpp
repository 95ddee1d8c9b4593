// SPDX-License-Identifier: Apache-2.0
// Neural building blocks: linear / layer-norm / multi-head self-attention
// encoder stack, LSTM cell, and subword embeddings. All parameters are
// registered by name through collect() so optimizers and checkpoints can
// address them uniformly.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctcadapt/rng.hpp"
#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

// Named live handles to a model partition's parameters. Insertion into the
// map shares the underlying storage, so writing through the map mutates the
// model and vice versa.
using ParamMap = std::map<std::string, Tensor>;

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // out
  static Linear init(int64_t in, int64_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;  // x: n x in -> n x out
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct LayerNorm {
  Tensor gamma;  // h
  Tensor beta;   // h
  double eps = 1e-5;
  static LayerNorm init(int64_t h);
  Tensor forward(const Tensor& x) const;  // x: n x h, normalized per row
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct MultiHeadSelfAttention {
  Tensor wq, wk, wv, wo;  // each h x h
  int heads = 1;
  static MultiHeadSelfAttention init(int64_t h, int heads, Rng& rng);
  Tensor forward(const Tensor& x) const;  // x: t x h -> t x h
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct EncoderBlock {
  LayerNorm ln1;
  MultiHeadSelfAttention attn;
  LayerNorm ln2;
  Linear ffn1, ffn2;  // h -> f -> h, tanh in between
  static EncoderBlock init(int64_t h, int heads, int64_t ffn, Rng& rng);
  Tensor forward(const Tensor& x) const;  // pre-norm residual block, t x h
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct EncoderOut {
  std::vector<Tensor> layer_states;  // one t x h stream per block (post-residual)
  Tensor final_state;                // t x h, final layer-norm applied
  Tensor logits;                     // t x v
};

struct EncoderConfig {
  int64_t input_dim = 8;    // d
  int64_t hidden_dim = 16;  // h
  int64_t vocab_size = 28;  // v
  int blocks = 2;
  int heads = 2;
  int64_t ffn_dim = 32;
};

struct Encoder {
  EncoderConfig cfg;
  Linear in_proj;  // d -> h
  std::vector<EncoderBlock> blocks;
  LayerNorm ln_f;
  Linear out_proj;  // h -> v

  static Encoder init(const EncoderConfig& cfg, Rng& rng);

  // Runs the stack up to (and including) the final layer norm.
  // layer_states and final_state of the result are filled; logits is empty.
  EncoderOut encode(const Tensor& frames) const;  // frames: t x d

  // Per-frame logits from the final state plus an additive context
  // (t x h, may be a zero tensor for the unbiased path).
  Tensor project_logits(const Tensor& final_state, const Tensor& context) const;

  // encode + zero-context projection
  EncoderOut forward(const Tensor& frames) const;

  void collect(const std::string& prefix, ParamMap& out) const;
};

// Fixed absolute sinusoidal position signal, t x h, never requires grad.
Tensor positional_encoding(int64_t t, int64_t h);

struct LstmCell {
  // gate weights: wx* are e x h, wh* are h x h, b* are h
  Tensor wxi, whi, bi;
  Tensor wxf, whf, bf;
  Tensor wxo, who, bo;
  Tensor wxg, whg, bg;
  static LstmCell init(int64_t e, int64_t h, Rng& rng);
  // x: 1 x e, h/c: 1 x h -> (h', c')
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const;
  int64_t hidden_dim() const { return whi.dim(0); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct SubwordEmbedding {
  Tensor table;  // v x e
  static SubwordEmbedding init(int64_t v, int64_t e, Rng& rng);
  Tensor forward(const std::vector<int>& ids) const;  // n x e
  void collect(const std::string& prefix, ParamMap& out) const;
};

// Embed `tokens` and fold them through the LSTM left to right from a zero
// state; returns the final hidden state (1 x h). Throws ValueError on an
// empty sequence, and propagates out-of-vocabulary errors from the lookup.
Tensor encode_sequence(const SubwordEmbedding& emb, const LstmCell& cell,
                       const std::vector<int>& tokens);

}  // namespace ctcadapt
