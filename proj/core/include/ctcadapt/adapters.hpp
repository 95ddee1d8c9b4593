// SPDX-License-Identifier: Apache-2.0
// Contextual biasing adapters: a catalog of entity words is LSTM-encoded into
// keys/values (plus a learned no-bias token whose value row is zero), encoder
// block states are blended by a softmax-weighted layer combination into
// queries, and the resulting attention context is added to the final encoder
// state before the output projection. Includes the attention-supervision CE
// loss and the combined multitask objective.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcadapt/nn.hpp"
#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

struct Catalog {
  std::vector<std::vector<int>> entries;  // subword-id sequences, each non-empty
  int64_t size() const { return static_cast<int64_t>(entries.size()); }
};

struct AdapterConfig {
  int64_t vocab_size = 28;  // shared subword inventory (blank included)
  int64_t embed_dim = 16;
  int64_t hidden_dim = 16;  // must match the encoder's h
  int blocks = 2;           // number of encoder block states to combine
};

struct Adapters {
  AdapterConfig cfg;
  SubwordEmbedding embed;
  LstmCell lstm;
  Tensor nb_key;      // 1 x h, learned key for the no-bias column
  Tensor lambda;      // blocks, layer-combination logits (softmaxed before use)
  Tensor wq, wk, wv;  // h x h projections

  static Adapters init(const AdapterConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct CatalogEncoding {
  Tensor keys;    // (k+1) x h, row 0 = no-bias key
  Tensor values;  // (k+1) x h, row 0 = zero vector
};

struct AttentionMap {
  Tensor weights;  // t x (k+1), column 0 = no-bias weight, rows sum to 1
  Tensor context;  // t x h
};

// Encodes every catalog entry through the adapter's embedding + LSTM and the
// key/value projections. Throws ValueError on empty entries or bad ids.
CatalogEncoding encode_catalog(const Adapters& params, const Catalog& catalog);

// Softmax(lambda)-weighted combination of block states -> query projection ->
// scaled dot-product attention over catalog keys -> context vectors.
AttentionMap biasing_attention(const Adapters& params,
                               const std::vector<Tensor>& layer_states,
                               const CatalogEncoding& enc);

// logits = output_projection(final_state + context); zero context reproduces
// the unbiased encoder logits exactly.
Tensor apply_bias(const Encoder& encoder, const Tensor& final_state, const Tensor& context);

// Attention-supervision loss: -sum_t (1 - w_nb[t]) * log softmax(word_cols[t])[k'].
// The softmax runs over the k word columns only. Requires k >= 1 and a valid
// correct_index; rows of `map.weights` must already be normalized.
Tensor ce_supervision_loss(const AttentionMap& map, int correct_index);

// ctc_loss(log_probs, y) + alpha * ce_supervision_loss(map, correct_index).
// alpha = 0 short-circuits to the pure CTC loss.
Tensor combined_loss(const Tensor& log_probs, const std::vector<int>& y,
                     const AttentionMap& map, int correct_index, double alpha);

// Full biased pass: encode frames, encode catalog, attend, project.
struct BiasedForward {
  EncoderOut enc;      // layer states + final state (logits left empty)
  AttentionMap attn;
  Tensor logits;       // t x v, bias applied
};
BiasedForward biased_forward(const Encoder& encoder, const Adapters& params,
                             const Tensor& frames, const Catalog& catalog);

}  // namespace ctcadapt
