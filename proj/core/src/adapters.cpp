// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/adapters.hpp"

#include <cmath>

#include "ctcadapt/ctc.hpp"
#include "ctcadapt/error.hpp"

namespace ctcadapt {

Adapters Adapters::init(const AdapterConfig& cfg, Rng& rng) {
  Adapters a;
  a.cfg = cfg;
  a.embed = SubwordEmbedding::init(cfg.vocab_size, cfg.embed_dim, rng);
  a.lstm = LstmCell::init(cfg.embed_dim, cfg.hidden_dim, rng);
  double s = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  a.nb_key = Tensor::uniform({1, cfg.hidden_dim}, -s, s, rng, true);
  a.lambda = Tensor::zeros({cfg.blocks}, true);  // softmax(0) = uniform blend
  a.wq = Tensor::uniform({cfg.hidden_dim, cfg.hidden_dim}, -s, s, rng, true);
  a.wk = Tensor::uniform({cfg.hidden_dim, cfg.hidden_dim}, -s, s, rng, true);
  a.wv = Tensor::uniform({cfg.hidden_dim, cfg.hidden_dim}, -s, s, rng, true);
  return a;
}

void Adapters::collect(const std::string& prefix, ParamMap& out) const {
  embed.collect(prefix + ".embed", out);
  lstm.collect(prefix + ".lstm", out);
  out.emplace(prefix + ".nb_key", nb_key);
  out.emplace(prefix + ".lambda", lambda);
  out.emplace(prefix + ".wq", wq);
  out.emplace(prefix + ".wk", wk);
  out.emplace(prefix + ".wv", wv);
}

CatalogEncoding encode_catalog(const Adapters& params, const Catalog& catalog) {
  for (const auto& entry : catalog.entries)
    if (entry.empty()) throw ValueError("encode_catalog: empty catalog entry");
  int64_t h = params.cfg.hidden_dim;
  Tensor nb_value = Tensor::zeros({1, h});  // no-bias contributes nothing
  if (catalog.size() == 0) return {params.nb_key, nb_value};

  std::vector<Tensor> states;
  states.reserve(catalog.entries.size());
  for (const auto& entry : catalog.entries)
    states.push_back(encode_sequence(params.embed, params.lstm, entry));
  Tensor raw = concat(states, 0);  // k x h
  CatalogEncoding enc;
  enc.keys = concat({params.nb_key, matmul(raw, params.wk)}, 0);
  enc.values = concat({nb_value, matmul(raw, params.wv)}, 0);
  return enc;
}

AttentionMap biasing_attention(const Adapters& params,
                               const std::vector<Tensor>& layer_states,
                               const CatalogEncoding& enc) {
  int64_t h = params.cfg.hidden_dim;
  if (static_cast<int64_t>(layer_states.size()) != params.lambda.dim(0))
    throw ShapeError("biasing_attention: " + std::to_string(layer_states.size()) +
                     " block states for " + std::to_string(params.lambda.dim(0)) +
                     " combination weights");
  if (layer_states.empty()) throw ShapeError("biasing_attention: no block states");
  int64_t t = layer_states[0].dim(0);
  for (const Tensor& s : layer_states)
    if (s.rank() != 2 || s.dim(0) != t || s.dim(1) != h)
      throw ShapeError("biasing_attention: block state shape " + shape_str(s.shape()) +
                       " does not match t x h");
  if (enc.keys.rank() != 2 || enc.keys.dim(1) != h || enc.keys.shape() != enc.values.shape())
    throw ShapeError("biasing_attention: bad catalog encoding shapes");

  Tensor lw = softmax(params.lambda);  // blocks
  Tensor combined = mul(layer_states[0], slice(lw, 0, 0, 1));
  for (size_t b = 1; b < layer_states.size(); ++b)
    combined = add(combined, mul(layer_states[b], slice(lw, 0, static_cast<int64_t>(b), 1)));

  Tensor query = matmul(combined, params.wq);  // t x h
  double scale = 1.0 / std::sqrt(static_cast<double>(h));
  Tensor scores = mul(matmul(query, transpose(enc.keys)), scale);  // t x (k+1)
  AttentionMap map;
  map.weights = softmax(scores);
  map.context = matmul(map.weights, enc.values);
  return map;
}

Tensor apply_bias(const Encoder& encoder, const Tensor& final_state, const Tensor& context) {
  return encoder.project_logits(final_state, context);
}

Tensor ce_supervision_loss(const AttentionMap& map, int correct_index) {
  if (map.weights.rank() != 2)
    throw ShapeError("ce_supervision_loss: weights must be t x (k+1)");
  int64_t t = map.weights.dim(0);
  int64_t k = map.weights.dim(1) - 1;
  if (k < 1) throw ValueError("ce_supervision_loss: catalog has no words to supervise");
  if (correct_index < 0 || correct_index >= k)
    throw ValueError("ce_supervision_loss: correct index " + std::to_string(correct_index) +
                     " outside [0," + std::to_string(k) + ")");
  for (int64_t r = 0; r < t; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j <= k; ++j) {
      double w = map.weights.values()[static_cast<size_t>(r * (k + 1) + j)];
      if (w < -1e-12 || w > 1.0 + 1e-12)
        throw ValueError("ce_supervision_loss: weight outside [0,1]");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ValueError("ce_supervision_loss: attention row " + std::to_string(r) +
                       " sums to " + std::to_string(s));
  }

  Tensor wnb = slice(map.weights, 1, 0, 1);        // t x 1
  Tensor words = slice(map.weights, 1, 1, k);      // t x k
  Tensor probs = softmax(words);                   // softmax over word columns only
  Tensor pick = Tensor::zeros({k, 1});
  pick.values_mut()[static_cast<size_t>(correct_index)] = 1.0;
  Tensor p_correct = matmul(probs, pick);          // t x 1
  Tensor coeff = sub(Tensor::full({t, 1}, 1.0), wnb);
  return mul(sum(mul(coeff, log(p_correct))), -1.0);
}

Tensor combined_loss(const Tensor& log_probs, const std::vector<int>& y,
                     const AttentionMap& map, int correct_index, double alpha) {
  if (alpha < 0.0) throw ValueError("combined_loss: alpha must be >= 0");
  Tensor base = ctc_loss(log_probs, y);
  if (alpha == 0.0) return base;
  return add(base, mul(ce_supervision_loss(map, correct_index), alpha));
}

BiasedForward biased_forward(const Encoder& encoder, const Adapters& params,
                             const Tensor& frames, const Catalog& catalog) {
  BiasedForward out;
  out.enc = encoder.encode(frames);
  CatalogEncoding enc = encode_catalog(params, catalog);
  out.attn = biasing_attention(params, out.enc.layer_states, enc);
  out.logits = apply_bias(encoder, out.enc.final_state, out.attn.context);
  return out;
}

}  // namespace ctcadapt
