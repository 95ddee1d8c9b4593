// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctcadapt/adapters.hpp"
#include "ctcadapt/ctc.hpp"
#include "ctcadapt/error.hpp"
#include "ctcadapt/evalkit.hpp"
#include "ctcadapt/nn.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/tensor.hpp"
#include "ctcadapt/trainer.hpp"

namespace ctcadapt {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

AttentionMap map_from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  AttentionMap m;
  m.weights = Tensor::from_vector(
      {static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())}, flat);
  return m;
}

// Plain recursive edit distance with memoization: an oracle that shares no
// code with the production rolling-row implementation.
int64_t lev_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b,
                   size_t i, size_t j, std::map<std::pair<size_t, size_t>, int64_t>& memo) {
  if (i == a.size()) return static_cast<int64_t>(b.size() - j);
  if (j == b.size()) return static_cast<int64_t>(a.size() - i);
  auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  int64_t best;
  if (a[i] == b[j]) {
    best = lev_oracle(a, b, i + 1, j + 1, memo);
  } else {
    best = 1 + std::min({lev_oracle(a, b, i + 1, j + 1, memo),
                         lev_oracle(a, b, i + 1, j, memo),
                         lev_oracle(a, b, i, j + 1, memo)});
  }
  memo[key] = best;
  return best;
}

}  // namespace

VerifySuite verify_primitive_gradients() {
  constexpr double tol = 1e-4;
  Rng rng(23);
  double worst = 0.0;
  std::string worst_group = "none";
  int groups = 0;
  auto run = [&](const char* name, const std::function<Tensor()>& f,
                 const std::vector<Tensor>& params) {
    GradCheckOptions opts;
    opts.eps = 1e-5;
    double e = grad_check(f, params, opts);
    ++groups;
    if (e >= worst) {
      worst = e;
      worst_group = name;
    }
  };

  {  // elementwise add/sub/mul with row, column, and scalar broadcast
    Tensor a = Tensor::uniform({3, 4}, -1.0, 1.0, rng, true);
    Tensor row = Tensor::uniform({4}, -1.0, 1.0, rng, true);
    Tensor col = Tensor::uniform({3, 1}, -1.0, 1.0, rng, true);
    Tensor sc = Tensor::uniform({}, 0.5, 1.5, rng, true);
    run("broadcast-arithmetic",
        [&] {
          Tensor t = mul(add(a, row), col);
          return sum(mul(sub(t, sc), t));
        },
        {a, row, col, sc});
  }
  {  // matmul and transpose
    Tensor a = Tensor::uniform({3, 5}, -1.0, 1.0, rng, true);
    Tensor b = Tensor::uniform({5, 2}, -1.0, 1.0, rng, true);
    run("matmul-transpose", [&] { return sum(matmul(transpose(matmul(a, b)), a)); }, {a, b});
  }
  {  // tanh, sigmoid, exp, log
    Tensor x = Tensor::uniform({6}, 0.2, 1.8, rng, true);
    run("pointwise", [&] { return sum(add(tanh(x), mul(sigmoid(x), log(exp(x))))); }, {x});
  }
  {  // softmax over a vector and over matrix rows
    Tensor x = Tensor::uniform({5}, -2.0, 2.0, rng, true);
    Tensor w = Tensor::uniform({5}, -1.0, 1.0, rng, true);
    run("softmax-1d", [&] { return sum(mul(softmax(x), w)); }, {x, w});
    Tensor m = Tensor::uniform({3, 4}, -2.0, 2.0, rng, true);
    run("softmax-2d", [&] { return sum(mul(softmax(m), m)); }, {m});
  }
  {  // logsumexp, full and per-axis
    Tensor x = Tensor::uniform({3, 4}, -2.0, 2.0, rng, true);
    run("logsumexp",
        [&] { return add(logsumexp(x), add(sum(logsumexp(x, 0)), sum(logsumexp(x, 1)))); },
        {x});
  }
  {  // concat and slice
    Tensor a = Tensor::uniform({2, 3}, -1.0, 1.0, rng, true);
    Tensor b = Tensor::uniform({1, 3}, -1.0, 1.0, rng, true);
    Tensor c = Tensor::uniform({2, 2}, -1.0, 1.0, rng, true);
    run("concat-slice",
        [&] {
          Tensor v = concat({a, b}, 0);
          Tensor h = concat({slice(v, 0, 0, 2), c}, 1);
          return sum(mul(slice(h, 1, 1, 3), slice(h, 1, 2, 3)));
        },
        {a, b, c});
  }
  {  // reshape, sum/mean reductions, embedding gather
    Tensor table = Tensor::uniform({6, 3}, -1.0, 1.0, rng, true);
    run("reshape-reduce-gather",
        [&] {
          Tensor g = embedding_gather(table, {0, 2, 5, 2});
          Tensor r = reshape(g, {2, 6});
          return add(sum(mul(r, r)), add(sum(mean(g, 0)), add(mean(sum(g, 1)), mean(g))));
        },
        {table});
  }

  VerifySuite s;
  s.name = "primitive-gradients";
  s.max_error = worst;
  s.tolerance = tol;
  s.pass = worst < tol;
  s.detail = std::to_string(groups) + " op groups, worst group: " + worst_group;
  return s;
}

VerifySuite verify_network_gradient() {
  constexpr double tol = 1e-4;
  // Two-frame utterance, two-entry catalog, combined loss with an active
  // attention-supervision term: every parameter of both partitions is probed.
  EncoderConfig enc_cfg;
  enc_cfg.input_dim = 3;
  enc_cfg.hidden_dim = 6;
  enc_cfg.vocab_size = 6;
  enc_cfg.blocks = 2;
  enc_cfg.heads = 2;
  enc_cfg.ffn_dim = 8;
  AdapterConfig ada_cfg;
  ada_cfg.vocab_size = 6;
  ada_cfg.embed_dim = 5;
  ada_cfg.hidden_dim = 6;
  ada_cfg.blocks = 2;

  ModelCheckpoint model = ModelCheckpoint::fresh(enc_cfg, ada_cfg, 31);
  model.add_adapters(32);

  Rng rng(33);
  Tensor frames = Tensor::uniform({2, 3}, -1.0, 1.0, rng, false);
  Catalog catalog;
  catalog.entries = {{2, 3}, {4}};
  const std::vector<int> y = {2};
  const int correct_index = 0;
  const double alpha = 0.7;

  ParamMap params = model.params();
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : params) leaves.push_back(t);

  auto loss = [&] {
    BiasedForward bf = biased_forward(model.encoder, model.adapters, frames, catalog);
    return combined_loss(log_softmax_rows(bf.logits), y, bf.attn, correct_index, alpha);
  };
  GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.max_entries_per_tensor = 40;
  opts.sample_seed = 7;
  double worst = grad_check(loss, leaves, opts);

  VerifySuite s;
  s.name = "network-gradient";
  s.max_error = worst;
  s.tolerance = tol;
  s.pass = worst < tol;
  s.detail = std::to_string(leaves.size()) + " parameter tensors, combined loss";
  return s;
}

VerifySuite verify_ctc_bruteforce(int cases) {
  constexpr double tol = 1e-8;
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    Rng rng(derive_seed(9001, "ctc_verify", i));
    int64_t v = rng.uniform_int(2, 5);   // vocab including blank
    int64_t t = rng.uniform_int(1, 6);   // frames
    std::vector<int> y;
    int64_t u = rng.uniform_int(0, 3);
    for (int64_t j = 0; j < u; ++j) y.push_back(static_cast<int>(rng.uniform_int(1, v - 1)));
    if (y.empty()) y.push_back(static_cast<int>(rng.uniform_int(1, v - 1)));
    while (ctc_min_frames(y) > t) y.pop_back();
    if (y.empty()) y.push_back(static_cast<int>(rng.uniform_int(1, v - 1)));

    Tensor logits = Tensor::uniform({t, v}, -2.0, 2.0, rng, false);
    Tensor lp = log_softmax_rows(logits);
    double loss = ctc_loss(lp, y).item();
    double ref = ctc_brute_force(lp, y);  // also on the -log P scale
    worst = std::max(worst, std::abs(loss - ref));
  }
  VerifySuite s;
  s.name = "ctc-bruteforce";
  s.max_error = worst;
  s.tolerance = tol;
  s.pass = worst < tol;
  s.detail = std::to_string(cases) + " random instances (frames<=6, labels<=3, vocab<=5)";
  return s;
}

VerifySuite verify_attention_hand_values() {
  constexpr double tol = 1e-4;
  // Single frame, two catalog words: weights [no-bias 0.5, 0.3, 0.2],
  // correct word first. Closed form: -(1-0.5) * log softmax([0.3,0.2])[0].
  AttentionMap hand = map_from_rows({{0.5, 0.3, 0.2}});
  double loss = ce_supervision_loss(hand, 0).item();
  double published = 0.32218;
  double exact = -0.5 * std::log(std::exp(0.3) / (std::exp(0.3) + std::exp(0.2)));

  AttentionMap all_nb = map_from_rows({{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}});
  double nb_loss = ce_supervision_loss(all_nb, 0).item();

  double worst = std::max(std::abs(loss - published), std::abs(nb_loss));
  bool exact_ok = std::abs(loss - exact) < 1e-12 && nb_loss == 0.0;

  VerifySuite s;
  s.name = "attention-ce-hand-values";
  s.max_error = worst;
  s.tolerance = tol;
  s.pass = worst <= tol && exact_ok;
  s.detail = "loss=" + fmt(loss) + " vs 0.32218, all-no-bias=" + fmt(nb_loss) + " (must be 0)";
  return s;
}

VerifySuite verify_metric_oracles(int cases) {
  const std::vector<std::string> words = {"ka", "mo", "ri", "ta", "zu"};
  double worst = 0.0;

  for (int i = 0; i < cases; ++i) {
    Rng rng(derive_seed(9002, "wer_verify", i));
    auto draw = [&](int64_t lo, int64_t hi) {
      std::vector<std::string> out;
      int64_t n = rng.uniform_int(lo, hi);
      for (int64_t j = 0; j < n; ++j)
        out.push_back(words[static_cast<size_t>(rng.uniform_int(0, 4))]);
      return out;
    };
    std::vector<std::string> ref = draw(1, 6);
    std::vector<std::string> hyp = draw(0, 6);
    std::map<std::pair<size_t, size_t>, int64_t> memo;
    double oracle =
        static_cast<double>(lev_oracle(ref, hyp, 0, 0, memo)) / static_cast<double>(ref.size());
    worst = std::max(worst, std::abs(wer(ref, hyp) - oracle));
  }

  for (int i = 0; i < cases; ++i) {
    Rng rng(derive_seed(9003, "f1_verify", i));
    int64_t utts = rng.uniform_int(1, 4);
    std::vector<std::vector<std::string>> refs, hyps;
    for (int64_t j = 0; j < utts; ++j) {
      auto draw = [&] {
        std::vector<std::string> out;
        int64_t n = rng.uniform_int(0, 5);
        for (int64_t k = 0; k < n; ++k)
          out.push_back(words[static_cast<size_t>(rng.uniform_int(0, 4))]);
        return out;
      };
      refs.push_back(draw());
      hyps.push_back(draw());
    }
    std::vector<std::string> entities;
    int64_t n_ent = rng.uniform_int(1, 3);
    for (int64_t k = 0; k < n_ent; ++k)
      entities.push_back(words[static_cast<size_t>(rng.uniform_int(0, 4))]);

    // Brute-force recount: per-utterance occurrence frequencies, clipped.
    std::set<std::string> uniq(entities.begin(), entities.end());
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t j = 0; j < refs.size(); ++j) {
      for (const std::string& e : uniq) {
        int64_t cr = static_cast<int64_t>(std::count(refs[j].begin(), refs[j].end(), e));
        int64_t ch = static_cast<int64_t>(std::count(hyps[j].begin(), hyps[j].end(), e));
        tp += std::min(cr, ch);
        fp += std::max<int64_t>(0, ch - cr);
        fn += std::max<int64_t>(0, cr - ch);
      }
    }
    double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    double f = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);

    F1Scores got = entity_f1(refs, hyps, entities);
    worst = std::max({worst, std::abs(got.precision - p), std::abs(got.recall - r),
                      std::abs(got.f1 - f)});
  }

  VerifySuite s;
  s.name = "metric-oracles";
  s.max_error = worst;
  s.tolerance = 0.0;
  s.pass = worst == 0.0;
  s.detail = std::to_string(cases) + " random cases each for word error rate and entity F1";
  return s;
}

std::vector<VerifySuite> run_verification() {
  return {verify_primitive_gradients(), verify_network_gradient(), verify_ctc_bruteforce(),
          verify_attention_hand_values(), verify_metric_oracles()};
}

bool all_passed(const std::vector<VerifySuite>& suites) {
  for (const VerifySuite& s : suites)
    if (!s.pass) return false;
  return true;
}

}  // namespace ctcadapt
