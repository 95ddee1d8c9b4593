// SPDX-License-Identifier: Apache-2.0
// Staged training: Adam with warmup and gradient clipping, the catalog-size
// curriculum, single-stage runs with partition freezing and best-dev model
// selection, and the ten-model lineup builder.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctcadapt/ctc.hpp"
#include "ctcadapt/error.hpp"
#include "ctcadapt/evalkit.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/trainer.hpp"

namespace ctcadapt {

namespace {

std::string hex16(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace

// ---- optimizer --------------------------------------------------------------

void adam_step(ParamMap& params, const std::set<std::string>& frozen,
               AdamState& state, double lr, const AdamConfig& cfg) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ValueError("adam_step: learning rate must be finite and positive");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    if (frozen.count(name)) continue;
    auto g = t.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(static_cast<size_t>(t.size()), 0.0);
    if (v.empty()) v.assign(static_cast<size_t>(t.size()), 0.0);
    auto p = t.values_mut();
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      if (!std::isfinite(gi)) {
        throw ValueError("adam_step: non-finite gradient in tensor '" + name + "'");
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
    }
  }
}

double clip_gradients(ParamMap& params, const std::set<std::string>& frozen,
                      double max_norm) {
  if (!(max_norm > 0.0)) throw ValueError("clip_gradients: max_norm must be positive");
  double sumsq = 0.0;
  for (const auto& [name, t] : params) {
    if (frozen.count(name)) continue;
    for (double g : t.grad()) sumsq += g * g;
  }
  if (!std::isfinite(sumsq)) throw ValueError("clip_gradients: non-finite gradient norm");
  const double norm = std::sqrt(sumsq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, t] : params) {
      if (frozen.count(name)) continue;
      for (double& g : t.grad_mut()) g *= scale;
    }
  }
  return norm;
}

double lr_schedule(int64_t step, int64_t warmup, double lr_max) {
  if (step < 1) throw ValueError("lr_schedule: step counts from 1");
  if (!(lr_max > 0.0)) throw ValueError("lr_schedule: lr_max must be positive");
  if (warmup <= 0 || step >= warmup) return lr_max;
  return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
}

int64_t curriculum_k(int64_t epoch, int64_t total_epochs, int64_t k_min, int64_t k_max) {
  if (k_min < 1 || k_min > k_max) {
    throw ValueError("curriculum_k: requires 1 <= k_min <= k_max");
  }
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw ValueError("curriculum_k: requires 0 <= epoch < total_epochs");
  }
  if (total_epochs == 1) return k_max;
  const double x = static_cast<double>(k_min) +
                   static_cast<double>(k_max - k_min) * static_cast<double>(epoch) /
                       static_cast<double>(total_epochs - 1);
  return static_cast<int64_t>(std::floor(x + 0.5));
}

// ---- train config hash -------------------------------------------------------

std::string train_config_hash(const TrainConfig& cfg) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epochs=%lld;batch=%lld;lr=%.17g;warmup=%lld;clip=%.17g;alpha=%.17g;"
                "kmin=%lld;kmax=%lld;seed=%llu;cap=%lld;selwer=%d",
                static_cast<long long>(cfg.epochs), static_cast<long long>(cfg.batch_size),
                cfg.lr_max, static_cast<long long>(cfg.warmup_steps), cfg.clip_norm,
                cfg.alpha, static_cast<long long>(cfg.k_min),
                static_cast<long long>(cfg.k_max),
                static_cast<unsigned long long>(cfg.seed),
                static_cast<long long>(cfg.max_steps_per_epoch),
                cfg.select_dev_wer ? 1 : 0);
  return hex16(hash_str(buf));
}

// ---- staged training ---------------------------------------------------------

namespace {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ValueError("train config: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
  if (!(cfg.lr_max > 0.0)) throw ValueError("train config: lr_max must be positive");
  if (cfg.warmup_steps < 0) throw ValueError("train config: warmup_steps must be >= 0");
  if (!(cfg.clip_norm > 0.0)) throw ValueError("train config: clip_norm must be positive");
  if (cfg.alpha < 0.0) throw ValueError("train config: alpha must be >= 0");
  if (cfg.k_min < 1 || cfg.k_min > cfg.k_max) {
    throw ValueError("train config: requires 1 <= k_min <= k_max");
  }
  if (cfg.max_steps_per_epoch < 0) {
    throw ValueError("train config: max_steps_per_epoch must be >= 0");
  }
}

std::vector<const Utterance*> select_split(const Corpus& corpus, const std::string& lang,
                                           const std::string& split) {
  std::vector<const Utterance*> out;
  for (const auto& u : corpus.utterances) {
    if (u.split == split && (lang.empty() || u.lang == lang)) out.push_back(&u);
  }
  return out;
}

}  // namespace

StageResult run_stage(const ModelCheckpoint& init, const Corpus& corpus,
                      const StageSpec& spec, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (spec.model_id.empty()) throw ValueError("stage spec: model_id must be non-empty");
  if (init.encoder_config.input_dim != corpus.config.feat_dim) {
    throw ValueError("stage: encoder input_dim " +
                     std::to_string(init.encoder_config.input_dim) +
                     " does not match corpus feat_dim " +
                     std::to_string(corpus.config.feat_dim));
  }
  if (init.encoder_config.vocab_size != kVocabSize) {
    throw ValueError("stage: encoder vocab_size must match the subword inventory (" +
                     std::to_string(kVocabSize) + ")");
  }
  if (!spec.lang.empty()) {
    bool known = false;
    for (const auto& l : corpus.languages) known = known || l.id == spec.lang;
    if (!known) throw ValueError("stage: unknown language '" + spec.lang + "'");
  }

  std::vector<const Utterance*> train_set = select_split(corpus, spec.lang, "train");
  std::vector<const Utterance*> dev_set = select_split(corpus, spec.lang, "dev");
  if (train_set.empty()) {
    throw ValueError("stage: no training utterances for selector '" +
                     (spec.lang.empty() ? std::string("pooled") : spec.lang) + "'");
  }
  if (dev_set.empty()) {
    throw ValueError("stage: no dev utterances for selector '" +
                     (spec.lang.empty() ? std::string("pooled") : spec.lang) + "'");
  }

  const std::string parent_hash = checkpoint_hash(init);
  const std::string parent_lineage =
      init.provenance.count("lineage") ? init.provenance.at("lineage") : std::string();

  StageResult result;
  result.checkpoint = init.clone();
  ModelCheckpoint& model = result.checkpoint;

  auto finish_provenance = [&](int64_t best_epoch) {
    auto& p = model.provenance;
    p["model_id"] = spec.model_id;
    p["stage"] = spec.stage;
    p["track"] = spec.track;
    p["data"] = spec.lang.empty() ? "pooled" : spec.lang;
    p["seed"] = std::to_string(cfg.seed);
    char alpha_buf[40];
    std::snprintf(alpha_buf, sizeof alpha_buf, "%.17g", cfg.alpha);
    p["alpha"] = alpha_buf;
    p["epochs"] = std::to_string(cfg.epochs);
    p["best_epoch"] = std::to_string(best_epoch);
    p["parent_hash"] = parent_hash;
    p["config_hash"] = train_config_hash(cfg);
    p["lineage"] =
        parent_lineage.empty() ? spec.model_id : parent_lineage + ">" + spec.model_id;
  };

  // A zero-epoch stage re-labels the model without touching any parameter.
  if (cfg.epochs == 0) {
    finish_provenance(-1);
    return result;
  }

  const bool adapter_stage = spec.kind != StageKind::EncoderTrain;
  if (adapter_stage && !model.has_adapters) {
    model.add_adapters(derive_seed(cfg.seed, "adapters_init", 0));
  }

  // Freeze mask for this stage, by partition.
  std::map<std::string, bool> freeze;
  freeze["encoder"] = spec.kind == StageKind::AdapterTrain;
  if (model.has_adapters) freeze["adapters"] = spec.kind == StageKind::EncoderTrain;
  model.freeze = freeze;

  ParamMap params = model.params();
  std::set<std::string> frozen;
  for (auto& [name, t] : params) {
    const std::string part = name.substr(0, name.find('.'));
    const bool is_frozen = freeze.count(part) && freeze.at(part);
    if (is_frozen) frozen.insert(name);
    t.set_requires_grad(!is_frozen);
  }

  // Per-language distractor pools: the sorted union of boost words over that
  // language's training utterances (the rare-word catalog source).
  std::map<std::string, std::vector<std::string>> pool_by_lang;
  {
    std::map<std::string, std::set<std::string>> sets;
    for (const auto& u : corpus.utterances) {
      if (u.split == "train" && !u.boost_word.empty()) sets[u.lang].insert(u.boost_word);
    }
    for (const auto& [lang, words] : sets) {
      pool_by_lang[lang] = std::vector<std::string>(words.begin(), words.end());
    }
  }

  // Loss for one utterance. Training draws a fresh catalog per (sample, epoch);
  // dev uses a fixed per-utterance catalog at the full k_max so epoch-over-epoch
  // dev losses are comparable.
  auto sample_loss = [&](const Utterance& u, int64_t epoch, bool train_mode,
                         int64_t k_req) -> Tensor {
    const std::vector<int> y = transcript_to_ids(u.words);
    if (!adapter_stage) {
      EncoderOut out = model.encoder.forward(u.frames);
      return ctc_loss(log_softmax_rows(out.logits), y);
    }
    // Joint fine-tuning alternates biased epochs with catalog-free epochs
    // (ending on a catalog-free one): the detached encoder is a reported
    // inference condition, and fine-tuning every sample against a catalog
    // would let the biasing path absorb the very adaptation the detached
    // condition needs. The plain epochs consolidate the catalog-free path and
    // the stage's dev selection snapshots right after consolidation.
    if (train_mode && spec.kind == StageKind::JointFinetune && epoch % 2 == 1) {
      EncoderOut out = model.encoder.forward(u.frames);
      return ctc_loss(log_softmax_rows(out.logits), y);
    }
    const auto& pool = pool_by_lang.at(u.lang);
    const int64_t k = std::max<int64_t>(
        1, std::min<int64_t>(k_req, static_cast<int64_t>(pool.size())));
    const uint64_t cseed =
        train_mode ? derive_seed(cfg.seed, "catalog:" + u.id, static_cast<uint64_t>(epoch))
                   : derive_seed(cfg.seed, "dev_catalog:" + u.id, 0);
    SampledCatalog sc = sample_catalog(pool, u.boost_word, k, cseed);
    BiasedForward bf = biased_forward(model.encoder, model.adapters, u.frames, sc.catalog);
    return combined_loss(log_softmax_rows(bf.logits), y, bf.attn, sc.correct_index,
                         cfg.alpha);
  };

  AdamState adam;
  int64_t global_step = 0;
  double best_primary = std::numeric_limits<double>::infinity();
  double best_tie = std::numeric_limits<double>::infinity();
  int64_t best_epoch = -1;
  std::map<std::string, std::vector<double>> best_values;

  const int64_t n = static_cast<int64_t>(train_set.size());
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int64_t k_epoch =
        adapter_stage ? curriculum_k(epoch, cfg.epochs, cfg.k_min, cfg.k_max) : 0;

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "order:" + spec.model_id,
                                static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    int64_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);

    double loss_sum = 0.0;
    int64_t loss_n = 0;
    double lr = 0.0;
    for (int64_t s = 0; s < steps; ++s) {
      const int64_t lo = s * cfg.batch_size;
      const int64_t hi = std::min(n, lo + cfg.batch_size);
      for (auto& [name, t] : params) {
        if (!frozen.count(name)) t.zero_grad();
      }
      Tensor total;
      int64_t count = 0;
      for (int64_t i = lo; i < hi; ++i) {
        Tensor loss = sample_loss(*train_set[static_cast<size_t>(order[static_cast<size_t>(i)])],
                                  epoch, true, k_epoch);
        total = count == 0 ? loss : add(total, loss);
        ++count;
      }
      Tensor mean = mul(total, 1.0 / static_cast<double>(count));
      backward(mean);
      clip_gradients(params, frozen, cfg.clip_norm);
      ++global_step;
      lr = lr_schedule(global_step, cfg.warmup_steps, cfg.lr_max);
      adam_step(params, frozen, adam, lr);
      loss_sum += mean.item() * static_cast<double>(count);
      loss_n += count;
    }

    // Dev evaluation. Joint fine-tuning measures the encoder's own dev CTC
    // loss with the catalog detached: the stage exists to adapt the encoder,
    // and biased dev loss saturates as soon as the inherited adapters line up,
    // which would freeze the snapshot epochs before the encoder has finished
    // adapting. Stages under the fine-tune schedule additionally decode the
    // dev split catalog-free and select on dev WER with dev loss as tiebreak.
    double dev_sum = 0.0;
    int64_t dev_edits = 0;
    int64_t dev_ref_tokens = 0;
    {
      NoGradGuard ng;
      for (const Utterance* u : dev_set) {
        if (spec.kind == StageKind::JointFinetune || cfg.select_dev_wer) {
          EncoderOut out = model.encoder.forward(u->frames);
          Tensor lp = log_softmax_rows(out.logits);
          dev_sum += ctc_loss(lp, transcript_to_ids(u->words)).item();
          if (cfg.select_dev_wer) {
            dev_edits += word_edit_distance(u->words, ids_to_words(greedy_decode(lp)));
            dev_ref_tokens += static_cast<int64_t>(u->words.size());
          }
        } else {
          dev_sum += sample_loss(*u, 0, false, cfg.k_max).item();
        }
      }
    }
    const double dev_loss = dev_sum / static_cast<double>(dev_set.size());
    const double train_loss = loss_sum / static_cast<double>(loss_n);

    bool improved;
    if (cfg.select_dev_wer) {
      const double dev_wer =
          static_cast<double>(dev_edits) / static_cast<double>(dev_ref_tokens);
      improved = dev_wer < best_primary ||
                 (dev_wer == best_primary && dev_loss < best_tie);
      if (improved) best_primary = dev_wer;
    } else {
      improved = dev_loss < best_primary;
      if (improved) best_primary = dev_loss;
    }
    if (improved) {
      best_tie = dev_loss;
      best_epoch = epoch;
      best_values.clear();
      for (const auto& [name, t] : params) {
        if (!frozen.count(name)) {
          best_values[name] = std::vector<double>(t.values().begin(), t.values().end());
        }
      }
    }

    result.logs.push_back(EpochLog{spec.model_id, epoch, k_epoch, train_loss, dev_loss, lr});
  }

  // Roll back to the best-dev snapshot.
  for (auto& [name, values] : best_values) {
    auto dst = params.at(name).values_mut();
    std::copy(values.begin(), values.end(), dst.begin());
  }
  // Leave every parameter trainable again; the freeze record stays in `freeze`.
  for (auto& [name, t] : params) t.set_requires_grad(true);

  finish_provenance(best_epoch);
  return result;
}

void write_epoch_logs(const std::vector<EpochLog>& logs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open epoch log for writing: " + path);
  for (const auto& l : logs) {
    nlohmann::json j{{"stage", l.stage},           {"epoch", l.epoch},
                     {"K", l.k},                   {"train_loss", l.train_loss},
                     {"dev_loss", l.dev_loss},     {"lr", l.lr}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing epoch log: " + path);
}

void apply_finetune_schedule(TrainConfig& cfg) {
  cfg.lr_max *= 0.25;
  cfg.warmup_steps = std::min<int64_t>(cfg.warmup_steps, 50);
  cfg.select_dev_wer = true;
}

// ---- model lineup ------------------------------------------------------------

const std::vector<std::string> kLineupModelIds = {
    "MONO-I",   "MONO-II",    "MONO-II.ce", "ML-I",       "ML-II.a",
    "ML-III.a", "ML-III.a.ce", "ML-II.b",   "ML-II.b.ce", "ML-III.b"};

LineupResult build_model_lineup(const Corpus& corpus, const LineupConfig& cfg) {
  if (cfg.target_lang.empty()) throw ValueError("lineup: target_lang must be non-empty");

  LineupResult out;
  auto run = [&](const ModelCheckpoint& parent, StageKind kind, const std::string& id,
                 const std::string& stage, const std::string& track,
                 const std::string& lang, int64_t epochs, double alpha,
                 int64_t cap, bool finetune = false) -> const ModelCheckpoint& {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = cfg.batch_size;
    tc.lr_max = cfg.lr_max;
    tc.warmup_steps = cfg.warmup_steps;
    tc.clip_norm = cfg.clip_norm;
    tc.alpha = alpha;
    tc.k_min = cfg.k_min;
    tc.k_max = cfg.k_max;
    tc.seed = cfg.seed;
    tc.max_steps_per_epoch = cap;
    if (finetune) apply_finetune_schedule(tc);
    StageSpec spec{kind, id, stage, track, lang};
    StageResult r = run_stage(parent, corpus, spec, tc);
    out.logs.insert(out.logs.end(), r.logs.begin(), r.logs.end());
    auto [it, inserted] = out.models.emplace(id, std::move(r.checkpoint));
    if (!inserted) throw ValueError("lineup: duplicate model id '" + id + "'");
    return it->second;
  };

  const ModelCheckpoint seedling = ModelCheckpoint::fresh(
      cfg.encoder, cfg.adapters, derive_seed(cfg.seed, "encoder_init", 0));
  const std::string& tl = cfg.target_lang;

  const ModelCheckpoint& mono1 = run(seedling, StageKind::EncoderTrain, "MONO-I", "I", "",
                                     tl, cfg.mono_encoder_epochs, 0.0, 0);
  run(mono1, StageKind::AdapterTrain, "MONO-II", "II", "", tl, cfg.adapter_epochs, 0.0, 0);
  run(mono1, StageKind::AdapterTrain, "MONO-II.ce", "II", "", tl, cfg.adapter_epochs,
      cfg.alpha_ce, 0);

  const ModelCheckpoint& ml1 =
      run(seedling, StageKind::EncoderTrain, "ML-I", "I", "", "",
          cfg.pooled_encoder_epochs, 0.0, cfg.pooled_steps_per_epoch);

  const ModelCheckpoint& ml2a = run(ml1, StageKind::EncoderTrain, "ML-II.a", "II", "a", tl,
                                    cfg.finetune_epochs, 0.0, 0, /*finetune=*/true);
  run(ml2a, StageKind::AdapterTrain, "ML-III.a", "III", "a", tl, cfg.adapter_epochs, 0.0, 0);
  run(ml2a, StageKind::AdapterTrain, "ML-III.a.ce", "III", "a", tl, cfg.adapter_epochs,
      cfg.alpha_ce, 0);

  const ModelCheckpoint& ml2b =
      run(ml1, StageKind::AdapterTrain, "ML-II.b", "II", "b", "", cfg.adapter_epochs, 0.0,
          cfg.pooled_steps_per_epoch);
  run(ml2b, StageKind::AdapterTrain, "ML-II.b.ce", "II", "b", "", cfg.adapter_epochs,
      cfg.alpha_ce, cfg.pooled_steps_per_epoch);
  // Joint fine-tuning runs without the CE term: with the encoder unfrozen the
  // CE objective has a degenerate optimum (queries drift until attention sits
  // entirely on the no-bias slot, silencing the adapters), so the stage keeps
  // plain CTC through the biased graph. One fine-tuning round here is a
  // biased epoch plus a catalog-free consolidation epoch, so the stage runs
  // twice the configured epochs: equal catalog-free exposure to the plain
  // encoder fine-tune, plus the adapter passes on top.
  run(ml2b, StageKind::JointFinetune, "ML-III.b", "III", "b", tl,
      2 * cfg.finetune_epochs, 0.0, 0, /*finetune=*/true);

  return out;
}

}  // namespace ctcadapt
