// SPDX-License-Identifier: Apache-2.0
// Staged training: Adam with warmup + gradient clipping, a catalog-size
// curriculum, versioned model checkpoints with partition freezing and
// provenance, single-stage training runs, and the full ten-model lineup
// (monolingual baseline plus the two three-stage multilingual tracks).
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ctcadapt/adapters.hpp"
#include "ctcadapt/nn.hpp"
#include "ctcadapt/synthlang.hpp"
#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;  // number of updates applied so far
  std::map<std::string, std::vector<double>> m;  // first-moment estimates
  std::map<std::string, std::vector<double>> v;  // second-moment estimates
};

// One bias-corrected Adam update over every tensor in `params` whose name is
// not in `frozen`, reading gradients in place. A missing (never-touched)
// gradient buffer counts as all zeros. Frozen tensors are not read or written.
// Throws ValueError on any non-finite gradient entry.
void adam_step(ParamMap& params, const std::set<std::string>& frozen,
               AdamState& state, double lr, const AdamConfig& cfg = {});

// Global L2 norm over the gradients of non-frozen tensors; when it exceeds
// max_norm the gradients are scaled in place by max_norm / norm. Returns the
// pre-clip norm. Throws ValueError on non-finite gradients or max_norm <= 0.
double clip_gradients(ParamMap& params, const std::set<std::string>& frozen,
                      double max_norm);

// Linear warmup 0 -> lr_max over `warmup` steps, constant afterwards.
// step counts from 1; step == warmup yields exactly lr_max. warmup <= 0 means
// no warmup. Throws ValueError on step < 1 or lr_max <= 0.
double lr_schedule(int64_t step, int64_t warmup, double lr_max);

// Catalog-size curriculum: k_min at epoch 0, k_max at the last epoch, linear
// interpolation with round-half-up in between; non-decreasing in epoch.
// A single-epoch schedule jumps straight to k_max. Throws ValueError unless
// 0 <= epoch < total_epochs and 1 <= k_min <= k_max.
int64_t curriculum_k(int64_t epoch, int64_t total_epochs, int64_t k_min, int64_t k_max);

// ---- checkpoints -------------------------------------------------------------

// A trainable model snapshot: encoder partition, optional adapter partition,
// the freeze mask of the stage that produced it, and a free-form provenance
// record (model id, stage, seed, config hash, parent hash, lineage chain).
struct ModelCheckpoint {
  EncoderConfig encoder_config;
  AdapterConfig adapter_config;
  bool has_adapters = false;
  Encoder encoder;
  Adapters adapters;  // meaningful only when has_adapters
  std::map<std::string, bool> freeze;  // partition name -> frozen in producing stage
  std::map<std::string, std::string> provenance;

  // Fresh encoder-only model; all parameters drawn from Rng(seed).
  static ModelCheckpoint fresh(const EncoderConfig& enc_cfg,
                               const AdapterConfig& ada_cfg, uint64_t seed);

  // Adds a freshly initialized adapter partition (no-op error if present).
  void add_adapters(uint64_t seed);

  // Live named handles: every tensor under "encoder." and, when present,
  // "adapters.". Writing through the map mutates the checkpoint.
  ParamMap params() const;
  // Handles of one partition ("encoder" | "adapters"); ValueError otherwise.
  ParamMap partition(const std::string& name) const;

  // Deep copy with fresh tensor storage (byte-identical values).
  ModelCheckpoint clone() const;
};

// Versioned container: one JSON header line (configs, partition names/shapes,
// freeze masks, provenance) followed by little-endian IEEE-754 float64
// payloads in header order. Loading then saving is byte-identical.
std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

// 16-hex-digit FNV-1a over the serialized container; the lineage fingerprint
// recorded as "parent_hash" in derived checkpoints.
std::string checkpoint_hash(const ModelCheckpoint& ckpt);

// ---- staged training ---------------------------------------------------------

struct TrainConfig {
  int64_t epochs = 10;
  int64_t batch_size = 8;
  double lr_max = 3e-3;
  int64_t warmup_steps = 200;
  double clip_norm = 5.0;
  double alpha = 0.0;  // attention-supervision weight in the combined loss
  int64_t k_min = 3;
  int64_t k_max = 10;
  uint64_t seed = 1;
  // Upper bound on optimizer steps per epoch (0 = unlimited); the epoch's
  // shuffled order decides which samples fall inside the bound.
  int64_t max_steps_per_epoch = 0;
  // Snapshot selection: false picks the epoch with the lowest dev loss; true
  // picks the lowest catalog-free dev word error rate with dev loss as the
  // tiebreak (the fine-tuning stages' deployment-oriented criterion).
  bool select_dev_wer = false;
};

// Stable fingerprint of every field, embedded in checkpoint provenance.
std::string train_config_hash(const TrainConfig& cfg);

enum class StageKind {
  EncoderTrain,   // CTC only, adapters absent from the graph
  AdapterTrain,   // encoder frozen, adapters trained on the biased graph
  JointFinetune,  // encoder + adapters trained together on the biased graph
};

struct StageSpec {
  StageKind kind = StageKind::EncoderTrain;
  std::string model_id;  // label for the produced checkpoint, e.g. "ML-II.b"
  std::string stage;     // "I" | "II" | "III"
  std::string track;     // "" | "a" | "b"
  std::string lang;      // language id; empty = pooled over all languages
};

struct EpochLog {
  std::string stage;  // model id of the stage being trained
  int64_t epoch = 0;
  int64_t k = 0;  // catalog size used this epoch (0 for encoder-only stages)
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;  // learning rate after the epoch's last step
};

struct StageResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochLog> logs;
};

// Trains one stage from `init` (which is never mutated) and returns the
// best-dev-loss checkpoint with provenance and freeze mask filled in.
// Model selection uses dev CTC loss for every stage that trains the encoder
// (for joint fine-tuning that loss is measured with the catalog detached, so
// the snapshot tracks the encoder rather than the already-converged adapters)
// and dev combined loss for adapter-only stages. Zero epochs returns the input
// parameters untouched, with only provenance updated. Throws ValueError on
// empty training data, on config violations, and on checkpoint/corpus
// mismatches.
StageResult run_stage(const ModelCheckpoint& init, const Corpus& corpus,
                      const StageSpec& spec, const TrainConfig& cfg);

// Stages that adapt an already-trained encoder (target-language fine-tuning,
// joint fine-tuning) run at a quarter of the base learning rate with a short
// warmup and select their snapshot on catalog-free dev WER; stages that train
// parameters from scratch keep the configured schedule and dev-loss
// selection. Applied uniformly by the lineup builder and the CLI recipes.
void apply_finetune_schedule(TrainConfig& cfg);

// JSON-lines epoch log: {"stage","epoch","K","train_loss","dev_loss","lr"}.
void write_epoch_logs(const std::vector<EpochLog>& logs, const std::string& path);

// ---- model lineup ------------------------------------------------------------

struct LineupConfig {
  std::string target_lang = "alpha";  // the low-resource language under study
  uint64_t seed = 1;
  EncoderConfig encoder;
  AdapterConfig adapters;
  double lr_max = 3e-3;
  int64_t warmup_steps = 200;
  int64_t batch_size = 8;
  double clip_norm = 5.0;
  double alpha_ce = 25.0;  // alpha used by the ".ce" variants
  int64_t k_min = 3;
  int64_t k_max = 10;
  int64_t mono_encoder_epochs = 20;
  int64_t pooled_encoder_epochs = 18;
  int64_t adapter_epochs = 10;
  int64_t finetune_epochs = 12;
  // Step cap applied to pooled-data stages so lineup runtime stays desk-scale.
  int64_t pooled_steps_per_epoch = 150;
};

// The ten model ids in build order.
extern const std::vector<std::string> kLineupModelIds;

struct LineupResult {
  std::map<std::string, ModelCheckpoint> models;
  std::vector<EpochLog> logs;  // all stages, concatenated in build order
};

// Builds the full lineup:
//   MONO-I   : encoder trained on the target language alone
//   MONO-II  : + adapters (encoder frozen), MONO-II.ce the same with CE loss
//   ML-I     : encoder trained on all languages pooled
//   track a  : ML-II.a  encoder fine-tuned on the target language
//              ML-III.a / ML-III.a.ce adapters on top (encoder frozen)
//   track b  : ML-II.b / ML-II.b.ce pooled adapters (encoder frozen)
//              ML-III.b joint fine-tune of ML-II.b on the target language
// Ancestors are trained once and reused across their descendants.
LineupResult build_model_lineup(const Corpus& corpus, const LineupConfig& cfg);

}  // namespace ctcadapt
