// SPDX-License-Identifier: Apache-2.0
// Evaluation kit: word error rate, clipped occurrence-frequency entity F1,
// greedy decoding suites over test sets (with-adapters and adapters-detached
// conditions), and report generation (CSV + aligned text grouped by track).
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctcadapt/synthlang.hpp"
#include "ctcadapt/trainer.hpp"

namespace ctcadapt {

// (substitutions + deletions + insertions) / |ref| via word-level edit
// distance with unit costs. Throws ValueError on an empty reference.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Raw word-level edit distance (unit costs), exposed for corpus-level rates.
int64_t word_edit_distance(const std::vector<std::string>& ref,
                           const std::vector<std::string>& hyp);

struct F1Scores {
  double precision = 0.0;  // in [0, 1]
  double recall = 0.0;
  double f1 = 0.0;
  int64_t tp = 0, fp = 0, fn = 0;
};

// Clipped occurrence-frequency matching, micro-aggregated over utterances and
// entity words: per (utterance, entity) tp = min(count_ref, count_hyp),
// fp = max(0, count_hyp - count_ref), fn = max(0, count_ref - count_hyp).
// Duplicate entity-list entries are collapsed. Zero denominators yield 0.
// Throws ValueError on an empty entity list or mismatched refs/hyps sizes.
F1Scores entity_f1(const std::vector<std::vector<std::string>>& refs,
                   const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::string>& entities);

enum class DecodeCondition { WithAdapters, AdaptersDetached };

std::string condition_name(DecodeCondition c);  // "with" | "without"

struct DecodeResult {
  std::string id;
  std::vector<std::string> hyp;
  DecodeCondition condition = DecodeCondition::AdaptersDetached;
  std::vector<std::string> catalog;  // recorded verbatim for audit
};

// Greedy-decodes every test utterance. WithAdapters runs the full biased
// forward over `catalog` (the language's entity list; an empty catalog decodes
// bit-identically to AdaptersDetached); AdaptersDetached runs the bare
// encoder. Throws ValueError when adapters are requested but absent.
std::vector<DecodeResult> decode_suite(const ModelCheckpoint& ckpt,
                                       const std::vector<const Utterance*>& test_set,
                                       const std::vector<std::string>& catalog,
                                       DecodeCondition condition);

// Hypothesis dump: JSON lines {"id", "condition", "hyp", "ref"}.
void write_hypotheses(const std::vector<DecodeResult>& results,
                      const std::vector<const Utterance*>& test_set,
                      const std::string& path);

struct ReportRow {
  std::string model_id;
  std::string language;
  std::string condition;  // "with" | "without"
  double wer = 0.0;       // percent
  double precision = 0.0; // percent
  double recall = 0.0;    // percent
  double f1 = 0.0;        // percent
  int64_t n_ref_tokens = 0;
  int64_t n_entity_tokens = 0;  // entity occurrences in the references
};

// Decode + score one (model, language, condition): corpus-level WER (total
// edits / total reference words) and entity F1 over the language's test split.
// An empty entity list skips the F1 computation (columns stay 0).
ReportRow evaluate_checkpoint(const ModelCheckpoint& ckpt, const Corpus& corpus,
                              const std::string& lang,
                              const std::vector<std::string>& entities,
                              DecodeCondition condition, const std::string& model_id);

// One row per lineup model on `lang` (encoder-only models decode without
// adapters, adapter models with the entity-list catalog) plus the
// "ML-III.b.inf" row: ML-III.b decoded with its adapters detached.
std::vector<ReportRow> lineup_report(const std::map<std::string, ModelCheckpoint>& models,
                                     const Corpus& corpus, const std::string& lang,
                                     const std::vector<std::string>& entities);

// CSV with the fixed column set
// model_id,language,condition,wer,precision,recall,f1,n_ref_tokens,n_entity_tokens.
// Numeric fields use shortest-exact formatting, so a reparse is lossless.
// `comments` are written as leading "# ..." lines (run metadata such as the
// config hash); the reader skips them.
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path,
                      const std::vector<std::string>& comments = {});
std::vector<ReportRow> read_report_csv(const std::string& path);

// Aligned text table grouped by track (monolingual / track "a" / track "b").
// Throws ValueError on an empty row set.
std::string render_report(const std::vector<ReportRow>& rows);

}  // namespace ctcadapt
