// SPDX-License-Identifier: Apache-2.0
// Evaluation kit: WER via word-level edit distance, clipped-count entity F1,
// decode suites over both inference conditions, and report artifacts.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcadapt/adapters.hpp"
#include "ctcadapt/ctc.hpp"
#include "ctcadapt/error.hpp"
#include "ctcadapt/evalkit.hpp"

namespace ctcadapt {

namespace {

// Exact, compact decimal rendering: the shortest of %.15g/%.16g/%.17g that
// parses back to the identical double, so CSV reparses are lossless and the
// bytes are deterministic.
std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return std::string(buf);
}

int64_t count_occurrences(const std::vector<std::string>& words, const std::string& w) {
  return static_cast<int64_t>(std::count(words.begin(), words.end(), w));
}

void validate_csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ValueError("report field contains a CSV delimiter: '" + s + "'");
  }
}

}  // namespace

int64_t word_edit_distance(const std::vector<std::string>& ref,
                           const std::vector<std::string>& hyp) {
  const size_t m = ref.size(), n = hyp.size();
  std::vector<int64_t> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= m; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= n; ++j) {
      const int64_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw ValueError("wer: reference must be non-empty");
  return static_cast<double>(word_edit_distance(ref, hyp)) /
         static_cast<double>(ref.size());
}

F1Scores entity_f1(const std::vector<std::vector<std::string>>& refs,
                   const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::string>& entities) {
  if (entities.empty()) throw ValueError("entity_f1: entity list must be non-empty");
  if (refs.size() != hyps.size()) {
    throw ValueError("entity_f1: refs and hyps must pair up (" +
                     std::to_string(refs.size()) + " vs " + std::to_string(hyps.size()) +
                     ")");
  }
  const std::set<std::string> unique(entities.begin(), entities.end());
  F1Scores s;
  for (size_t i = 0; i < refs.size(); ++i) {
    for (const auto& w : unique) {
      const int64_t cr = count_occurrences(refs[i], w);
      const int64_t ch = count_occurrences(hyps[i], w);
      s.tp += std::min(cr, ch);
      s.fp += std::max<int64_t>(0, ch - cr);
      s.fn += std::max<int64_t>(0, cr - ch);
    }
  }
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp)
                                : 0.0;
  s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn)
                             : 0.0;
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

std::string condition_name(DecodeCondition c) {
  return c == DecodeCondition::WithAdapters ? "with" : "without";
}

std::vector<DecodeResult> decode_suite(const ModelCheckpoint& ckpt,
                                       const std::vector<const Utterance*>& test_set,
                                       const std::vector<std::string>& catalog,
                                       DecodeCondition condition) {
  const bool with = condition == DecodeCondition::WithAdapters;
  if (with && !ckpt.has_adapters) {
    throw ValueError("decode_suite: with-adapters requested but the checkpoint has no "
                     "adapter partition");
  }
  Catalog cat;
  if (with) {
    for (const auto& w : catalog) cat.entries.push_back(word_to_ids(w));
  }
  NoGradGuard ng;
  std::vector<DecodeResult> out;
  out.reserve(test_set.size());
  for (const Utterance* u : test_set) {
    Tensor logits = with
                        ? biased_forward(ckpt.encoder, ckpt.adapters, u->frames, cat).logits
                        : ckpt.encoder.forward(u->frames).logits;
    DecodeResult r;
    r.id = u->id;
    r.hyp = ids_to_words(greedy_decode(logits));
    r.condition = condition;
    r.catalog = catalog;
    out.push_back(std::move(r));
  }
  return out;
}

void write_hypotheses(const std::vector<DecodeResult>& results,
                      const std::vector<const Utterance*>& test_set,
                      const std::string& path) {
  if (results.size() != test_set.size()) {
    throw ValueError("write_hypotheses: results and test set must pair up");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open hypothesis dump for writing: " + path);
  auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) s.push_back(' ');
      s += words[i];
    }
    return s;
  };
  for (size_t i = 0; i < results.size(); ++i) {
    nlohmann::json j{{"id", results[i].id},
                     {"condition", condition_name(results[i].condition)},
                     {"hyp", join(results[i].hyp)},
                     {"ref", join(test_set[i]->words)}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing hypothesis dump: " + path);
}

ReportRow evaluate_checkpoint(const ModelCheckpoint& ckpt, const Corpus& corpus,
                              const std::string& lang,
                              const std::vector<std::string>& entities,
                              DecodeCondition condition, const std::string& model_id) {
  if (lang.empty()) throw ValueError("evaluate_checkpoint: language must be non-empty");
  std::vector<const Utterance*> test_set;
  for (const auto& u : corpus.utterances) {
    if (u.lang == lang && u.split == "test") test_set.push_back(&u);
  }
  if (test_set.empty()) {
    throw ValueError("evaluate_checkpoint: no test utterances for language '" + lang + "'");
  }

  std::vector<DecodeResult> decodes = decode_suite(ckpt, test_set, entities, condition);

  int64_t edits = 0, ref_tokens = 0, entity_tokens = 0;
  std::vector<std::vector<std::string>> refs, hyps;
  refs.reserve(test_set.size());
  hyps.reserve(test_set.size());
  const std::set<std::string> unique(entities.begin(), entities.end());
  for (size_t i = 0; i < test_set.size(); ++i) {
    const auto& ref = test_set[i]->words;
    edits += word_edit_distance(ref, decodes[i].hyp);
    ref_tokens += static_cast<int64_t>(ref.size());
    for (const auto& w : unique) entity_tokens += count_occurrences(ref, w);
    refs.push_back(ref);
    hyps.push_back(decodes[i].hyp);
  }

  ReportRow row;
  row.model_id = model_id;
  row.language = lang;
  row.condition = condition_name(condition);
  row.wer = 100.0 * static_cast<double>(edits) / static_cast<double>(ref_tokens);
  if (!entities.empty()) {
    F1Scores f = entity_f1(refs, hyps, entities);
    row.precision = 100.0 * f.precision;
    row.recall = 100.0 * f.recall;
    row.f1 = 100.0 * f.f1;
  }
  row.n_ref_tokens = ref_tokens;
  row.n_entity_tokens = entity_tokens;
  return row;
}

std::vector<ReportRow> lineup_report(const std::map<std::string, ModelCheckpoint>& models,
                                     const Corpus& corpus, const std::string& lang,
                                     const std::vector<std::string>& entities) {
  for (const auto& id : kLineupModelIds) {
    if (!models.count(id)) throw ValueError("lineup_report: missing model '" + id + "'");
  }
  const std::set<std::string> encoder_only = {"MONO-I", "ML-I", "ML-II.a"};
  std::vector<ReportRow> rows;
  for (const auto& id : kLineupModelIds) {
    const DecodeCondition cond = encoder_only.count(id) ? DecodeCondition::AdaptersDetached
                                                        : DecodeCondition::WithAdapters;
    rows.push_back(evaluate_checkpoint(models.at(id), corpus, lang, entities, cond, id));
  }
  // The jointly fine-tuned encoder measured alone: adapters detached at
  // inference, everything else identical to the ML-III.b row.
  rows.push_back(evaluate_checkpoint(models.at("ML-III.b"), corpus, lang, entities,
                                     DecodeCondition::AdaptersDetached, "ML-III.b.inf"));
  return rows;
}

static const char* kCsvHeader =
    "model_id,language,condition,wer,precision,recall,f1,n_ref_tokens,n_entity_tokens";

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path,
                      const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open report CSV for writing: " + path);
  for (const std::string& c : comments) {
    if (c.find('\n') != std::string::npos || c.find('\r') != std::string::npos) {
      throw ValueError("report CSV comment must be a single line");
    }
    out << "# " << c << '\n';
  }
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    validate_csv_field(r.model_id);
    validate_csv_field(r.language);
    validate_csv_field(r.condition);
    out << r.model_id << ',' << r.language << ',' << r.condition << ','
        << format_double(r.wer) << ',' << format_double(r.precision) << ','
        << format_double(r.recall) << ',' << format_double(r.f1) << ',' << r.n_ref_tokens
        << ',' << r.n_entity_tokens << '\n';
  }
  if (!out) throw IoError("failed writing report CSV: " + path);
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report CSV: " + path);
  std::string line;
  size_t line_no = 0;
  // skip leading comment lines ("# ...") carrying run metadata
  do {
    if (!std::getline(in, line)) throw IoError("report CSV: bad or missing header in " + path);
    ++line_no;
  } while (!line.empty() && line[0] == '#');
  if (line != kCsvHeader) throw IoError("report CSV: bad or missing header in " + path);
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 9) {
      throw IoError("report CSV: expected 9 fields on line " + std::to_string(line_no));
    }
    try {
      ReportRow r;
      r.model_id = fields[0];
      r.language = fields[1];
      r.condition = fields[2];
      r.wer = std::stod(fields[3]);
      r.precision = std::stod(fields[4]);
      r.recall = std::stod(fields[5]);
      r.f1 = std::stod(fields[6]);
      r.n_ref_tokens = std::stoll(fields[7]);
      r.n_entity_tokens = std::stoll(fields[8]);
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw IoError("report CSV: malformed value on line " + std::to_string(line_no));
    }
  }
  return rows;
}

namespace {

int track_group(const std::string& id) {
  if (id.rfind("MONO", 0) == 0) return 0;
  if (id == "ML-I" || id.rfind("ML-II.a", 0) == 0 || id.rfind("ML-III.a", 0) == 0) return 1;
  if (id.rfind("ML-II.b", 0) == 0 || id.rfind("ML-III.b", 0) == 0) return 2;
  return 3;
}

}  // namespace

std::string render_report(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ValueError("render_report: no rows");
  static const char* kGroupNames[] = {
      "Monolingual",
      "Multilingual Training (Track \"a\")",
      "Multilingual Contextual Adapters (Track \"b\")",
      "Other",
  };
  std::string out;
  char buf[256];
  for (int g = 0; g < 4; ++g) {
    bool any = false;
    for (const auto& r : rows) any = any || track_group(r.model_id) == g;
    if (!any) continue;
    out += std::string(kGroupNames[g]) + "\n";
    std::snprintf(buf, sizeof buf, "  %-14s %-10s %-9s %8s %8s %8s %8s\n", "Model ID",
                  "Language", "Cond.", "WER%", "P%", "R%", "F1%");
    out += buf;
    for (const auto& r : rows) {
      if (track_group(r.model_id) != g) continue;
      std::snprintf(buf, sizeof buf, "  %-14s %-10s %-9s %8.2f %8.2f %8.2f %8.2f\n",
                    r.model_id.c_str(), r.language.c_str(), r.condition.c_str(), r.wer,
                    r.precision, r.recall, r.f1);
      out += buf;
    }
  }
  return out;
}

}  // namespace ctcadapt
