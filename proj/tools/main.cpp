// SPDX-License-Identifier: Apache-2.0
// Command-line front end: datagen / train / decode / eval / report / verify /
// lineup over one JSON run-config file. Flag values override file values.
// Exit codes: 0 success, 1 validation error, 2 runtime error, 3 verification
// failure. Failures print a single machine-parseable line
// "error: <category>: <message>" to stderr.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctcadapt/config.hpp"
#include "ctcadapt/error.hpp"
#include "ctcadapt/evalkit.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/synthlang.hpp"
#include "ctcadapt/trainer.hpp"
#include "ctcadapt/verify.hpp"

namespace fs = std::filesystem;
using namespace ctcadapt;

namespace {

void print_error(const std::string& category, const std::string& message) {
  std::string one_line = message;
  for (char& c : one_line)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error: " << category << ": " << one_line << "\n";
}

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

// File config (or defaults), then command-line overrides, then the hash of
// the effective configuration.
RunConfig effective_config(const CommonArgs& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_run_config(a.config_path);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.lineup.seed = *a.seed;
  }
  if (a.out) cfg.out_dir = *a.out;
  return cfg;
}

fs::path corpus_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "corpus"; }
fs::path ckpt_path(const RunConfig& cfg, const std::string& id) {
  return fs::path(cfg.out_dir) / "checkpoints" / (id + ".ckpt");
}
fs::path logs_path(const RunConfig& cfg, const std::string& id) {
  return fs::path(cfg.out_dir) / "logs" / (id + ".jsonl");
}

Corpus load_corpus_or_explain(const RunConfig& cfg) {
  fs::path dir = corpus_dir(cfg);
  if (!fs::exists(dir / "manifest.jsonl")) {
    throw ValidationError("no corpus at '" + dir.string() + "' (run the datagen command first)");
  }
  return load_corpus(dir.string());
}

ModelCheckpoint load_ancestor(const RunConfig& cfg, const std::string& id,
                              const std::string& advice) {
  fs::path p = ckpt_path(cfg, id);
  if (!fs::exists(p)) {
    throw ValidationError("missing ancestor checkpoint '" + p.string() + "' (" + advice + ")");
  }
  return load_checkpoint(p.string());
}

void save_stage_output(const RunConfig& cfg, const std::string& hash, StageResult& result) {
  const std::string id = result.checkpoint.provenance.at("model_id");
  result.checkpoint.provenance["run_config_hash"] = hash;
  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.out_dir) / "logs");
  save_checkpoint(result.checkpoint, ckpt_path(cfg, id).string());
  write_epoch_logs(result.logs, logs_path(cfg, id).string());
}

void require_language(const Corpus& corpus, const std::string& lang) {
  std::string known;
  for (const LanguageSpec& l : corpus.languages) {
    if (l.id == lang) return;
    known += (known.empty() ? "" : ", ") + l.id;
  }
  throw ValidationError("unknown language '" + lang + "' (corpus has: " + known + ")");
}

std::vector<const Utterance*> test_split(const Corpus& corpus, const std::string& lang) {
  std::vector<const Utterance*> out;
  for (const Utterance& u : corpus.utterances)
    if (u.lang == lang && u.split == "test") out.push_back(&u);
  if (out.empty()) throw ValidationError("no test utterances for language '" + lang + "'");
  return out;
}

DecodeCondition resolve_condition(const std::string& flag, const ModelCheckpoint& ckpt) {
  if (flag == "with" || (flag.empty() && ckpt.has_adapters)) {
    if (!ckpt.has_adapters) {
      throw ValidationError(
          "--condition with requires an adapter-bearing checkpoint; this one has none");
    }
    return DecodeCondition::WithAdapters;
  }
  return DecodeCondition::AdaptersDetached;
}

std::string model_id_of(const ModelCheckpoint& ckpt, const std::string& ckpt_file) {
  auto it = ckpt.provenance.find("model_id");
  if (it != ckpt.provenance.end() && !it->second.empty()) return it->second;
  return fs::path(ckpt_file).stem().string();
}

// ---- commands ---------------------------------------------------------------

int cmd_datagen(const RunConfig& cfg) {
  const std::string hash = run_config_hash(cfg);
  Corpus corpus = generate_corpus(cfg.corpus, cfg.seed);
  fs::path dir = corpus_dir(cfg);
  write_corpus(corpus, dir.string());
  const std::string fp = corpus_fingerprint(dir.string());

  std::ofstream out(dir / "fingerprint.txt", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "fingerprint.txt").string());
  out << "config_hash " << hash << "\n"
      << "seed " << cfg.seed << "\n"
      << "fingerprint " << fp << "\n";
  if (!out) throw IoError("failed writing " + (dir / "fingerprint.txt").string());

  std::cout << "datagen: " << corpus.utterances.size() << " utterances across "
            << corpus.languages.size() << " languages -> " << dir.string() << "\n"
            << "datagen: fingerprint " << fp << " (config " << hash << ")\n";
  return 0;
}

struct TrainArgs {
  std::string track;  // "a" | "b" | "" (stage I)
  std::string stage;  // "I" | "II" | "III"
  std::string lang;
  double alpha = 0.0;
  std::optional<int64_t> k_min, k_max;
};

int cmd_train(const RunConfig& cfg, const TrainArgs& a) {
  const std::string hash = run_config_hash(cfg);
  const LineupConfig& lu = cfg.lineup;
  const std::string lang = a.lang.empty() ? lu.target_lang : a.lang;
  if (a.stage != "I" && a.track.empty()) {
    throw ValidationError("--track a|b is required for stages II and III");
  }

  Corpus corpus = load_corpus_or_explain(cfg);
  if (a.stage != "I") require_language(corpus, lang);

  // Stage recipe: id, graph kind, data selection, epochs, step cap, ancestor.
  StageKind kind;
  std::string id, stage_lang, track = a.track;
  int64_t epochs = 0, cap = 0;
  bool finetune = false;
  ModelCheckpoint parent;
  if (a.stage == "I") {
    // Shared by both tracks; trains the pooled encoder from scratch.
    kind = StageKind::EncoderTrain;
    id = "ML-I";
    stage_lang = "";
    track = "";
    epochs = lu.pooled_encoder_epochs;
    cap = lu.pooled_steps_per_epoch;
    parent = ModelCheckpoint::fresh(cfg.encoder, cfg.adapters,
                                    derive_seed(cfg.seed, "encoder_init", 0));
  } else if (a.track == "a" && a.stage == "II") {
    kind = StageKind::EncoderTrain;
    id = "ML-II.a";
    stage_lang = lang;
    epochs = lu.finetune_epochs;
    finetune = true;
    parent = load_ancestor(cfg, "ML-I", "run `train --stage I` first");
  } else if (a.track == "a" && a.stage == "III") {
    kind = StageKind::AdapterTrain;
    id = a.alpha > 0.0 ? "ML-III.a.ce" : "ML-III.a";
    stage_lang = lang;
    epochs = lu.adapter_epochs;
    parent = load_ancestor(cfg, "ML-II.a", "run `train --track a --stage II` first");
  } else if (a.track == "b" && a.stage == "II") {
    kind = StageKind::AdapterTrain;
    id = a.alpha > 0.0 ? "ML-II.b.ce" : "ML-II.b";
    stage_lang = "";
    epochs = lu.adapter_epochs;
    cap = lu.pooled_steps_per_epoch;
    parent = load_ancestor(cfg, "ML-I", "run `train --stage I` first");
  } else {  // track b, stage III
    kind = StageKind::JointFinetune;
    id = "ML-III.b";
    stage_lang = lang;
    // One joint round = a biased epoch + a catalog-free consolidation epoch.
    epochs = 2 * lu.finetune_epochs;
    finetune = true;
    parent = load_ancestor(cfg, "ML-II.b", "run `train --track b --stage II` first");
  }

  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = lu.batch_size;
  tc.lr_max = lu.lr_max;
  tc.warmup_steps = lu.warmup_steps;
  tc.clip_norm = lu.clip_norm;
  tc.alpha = a.alpha;
  tc.k_min = a.k_min.value_or(lu.k_min);
  tc.k_max = a.k_max.value_or(lu.k_max);
  tc.seed = cfg.seed;
  tc.max_steps_per_epoch = cap;
  if (finetune) apply_finetune_schedule(tc);

  StageSpec spec{kind, id, a.stage, track, stage_lang};
  StageResult result = run_stage(parent, corpus, spec, tc);
  save_stage_output(cfg, hash, result);

  const auto& prov = result.checkpoint.provenance;
  std::cout << "train: " << id << " (stage " << a.stage
            << (track.empty() ? "" : ", track " + track)
            << (stage_lang.empty() ? ", pooled data" : ", language " + stage_lang)
            << ") best_epoch=" << prov.at("best_epoch") << " -> "
            << ckpt_path(cfg, id).string() << "\n";
  return 0;
}

struct DecodeArgs {
  std::string ckpt_file, lang, entities_file, condition;
};

int cmd_decode(const RunConfig& cfg, const DecodeArgs& a) {
  ModelCheckpoint ckpt = load_checkpoint(a.ckpt_file);
  Corpus corpus = load_corpus_or_explain(cfg);
  const std::string lang = a.lang.empty() ? cfg.lineup.target_lang : a.lang;
  require_language(corpus, lang);
  const std::string id = model_id_of(ckpt, a.ckpt_file);
  DecodeCondition cond = resolve_condition(a.condition, ckpt);
  std::vector<std::string> catalog;
  if (!a.entities_file.empty()) catalog = read_entity_list(a.entities_file);

  std::vector<const Utterance*> tests = test_split(corpus, lang);
  std::vector<DecodeResult> results = decode_suite(ckpt, tests, catalog, cond);

  fs::path path = fs::path(cfg.out_dir) / ("hyps_" + id + "_" + condition_name(cond) + ".jsonl");
  fs::create_directories(path.parent_path());
  write_hypotheses(results, tests, path.string());
  std::cout << "decode: " << results.size() << " hypotheses (" << id << ", "
            << condition_name(cond) << ", catalog " << catalog.size() << " words) -> "
            << path.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const DecodeArgs& a) {
  const std::string hash = run_config_hash(cfg);
  ModelCheckpoint ckpt = load_checkpoint(a.ckpt_file);
  Corpus corpus = load_corpus_or_explain(cfg);
  const std::string lang = a.lang.empty() ? cfg.lineup.target_lang : a.lang;
  require_language(corpus, lang);
  const std::string id = model_id_of(ckpt, a.ckpt_file);
  DecodeCondition cond = resolve_condition(a.condition, ckpt);
  std::vector<std::string> entities;
  if (!a.entities_file.empty()) entities = read_entity_list(a.entities_file);

  ReportRow row = evaluate_checkpoint(ckpt, corpus, lang, entities, cond, id);

  fs::path csv = fs::path(cfg.out_dir) / "report.csv";
  std::vector<ReportRow> rows;
  if (fs::exists(csv)) rows = read_report_csv(csv.string());
  rows.push_back(row);
  fs::create_directories(csv.parent_path());
  write_report_csv(rows, csv.string(), {"config_hash=" + hash});

  std::printf("eval: %s %s %s WER=%.2f%%", row.model_id.c_str(), row.language.c_str(),
              row.condition.c_str(), row.wer);
  if (!entities.empty()) std::printf(" F1=%.2f%%", row.f1);
  std::printf(" (%lld ref tokens) -> %s\n", static_cast<long long>(row.n_ref_tokens),
              csv.string().c_str());
  return 0;
}

struct ReportArgs {
  std::string lang, entities_file;
};

int cmd_report(const RunConfig& cfg, const ReportArgs& a) {
  const std::string hash = run_config_hash(cfg);
  Corpus corpus = load_corpus_or_explain(cfg);
  const std::string lang = a.lang.empty() ? cfg.lineup.target_lang : a.lang;
  require_language(corpus, lang);

  std::map<std::string, ModelCheckpoint> models;
  for (const std::string& id : kLineupModelIds) {
    fs::path p = ckpt_path(cfg, id);
    if (!fs::exists(p)) {
      throw ValidationError("missing lineup checkpoint '" + p.string() +
                            "' (run the lineup command first)");
    }
    models.emplace(id, load_checkpoint(p.string()));
  }

  std::vector<std::string> entities =
      a.entities_file.empty()
          ? read_entity_list((corpus_dir(cfg) / ("entities_" + lang + ".txt")).string())
          : read_entity_list(a.entities_file);

  std::vector<ReportRow> rows = lineup_report(models, corpus, lang, entities);
  fs::path csv = fs::path(cfg.out_dir) / "report.csv";
  write_report_csv(rows, csv.string(), {"config_hash=" + hash});
  std::string table = render_report(rows);
  std::ofstream txt(fs::path(cfg.out_dir) / "report.txt", std::ios::binary);
  txt << table;
  std::cout << table << "report: " << rows.size() << " rows -> " << csv.string() << "\n";
  return 0;
}

struct LineupArgs {
  std::string lang;
  std::optional<double> alpha;
  std::optional<int64_t> k_min, k_max;
};

int cmd_lineup(const RunConfig& cfg, const LineupArgs& a) {
  const std::string hash = run_config_hash(cfg);
  Corpus corpus = load_corpus_or_explain(cfg);

  LineupConfig lu = cfg.lineup;
  if (!a.lang.empty()) lu.target_lang = a.lang;
  if (a.alpha) lu.alpha_ce = *a.alpha;
  if (a.k_min) lu.k_min = *a.k_min;
  if (a.k_max) lu.k_max = *a.k_max;
  require_language(corpus, lu.target_lang);

  LineupResult result = build_model_lineup(corpus, lu);

  std::map<std::string, std::vector<EpochLog>> by_model;
  for (const EpochLog& log : result.logs) by_model[log.stage].push_back(log);

  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.out_dir) / "logs");
  for (const std::string& id : kLineupModelIds) {
    ModelCheckpoint& ckpt = result.models.at(id);
    ckpt.provenance["run_config_hash"] = hash;
    save_checkpoint(ckpt, ckpt_path(cfg, id).string());
    write_epoch_logs(by_model[id], logs_path(cfg, id).string());
    std::cout << "lineup: " << id << " best_epoch=" << ckpt.provenance.at("best_epoch")
              << " -> " << ckpt_path(cfg, id).string() << "\n";
  }
  std::cout << "lineup: 10 checkpoints (target language " << lu.target_lang << ", config "
            << hash << ")\n";
  return 0;
}

int cmd_verify() {
  std::vector<VerifySuite> suites = run_verification();
  int failed = 0;
  for (const VerifySuite& s : suites) {
    std::printf("%-26s %s  max_error=%.3g  tolerance=%.3g  [%s]\n", s.name.c_str(),
                s.pass ? "PASS" : "FAIL", s.max_error, s.tolerance, s.detail.c_str());
    failed += s.pass ? 0 : 1;
  }
  if (failed > 0) {
    print_error("verification", std::to_string(failed) + " suite(s) failed");
    return 3;
  }
  std::cout << "verify: all " << suites.size() << " suites passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual-adapter CTC workbench"};
  app.require_subcommand(1);

  CommonArgs common;
  TrainArgs train_args;
  DecodeArgs decode_args, eval_args;
  ReportArgs report_args;
  LineupArgs lineup_args;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", common.config_path, "run-config JSON file");
    if (with_seed) sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out", common.out, "override the config output directory");
  };

  CLI::App* datagen = app.add_subcommand("datagen", "generate the synthetic corpus");
  add_common(datagen);

  CLI::App* train = app.add_subcommand("train", "train one stage of a track");
  add_common(train);
  train->add_option("--track", train_args.track, "track (a|b); stage I is shared")
      ->check(CLI::IsMember({"a", "b"}));
  train->add_option("--stage", train_args.stage, "stage (I|II|III)")
      ->required()
      ->check(CLI::IsMember({"I", "II", "III"}));
  train->add_option("--lang", train_args.lang,
                    "target language (default: config target_lang; ignored by stage I)");
  train->add_option("--alpha", train_args.alpha,
                    "attention-supervision weight (>0 trains the .ce variant)");
  train->add_option("--k-min", train_args.k_min, "curriculum catalog size at epoch 0");
  train->add_option("--k-max", train_args.k_max, "curriculum catalog size at the last epoch");

  CLI::App* decode = app.add_subcommand("decode", "greedy-decode a test split");
  add_common(decode, false);
  decode->add_option("checkpoint", decode_args.ckpt_file, "checkpoint file")->required();
  decode->add_option("--lang", decode_args.lang, "language (default: config target_lang)");
  decode->add_option("--entities", decode_args.entities_file, "entity list used as the catalog");
  decode->add_option("--condition", decode_args.condition, "with|without adapters")
      ->check(CLI::IsMember({"with", "without"}));

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint and append a report row");
  add_common(eval, false);
  eval->add_option("checkpoint", eval_args.ckpt_file, "checkpoint file")->required();
  eval->add_option("--lang", eval_args.lang, "language (default: config target_lang)");
  eval->add_option("--entities", eval_args.entities_file,
                   "entity list (enables the F1 columns)");
  eval->add_option("--condition", eval_args.condition, "with|without adapters")
      ->check(CLI::IsMember({"with", "without"}));

  CLI::App* report = app.add_subcommand("report", "evaluate the full lineup into a report");
  add_common(report, false);
  report->add_option("--lang", report_args.lang, "language (default: config target_lang)");
  report->add_option("--entities", report_args.entities_file,
                     "entity list (default: the language's generated list)");

  CLI::App* lineup = app.add_subcommand("lineup", "train all ten lineup models");
  add_common(lineup);
  lineup->add_option("--lang", lineup_args.lang, "override the lineup target language");
  lineup->add_option("--alpha", lineup_args.alpha, "override the .ce supervision weight");
  lineup->add_option("--k-min", lineup_args.k_min, "curriculum catalog size at epoch 0");
  lineup->add_option("--k-max", lineup_args.k_max, "curriculum catalog size at the last epoch");

  CLI::App* verify = app.add_subcommand("verify", "run the numeric verification suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("validation", e.what());
    return 1;
  }

  try {
    if (verify->parsed()) return cmd_verify();
    RunConfig cfg = effective_config(common);
    if (datagen->parsed()) return cmd_datagen(cfg);
    if (train->parsed()) return cmd_train(cfg, train_args);
    if (decode->parsed()) return cmd_decode(cfg, decode_args);
    if (eval->parsed()) return cmd_eval(cfg, eval_args);
    if (report->parsed()) return cmd_report(cfg, report_args);
    if (lineup->parsed()) return cmd_lineup(cfg, lineup_args);
    print_error("validation", "no subcommand given");
    return 1;
  } catch (const ValidationError& e) {
    print_error("validation", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 2;
  }
}
