// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"
#include "json.hpp"

namespace ctcadapt {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ValidationError("config: " + msg); }

void check_keys(const json& obj, const std::string& prefix,
                const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.contains(it.key())) bad("unknown key '" + prefix + it.key() + "'");
  }
}

const json* field(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void read_i64(const json& obj, const char* key, const std::string& prefix, int64_t& out) {
  if (const json* v = field(obj, key)) {
    if (!v->is_number_integer()) bad("'" + prefix + key + "' must be an integer");
    out = v->get<int64_t>();
  }
}

void read_u64(const json& obj, const char* key, const std::string& prefix, uint64_t& out) {
  if (const json* v = field(obj, key)) {
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<int64_t>() < 0)) {
      bad("'" + prefix + key + "' must be a non-negative integer");
    }
    out = v->get<uint64_t>();
  }
}

void read_int(const json& obj, const char* key, const std::string& prefix, int& out) {
  int64_t wide = out;
  read_i64(obj, key, prefix, wide);
  out = static_cast<int>(wide);
}

void read_f64(const json& obj, const char* key, const std::string& prefix, double& out) {
  if (const json* v = field(obj, key)) {
    if (!v->is_number()) bad("'" + prefix + key + "' must be a number");
    out = v->get<double>();
  }
}

void read_str(const json& obj, const char* key, const std::string& prefix, std::string& out) {
  if (const json* v = field(obj, key)) {
    if (!v->is_string()) bad("'" + prefix + key + "' must be a string");
    out = v->get<std::string>();
  }
}

void read_i64_list(const json& obj, const char* key, const std::string& prefix,
                   std::vector<int64_t>& out) {
  if (const json* v = field(obj, key)) {
    if (!v->is_array()) bad("'" + prefix + key + "' must be an array of integers");
    std::vector<int64_t> parsed;
    for (const json& e : *v) {
      if (!e.is_number_integer()) bad("'" + prefix + key + "' must be an array of integers");
      parsed.push_back(e.get<int64_t>());
    }
    out = std::move(parsed);
  }
}

void parse_corpus(const json& obj, CorpusConfig& c) {
  const std::string p = "corpus.";
  check_keys(obj, p,
             {"feat_dim", "budgets", "dev_utts", "test_utts", "lexicon_words", "entity_words",
              "accent_scale", "noise_scale", "entity_rate", "min_word_len", "max_word_len",
              "min_words", "max_words", "zipf_exponent"});
  read_i64(obj, "feat_dim", p, c.feat_dim);
  read_i64_list(obj, "budgets", p, c.budgets);
  read_i64(obj, "dev_utts", p, c.dev_utts);
  read_i64(obj, "test_utts", p, c.test_utts);
  read_i64(obj, "lexicon_words", p, c.lexicon_words);
  read_i64(obj, "entity_words", p, c.entity_words);
  read_f64(obj, "accent_scale", p, c.accent_scale);
  read_f64(obj, "noise_scale", p, c.noise_scale);
  read_f64(obj, "entity_rate", p, c.entity_rate);
  read_i64(obj, "min_word_len", p, c.min_word_len);
  read_i64(obj, "max_word_len", p, c.max_word_len);
  read_i64(obj, "min_words", p, c.min_words);
  read_i64(obj, "max_words", p, c.max_words);
  read_f64(obj, "zipf_exponent", p, c.zipf_exponent);
}

void parse_model(const json& obj, EncoderConfig& e, AdapterConfig& a) {
  const std::string p = "model.";
  check_keys(obj, p, {"hidden_dim", "blocks", "heads", "ffn_dim", "adapter_embed_dim"});
  read_i64(obj, "hidden_dim", p, e.hidden_dim);
  read_int(obj, "blocks", p, e.blocks);
  read_int(obj, "heads", p, e.heads);
  read_i64(obj, "ffn_dim", p, e.ffn_dim);
  read_i64(obj, "adapter_embed_dim", p, a.embed_dim);
}

void parse_train(const json& obj, LineupConfig& t) {
  const std::string p = "train.";
  check_keys(obj, p,
             {"target_lang", "lr_max", "warmup_steps", "batch_size", "clip_norm", "alpha_ce",
              "k_min", "k_max", "mono_encoder_epochs", "pooled_encoder_epochs",
              "adapter_epochs", "finetune_epochs", "pooled_steps_per_epoch"});
  read_str(obj, "target_lang", p, t.target_lang);
  read_f64(obj, "lr_max", p, t.lr_max);
  read_i64(obj, "warmup_steps", p, t.warmup_steps);
  read_i64(obj, "batch_size", p, t.batch_size);
  read_f64(obj, "clip_norm", p, t.clip_norm);
  read_f64(obj, "alpha_ce", p, t.alpha_ce);
  read_i64(obj, "k_min", p, t.k_min);
  read_i64(obj, "k_max", p, t.k_max);
  read_i64(obj, "mono_encoder_epochs", p, t.mono_encoder_epochs);
  read_i64(obj, "pooled_encoder_epochs", p, t.pooled_encoder_epochs);
  read_i64(obj, "adapter_epochs", p, t.adapter_epochs);
  read_i64(obj, "finetune_epochs", p, t.finetune_epochs);
  read_i64(obj, "pooled_steps_per_epoch", p, t.pooled_steps_per_epoch);
}

std::string fmt_f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded()) bad("not valid JSON");
  if (!root.is_object()) bad("top level must be an object");
  check_keys(root, "", {"seed", "out_dir", "corpus", "model", "train"});

  RunConfig cfg;
  read_u64(root, "seed", "", cfg.seed);
  read_str(root, "out_dir", "", cfg.out_dir);
  if (cfg.out_dir.empty()) bad("'out_dir' must not be empty");

  if (const json* c = field(root, "corpus")) {
    if (!c->is_object()) bad("'corpus' must be an object");
    parse_corpus(*c, cfg.corpus);
  }
  if (const json* m = field(root, "model")) {
    if (!m->is_object()) bad("'model' must be an object");
    parse_model(*m, cfg.encoder, cfg.adapters);
  }
  if (const json* t = field(root, "train")) {
    if (!t->is_object()) bad("'train' must be an object");
    parse_train(*t, cfg.lineup);
  }

  // Tied fields: frame width feeds the encoder, the subword inventory fixes
  // both vocabularies, and the adapter partition must match the encoder.
  cfg.encoder.input_dim = cfg.corpus.feat_dim;
  cfg.encoder.vocab_size = kVocabSize;
  cfg.adapters.vocab_size = kVocabSize;
  cfg.adapters.hidden_dim = cfg.encoder.hidden_dim;
  cfg.adapters.blocks = cfg.encoder.blocks;
  cfg.lineup.seed = cfg.seed;
  cfg.lineup.encoder = cfg.encoder;
  cfg.lineup.adapters = cfg.adapters;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_canonical(const RunConfig& cfg) {
  // Hand-rendered with a fixed key order and %.17g doubles: equal parsed
  // configs always canonicalize to the same bytes.
  std::ostringstream out;
  out << "{\"corpus\":{";
  out << "\"accent_scale\":" << fmt_f64(cfg.corpus.accent_scale);
  out << ",\"budgets\":[";
  for (size_t i = 0; i < cfg.corpus.budgets.size(); ++i) {
    if (i) out << ',';
    out << cfg.corpus.budgets[i];
  }
  out << "],\"dev_utts\":" << cfg.corpus.dev_utts;
  out << ",\"entity_rate\":" << fmt_f64(cfg.corpus.entity_rate);
  out << ",\"entity_words\":" << cfg.corpus.entity_words;
  out << ",\"feat_dim\":" << cfg.corpus.feat_dim;
  out << ",\"lexicon_words\":" << cfg.corpus.lexicon_words;
  out << ",\"max_word_len\":" << cfg.corpus.max_word_len;
  out << ",\"max_words\":" << cfg.corpus.max_words;
  out << ",\"min_word_len\":" << cfg.corpus.min_word_len;
  out << ",\"min_words\":" << cfg.corpus.min_words;
  out << ",\"noise_scale\":" << fmt_f64(cfg.corpus.noise_scale);
  out << ",\"test_utts\":" << cfg.corpus.test_utts;
  out << ",\"zipf_exponent\":" << fmt_f64(cfg.corpus.zipf_exponent);
  out << "},\"model\":{";
  out << "\"adapter_embed_dim\":" << cfg.adapters.embed_dim;
  out << ",\"blocks\":" << cfg.encoder.blocks;
  out << ",\"ffn_dim\":" << cfg.encoder.ffn_dim;
  out << ",\"heads\":" << cfg.encoder.heads;
  out << ",\"hidden_dim\":" << cfg.encoder.hidden_dim;
  out << "},\"out_dir\":" << json(cfg.out_dir).dump();
  out << ",\"seed\":" << cfg.seed;
  out << ",\"train\":{";
  out << "\"adapter_epochs\":" << cfg.lineup.adapter_epochs;
  out << ",\"alpha_ce\":" << fmt_f64(cfg.lineup.alpha_ce);
  out << ",\"batch_size\":" << cfg.lineup.batch_size;
  out << ",\"clip_norm\":" << fmt_f64(cfg.lineup.clip_norm);
  out << ",\"finetune_epochs\":" << cfg.lineup.finetune_epochs;
  out << ",\"k_max\":" << cfg.lineup.k_max;
  out << ",\"k_min\":" << cfg.lineup.k_min;
  out << ",\"lr_max\":" << fmt_f64(cfg.lineup.lr_max);
  out << ",\"mono_encoder_epochs\":" << cfg.lineup.mono_encoder_epochs;
  out << ",\"pooled_encoder_epochs\":" << cfg.lineup.pooled_encoder_epochs;
  out << ",\"pooled_steps_per_epoch\":" << cfg.lineup.pooled_steps_per_epoch;
  out << ",\"target_lang\":" << json(cfg.lineup.target_lang).dump();
  out << ",\"warmup_steps\":" << cfg.lineup.warmup_steps;
  out << "}}";
  return out.str();
}

std::string run_config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash_str(run_config_canonical(cfg))));
  return buf;
}

}  // namespace ctcadapt
