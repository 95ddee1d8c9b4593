// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/synthlang.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"

namespace ctcadapt {

namespace {

const char* kLangNames[] = {"alpha", "beta", "gamma", "delta",
                            "epsilon", "zeta", "eta", "theta"};

std::string lang_name(size_t i) {
  if (i < std::size(kLangNames)) return kLangNames[i];
  return "lang" + std::to_string(i);
}

// random word of config length bounds with no consecutive repeated character
std::string gen_word(Rng& rng, int64_t min_len, int64_t max_len) {
  int64_t len = rng.uniform_int(min_len, max_len);
  std::string w;
  w.reserve(static_cast<size_t>(len));
  char prev = 0;
  for (int64_t i = 0; i < len; ++i) {
    char c;
    if (prev == 0) {
      c = static_cast<char>('a' + rng.uniform_int(0, 25));
    } else {
      // draw from the 25 characters that differ from prev
      int64_t r = rng.uniform_int(0, 24);
      c = static_cast<char>('a' + r);
      if (c >= prev) c = static_cast<char>(c + 1);
    }
    w.push_back(c);
    prev = c;
  }
  return w;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) s.push_back(' ');
    s += words[i];
  }
  return s;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

std::vector<int> word_to_ids(const std::string& word) {
  if (word.empty()) throw ValueError("word_to_ids: empty word");
  std::vector<int> ids;
  ids.reserve(word.size());
  for (char c : word) {
    if (c < 'a' || c > 'z')
      throw ValueError("word_to_ids: character '" + std::string(1, c) +
                       "' outside the a-z inventory");
    ids.push_back(c - 'a' + 2);
  }
  return ids;
}

std::vector<int> transcript_to_ids(const std::vector<std::string>& words) {
  if (words.empty()) throw ValueError("transcript_to_ids: empty transcript");
  std::vector<int> ids;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) ids.push_back(kSepId);
    auto w = word_to_ids(words[i]);
    ids.insert(ids.end(), w.begin(), w.end());
  }
  return ids;
}

std::string ids_to_string(const std::vector<int>& ids) {
  std::string s;
  for (int id : ids) {
    if (id == kSepId) {
      s.push_back(' ');
    } else if (id >= 2 && id < kVocabSize) {
      s.push_back(static_cast<char>('a' + id - 2));
    } else {
      throw ValueError("ids_to_string: id " + std::to_string(id) +
                       " is not a printable subword");
    }
  }
  return s;
}

std::vector<std::string> ids_to_words(const std::vector<int>& ids) {
  return split_words(ids_to_string(ids));
}

std::string pick_boost_word(const std::vector<std::string>& transcript,
                            const std::map<std::string, int64_t>& freq) {
  if (transcript.empty()) throw ValueError("pick_boost_word: empty transcript");
  size_t best = 0;
  int64_t best_freq = INT64_MAX;
  for (size_t i = 0; i < transcript.size(); ++i) {
    auto it = freq.find(transcript[i]);
    int64_t f = it == freq.end() ? 0 : it->second;
    if (f < best_freq) {
      best_freq = f;
      best = i;
    }
  }
  return transcript[best];
}

SampledCatalog sample_catalog(const std::vector<std::string>& pool, const std::string& boost,
                              int64_t k, uint64_t seed) {
  if (k < 1) throw ValueError("sample_catalog: k must be >= 1");
  if (boost.empty()) throw ValueError("sample_catalog: empty boost word");
  std::vector<std::string> distractors;
  distractors.reserve(pool.size());
  for (const auto& w : pool)
    if (w != boost) distractors.push_back(w);
  if (static_cast<int64_t>(distractors.size()) < k - 1)
    throw ValueError("sample_catalog: pool of " + std::to_string(distractors.size()) +
                     " distractors cannot fill k=" + std::to_string(k));
  Rng rng(seed);
  rng.shuffle(distractors);
  distractors.resize(static_cast<size_t>(k - 1));
  int64_t pos = rng.uniform_int(0, k - 1);
  SampledCatalog out;
  out.words = distractors;
  out.words.insert(out.words.begin() + pos, boost);
  out.correct_index = static_cast<int>(pos);
  for (const auto& w : out.words) out.catalog.entries.push_back(word_to_ids(w));
  return out;
}

OovSelection select_oov_entities(const std::vector<std::vector<std::string>>& train_transcripts,
                                 const std::vector<std::vector<std::string>>& test_transcripts,
                                 int64_t n, uint64_t seed) {
  if (n < 1) throw ValueError("select_oov_entities: n must be >= 1");
  std::set<std::string> train_vocab;
  for (const auto& t : train_transcripts) train_vocab.insert(t.begin(), t.end());
  std::vector<std::string> candidates;
  std::set<std::string> seen;
  for (const auto& t : test_transcripts)
    for (const auto& w : t)
      if (!train_vocab.count(w) && seen.insert(w).second) candidates.push_back(w);
  if (candidates.empty())
    throw ValueError("select_oov_entities: every test word appears in training");
  OovSelection out;
  if (static_cast<int64_t>(candidates.size()) <= n) {
    out.words = candidates;
    out.truncated = static_cast<int64_t>(candidates.size()) < n;
    return out;
  }
  Rng rng(seed);
  rng.shuffle(candidates);
  candidates.resize(static_cast<size_t>(n));
  out.words = candidates;
  return out;
}

Corpus generate_corpus(const CorpusConfig& config, uint64_t seed) {
  if (config.budgets.size() < 2)
    throw ValueError("generate_corpus: need at least two languages");
  if (config.feat_dim < 1) throw ValueError("generate_corpus: feat_dim must be >= 1");
  if (config.lexicon_words < 1) throw ValueError("generate_corpus: empty lexicon requested");
  if (config.accent_scale < 0.0 || config.accent_scale > 1.0)
    throw ValueError("generate_corpus: accent_scale must lie in [0,1]");
  if (config.noise_scale < 0.0) throw ValueError("generate_corpus: negative noise_scale");
  if (config.entity_rate < 0.0 || config.entity_rate > 1.0)
    throw ValueError("generate_corpus: entity_rate must lie in [0,1]");
  if (config.min_word_len < 1 || config.min_word_len > config.max_word_len)
    throw ValueError("generate_corpus: bad word-length bounds");
  if (config.min_words < 1 || config.min_words > config.max_words)
    throw ValueError("generate_corpus: bad words-per-utterance bounds");
  int64_t max_budget = *std::max_element(config.budgets.begin(), config.budgets.end());
  int64_t min_budget = *std::min_element(config.budgets.begin(), config.budgets.end());
  if (min_budget < 1) throw ValueError("generate_corpus: budgets must be positive");
  if (min_budget * 5 > max_budget)
    throw ValueError("generate_corpus: smallest budget must be at most 1/5 of the largest");

  Corpus corpus;
  corpus.config = config;
  corpus.seed = seed;

  // shared phoneme embeddings, one row per subword id (blank row stays zero)
  Rng emb_rng(derive_seed(seed, "phoneme_emb", 0));
  std::vector<std::vector<double>> emb(static_cast<size_t>(kVocabSize),
                                       std::vector<double>(static_cast<size_t>(config.feat_dim), 0.0));
  for (int64_t p = 1; p < kVocabSize; ++p)
    for (int64_t d = 0; d < config.feat_dim; ++d)
      emb[static_cast<size_t>(p)][static_cast<size_t>(d)] = emb_rng.uniform(-1.0, 1.0);

  // languages: accents and lexicons
  std::set<std::string> all_lexicon_words;
  for (size_t i = 0; i < config.budgets.size(); ++i) {
    LanguageSpec lang;
    lang.id = lang_name(i);
    lang.noise_scale = config.noise_scale;
    lang.train_utts = config.budgets[i];
    lang.dev_utts = config.dev_utts;
    lang.test_utts = config.test_utts;
    Rng acc_rng(derive_seed(seed, "accent", i));
    for (int64_t d = 0; d < config.feat_dim; ++d)
      lang.accent.push_back(acc_rng.uniform(-config.accent_scale, config.accent_scale));
    Rng lex_rng(derive_seed(seed, "lexicon", i));
    std::set<std::string> mine;
    while (static_cast<int64_t>(lang.lexicon.size()) < config.lexicon_words) {
      std::string w = gen_word(lex_rng, config.min_word_len, config.max_word_len);
      if (mine.insert(w).second) lang.lexicon.push_back(w);
    }
    all_lexicon_words.insert(mine.begin(), mine.end());
    corpus.languages.push_back(std::move(lang));
  }

  // entity pools: constructed words absent from every lexicon and other pools
  std::set<std::string> all_entities;
  for (size_t i = 0; i < corpus.languages.size(); ++i) {
    LanguageSpec& lang = corpus.languages[i];
    Rng ent_rng(derive_seed(seed, "entities", i));
    while (static_cast<int64_t>(lang.entity_pool.size()) < config.entity_words) {
      std::string w = gen_word(ent_rng, config.min_word_len, config.max_word_len);
      if (all_lexicon_words.count(w) || !all_entities.insert(w).second) continue;
      lang.entity_pool.push_back(w);
    }
  }

  // Zipf weights over lexicon ranks (generation order)
  std::vector<double> zipf_cum(static_cast<size_t>(config.lexicon_words));
  {
    double acc = 0.0;
    for (int64_t r = 0; r < config.lexicon_words; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
      zipf_cum[static_cast<size_t>(r)] = acc;
    }
  }
  auto draw_word = [&](const LanguageSpec& lang, Rng& rng) -> const std::string& {
    double u = rng.uniform(0.0, zipf_cum.back());
    size_t r = static_cast<size_t>(std::lower_bound(zipf_cum.begin(), zipf_cum.end(), u) -
                                   zipf_cum.begin());
    if (r >= lang.lexicon.size()) r = lang.lexicon.size() - 1;
    return lang.lexicon[r];
  };

  const char* splits[] = {"train", "dev", "test"};
  for (const LanguageSpec& lang : corpus.languages) {
    for (const char* split : splits) {
      int64_t count = std::string(split) == "train" ? lang.train_utts
                      : std::string(split) == "dev" ? lang.dev_utts
                                                    : lang.test_utts;
      for (int64_t idx = 0; idx < count; ++idx) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%05lld", static_cast<long long>(idx));
        Utterance utt;
        utt.lang = lang.id;
        utt.split = split;
        utt.id = lang.id + "-" + split + "-" + buf;
        Rng rng(derive_seed(seed, utt.id, 0));
        int64_t m = rng.uniform_int(config.min_words, config.max_words);
        for (int64_t w = 0; w < m; ++w) utt.words.push_back(draw_word(lang, rng));
        if (std::string(split) == "test") {
          double u = rng.uniform();  // always drawn: keeps the stream aligned
          if (u < config.entity_rate && !lang.entity_pool.empty()) {
            int64_t slot = rng.uniform_int(0, m - 1);
            int64_t pick = rng.uniform_int(0, static_cast<int64_t>(lang.entity_pool.size()) - 1);
            utt.words[static_cast<size_t>(slot)] = lang.entity_pool[static_cast<size_t>(pick)];
          }
        }

        // durations are a pure function of the phoneme sequence, so equal
        // word sequences render to equally many frames
        std::vector<int> phonemes = transcript_to_ids(utt.words);
        Rng dur_rng(derive_seed(seed, "dur:" + join_words(utt.words), 0));
        std::vector<int64_t> durs;
        durs.reserve(phonemes.size());
        int64_t t_total = 0;
        for (size_t p = 0; p < phonemes.size(); ++p) {
          int64_t d = dur_rng.uniform_int(1, 3);
          durs.push_back(d);
          t_total += d;
        }
        utt.frames = Tensor::zeros({t_total, config.feat_dim});
        auto fv = utt.frames.values_mut();
        int64_t row = 0;
        for (size_t p = 0; p < phonemes.size(); ++p) {
          const auto& base = emb[static_cast<size_t>(phonemes[p])];
          for (int64_t r = 0; r < durs[p]; ++r, ++row)
            for (int64_t d = 0; d < config.feat_dim; ++d)
              fv[static_cast<size_t>(row * config.feat_dim + d)] =
                  base[static_cast<size_t>(d)] + lang.accent[static_cast<size_t>(d)] +
                  lang.noise_scale * rng.normal();
        }
        corpus.utterances.push_back(std::move(utt));
      }
    }
  }

  // per-language training-frequency tables, then boost words everywhere
  for (const Utterance& u : corpus.utterances)
    if (u.split == "train")
      for (const auto& w : u.words) ++corpus.train_freq[u.lang][w];
  for (Utterance& u : corpus.utterances)
    u.boost_word = pick_boost_word(u.words, corpus.train_freq[u.lang]);

  return corpus;
}

// ---- I/O --------------------------------------------------------------------

namespace fs = std::filesystem;

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  int64_t d = corpus.config.feat_dim;

  // group rows by frames file, canonical utterance order
  std::map<std::string, std::vector<const Utterance*>> by_file;
  for (const Utterance& u : corpus.utterances)
    by_file["frames_" + u.lang + "_" + u.split + ".bin"].push_back(&u);

  std::map<std::string, std::pair<int64_t, std::map<std::string, int64_t>>> offsets;
  for (const auto& [file, utts] : by_file) {
    int64_t total = 0;
    for (const Utterance* u : utts) total += u->frames.dim(0);
    std::ofstream os(fs::path(dir) / file, std::ios::binary);
    if (!os) throw IoError("write_corpus: cannot open " + file);
    int32_t header[2] = {static_cast<int32_t>(total), static_cast<int32_t>(d)};
    os.write(reinterpret_cast<const char*>(header), sizeof header);
    int64_t row = 0;
    auto& entry = offsets[file];
    entry.first = total;
    for (const Utterance* u : utts) {
      entry.second[u->id] = row;
      std::vector<float> buf(static_cast<size_t>(u->frames.size()));
      for (int64_t i = 0; i < u->frames.size(); ++i)
        buf[static_cast<size_t>(i)] = static_cast<float>(u->frames.values()[static_cast<size_t>(i)]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
      row += u->frames.dim(0);
    }
  }

  std::ofstream mf(fs::path(dir) / "manifest.jsonl");
  if (!mf) throw IoError("write_corpus: cannot open manifest.jsonl");
  for (const Utterance& u : corpus.utterances) {
    std::string file = "frames_" + u.lang + "_" + u.split + ".bin";
    nlohmann::json j;
    j["id"] = u.id;
    j["lang"] = u.lang;
    j["split"] = u.split;
    j["transcript"] = join_words(u.words);
    if (!u.boost_word.empty()) j["boost_word"] = u.boost_word;
    j["frames_file"] = file;
    j["frame_offset"] = offsets[file].second[u.id];
    j["num_frames"] = u.frames.dim(0);
    mf << j.dump() << "\n";
  }

  for (const LanguageSpec& lang : corpus.languages) {
    std::ofstream ef(fs::path(dir) / ("entities_" + lang.id + ".txt"));
    if (!ef) throw IoError("write_corpus: cannot open entity list for " + lang.id);
    for (const auto& w : lang.entity_pool) ef << w << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("read_manifest: malformed JSON at line " + std::to_string(lineno));
    ManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.lang = j.at("lang").get<std::string>();
      e.split = j.at("split").get<std::string>();
      e.words = split_words(j.at("transcript").get<std::string>());
      if (j.contains("boost_word")) e.boost_word = j["boost_word"].get<std::string>();
      e.frames_file = j.at("frames_file").get<std::string>();
      e.frame_offset = j.at("frame_offset").get<int64_t>();
      e.num_frames = j.at("num_frames").get<int64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("read_manifest: line " + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

Tensor read_frames(const std::string& dir, const ManifestEntry& entry) {
  fs::path p = fs::path(dir) / entry.frames_file;
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("read_frames: cannot open " + p.string());
  int32_t header[2];
  is.read(reinterpret_cast<char*>(header), sizeof header);
  if (!is) throw IoError("read_frames: truncated header in " + entry.frames_file);
  int64_t total = header[0], d = header[1];
  if (d < 1 || total < 0) throw IoError("read_frames: corrupt header in " + entry.frames_file);
  if (entry.frame_offset < 0 || entry.frame_offset + entry.num_frames > total)
    throw IoError("read_frames: rows [" + std::to_string(entry.frame_offset) + "," +
                  std::to_string(entry.frame_offset + entry.num_frames) + ") of " +
                  entry.frames_file + " exceed " + std::to_string(total));
  is.seekg(static_cast<std::streamoff>(sizeof header) +
           static_cast<std::streamoff>(entry.frame_offset * d * static_cast<int64_t>(sizeof(float))));
  std::vector<float> buf(static_cast<size_t>(entry.num_frames * d));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw IoError("read_frames: truncated data in " + entry.frames_file);
  Tensor t = Tensor::zeros({entry.num_frames, d});
  auto tv = t.values_mut();
  for (size_t i = 0; i < buf.size(); ++i) tv[i] = static_cast<double>(buf[i]);
  return t;
}

std::vector<std::string> read_entity_list(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_entity_list: cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<Utterance> load_utterances(const std::string& dir) {
  auto manifest = read_manifest((fs::path(dir) / "manifest.jsonl").string());
  std::vector<Utterance> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    Utterance u;
    u.id = e.id;
    u.lang = e.lang;
    u.split = e.split;
    u.words = e.words;
    u.boost_word = e.boost_word;
    u.frames = read_frames(dir, e);
    out.push_back(std::move(u));
  }
  return out;
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  corpus.utterances = load_utterances(dir);
  if (corpus.utterances.empty()) throw IoError("load_corpus: no utterances in " + dir);
  corpus.config.feat_dim = corpus.utterances.front().frames.dim(1);

  for (const Utterance& u : corpus.utterances) {
    bool known = false;
    for (const LanguageSpec& l : corpus.languages) known = known || l.id == u.lang;
    if (!known) {
      LanguageSpec lang;
      lang.id = u.lang;
      lang.entity_pool = read_entity_list((fs::path(dir) / ("entities_" + u.lang + ".txt")).string());
      corpus.languages.push_back(std::move(lang));
    }
    for (LanguageSpec& l : corpus.languages) {
      if (l.id != u.lang) continue;
      if (u.split == "train") ++l.train_utts;
      else if (u.split == "dev") ++l.dev_utts;
      else ++l.test_utts;
    }
    if (u.split == "train")
      for (const std::string& w : u.words) ++corpus.train_freq[u.lang][w];
  }
  return corpus;
}

std::string corpus_fingerprint(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus_fingerprint: no directory at " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name == "manifest.jsonl" || name.starts_with("frames_") || name.starts_with("entities_"))
      names.push_back(name);
  }
  if (names.empty()) throw IoError("corpus_fingerprint: no corpus files in " + dir);
  std::sort(names.begin(), names.end());

  uint64_t h = hash_str("corpus-fingerprint");
  for (const std::string& name : names) {
    std::ifstream is(fs::path(dir) / name, std::ios::binary);
    if (!is) throw IoError("corpus_fingerprint: cannot read " + name);
    std::ostringstream buf;
    buf << is.rdbuf();
    h = mix64(h ^ hash_str(name));
    h = mix64(h ^ hash_str(buf.str()));
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace ctcadapt
