// SPDX-License-Identifier: Apache-2.0
// Deterministic synthetic multilingual corpus: five languages share one
// phoneme inventory (characters) and one subword vocabulary; each language
// adds an accent offset and its own lexicon. Utterances are word sequences
// rendered to frames (phoneme embedding + accent + noise), with boost-word
// annotation, out-of-vocabulary entity pools, and catalog sampling.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctcadapt/adapters.hpp"
#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

// Shared subword inventory: 0 = blank, 1 = word separator, 2..27 = 'a'..'z'.
inline constexpr int kSepId = 1;
inline constexpr int64_t kVocabSize = 28;

std::vector<int> word_to_ids(const std::string& word);
std::vector<int> transcript_to_ids(const std::vector<std::string>& words);
std::string ids_to_string(const std::vector<int>& ids);          // separators become ' '
std::vector<std::string> ids_to_words(const std::vector<int>& ids);

struct LanguageSpec {
  std::string id;
  std::vector<std::string> lexicon;
  std::vector<double> accent;  // feat_dim entries, |entry| <= 1
  double noise_scale = 0.1;
  int64_t train_utts = 0, dev_utts = 0, test_utts = 0;
  std::vector<std::string> entity_pool;  // constructed OOV words
};

struct Utterance {
  std::string id;
  std::string lang;
  std::string split;  // train | dev | test
  std::vector<std::string> words;
  std::string boost_word;
  Tensor frames;  // t x feat_dim
};

struct CorpusConfig {
  int64_t feat_dim = 8;
  std::vector<int64_t> budgets = {200, 1000, 2000, 2000, 4000};  // train utterances
  int64_t dev_utts = 80;
  int64_t test_utts = 300;
  int64_t lexicon_words = 40;   // per language
  int64_t entity_words = 30;    // OOV pool per language
  double accent_scale = 0.5;    // accent entries drawn in [-scale, scale], scale <= 1
  double noise_scale = 0.3;
  double entity_rate = 0.3;     // probability a test utterance carries an injected entity
  int64_t min_word_len = 3, max_word_len = 7;
  int64_t min_words = 2, max_words = 6;
  double zipf_exponent = 1.5;   // word-frequency skew inside each lexicon
};

struct Corpus {
  CorpusConfig config;
  uint64_t seed = 0;
  std::vector<LanguageSpec> languages;
  std::vector<Utterance> utterances;  // canonical order: language, split, index
  // per-language word counts over that language's training transcripts
  std::map<std::string, std::map<std::string, int64_t>> train_freq;
};

// Pure function of (config, seed). Throws ValueError on malformed configs
// (fewer than two languages, empty lexicon sizes, unbounded accents, or a
// smallest budget above 1/5 of the largest).
Corpus generate_corpus(const CorpusConfig& config, uint64_t seed);

// Lowest-corpus-frequency word of the transcript; ties break toward the
// earliest position. Words missing from the table count as frequency 0.
std::string pick_boost_word(const std::vector<std::string>& transcript,
                            const std::map<std::string, int64_t>& freq);

struct SampledCatalog {
  Catalog catalog;                 // subword-id entries, order as sampled
  std::vector<std::string> words;  // same order, for reporting
  int correct_index = -1;
};

// K-1 distractors drawn without replacement from pool \ {boost}, plus the
// boost word at a random position. Requires k >= 1 and a large enough pool.
SampledCatalog sample_catalog(const std::vector<std::string>& pool, const std::string& boost,
                              int64_t k, uint64_t seed);

struct OovSelection {
  std::vector<std::string> words;
  bool truncated = false;  // fewer than n OOV words existed
};

// n distinct test-reference words absent from every training transcript,
// sampled uniformly. Throws ValueError when no test word is OOV.
OovSelection select_oov_entities(const std::vector<std::vector<std::string>>& train_transcripts,
                                 const std::vector<std::vector<std::string>>& test_transcripts,
                                 int64_t n, uint64_t seed);

// ---- corpus I/O ------------------------------------------------------------
// Layout under `dir`: manifest.jsonl, frames_<lang>_<split>.bin (two int32 LE
// header words: total frames and feat dim, then row-major float32 data), and
// entities_<lang>.txt (one word per line).

void write_corpus(const Corpus& corpus, const std::string& dir);

struct ManifestEntry {
  std::string id, lang, split;
  std::vector<std::string> words;
  std::string boost_word;
  std::string frames_file;
  int64_t frame_offset = 0;  // row index into the frames file
  int64_t num_frames = 0;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
Tensor read_frames(const std::string& dir, const ManifestEntry& entry);  // t x feat_dim
std::vector<std::string> read_entity_list(const std::string& path);

// Loads every utterance (frames included) back into memory, preserving
// manifest order.
std::vector<Utterance> load_utterances(const std::string& dir);

// Rebuilds a usable in-memory corpus from a written directory: utterances
// with frames, languages (first-appearance order) with their entity pools and
// split counts, and recounted training word frequencies. Generation-only
// settings (budgets, accents, lexicons) are not recoverable and keep their
// defaults; feat_dim is taken from the frame data.
Corpus load_corpus(const std::string& dir);

// Order-independent 16-hex digest of every corpus file in the directory
// (manifest, frame blobs, entity lists). Regenerating with the same config
// and seed reproduces it byte-for-byte.
std::string corpus_fingerprint(const std::string& dir);

}  // namespace ctcadapt
