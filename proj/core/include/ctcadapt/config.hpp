// SPDX-License-Identifier: Apache-2.0
// Run configuration: one human-readable JSON file describing the corpus, the
// model dimensions, the training schedule, and the lineup selection. Parsing
// is strict (unknown keys are rejected with their full path) and the content
// hash is computed from the canonical form, so it is stable under key
// reordering in the source text.
#pragma once

#include <cstdint>
#include <string>

#include "ctcadapt/synthlang.hpp"
#include "ctcadapt/trainer.hpp"

namespace ctcadapt {

struct RunConfig {
  CorpusConfig corpus;
  EncoderConfig encoder;    // input_dim always mirrors corpus.feat_dim
  AdapterConfig adapters;   // hidden_dim/blocks always mirror the encoder
  LineupConfig lineup;      // seed/encoder/adapters filled from the fields above
  std::string out_dir = "runs/default";
  uint64_t seed = 1;
};

// Parses and validates config text. Missing keys keep their defaults; unknown
// keys throw ValidationError naming the full key path; wrong-typed values
// throw ValidationError naming the key.
RunConfig parse_run_config(const std::string& text);

// Reads the file and parses it. Throws IoError when unreadable.
RunConfig load_run_config(const std::string& path);

// Canonical JSON rendering of the parsed config (fixed key order, every field
// explicit). Equal configs render identically regardless of source formatting.
std::string run_config_canonical(const RunConfig& cfg);

// 16-hex-digit FNV-1a over the canonical rendering.
std::string run_config_hash(const RunConfig& cfg);

}  // namespace ctcadapt
