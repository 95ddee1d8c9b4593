// SPDX-License-Identifier: Apache-2.0
// End-to-end exercises of the command-line binary: exit codes, error lines,
// artifact layout, ancestry enforcement, and determinism of regenerated
// corpora. Cases run in order and build on earlier artifacts.
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;  // stdout + stderr interleaved
};

CmdResult run_cli(const std::string& args) {
  std::string cmd = std::string(CTCADAPT_CLI_PATH) + " " + args + " 2>&1";
  CmdResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int status = pclose(pipe);
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  return r;
}

const fs::path& work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "ctcadapt_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string run_dir() { return (work_dir() / "run").string(); }

// Desk-scale config shared by every case; first call writes it.
std::string config_path() {
  static std::string path = [] {
    fs::path p = work_dir() / "tiny.json";
    std::ofstream out(p);
    out << "{\n"
        << "  \"seed\": 11,\n"
        << "  \"out_dir\": \"" << run_dir() << "\",\n"
        << "  \"corpus\": {\"budgets\": [10, 50], \"dev_utts\": 3, \"test_utts\": 4,\n"
        << "             \"lexicon_words\": 12, \"entity_words\": 5},\n"
        << "  \"model\": {\"hidden_dim\": 12, \"blocks\": 2, \"heads\": 2, \"ffn_dim\": 24,\n"
        << "            \"adapter_embed_dim\": 8},\n"
        << "  \"train\": {\"warmup_steps\": 10, \"batch_size\": 4, \"k_min\": 2, \"k_max\": 3,\n"
        << "            \"mono_encoder_epochs\": 2, \"pooled_encoder_epochs\": 2,\n"
        << "            \"adapter_epochs\": 2, \"finetune_epochs\": 1,\n"
        << "            \"pooled_steps_per_epoch\": 6}\n"
        << "}\n";
    return p.string();
  }();
  return path;
}

std::string with_config(const std::string& args) {
  return args + " --config " + config_path();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

fs::path ckpt(const std::string& id) {
  return fs::path(run_dir()) / "checkpoints" / (id + ".ckpt");
}

}  // namespace

TEST_CASE("help exits zero, bad invocations exit one with an error line") {
  CHECK(run_cli("--help").code == 0);

  CmdResult none = run_cli("");
  CHECK(none.code == 1);
  CHECK(none.out.rfind("error: validation:", 0) == 0);

  CmdResult bad_stage = run_cli(with_config("train --stage IV"));
  CHECK(bad_stage.code == 1);
  CHECK(bad_stage.out.rfind("error: validation:", 0) == 0);

  CmdResult bad_cond = run_cli(with_config("eval nowhere.ckpt --condition sideways"));
  CHECK(bad_cond.code == 1);
}

TEST_CASE("datagen writes a fingerprinted corpus, deterministically") {
  CmdResult first = run_cli(with_config("datagen"));
  REQUIRE(first.code == 0);
  fs::path cdir = fs::path(run_dir()) / "corpus";
  CHECK(fs::exists(cdir / "manifest.jsonl"));
  CHECK(fs::exists(cdir / "entities_alpha.txt"));
  CHECK(fs::exists(cdir / "fingerprint.txt"));

  std::string fp1 = read_file(cdir / "fingerprint.txt");
  CHECK(fp1.find("config_hash ") != std::string::npos);
  CHECK(fp1.find("seed 11") != std::string::npos);

  // identical rerun: byte-identical fingerprint file
  CmdResult second = run_cli(with_config("datagen"));
  REQUIRE(second.code == 0);
  CHECK(read_file(cdir / "fingerprint.txt") == fp1);

  // a --seed flag overrides the file value and moves the fingerprint
  std::string alt = (work_dir() / "run_alt").string();
  CmdResult other = run_cli(with_config("datagen --seed 12 --out " + alt));
  REQUIRE(other.code == 0);
  std::string fp2 = read_file(fs::path(alt) / "corpus" / "fingerprint.txt");
  CHECK(fp2.find("seed 12") != std::string::npos);
  CHECK(fp2 != fp1);
}

TEST_CASE("unknown config keys fail naming the key") {
  fs::path bad = work_dir() / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"corpus": {"budgetz": [10, 50]}})";
  }
  CmdResult r = run_cli("datagen --config " + bad.string());
  CHECK(r.code == 1);
  CHECK(r.out.rfind("error: validation:", 0) == 0);
  CHECK(r.out.find("corpus.budgetz") != std::string::npos);
}

TEST_CASE("train enforces ancestry and names stage checkpoints") {
  // descendants before their ancestor: error names the expected file
  CmdResult orphan = run_cli(with_config("train --track b --stage II"));
  CHECK(orphan.code == 1);
  CHECK(orphan.out.find("ML-I.ckpt") != std::string::npos);

  CmdResult s1 = run_cli(with_config("train --stage I"));
  REQUIRE(s1.code == 0);
  CHECK(fs::exists(ckpt("ML-I")));
  CHECK(s1.out.find("pooled data") != std::string::npos);

  // stage I ignores --lang: still the shared pooled encoder
  CmdResult s1_lang = run_cli(with_config("train --stage I --lang beta"));
  REQUIRE(s1_lang.code == 0);
  CHECK(s1_lang.out.find("pooled data") != std::string::npos);
  CHECK(s1_lang.out.find("ML-I") != std::string::npos);

  REQUIRE(run_cli(with_config("train --track b --stage II")).code == 0);
  CHECK(fs::exists(ckpt("ML-II.b")));
  REQUIRE(run_cli(with_config("train --track b --stage III")).code == 0);
  CHECK(fs::exists(ckpt("ML-III.b")));
  REQUIRE(run_cli(with_config("train --track a --stage II")).code == 0);
  CHECK(fs::exists(ckpt("ML-II.a")));
  REQUIRE(run_cli(with_config("train --track a --stage III")).code == 0);
  CHECK(fs::exists(ckpt("ML-III.a")));

  // a positive supervision weight trains the .ce variant under its own name
  CmdResult ce = run_cli(with_config("train --track a --stage III --alpha 10"));
  REQUIRE(ce.code == 0);
  CHECK(fs::exists(ckpt("ML-III.a.ce")));

  // epoch logs land next to the checkpoints
  CHECK(fs::exists(fs::path(run_dir()) / "logs" / "ML-II.b.jsonl"));
}

TEST_CASE("eval validates the condition and appends hashed report rows") {
  fs::remove(fs::path(run_dir()) / "report.csv");

  CmdResult wrong = run_cli(with_config("eval " + ckpt("ML-I").string() + " --condition with"));
  CHECK(wrong.code == 1);
  CHECK(wrong.out.rfind("error: validation:", 0) == 0);

  REQUIRE(run_cli(with_config("eval " + ckpt("ML-I").string())).code == 0);
  std::string entities = (fs::path(run_dir()) / "corpus" / "entities_alpha.txt").string();
  REQUIRE(run_cli(with_config("eval " + ckpt("ML-III.b").string() + " --entities " + entities +
                              " --condition with"))
              .code == 0);

  std::vector<std::string> csv = lines_of(read_file(fs::path(run_dir()) / "report.csv"));
  REQUIRE(csv.size() == 4);  // hash comment, header, two appended rows
  CHECK(csv[0].rfind("# config_hash=", 0) == 0);
  CHECK(csv[1].rfind("model_id,language,condition,", 0) == 0);
  CHECK(csv[2].rfind("ML-I,alpha,without,", 0) == 0);
  CHECK(csv[3].rfind("ML-III.b,alpha,with,", 0) == 0);

  CmdResult gone = run_cli(with_config("eval " + ckpt("NOPE").string()));
  CHECK(gone.code == 2);
  CHECK(gone.out.rfind("error: runtime:", 0) == 0);
}

TEST_CASE("decode dumps hypotheses for the chosen condition") {
  std::string entities = (fs::path(run_dir()) / "corpus" / "entities_alpha.txt").string();
  CmdResult r = run_cli(with_config("decode " + ckpt("ML-III.b").string() + " --entities " +
                                    entities + " --condition with"));
  REQUIRE(r.code == 0);
  fs::path hyps = fs::path(run_dir()) / "hyps_ML-III.b_with.jsonl";
  REQUIRE(fs::exists(hyps));
  std::vector<std::string> rows = lines_of(read_file(hyps));
  CHECK(rows.size() == 4);  // one per test utterance
  CHECK(rows[0].find("\"condition\":\"with\"") != std::string::npos);
}

TEST_CASE("lineup trains all ten models and report renders eleven rows") {
  CmdResult lineup = run_cli(with_config("lineup"));
  REQUIRE(lineup.code == 0);
  const char* ids[] = {"MONO-I",   "MONO-II",    "MONO-II.ce", "ML-I",       "ML-II.a",
                       "ML-III.a", "ML-III.a.ce", "ML-II.b",   "ML-II.b.ce", "ML-III.b"};
  for (const char* id : ids) {
    CHECK(fs::exists(ckpt(id)));
    CHECK(fs::exists(fs::path(run_dir()) / "logs" / (std::string(id) + ".jsonl")));
  }

  CmdResult report = run_cli(with_config("report"));
  REQUIRE(report.code == 0);
  CHECK(report.out.find("ML-III.b.inf") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir()) / "report.txt"));

  std::vector<std::string> csv = lines_of(read_file(fs::path(run_dir()) / "report.csv"));
  REQUIRE(csv.size() == 13);  // comment + header + 10 models + detached row
  CHECK(csv[0].rfind("# config_hash=", 0) == 0);
  CHECK(csv[12].rfind("ML-III.b.inf,alpha,without,", 0) == 0);

  // a missing lineup member is a validation failure naming the file
  fs::remove(ckpt("MONO-II.ce"));
  CmdResult broken = run_cli(with_config("report"));
  CHECK(broken.code == 1);
  CHECK(broken.out.find("MONO-II.ce.ckpt") != std::string::npos);
}

TEST_CASE("verify reports per-suite maxima and exits zero") {
  CmdResult r = run_cli("verify");
  REQUIRE(r.code == 0);
  size_t passes = 0;
  for (size_t pos = 0; (pos = r.out.find("PASS", pos)) != std::string::npos; ++pos) ++passes;
  CHECK(passes == 5);
  CHECK(r.out.find("primitive-gradients") != std::string::npos);
  CHECK(r.out.find("network-gradient") != std::string::npos);
  CHECK(r.out.find("ctc-bruteforce") != std::string::npos);
  CHECK(r.out.find("max_error=") != std::string::npos);
}
