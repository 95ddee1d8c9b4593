// Trainer tests: Adam against an in-test reference implementation, clipping,
// schedules, curriculum, checkpoint container round trips, staged training
// (descent, determinism, freezing, best-dev rollback), and the model lineup.
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/trainer.hpp"

using namespace ctcadapt;

namespace {

const Corpus& tiny_corpus() {
  static const Corpus c = [] {
    CorpusConfig cc;
    cc.budgets = {10, 50};
    cc.dev_utts = 3;
    cc.test_utts = 4;
    cc.lexicon_words = 12;
    cc.entity_words = 5;
    return generate_corpus(cc, 77);
  }();
  return c;
}

EncoderConfig small_encoder_config() {
  EncoderConfig e;
  e.input_dim = 8;
  e.hidden_dim = 12;
  e.vocab_size = 28;
  e.blocks = 2;
  e.heads = 2;
  e.ffn_dim = 24;
  return e;
}

AdapterConfig small_adapter_config() {
  AdapterConfig a;
  a.vocab_size = 28;
  a.embed_dim = 8;
  a.hidden_dim = 12;
  a.blocks = 2;
  return a;
}

TrainConfig small_train_config(int64_t epochs, double alpha = 0.0) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.lr_max = 3e-3;
  tc.warmup_steps = 10;
  tc.clip_norm = 5.0;
  tc.alpha = alpha;
  tc.k_min = 2;
  tc.k_max = 3;
  tc.seed = 5;
  return tc;
}

bool bits_equal(double a, double b) {
  return std::bit_cast<uint64_t>(a) == std::bit_cast<uint64_t>(b);
}

bool partitions_bitwise_equal(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    auto va = ia->second.values();
    auto vb = ib->second.values();
    if (va.size() != vb.size()) return false;
    for (size_t i = 0; i < va.size(); ++i) {
      if (!bits_equal(va[i], vb[i])) return false;
    }
  }
  return true;
}

bool partitions_any_entry_differs(const ParamMap& a, const ParamMap& b) {
  return !partitions_bitwise_equal(a, b);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("adam: first-step magnitude and reference agreement") {
  SUBCASE("first step with g=2 and lr=0.1 moves by about 0.1") {
    Tensor p = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
    p.zero_grad();
    for (auto& g : p.grad_mut()) g = 2.0;
    ParamMap pm{{"p", p}};
    AdamState st;
    adam_step(pm, {}, st, 0.1);
    const double expected_update = 0.1 * 2.0 / (2.0 + 1e-8);
    CHECK(1.0 - p.at(0) == doctest::Approx(expected_update).epsilon(1e-12));
    CHECK(1.0 - p.at(0) == doctest::Approx(0.1).epsilon(1e-7));
    CHECK(-2.0 - p.at(1) == doctest::Approx(expected_update).epsilon(1e-12));
    CHECK(st.step == 1);
  }

  SUBCASE("five steps match an independently coded reference") {
    Tensor p = Tensor::scalar(0.7, true);
    ParamMap pm{{"p", p}};
    AdamState st;
    const std::vector<double> grads = {0.3, -1.1, 0.05, 2.4, -0.6};
    double x = 0.7, m = 0.0, v = 0.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (size_t t = 1; t <= grads.size(); ++t) {
      const double g = grads[t - 1];
      p.zero_grad();
      p.grad_mut()[0] = g;
      adam_step(pm, {}, st, lr);
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      const double mhat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
      const double vhat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
      x -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(p.item() == doctest::Approx(x).epsilon(1e-12));
    }
  }

  SUBCASE("zero gradient on the first step leaves the value bitwise unchanged") {
    Tensor p = Tensor::scalar(0.123456789, true);
    p.zero_grad();
    ParamMap pm{{"p", p}};
    AdamState st;
    adam_step(pm, {}, st, 0.1);
    CHECK(bits_equal(p.item(), 0.123456789));
  }

  SUBCASE("a never-touched gradient buffer counts as zeros") {
    Tensor p = Tensor::scalar(-4.25, true);
    ParamMap pm{{"p", p}};
    AdamState st;
    adam_step(pm, {}, st, 0.1);
    CHECK(bits_equal(p.item(), -4.25));
  }

  SUBCASE("frozen tensors are bitwise untouched despite nonzero gradients") {
    Tensor p = Tensor::scalar(1.5, true);
    Tensor q = Tensor::scalar(2.5, true);
    p.zero_grad();
    q.zero_grad();
    p.grad_mut()[0] = 3.0;
    q.grad_mut()[0] = 3.0;
    ParamMap pm{{"p", p}, {"q", q}};
    AdamState st;
    adam_step(pm, {"q"}, st, 0.1, {});
    CHECK(p.item() < 1.5);
    CHECK(bits_equal(q.item(), 2.5));
    CHECK(st.m.count("q") == 0);
  }

  SUBCASE("non-finite gradients are rejected") {
    Tensor p = Tensor::scalar(1.0, true);
    p.zero_grad();
    p.grad_mut()[0] = std::numeric_limits<double>::infinity();
    ParamMap pm{{"p", p}};
    AdamState st;
    CHECK_THROWS_AS(adam_step(pm, {}, st, 0.1), ValueError);
    p.grad_mut()[0] = std::nan("");
    CHECK_THROWS_AS(adam_step(pm, {}, st, 0.1), ValueError);
  }

  SUBCASE("invalid learning rates are rejected") {
    Tensor p = Tensor::scalar(1.0, true);
    ParamMap pm{{"p", p}};
    AdamState st;
    CHECK_THROWS_AS(adam_step(pm, {}, st, 0.0), ValueError);
    CHECK_THROWS_AS(adam_step(pm, {}, st, -1e-3), ValueError);
  }
}

TEST_CASE("gradient clipping: exact norm, rescale, exclusions") {
  Tensor a = Tensor::from_vector({2}, {1.0, 1.0}, true);
  Tensor b = Tensor::scalar(2.0, true);
  a.zero_grad();
  b.zero_grad();
  a.grad_mut()[0] = 3.0;
  a.grad_mut()[1] = 4.0;
  ParamMap pm{{"a", a}, {"b", b}};

  SUBCASE("below the bound nothing changes and the norm is returned") {
    const double norm = clip_gradients(pm, {}, 10.0);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(bits_equal(a.grad()[0], 3.0));
    CHECK(bits_equal(a.grad()[1], 4.0));
  }

  SUBCASE("at the bound exactly nothing changes") {
    clip_gradients(pm, {}, 5.0);
    CHECK(bits_equal(a.grad()[0], 3.0));
  }

  SUBCASE("above the bound gradients rescale to the bound, direction kept") {
    const double norm = clip_gradients(pm, {}, 2.5);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(a.grad()[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(a.grad()[1] == doctest::Approx(2.0).epsilon(1e-15));
    const double after = std::sqrt(a.grad()[0] * a.grad()[0] + a.grad()[1] * a.grad()[1]);
    CHECK(after == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(a.grad()[1] / a.grad()[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("frozen tensors are excluded from the norm and never rescaled") {
    b.grad_mut()[0] = 100.0;
    const double norm = clip_gradients(pm, {"b"}, 10.0);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(bits_equal(b.grad()[0], 100.0));
  }

  SUBCASE("invalid bound and non-finite gradients are rejected") {
    CHECK_THROWS_AS(clip_gradients(pm, {}, 0.0), ValueError);
    a.grad_mut()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(clip_gradients(pm, {}, 1.0), ValueError);
  }
}

TEST_CASE("learning-rate schedule endpoints and ramp") {
  CHECK(lr_schedule(200, 200, 3e-3) == 3e-3);
  CHECK(lr_schedule(100, 200, 3e-3) == doctest::Approx(1.5e-3).epsilon(1e-15));
  CHECK(lr_schedule(1, 200, 3e-3) == doctest::Approx(1.5e-5).epsilon(1e-15));
  CHECK(lr_schedule(201, 200, 3e-3) == 3e-3);
  CHECK(lr_schedule(100000, 200, 3e-3) == 3e-3);
  CHECK(lr_schedule(1, 0, 3e-3) == 3e-3);
  CHECK_THROWS_AS(lr_schedule(0, 200, 3e-3), ValueError);
  CHECK_THROWS_AS(lr_schedule(5, 200, 0.0), ValueError);
}

TEST_CASE("catalog curriculum: endpoints, midpoint rounding, monotonicity") {
  SUBCASE("defaults: 3 to 10 over 10 epochs") {
    CHECK(curriculum_k(0, 10, 3, 10) == 3);
    CHECK(curriculum_k(9, 10, 3, 10) == 10);
    CHECK(curriculum_k(5, 10, 3, 10) == 7);  // round-half-up of the midpoint region
    int64_t prev = 0;
    for (int64_t e = 0; e < 10; ++e) {
      const int64_t k = curriculum_k(e, 10, 3, 10);
      CHECK(k >= prev);
      prev = k;
    }
  }

  SUBCASE("exact halves round up") {
    // total 3, range 1..2: epoch 1 interpolates to exactly 1.5.
    CHECK(curriculum_k(1, 3, 1, 2) == 2);
  }

  SUBCASE("endpoints hold for several schedule lengths") {
    for (int64_t total : {2, 5, 7, 13}) {
      CHECK(curriculum_k(0, total, 4, 9) == 4);
      CHECK(curriculum_k(total - 1, total, 4, 9) == 9);
    }
  }

  SUBCASE("a single-epoch schedule jumps to k_max") {
    CHECK(curriculum_k(0, 1, 3, 10) == 10);
  }

  SUBCASE("constant when k_min == k_max") {
    for (int64_t e = 0; e < 6; ++e) CHECK(curriculum_k(e, 6, 5, 5) == 5);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(curriculum_k(-1, 10, 3, 10), ValueError);
    CHECK_THROWS_AS(curriculum_k(10, 10, 3, 10), ValueError);
    CHECK_THROWS_AS(curriculum_k(0, 0, 3, 10), ValueError);
    CHECK_THROWS_AS(curriculum_k(0, 10, 0, 10), ValueError);
    CHECK_THROWS_AS(curriculum_k(0, 10, 11, 10), ValueError);
  }
}

TEST_CASE("checkpoint container: byte-identical round trips and validation") {
  ModelCheckpoint ckpt =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 42);
  ckpt.add_adapters(7);
  ckpt.provenance = {{"model_id", "X"}, {"lineage", "X"}};
  ckpt.freeze = {{"encoder", true}, {"adapters", false}};
  ckpt.params().at("encoder.in_proj.w").values_mut()[0] = 1.0 / 3.0;

  SUBCASE("serialize -> deserialize -> serialize is byte-identical") {
    const std::string s1 = serialize_checkpoint(ckpt);
    ModelCheckpoint back = deserialize_checkpoint(s1);
    CHECK(serialize_checkpoint(back) == s1);
    CHECK(bits_equal(back.params().at("encoder.in_proj.w").values()[0], 1.0 / 3.0));
    CHECK(back.provenance.at("model_id") == "X");
    CHECK(back.freeze.at("encoder"));
    CHECK_FALSE(back.freeze.at("adapters"));
    CHECK(back.has_adapters);
  }

  SUBCASE("file save/load round-trips the exact bytes") {
    const std::string path = "trainer_test_ckpt.bin";
    save_checkpoint(ckpt, path);
    std::ifstream in(path, std::ios::binary);
    std::string file_bytes((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    CHECK(file_bytes == serialize_checkpoint(ckpt));
    ModelCheckpoint back = load_checkpoint(path);
    CHECK(serialize_checkpoint(back) == file_bytes);
    std::remove(path.c_str());
  }

  SUBCASE("registry: encoder + adapter partitions are disjoint and exhaustive") {
    ParamMap all = ckpt.params();
    ParamMap enc = ckpt.partition("encoder");
    ParamMap ada = ckpt.partition("adapters");
    // encoder: in_proj(2) + 2 blocks x (ln1 2 + attn 4 + ln2 2 + ffn1 2 + ffn2 2)
    //          + ln_f(2) + out_proj(2); adapters: table + 12 lstm + nb_key +
    //          lambda + wq/wk/wv.
    CHECK(enc.size() == 30);
    CHECK(ada.size() == 18);
    CHECK(all.size() == enc.size() + ada.size());
    for (const auto& [name, t] : enc) CHECK(name.rfind("encoder.", 0) == 0);
    for (const auto& [name, t] : ada) CHECK(name.rfind("adapters.", 0) == 0);
    for (const auto& [name, t] : all) CHECK((enc.count(name) + ada.count(name)) == 1);
  }

  SUBCASE("clone yields equal values on independent storage") {
    ModelCheckpoint copy = ckpt.clone();
    CHECK(partitions_bitwise_equal(copy.params(), ckpt.params()));
    CHECK(checkpoint_hash(copy) == checkpoint_hash(ckpt));
    copy.params().at("encoder.out_proj.b").values_mut()[0] = 99.0;
    CHECK(ckpt.params().at("encoder.out_proj.b").values()[0] != 99.0);
    CHECK(checkpoint_hash(copy) != checkpoint_hash(ckpt));
  }

  SUBCASE("corrupted containers are rejected") {
    const std::string s = serialize_checkpoint(ckpt);
    CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), IoError);
    CHECK_THROWS_AS(deserialize_checkpoint(s.substr(0, s.size() - 8)), IoError);
    CHECK_THROWS_AS(deserialize_checkpoint(s + "xtra"), IoError);
    std::string version_flip = s;
    const size_t vp = version_flip.find("\"version\":1");
    REQUIRE(vp != std::string::npos);
    version_flip.replace(vp, 11, "\"version\":9");
    CHECK_THROWS_AS(deserialize_checkpoint(version_flip), IoError);
    std::string key_flip = s;
    const size_t kp = key_flip.find("\"has_adapters\"");
    REQUIRE(kp != std::string::npos);
    key_flip.replace(kp, 14, "\"has_adapterz\"");
    CHECK_THROWS_AS(deserialize_checkpoint(key_flip), IoError);
    CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint_file.bin"), IoError);
  }

  SUBCASE("construction validation") {
    EncoderConfig e = small_encoder_config();
    AdapterConfig a = small_adapter_config();
    a.hidden_dim = e.hidden_dim + 1;
    CHECK_THROWS_AS(ModelCheckpoint::fresh(e, a, 1), ValueError);
    CHECK_THROWS_AS(ckpt.add_adapters(3), ValueError);  // already present
    ModelCheckpoint enc_only =
        ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 1);
    CHECK_THROWS_AS(enc_only.partition("adapters"), ValueError);
    CHECK_THROWS_AS(enc_only.partition("bogus"), ValueError);
  }
}

TEST_CASE("run_stage: encoder training descends deterministically") {
  const Corpus& corpus = tiny_corpus();
  ModelCheckpoint start =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 11);
  StageSpec spec{StageKind::EncoderTrain, "ENC-A", "I", "", "alpha"};
  TrainConfig tc = small_train_config(12);

  StageResult r1 = run_stage(start, corpus, spec, tc);
  REQUIRE(r1.logs.size() == 12);

  SUBCASE("training loss descends (median of last fifth vs first fifth)") {
    std::vector<double> first, last;
    const size_t window = 12 / 5;  // = 2
    for (size_t i = 0; i < window; ++i) first.push_back(r1.logs[i].train_loss);
    for (size_t i = 12 - window; i < 12; ++i) last.push_back(r1.logs[i].train_loss);
    CHECK(median(last) < median(first));
  }

  SUBCASE("logs carry the schedule: k = 0, lr matches the step count") {
    // 10 training utterances, batch 4 -> 3 steps per epoch.
    for (size_t e = 0; e < r1.logs.size(); ++e) {
      CHECK(r1.logs[e].k == 0);
      CHECK(r1.logs[e].epoch == static_cast<int64_t>(e));
      CHECK(r1.logs[e].stage == "ENC-A");
      const int64_t step = 3 * static_cast<int64_t>(e + 1);
      CHECK(r1.logs[e].lr == lr_schedule(step, tc.warmup_steps, tc.lr_max));
      CHECK(std::isfinite(r1.logs[e].train_loss));
      CHECK(std::isfinite(r1.logs[e].dev_loss));
    }
  }

  SUBCASE("identical config reruns are bitwise identical") {
    StageResult r2 = run_stage(start, corpus, spec, tc);
    CHECK(serialize_checkpoint(r1.checkpoint) == serialize_checkpoint(r2.checkpoint));
    REQUIRE(r2.logs.size() == r1.logs.size());
    for (size_t i = 0; i < r1.logs.size(); ++i) {
      CHECK(bits_equal(r1.logs[i].train_loss, r2.logs[i].train_loss));
      CHECK(bits_equal(r1.logs[i].dev_loss, r2.logs[i].dev_loss));
    }
  }

  SUBCASE("provenance records the stage and its ancestry") {
    const auto& p = r1.checkpoint.provenance;
    CHECK(p.at("model_id") == "ENC-A");
    CHECK(p.at("stage") == "I");
    CHECK(p.at("data") == "alpha");
    CHECK(p.at("parent_hash") == checkpoint_hash(start));
    CHECK(p.at("config_hash") == train_config_hash(tc));
    CHECK(p.at("lineage") == "ENC-A");
    CHECK(p.at("seed") == "5");
    const int64_t best = std::stoll(p.at("best_epoch"));
    CHECK(best >= 0);
    CHECK(best < 12);
  }

  SUBCASE("the input checkpoint is never mutated") {
    ModelCheckpoint fresh_again =
        ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 11);
    CHECK(partitions_bitwise_equal(start.params(), fresh_again.params()));
    CHECK(start.provenance.empty());
  }

  SUBCASE("encoder-only stage never grows an adapter partition") {
    CHECK_FALSE(r1.checkpoint.has_adapters);
    CHECK(r1.checkpoint.freeze.at("encoder") == false);
    CHECK(r1.checkpoint.freeze.count("adapters") == 0);
  }
}

TEST_CASE("run_stage: freezing is bitwise and lineages chain") {
  const Corpus& corpus = tiny_corpus();
  ModelCheckpoint start =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 13);
  StageResult enc = run_stage(start, corpus, {StageKind::EncoderTrain, "ENC", "I", "", "alpha"},
                              small_train_config(3));
  StageResult ada =
      run_stage(enc.checkpoint, corpus, {StageKind::AdapterTrain, "ADA", "II", "", "alpha"},
                small_train_config(4));

  SUBCASE("adapter stage: encoder partition is bitwise frozen") {
    CHECK(partitions_bitwise_equal(ada.checkpoint.partition("encoder"),
                                   enc.checkpoint.partition("encoder")));
    CHECK(ada.checkpoint.has_adapters);
    CHECK(ada.checkpoint.partition("adapters").size() == 18);
    CHECK(ada.checkpoint.freeze.at("encoder"));
    CHECK_FALSE(ada.checkpoint.freeze.at("adapters"));
  }

  SUBCASE("adapter stage: curriculum sizes appear in the logs") {
    REQUIRE(ada.logs.size() == 4);
    for (size_t e = 0; e < 4; ++e) {
      CHECK(ada.logs[e].k == curriculum_k(static_cast<int64_t>(e), 4, 2, 3));
    }
    CHECK(ada.logs.front().k == 2);
    CHECK(ada.logs.back().k == 3);
  }

  SUBCASE("joint fine-tune moves both partitions and extends the lineage") {
    StageResult joint = run_stage(ada.checkpoint, corpus,
                                  {StageKind::JointFinetune, "JOINT", "III", "b", "alpha"},
                                  small_train_config(2));
    CHECK(partitions_any_entry_differs(joint.checkpoint.partition("encoder"),
                                       ada.checkpoint.partition("encoder")));
    CHECK(partitions_any_entry_differs(joint.checkpoint.partition("adapters"),
                                       ada.checkpoint.partition("adapters")));
    CHECK(joint.checkpoint.provenance.at("lineage") == "ENC>ADA>JOINT");
    CHECK(joint.checkpoint.provenance.at("parent_hash") == checkpoint_hash(ada.checkpoint));
    CHECK_FALSE(joint.checkpoint.freeze.at("encoder"));
    CHECK_FALSE(joint.checkpoint.freeze.at("adapters"));
  }

  SUBCASE("the CE weight changes adapter training") {
    StageResult ada_ce =
        run_stage(enc.checkpoint, corpus,
                  {StageKind::AdapterTrain, "ADA", "II", "", "alpha"},
                  small_train_config(4, 25.0));
    CHECK(partitions_any_entry_differs(ada_ce.checkpoint.partition("adapters"),
                                       ada.checkpoint.partition("adapters")));
    CHECK(partitions_bitwise_equal(ada_ce.checkpoint.partition("encoder"),
                                   ada.checkpoint.partition("encoder")));
  }
}

TEST_CASE("run_stage: best-dev rollback equals a truncated rerun") {
  const Corpus& corpus = tiny_corpus();
  ModelCheckpoint start =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 17);
  StageSpec spec{StageKind::EncoderTrain, "ROLL", "I", "", "alpha"};
  TrainConfig tc = small_train_config(8);

  StageResult full = run_stage(start, corpus, spec, tc);
  const int64_t best = std::stoll(full.checkpoint.provenance.at("best_epoch"));

  // The recorded best epoch is the argmin of the logged dev losses.
  double min_dev = full.logs[0].dev_loss;
  int64_t argmin = 0;
  for (size_t e = 1; e < full.logs.size(); ++e) {
    if (full.logs[e].dev_loss < min_dev) {
      min_dev = full.logs[e].dev_loss;
      argmin = static_cast<int64_t>(e);
    }
  }
  CHECK(best == argmin);

  // Re-running with epochs = best+1 replays the identical training prefix, so
  // its final (= best) parameters must equal the full run's rollback bitwise.
  TrainConfig tc_trunc = tc;
  tc_trunc.epochs = best + 1;
  StageResult trunc = run_stage(start, corpus, spec, tc_trunc);
  CHECK(partitions_bitwise_equal(trunc.checkpoint.partition("encoder"),
                                 full.checkpoint.partition("encoder")));
}

TEST_CASE("run_stage: zero epochs only relabels the checkpoint") {
  const Corpus& corpus = tiny_corpus();
  ModelCheckpoint start =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 19);
  StageResult r = run_stage(start, corpus, {StageKind::AdapterTrain, "NOOP", "III", "a", "alpha"},
                            small_train_config(0));
  CHECK(r.logs.empty());
  CHECK_FALSE(r.checkpoint.has_adapters);  // untouched: no partition added
  CHECK(partitions_bitwise_equal(r.checkpoint.params(), start.params()));
  CHECK(r.checkpoint.freeze == start.freeze);
  CHECK(r.checkpoint.provenance.at("model_id") == "NOOP");
  CHECK(r.checkpoint.provenance.at("best_epoch") == "-1");
  CHECK(r.checkpoint.provenance.at("parent_hash") == checkpoint_hash(start));
}

TEST_CASE("run_stage: validation errors") {
  const Corpus& corpus = tiny_corpus();
  ModelCheckpoint good =
      ModelCheckpoint::fresh(small_encoder_config(), small_adapter_config(), 23);
  StageSpec spec{StageKind::EncoderTrain, "V", "I", "", "alpha"};

  SUBCASE("config violations") {
    auto bad = [&](auto mutate) {
      TrainConfig tc = small_train_config(2);
      mutate(tc);
      CHECK_THROWS_AS(run_stage(good, corpus, spec, tc), ValueError);
    };
    bad([](TrainConfig& t) { t.epochs = -1; });
    bad([](TrainConfig& t) { t.batch_size = 0; });
    bad([](TrainConfig& t) { t.lr_max = 0.0; });
    bad([](TrainConfig& t) { t.warmup_steps = -1; });
    bad([](TrainConfig& t) { t.clip_norm = 0.0; });
    bad([](TrainConfig& t) { t.alpha = -0.5; });
    bad([](TrainConfig& t) { t.k_min = 0; });
    bad([](TrainConfig& t) { t.k_min = 5, t.k_max = 4; });
    bad([](TrainConfig& t) { t.max_steps_per_epoch = -2; });
  }

  SUBCASE("model/corpus mismatches") {
    EncoderConfig narrow = small_encoder_config();
    narrow.input_dim = 6;
    AdapterConfig ada = small_adapter_config();
    ModelCheckpoint bad_dim = ModelCheckpoint::fresh(narrow, ada, 1);
    CHECK_THROWS_AS(run_stage(bad_dim, corpus, spec, small_train_config(1)), ValueError);

    EncoderConfig off_vocab = small_encoder_config();
    off_vocab.vocab_size = 20;
    ModelCheckpoint bad_vocab = ModelCheckpoint::fresh(off_vocab, ada, 1);
    CHECK_THROWS_AS(run_stage(bad_vocab, corpus, spec, small_train_config(1)), ValueError);
  }

  SUBCASE("unknown language and empty splits") {
    StageSpec unknown{StageKind::EncoderTrain, "V", "I", "", "zeta"};
    CHECK_THROWS_AS(run_stage(good, corpus, unknown, small_train_config(1)), ValueError);

    Corpus no_dev = corpus;
    std::erase_if(no_dev.utterances,
                  [](const Utterance& u) { return u.lang == "alpha" && u.split == "dev"; });
    CHECK_THROWS_AS(run_stage(good, no_dev, spec, small_train_config(1)), ValueError);

    Corpus no_train = corpus;
    std::erase_if(no_train.utterances,
                  [](const Utterance& u) { return u.lang == "alpha" && u.split == "train"; });
    CHECK_THROWS_AS(run_stage(good, no_train, spec, small_train_config(1)), ValueError);

    StageSpec unnamed{StageKind::EncoderTrain, "", "I", "", "alpha"};
    CHECK_THROWS_AS(run_stage(good, corpus, unnamed, small_train_config(1)), ValueError);
  }
}

TEST_CASE("epoch logs serialize to JSON lines") {
  std::vector<EpochLog> logs = {
      {"STAGE-X", 0, 3, 12.5, 11.25, 1.5e-3},
      {"STAGE-X", 1, 4, 10.0, 9.75, 3e-3},
  };
  const std::string path = "trainer_test_logs.jsonl";
  write_epoch_logs(logs, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  size_t rows = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("stage").get<std::string>() == "STAGE-X");
    CHECK(j.at("epoch").get<int64_t>() == static_cast<int64_t>(rows));
    CHECK(j.at("K").get<int64_t>() == logs[rows].k);
    CHECK(j.at("train_loss").get<double>() == logs[rows].train_loss);
    CHECK(j.at("dev_loss").get<double>() == logs[rows].dev_loss);
    CHECK(j.at("lr").get<double>() == logs[rows].lr);
    ++rows;
  }
  CHECK(rows == 2);
  std::remove(path.c_str());
}

TEST_CASE("model lineup: ten models, ancestor reuse, freeze contract") {
  const Corpus& corpus = tiny_corpus();
  LineupConfig lc;
  lc.target_lang = "alpha";
  lc.seed = 3;
  lc.encoder = small_encoder_config();
  lc.adapters = small_adapter_config();
  lc.warmup_steps = 10;
  lc.batch_size = 4;
  lc.k_min = 2;
  lc.k_max = 3;
  lc.mono_encoder_epochs = 3;
  lc.pooled_encoder_epochs = 2;
  lc.adapter_epochs = 2;
  lc.finetune_epochs = 2;
  lc.pooled_steps_per_epoch = 4;

  LineupResult lineup = build_model_lineup(corpus, lc);

  SUBCASE("all ten models are produced and logged") {
    REQUIRE(lineup.models.size() == 10);
    std::set<std::string> logged;
    for (const auto& l : lineup.logs) logged.insert(l.stage);
    for (const auto& id : kLineupModelIds) {
      CHECK(lineup.models.count(id) == 1);
      CHECK(logged.count(id) == 1);
    }
  }

  SUBCASE("adapter presence matches the stage layout") {
    for (const auto& id : {"MONO-I", "ML-I", "ML-II.a"}) {
      CHECK_FALSE(lineup.models.at(id).has_adapters);
    }
    for (const auto& id :
         {"MONO-II", "MONO-II.ce", "ML-III.a", "ML-III.a.ce", "ML-II.b", "ML-II.b.ce",
          "ML-III.b"}) {
      CHECK(lineup.models.at(id).has_adapters);
    }
  }

  SUBCASE("track b stage II: the pooled encoder is bitwise frozen") {
    CHECK(partitions_bitwise_equal(lineup.models.at("ML-II.b").partition("encoder"),
                                   lineup.models.at("ML-I").partition("encoder")));
    CHECK(partitions_bitwise_equal(lineup.models.at("ML-II.b.ce").partition("encoder"),
                                   lineup.models.at("ML-I").partition("encoder")));
  }

  SUBCASE("track a stage III: the fine-tuned encoder is bitwise frozen") {
    CHECK(partitions_bitwise_equal(lineup.models.at("ML-III.a").partition("encoder"),
                                   lineup.models.at("ML-II.a").partition("encoder")));
    CHECK(partitions_bitwise_equal(lineup.models.at("ML-III.a.ce").partition("encoder"),
                                   lineup.models.at("ML-II.a").partition("encoder")));
  }

  SUBCASE("joint fine-tune moves the encoder off its ancestor") {
    CHECK(partitions_any_entry_differs(lineup.models.at("ML-III.b").partition("encoder"),
                                       lineup.models.at("ML-II.b").partition("encoder")));
  }

  SUBCASE("declared ancestry matches recomputed hashes and lineage chains") {
    auto parent_hash = [&](const std::string& id) {
      return lineup.models.at(id).provenance.at("parent_hash");
    };
    CHECK(parent_hash("MONO-II") == checkpoint_hash(lineup.models.at("MONO-I")));
    CHECK(parent_hash("MONO-II.ce") == checkpoint_hash(lineup.models.at("MONO-I")));
    CHECK(parent_hash("ML-II.a") == checkpoint_hash(lineup.models.at("ML-I")));
    CHECK(parent_hash("ML-III.a") == checkpoint_hash(lineup.models.at("ML-II.a")));
    CHECK(parent_hash("ML-II.b") == checkpoint_hash(lineup.models.at("ML-I")));
    CHECK(parent_hash("ML-III.b") == checkpoint_hash(lineup.models.at("ML-II.b")));
    CHECK(lineup.models.at("MONO-II").provenance.at("lineage") == "MONO-I>MONO-II");
    CHECK(lineup.models.at("ML-III.b").provenance.at("lineage") ==
          "ML-I>ML-II.b>ML-III.b");
    CHECK(lineup.models.at("ML-III.a.ce").provenance.at("lineage") ==
          "ML-I>ML-II.a>ML-III.a.ce");
  }

  SUBCASE("the CE variant differs from its sibling") {
    CHECK(partitions_any_entry_differs(lineup.models.at("MONO-II").partition("adapters"),
                                       lineup.models.at("MONO-II.ce").partition("adapters")));
  }

  SUBCASE("pooled stages train on pooled data, mono stages on the target") {
    CHECK(lineup.models.at("ML-I").provenance.at("data") == "pooled");
    CHECK(lineup.models.at("ML-II.b").provenance.at("data") == "pooled");
    CHECK(lineup.models.at("MONO-I").provenance.at("data") == "alpha");
    CHECK(lineup.models.at("ML-III.b").provenance.at("data") == "alpha");
  }

  SUBCASE("a rerun with the same seed reproduces the same checkpoints") {
    LineupResult again = build_model_lineup(corpus, lc);
    CHECK(checkpoint_hash(again.models.at("ML-III.b")) ==
          checkpoint_hash(lineup.models.at("ML-III.b")));
    CHECK(checkpoint_hash(again.models.at("MONO-II.ce")) ==
          checkpoint_hash(lineup.models.at("MONO-II.ce")));
  }
}
