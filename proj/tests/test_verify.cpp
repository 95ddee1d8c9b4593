// SPDX-License-Identifier: Apache-2.0
// The verification suites must themselves pass, report meaningful errors, and
// keep their documented names and order.
#include <string>
#include <vector>

#include "ctcadapt/verify.hpp"
#include "doctest.h"

using namespace ctcadapt;

TEST_CASE("every verification suite passes within its tolerance") {
  std::vector<VerifySuite> suites = run_verification();
  REQUIRE(suites.size() == 5);
  CHECK(suites[0].name == "primitive-gradients");
  CHECK(suites[1].name == "network-gradient");
  CHECK(suites[2].name == "ctc-bruteforce");
  CHECK(suites[3].name == "attention-ce-hand-values");
  CHECK(suites[4].name == "metric-oracles");
  for (const VerifySuite& s : suites) {
    INFO(s.name, ": max_error=", s.max_error, " tolerance=", s.tolerance);
    CHECK(s.pass);
    CHECK(s.max_error <= s.tolerance);
  }
  CHECK(all_passed(suites));
}

TEST_CASE("gradient suites measure a nonzero but tiny error") {
  // Central differences never agree to the last bit; a literal zero would
  // mean the comparison is vacuous.
  VerifySuite prim = verify_primitive_gradients();
  CHECK(prim.max_error > 0.0);
  CHECK(prim.max_error < 1e-6);
  VerifySuite net = verify_network_gradient();
  CHECK(net.max_error > 0.0);
  CHECK(net.max_error < 1e-6);
}

TEST_CASE("ctc suite scales its case count") {
  VerifySuite s = verify_ctc_bruteforce(25);
  CHECK(s.pass);
  CHECK(s.detail.find("25") != std::string::npos);
}

TEST_CASE("metric suite holds an exact-match tolerance") {
  VerifySuite s = verify_metric_oracles(30);
  CHECK(s.pass);
  CHECK(s.tolerance == 0.0);
  CHECK(s.max_error == 0.0);
}

TEST_CASE("hand-value suite pins the published constant") {
  VerifySuite s = verify_attention_hand_values();
  CHECK(s.pass);
  CHECK(s.tolerance == 1e-4);
  CHECK(s.max_error <= 1e-4);
}

TEST_CASE("all_passed flips on any failure") {
  std::vector<VerifySuite> suites = {{"a", true, 0.0, 1.0, ""}, {"b", true, 0.0, 1.0, ""}};
  CHECK(all_passed(suites));
  suites[1].pass = false;
  CHECK_FALSE(all_passed(suites));
  CHECK(all_passed({}));
}
