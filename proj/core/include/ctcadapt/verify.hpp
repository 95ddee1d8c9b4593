// SPDX-License-Identifier: Apache-2.0
// Self-contained verification suites: re-runnable numeric cross-checks that
// pit the library against independent oracles (central finite differences,
// exhaustive path enumeration, hand-derived closed forms, brute-force metric
// recounts). The CLI `verify` command runs them all and reports per-suite
// maximum errors.
#pragma once

#include <string>
#include <vector>

namespace ctcadapt {

struct VerifySuite {
  std::string name;
  bool pass = false;
  double max_error = 0.0;  // worst observed deviation, suite-specific metric
  double tolerance = 0.0;  // the bound max_error was held against
  std::string detail;      // one-line summary (case counts, sub-results)
};

// Gradients of every primitive op against central finite differences.
VerifySuite verify_primitive_gradients();
// Gradient of the full combined loss (biased forward, two frames, two-entry
// catalog) over every model parameter.
VerifySuite verify_network_gradient();
// ctc_loss against exhaustive path enumeration on random small instances.
VerifySuite verify_ctc_bruteforce(int cases = 200);
// Attention-supervision loss against its hand-derived values, including the
// exact zero for an all-no-bias attention map.
VerifySuite verify_attention_hand_values();
// wer / entity_f1 against brute-force recount oracles on random small cases.
VerifySuite verify_metric_oracles(int cases = 100);

// All suites in the order above.
std::vector<VerifySuite> run_verification();

bool all_passed(const std::vector<VerifySuite>& suites);

}  // namespace ctcadapt
