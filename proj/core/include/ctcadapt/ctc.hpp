// SPDX-License-Identifier: Apache-2.0
// CTC objective in log space, a path-enumeration oracle for testing, and the
// greedy decoder. Blank is index 0 of the vocabulary; real subword ids start
// at 1.
#pragma once

#include <cstdint>
#include <vector>

#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

inline constexpr int kBlankId = 0;

// Row-wise log-softmax: logits (t x v) -> log-probabilities (t x v).
Tensor log_softmax_rows(const Tensor& logits);

// Minimum number of frames that admits any valid alignment for y:
// |y| plus one forced blank between each pair of equal adjacent labels.
int64_t ctc_min_frames(const std::vector<int>& y);

// -log P(y | x) via the log-space alpha recursion over the 2U+1 extended
// label sequence. `log_probs` must be a t x v log-probability lattice (each
// row exponentiates to 1 within 1e-9). Differentiable through the tape.
// Throws ValueError on malformed lattices, out-of-range labels, or when no
// alignment of length t exists.
Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& y);

// Definitional oracle: enumerates all v^t frame-label paths, sums the
// probability of those that collapse (dedupe, then strip blanks) to y, and
// returns -log of that sum — the same scale as ctc_loss. Requires
// v^t <= 10^6; throws ValueError beyond that or when y is unreachable.
// Forward value only — no gradient.
double ctc_brute_force(const Tensor& log_probs, const std::vector<int>& y);

// Per-frame argmax (lowest index wins ties), collapse consecutive repeats,
// remove blanks.
std::vector<int> greedy_decode(const Tensor& log_probs);

}  // namespace ctcadapt
