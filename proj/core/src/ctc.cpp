// SPDX-License-Identifier: Apache-2.0
#include "ctcadapt/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctcadapt/error.hpp"

namespace ctcadapt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void validate_lattice(const Tensor& log_probs, const char* op) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 2)
    throw ShapeError(std::string(op) + ": lattice must be t x v with v >= 2, got " +
                     shape_str(log_probs.shape()));
  int64_t t = log_probs.dim(0), v = log_probs.dim(1);
  if (t < 1) throw ValueError(std::string(op) + ": empty lattice");
  for (int64_t r = 0; r < t; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < v; ++j)
      s += std::exp(log_probs.values()[static_cast<size_t>(r * v + j)]);
    if (std::abs(s - 1.0) > 1e-9)
      throw ValueError(std::string(op) + ": lattice row " + std::to_string(r) +
                       " exponentiates to " + std::to_string(s) + ", not a distribution");
  }
}

void validate_labels(const std::vector<int>& y, int64_t v, const char* op) {
  for (int id : y)
    if (id < 1 || id >= v)
      throw ValueError(std::string(op) + ": label id " + std::to_string(id) +
                       " outside [1," + std::to_string(v) + ")");
}

}  // namespace

Tensor log_softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax_rows: expected 2-D logits");
  return sub(logits, logsumexp(logits, 1));
}

int64_t ctc_min_frames(const std::vector<int>& y) {
  int64_t repeats = 0;
  for (size_t i = 1; i < y.size(); ++i)
    if (y[i] == y[i - 1]) ++repeats;
  return static_cast<int64_t>(y.size()) + repeats;
}

Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& y) {
  validate_lattice(log_probs, "ctc_loss");
  int64_t t = log_probs.dim(0), v = log_probs.dim(1);
  validate_labels(y, v, "ctc_loss");
  if (t < ctc_min_frames(y))
    throw ValueError("ctc_loss: infeasible — " + std::to_string(t) +
                     " frames cannot align a label sequence needing " +
                     std::to_string(ctc_min_frames(y)));

  int64_t u = static_cast<int64_t>(y.size());
  int64_t s = 2 * u + 1;
  std::vector<int> ext(static_cast<size_t>(s), kBlankId);
  for (int64_t i = 0; i < u; ++i) ext[static_cast<size_t>(2 * i + 1)] = y[static_cast<size_t>(i)];

  // one-hot gather matrix: emis = log_probs @ m picks log p_t(ext_s) per column
  Tensor m = Tensor::zeros({v, s});
  {
    auto mv = m.values_mut();
    for (int64_t j = 0; j < s; ++j)
      mv[static_cast<size_t>(ext[static_cast<size_t>(j)] * s + j)] = 1.0;
  }
  Tensor emis = matmul(log_probs, m);  // t x s

  // entry mask: at time 0 only the first blank and first label are reachable
  std::vector<double> init(static_cast<size_t>(s), kNegInf);
  init[0] = 0.0;
  if (s > 1) init[1] = 0.0;
  Tensor alpha = add(slice(emis, 0, 0, 1), Tensor::from_vector({1, s}, init));

  // skip transition allowed into s when ext_s is a label differing from ext_{s-2}
  std::vector<double> skip(static_cast<size_t>(s), kNegInf);
  for (int64_t j = 2; j < s; ++j)
    if (ext[static_cast<size_t>(j)] != kBlankId &&
        ext[static_cast<size_t>(j)] != ext[static_cast<size_t>(j - 2)])
      skip[static_cast<size_t>(j)] = 0.0;
  Tensor skip_mask = Tensor::from_vector({1, s}, skip);
  Tensor pad1 = Tensor::full({1, 1}, kNegInf);
  Tensor pad2 = Tensor::full({1, std::min<int64_t>(2, s)}, kNegInf);

  for (int64_t step = 1; step < t; ++step) {
    Tensor stay = alpha;
    Tensor from_prev = s > 1 ? concat({pad1, slice(alpha, 1, 0, s - 1)}, 1) : pad1;
    Tensor from_skip = s > 2 ? add(concat({pad2, slice(alpha, 1, 0, s - 2)}, 1), skip_mask)
                             : Tensor::full({1, s}, kNegInf);
    Tensor combined = logsumexp(concat({stay, from_prev, from_skip}, 0), 0);
    alpha = add(combined, slice(emis, 0, step, 1));
  }

  int64_t tail = std::min<int64_t>(2, s);
  Tensor total = logsumexp(slice(alpha, 1, s - tail, tail));
  return mul(total, -1.0);
}

double ctc_brute_force(const Tensor& log_probs, const std::vector<int>& y) {
  validate_lattice(log_probs, "ctc_brute_force");
  int64_t t = log_probs.dim(0), v = log_probs.dim(1);
  validate_labels(y, v, "ctc_brute_force");

  double paths = std::pow(static_cast<double>(v), static_cast<double>(t));
  if (paths > 1e6)
    throw ValueError("ctc_brute_force: instance too large — v^t = " + std::to_string(paths) +
                     " exceeds 1e6 paths");

  std::vector<int> path(static_cast<size_t>(t), 0);
  std::vector<double> matched;
  std::vector<int> collapsed;
  while (true) {
    // collapse: dedupe consecutive, then strip blanks
    collapsed.clear();
    int prev = -1;
    for (int id : path) {
      if (id != prev && id != kBlankId) collapsed.push_back(id);
      prev = id;
    }
    if (collapsed == y) {
      double lp = 0.0;
      for (int64_t step = 0; step < t; ++step)
        lp += log_probs.values()[static_cast<size_t>(step * v + path[static_cast<size_t>(step)])];
      matched.push_back(lp);
    }
    // next path in base-v counter order
    int64_t pos = t - 1;
    while (pos >= 0 && ++path[static_cast<size_t>(pos)] == v) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }

  if (matched.empty())
    throw ValueError("ctc_brute_force: infeasible — no path collapses to the label sequence");
  double mx = *std::max_element(matched.begin(), matched.end());
  double z = 0.0;
  for (double lp : matched) z += std::exp(lp - mx);
  return -(mx + std::log(z));
}

std::vector<int> greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 1)
    throw ShapeError("greedy_decode: expected t x v lattice");
  int64_t t = log_probs.dim(0), v = log_probs.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (int64_t r = 0; r < t; ++r) {
    const double* row = log_probs.values().data() + r * v;
    int best = 0;
    for (int64_t j = 1; j < v; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    if (best != prev && best != kBlankId) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace ctcadapt
