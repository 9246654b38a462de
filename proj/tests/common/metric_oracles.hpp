#pragma once

// Brute-force reference implementations of the ranking metrics, written
// independently of the library: pairwise counting, per-positive rank
// enumeration and an exhaustive threshold sweep.

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "xaibench/rng.hpp"

namespace xb::oracle {

struct Instance {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

inline double auc_pairs(const Instance& in) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < in.scores.size(); ++i) {
    if (!in.labels[i]) continue;
    for (std::size_t j = 0; j < in.scores.size(); ++j) {
      if (in.labels[j]) continue;
      pairs += 1;
      if (in.scores[i] > in.scores[j]) wins += 1;
      else if (in.scores[i] == in.scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Descending order, ties by original index: pixel j precedes i iff
/// s_j > s_i, or s_j == s_i and j < i.
inline double ap_ranks(const Instance& in) {
  double sum = 0;
  int positives = 0;
  const auto n = in.scores.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.labels[i]) continue;
    ++positives;
    double rank = 0, hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool before =
          in.scores[j] > in.scores[i] || (in.scores[j] == in.scores[i] && j <= i);
      if (!before) continue;
      rank += 1;
      hits += in.labels[j];
    }
    sum += hits / rank;
  }
  return sum / positives;
}

struct Sweep {
  double precision = 0;
  bool found = false;
};

/// Lowest threshold among the observed scores whose false positives stay
/// within floor((1 - specificity) * N).
inline Sweep prec_sweep(const Instance& in, double specificity) {
  std::size_t negatives = 0;
  for (auto l : in.labels) negatives += (l == 0);
  const auto budget = static_cast<std::size_t>(
      std::floor((1.0 - specificity) * static_cast<double>(negatives) + 1e-9));
  const std::set<double> thresholds(in.scores.begin(), in.scores.end());
  Sweep best;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < in.scores.size(); ++i)
      if (in.scores[i] >= t) (in.labels[i] ? tp : fp) += 1;
    if (fp <= budget) {
      best.found = true;
      best.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0;
      break;  // thresholds ascend: the first admissible one is the lowest
    }
  }
  return best;
}

/// Random instance of 2..max_n pixels with at least one positive and one
/// negative. Scores are quantized to a random number of levels, which sets
/// the tie density (one level: all ties).
inline Instance random_instance(Rng& rng, std::size_t max_n) {
  Instance in;
  const std::size_t n = 2 + rng.below(max_n - 1);
  const std::size_t levels = 1 + rng.below(n + 1);
  const double p = 0.05 + 0.9 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(std::floor(rng.uniform() * static_cast<double>(levels)) /
                        static_cast<double>(levels));
    in.labels.push_back(rng.uniform() < p ? 1 : 0);
  }
  const std::size_t pos = rng.below(n);
  in.labels[pos] = 1;
  in.labels[(pos + 1 + rng.below(n - 1)) % n] = 0;
  return in;
}

}  // namespace xb::oracle
