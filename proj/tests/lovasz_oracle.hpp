#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include <Eigen/Core>

namespace cola::test {

/// Jaccard loss 1 - |F \ M| / |F u M| of a mistake set M against foreground F.
inline double jaccard_loss(const std::vector<bool>& foreground, const std::vector<bool>& mistakes) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    inter += foreground[i] && !mistakes[i];
    uni += foreground[i] || mistakes[i];
  }
  return uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

/// Lovasz extension as the integral over thresholds t in (0, 1] of the
/// Jaccard loss of {i : m_i >= t}; piecewise constant between distinct errors.
inline double lovasz_threshold_integral(const std::vector<double>& errors, const std::vector<bool>& foreground) {
  std::set<double, std::greater<>> levels(errors.begin(), errors.end());
  std::vector<double> sorted(levels.begin(), levels.end());
  sorted.push_back(0.0);
  double value = 0.0;
  for (std::size_t j = 0; j + 1 < sorted.size(); ++j) {
    const double width = sorted[j] - sorted[j + 1];
    if (width <= 0.0) continue;
    std::vector<bool> mistakes(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i) mistakes[i] = errors[i] >= sorted[j];
    value += width * jaccard_loss(foreground, mistakes);
  }
  return value;
}

/// Per-class oracle value over non-ignored rows; -1 when the class is absent.
inline double lovasz_oracle(const Eigen::MatrixXd& probs, const std::vector<int>& targets, int cls, int ignore_id) {
  std::vector<double> errors;
  std::vector<bool> fg;
  bool present = false;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == ignore_id) continue;
    const bool f = targets[i] == cls;
    present = present || f;
    fg.push_back(f);
    errors.push_back(f ? 1.0 - probs(static_cast<Eigen::Index>(i), cls) : probs(static_cast<Eigen::Index>(i), cls));
  }
  return present ? lovasz_threshold_integral(errors, fg) : -1.0;
}

}  // namespace cola::test
