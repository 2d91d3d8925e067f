#include "cola/losses.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "cola/error.hpp"

namespace cola {

namespace {

void check_targets(const Eigen::MatrixXd& m, std::span<const int> targets, int ignore_id) {
  if (static_cast<std::size_t>(m.rows()) != targets.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(m.rows()) + " rows vs " + std::to_string(targets.size()) +
                                              " targets");
  }
  for (int t : targets) {
    if (t != ignore_id && (t < 0 || t >= m.cols())) {
      throw Error(ErrorCode::OutOfRangeClass, "target " + std::to_string(t) + " outside " +
                                                  std::to_string(m.cols()) + " classes");
    }
  }
}

}  // namespace

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

LossResult cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> targets, int ignore_id) {
  check_targets(logits, targets, ignore_id);
  const auto valid = std::count_if(targets.begin(), targets.end(), [&](int t) { return t != ignore_id; });
  if (valid == 0) throw Error(ErrorCode::EmptyBatch, "every row is ignored");
  const double inv = 1.0 / static_cast<double>(valid);

  LossResult result;
  result.grad = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  const Eigen::Index n_cols = logits.cols();
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    const double shift = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < n_cols; ++c) {
      const double e = std::exp(logits(r, c) - shift);
      result.grad(r, c) = e;
      z += e;
    }
    result.loss += (std::log(z) - (logits(r, t) - shift)) * inv;
    result.grad.row(r) *= inv / z;
    result.grad(r, t) -= inv;
  }
  return result;
}

std::vector<double> lovasz_grad(std::span<const double> sorted_foreground) {
  const double gts = std::accumulate(sorted_foreground.begin(), sorted_foreground.end(), 0.0);
  std::vector<double> grad(sorted_foreground.size());
  double cum_fg = 0.0, cum_bg = 0.0, previous = 0.0;
  for (std::size_t k = 0; k < sorted_foreground.size(); ++k) {
    cum_fg += sorted_foreground[k];
    cum_bg += 1.0 - sorted_foreground[k];
    const double intersection = gts - cum_fg;
    const double union_size = gts + cum_bg;
    const double jaccard = union_size > 0.0 ? 1.0 - intersection / union_size : 0.0;
    grad[k] = jaccard - previous;
    previous = jaccard;
  }
  return grad;
}

namespace {

struct Entry {
  double error;
  std::uint32_t v;
};

bool before(const Entry& a, const Entry& b) { return a.error > b.error || (a.error == b.error && a.v < b.v); }

// Descending error, ties in row order. An LSD radix sort on the float-rounded
// error puts every entry next to its final place; insertion sort with the
// exact comparator finishes the job in near-linear time.
void sort_descending(std::vector<Entry>& entries) {
  const std::size_t n = entries.size();
  std::vector<std::uint32_t> keys(n), keys_tmp(n);
  std::vector<Entry> tmp(n);
  for (std::size_t k = 0; k < n; ++k) keys[k] = ~std::bit_cast<std::uint32_t>(static_cast<float>(entries[k].error));
  for (int shift = 0; shift < 32; shift += 8) {
    std::size_t count[257] = {};
    for (std::size_t k = 0; k < n; ++k) ++count[((keys[k] >> shift) & 0xFF) + 1];
    for (int d = 0; d < 256; ++d) count[d + 1] += count[d];
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t pos = count[(keys[k] >> shift) & 0xFF]++;
      keys_tmp[pos] = keys[k];
      tmp[pos] = entries[k];
    }
    keys.swap(keys_tmp);
    entries.swap(tmp);
  }
  for (std::size_t k = 1; k < n; ++k) {
    const Entry e = entries[k];
    std::size_t j = k;
    while (j > 0 && before(e, entries[j - 1])) {
      entries[j] = entries[j - 1];
      --j;
    }
    entries[j] = e;
  }
}

struct ClassTerm {
  int cls;
  double value;
  std::vector<std::size_t> rows;   // valid rows in sorted order
  std::vector<double> weights;     // lovasz_grad in the same order
  std::vector<double> foreground;  // in the same order
};

std::vector<ClassTerm> lovasz_terms(const Eigen::MatrixXd& probs, std::span<const int> targets, int ignore_id) {
  check_targets(probs, targets, ignore_id);
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != ignore_id) valid.push_back(i);
  }
  if (valid.empty()) throw Error(ErrorCode::EmptyBatch, "every row is ignored");

  std::vector<ClassTerm> terms;
  std::vector<Entry> entries(valid.size());
  for (int c = 0; c < probs.cols(); ++c) {
    const bool present = std::any_of(valid.begin(), valid.end(), [&](std::size_t i) { return targets[i] == c; });
    if (!present) continue;
    for (std::size_t v = 0; v < valid.size(); ++v) {
      const std::size_t i = valid[v];
      const double fg = targets[i] == c ? 1.0 : 0.0;
      entries[v] = {std::abs(fg - probs(static_cast<Eigen::Index>(i), c)), static_cast<std::uint32_t>(v)};
    }
    sort_descending(entries);
    ClassTerm term;
    term.cls = c;
    term.rows.resize(entries.size());
    term.foreground.resize(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      term.rows[k] = valid[entries[k].v];
      term.foreground[k] = targets[term.rows[k]] == c ? 1.0 : 0.0;
    }
    term.weights = lovasz_grad(term.foreground);
    term.value = 0.0;
    for (std::size_t k = 0; k < entries.size(); ++k) term.value += entries[k].error * term.weights[k];
    terms.push_back(std::move(term));
  }
  return terms;
}

}  // namespace

std::vector<std::optional<double>> lovasz_per_class(const Eigen::MatrixXd& probs, std::span<const int> targets,
                                                    int ignore_id) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(probs.cols()));
  for (const auto& term : lovasz_terms(probs, targets, ignore_id)) out[static_cast<std::size_t>(term.cls)] = term.value;
  return out;
}

LossResult lovasz_softmax(const Eigen::MatrixXd& probs, std::span<const int> targets, int ignore_id) {
  const auto terms = lovasz_terms(probs, targets, ignore_id);
  const double inv = 1.0 / static_cast<double>(terms.size());
  LossResult result;
  result.grad = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
  for (const auto& term : terms) {
    result.loss += term.value * inv;
    // error = fg - p for foreground rows and p for background rows.
    for (std::size_t k = 0; k < term.rows.size(); ++k) {
      const double sign = term.foreground[k] > 0.0 ? -1.0 : 1.0;
      result.grad(static_cast<Eigen::Index>(term.rows[k]), term.cls) += sign * term.weights[k] * inv;
    }
  }
  return result;
}

LossResult mixed_loss(const Eigen::MatrixXd& logits, std::span<const int> targets, int ignore_id,
                      double lovasz_weight) {
  LossResult ce = cross_entropy(logits, targets, ignore_id);
  if (lovasz_weight == 0.0) return ce;
  const Eigen::MatrixXd probs = softmax(logits);
  const LossResult lv = lovasz_softmax(probs, targets, ignore_id);
  // Softmax Jacobian-vector product: p * (g - <g, p>) per row.
  const Eigen::VectorXd dots = (lv.grad.array() * probs.array()).rowwise().sum();
  const Eigen::MatrixXd grad_logits = (probs.array() * (lv.grad.colwise() - dots).array()).matrix();
  ce.loss += lovasz_weight * lv.loss;
  ce.grad += lovasz_weight * grad_logits;
  return ce;
}

}  // namespace cola
