#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cola/losses.hpp"
#include "cola/model.hpp"
#include "cola/random.hpp"

namespace cola::test {

/// |analytic - numeric| / max(1e-3, |analytic|, |numeric|)
inline double relative_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-3, std::abs(analytic), std::abs(numeric)});
}

inline double model_loss(const Model& m, const Eigen::MatrixXd& x, const std::vector<int>& t, double lovasz_weight) {
  return mixed_loss(forward(m, x).logits, t, -1, lovasz_weight).loss;
}

/// Largest relative gap between backprop and central differences over every
/// parameter of the model.
inline double max_gradient_gap(Model model, const Eigen::MatrixXd& x, const std::vector<int>& targets,
                               double lovasz_weight, double h = 1e-6) {
  const auto fwd = forward(model, x);
  const LossResult loss = mixed_loss(fwd.logits, targets, -1, lovasz_weight);
  const Gradients grads = backward(model, fwd.cache, loss.grad);

  std::vector<std::pair<DenseLayer*, const DenseLayer*>> blocks;
  for (std::size_t l = 0; l < model.backbone.layers.size(); ++l) blocks.emplace_back(&model.backbone.layers[l], &grads.backbone[l]);
  blocks.emplace_back(&model.head, &grads.head);

  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = model_loss(model, x, targets, lovasz_weight);
    param = saved - h;
    const double down = model_loss(model, x, targets, lovasz_weight);
    param = saved;
    worst = std::max(worst, relative_gap(analytic, (up - down) / (2.0 * h)));
  };
  for (auto& [param, grad] : blocks) {
    for (Eigen::Index i = 0; i < param->weight.size(); ++i) probe(param->weight.data()[i], grad->weight.data()[i]);
    for (Eigen::Index i = 0; i < param->bias.size(); ++i) probe(param->bias.data()[i], grad->bias.data()[i]);
  }
  return worst;
}

/// Small random model and batch with labelled and ignored rows.
struct GradTrial {
  Model model;
  Eigen::MatrixXd x;
  std::vector<int> targets;
};

inline GradTrial random_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t in = 2 + rng.below(5);
  std::vector<std::size_t> hidden;
  const std::size_t depth = 1 + rng.below(3);
  for (std::size_t l = 0; l < depth; ++l) hidden.push_back(2 + rng.below(6));
  const std::size_t classes = 2 + rng.below(5);
  const std::size_t rows = 3 + rng.below(12);
  GradTrial trial;
  trial.model = init_model(hidden, classes, rng.next_u64(), in);
  // Random head biases too: with a zero head bias, rows whose units are all dead
  // get uniform probabilities, which ties foreground and background errors and
  // puts the Lovasz term exactly on a kink.
  for (auto& layer : trial.model.backbone.layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-0.3, 0.3);
  }
  for (Eigen::Index i = 0; i < trial.model.head.bias.size(); ++i) trial.model.head.bias(i) = rng.uniform(-0.3, 0.3);
  trial.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < trial.x.size(); ++i) trial.x.data()[i] = rng.normal();
  trial.targets.resize(rows);
  for (auto& t : trial.targets) t = rng.uniform() < 0.15 ? -1 : static_cast<int>(rng.below(classes));
  if (std::all_of(trial.targets.begin(), trial.targets.end(), [](int t) { return t < 0; })) trial.targets[0] = 0;
  return trial;
}

}  // namespace cola::test
