#include "cola/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cola/error.hpp"

namespace cola {

std::optional<ScheduleKind> parse_schedule(std::string_view text) {
  if (text == "cosine_anneal") return ScheduleKind::CosineAnneal;
  if (text == "cosine_warmup") return ScheduleKind::CosineWarmup;
  return std::nullopt;
}

std::string_view schedule_name(ScheduleKind kind) {
  return kind == ScheduleKind::CosineAnneal ? "cosine_anneal" : "cosine_warmup";
}

double schedule_lr(const Schedule& schedule, double base_lr, std::size_t step) {
  const std::size_t total = std::max<std::size_t>(schedule.total_steps, 1);
  step = std::min(step, total);
  auto cosine = [&](std::size_t s, std::size_t span) {
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(span)));
  };
  if (schedule.kind == ScheduleKind::CosineAnneal) return cosine(step, total);
  const std::size_t warmup = std::min(schedule.warmup_steps, total);
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return base_lr;
  return cosine(step - warmup, total - warmup);
}

double schedule_lr(const OptState& state) { return schedule_lr(state.schedule, state.base_lr, state.step); }

void sgd_update(std::span<DenseLayer* const> params, std::span<const DenseLayer* const> grads, OptState& state) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "parameter and gradient counts differ");
  if (state.velocity.empty()) {
    for (const DenseLayer* p : params) {
      state.velocity.push_back({Eigen::MatrixXd::Zero(p->weight.rows(), p->weight.cols()),
                                Eigen::VectorXd::Zero(p->bias.size())});
    }
  }
  if (state.velocity.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "velocity does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.velocity[i])) {
      throw Error(ErrorCode::ShapeMismatch, "parameter block " + std::to_string(i) + " shape mismatch");
    }
  }
  const double lr = schedule_lr(state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseLayer& v = state.velocity[i];
    v.weight = state.momentum * v.weight + grads[i]->weight;
    v.bias = state.momentum * v.bias + grads[i]->bias;
    params[i]->weight -= lr * v.weight;
    params[i]->bias -= lr * v.bias;
  }
  ++state.step;
}

std::pair<Model, OptState> sgd_step(Model model, const Gradients& grads, OptState state) {
  if (grads.backbone.size() != model.backbone.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient has the wrong number of layers");
  }
  std::vector<DenseLayer*> params;
  std::vector<const DenseLayer*> g;
  for (std::size_t l = 0; l < model.backbone.layers.size(); ++l) {
    params.push_back(&model.backbone.layers[l]);
    g.push_back(&grads.backbone[l]);
  }
  params.push_back(&model.head);
  g.push_back(&grads.head);
  sgd_update(params, g, state);
  return {std::move(model), std::move(state)};
}

std::pair<MHModel, OptState> sgd_step(MHModel model, const MHGradients& grads, OptState state) {
  if (grads.backbone.size() != model.backbone.layers.size() || grads.heads.size() != model.heads.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient does not match the multi-head model");
  }
  std::vector<DenseLayer*> params;
  std::vector<const DenseLayer*> g;
  for (std::size_t l = 0; l < model.backbone.layers.size(); ++l) {
    params.push_back(&model.backbone.layers[l]);
    g.push_back(&grads.backbone[l]);
  }
  for (auto& [name, head] : model.heads) {
    const auto it = grads.heads.find(name);
    if (it == grads.heads.end()) throw Error(ErrorCode::UnknownHead, "no gradient for head '" + name + "'");
    params.push_back(&head);
    g.push_back(&it->second);
  }
  sgd_update(params, g, state);
  return {std::move(model), std::move(state)};
}

}  // namespace cola
