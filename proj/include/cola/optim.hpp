#pragma once

#include <cstddef>
#include <string_view>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cola/model.hpp"

namespace cola {

enum class ScheduleKind { CosineAnneal, CosineWarmup };

std::optional<ScheduleKind> parse_schedule(std::string_view text);
std::string_view schedule_name(ScheduleKind kind);

struct Schedule {
  ScheduleKind kind = ScheduleKind::CosineAnneal;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;
};

/// SGD with momentum. Velocity buffers are created lazily on the first step,
/// shaped like the parameter list (backbone layers, then heads in map order).
struct OptState {
  double base_lr = 0.4;
  double momentum = 0.9;
  Schedule schedule;
  std::size_t step = 0;
  std::vector<DenseLayer> velocity;
};

/// CosineAnneal: base * (1 + cos(pi * step / total)) / 2.
/// CosineWarmup: linear 0 -> base over warmup steps, then cosine over the rest.
double schedule_lr(const OptState& state);
double schedule_lr(const Schedule& schedule, double base_lr, std::size_t step);

/// v' = momentum * v + g; p' = p - lr * v' with lr taken at the pre-step counter.
std::pair<Model, OptState> sgd_step(Model model, const Gradients& grads, OptState state);
std::pair<MHModel, OptState> sgd_step(MHModel model, const MHGradients& grads, OptState state);

/// In-place form used by the training loops.
void sgd_update(std::span<DenseLayer* const> params, std::span<const DenseLayer* const> grads, OptState& state);

}  // namespace cola
