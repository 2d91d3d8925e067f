#include <doctest.h>

#include "cola/error.hpp"
#include "cola/optim.hpp"

using namespace cola;

namespace {

Model tiny_model(double fill) {
  Model m;
  m.backbone.layers.push_back({Eigen::MatrixXd::Constant(2, 3, fill), Eigen::VectorXd::Constant(2, fill)});
  m.head = {Eigen::MatrixXd::Constant(1, 2, fill), Eigen::VectorXd::Constant(1, fill)};
  return m;
}

Gradients constant_grads(double g) {
  const Model shape = tiny_model(g);
  return {shape.backbone.layers, shape.head};
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("cosine anneal anchors are exact") {
  for (double base : {0.4, 0.8}) {
    const Schedule s{ScheduleKind::CosineAnneal, 1000, 0};
    CHECK(schedule_lr(s, base, 0) == base);
    CHECK(schedule_lr(s, base, 500) == base / 2);
    CHECK(schedule_lr(s, base, 1000) == 0.0);
  }
}

TEST_CASE("cosine warmup ramps then anneals") {
  const Schedule s{ScheduleKind::CosineWarmup, 100, 10};
  CHECK(schedule_lr(s, 0.24, 0) == 0.0);
  CHECK(schedule_lr(s, 0.24, 5) == doctest::Approx(0.12));
  CHECK(schedule_lr(s, 0.24, 10) == 0.24);
  CHECK(schedule_lr(s, 0.24, 55) == doctest::Approx(0.12));
  CHECK(schedule_lr(s, 0.24, 100) == 0.0);
  double previous = schedule_lr(s, 0.24, 10);
  for (std::size_t step = 11; step <= 100; ++step) {
    const double lr = schedule_lr(s, 0.24, step);
    CHECK(lr <= previous);
    CHECK(lr >= 0.0);
    previous = lr;
  }
}

TEST_CASE("schedule names") {
  CHECK(parse_schedule("cosine_anneal") == ScheduleKind::CosineAnneal);
  CHECK(parse_schedule("cosine_warmup") == ScheduleKind::CosineWarmup);
  CHECK_FALSE(parse_schedule("step").has_value());
  CHECK(schedule_name(ScheduleKind::CosineWarmup) == "cosine_warmup");
}

TEST_CASE("momentum 0 is plain gradient descent") {
  OptState state;
  state.base_lr = 0.1;
  state.momentum = 0.0;
  state.schedule = {ScheduleKind::CosineAnneal, 10, 0};
  auto [m, s] = sgd_step(tiny_model(1.0), constant_grads(0.5), state);
  CHECK(m.head.weight(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  CHECK(s.step == 1);
}

TEST_CASE("lr 0 leaves parameters but still updates velocity") {
  OptState state;
  state.base_lr = 0.0;
  state.momentum = 0.9;
  auto [m, s] = sgd_step(tiny_model(1.0), constant_grads(0.5), state);
  CHECK(m == tiny_model(1.0));
  REQUIRE(s.velocity.size() == 2);
  CHECK(s.velocity[0].weight(1, 2) == 0.5);
  CHECK(s.velocity[1].bias(0) == 0.5);
}

TEST_CASE("two steps unroll the momentum recurrence") {
  OptState state;
  state.base_lr = 0.4;
  state.momentum = 0.9;
  state.schedule = {ScheduleKind::CosineAnneal, 4, 0};
  const double g = 0.25;
  auto [m1, s1] = sgd_step(tiny_model(2.0), constant_grads(g), state);
  auto [m2, s2] = sgd_step(m1, constant_grads(g), s1);
  const double lr1 = schedule_lr(state.schedule, 0.4, 0);
  const double lr2 = schedule_lr(state.schedule, 0.4, 1);
  CHECK(lr1 == 0.4);
  const double expected = 2.0 - lr1 * g - lr2 * 1.9 * g;
  CHECK(m2.backbone.layers[0].weight(0, 1) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(m2.head.bias(0) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(s2.step == 2);
}

TEST_CASE("shape mismatches are rejected") {
  Gradients bad = constant_grads(1.0);
  bad.head.weight.resize(2, 2);
  CHECK_THROWS_AS(sgd_step(tiny_model(1.0), bad, OptState{}), Error);
  Gradients missing = constant_grads(1.0);
  missing.backbone.clear();
  CHECK_THROWS_AS(sgd_step(tiny_model(1.0), missing, OptState{}), Error);
}

TEST_CASE("multi-head steps touch every head") {
  MHModel mh;
  mh.backbone = tiny_model(1.0).backbone;
  mh.heads["a"] = tiny_model(1.0).head;
  mh.heads["b"] = tiny_model(1.0).head;
  MHGradients g;
  g.backbone = constant_grads(1.0).backbone;
  g.heads["a"] = constant_grads(1.0).head;
  g.heads["b"] = constant_grads(0.0).head;
  OptState state;
  state.base_lr = 0.5;
  auto [m, s] = sgd_step(mh, g, state);
  CHECK(m.heads.at("a").bias(0) == doctest::Approx(0.5));
  CHECK(m.heads.at("b").bias(0) == 1.0);
  MHGradients wrong = g;
  wrong.heads.erase("b");
  wrong.heads["c"] = constant_grads(0.0).head;
  CHECK_THROWS_AS(sgd_step(mh, wrong, state), Error);
}

}  // TEST_SUITE
