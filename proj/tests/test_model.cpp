#include <doctest.h>

#include <cmath>
#include <cstring>

#include "cola/error.hpp"
#include "cola/model.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace cola;

namespace {

// Row-by-row loops, no Eigen products.
Eigen::MatrixXd naive_forward(const Model& m, const Eigen::MatrixXd& x) {
  auto dense = [](const DenseLayer& layer, const Eigen::MatrixXd& in, bool relu) {
    Eigen::MatrixXd out(in.rows(), layer.fan_out());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (Eigen::Index o = 0; o < layer.fan_out(); ++o) {
        double acc = layer.bias(o);
        for (Eigen::Index i = 0; i < layer.fan_in(); ++i) acc += in(r, i) * layer.weight(o, i);
        out(r, o) = relu && acc < 0.0 ? 0.0 : acc;
      }
    }
    return out;
  };
  Eigen::MatrixXd h = x;
  for (const auto& layer : m.backbone.layers) h = dense(layer, h, true);
  return dense(m.head, h, false);
}

Eigen::MatrixXd random_input(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("Glorot initialisation") {
  const DenseLayer a = init_dense(14, 32, 5);
  const double limit = std::sqrt(6.0 / 46.0);
  CHECK(a.fan_in() == 14);
  CHECK(a.fan_out() == 32);
  CHECK(a.weight.cwiseAbs().maxCoeff() <= limit);
  CHECK(a.weight.cwiseAbs().maxCoeff() > 0.8 * limit);
  CHECK(a.bias.isZero());
  CHECK(init_dense(14, 32, 5) == a);
  CHECK_FALSE(init_dense(14, 32, 6) == a);
  CHECK_THROWS_AS(init_dense(0, 3, 1), Error);
  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(init_model(none, 3, 1), Error);
}

TEST_CASE("forward matches a naive loop") {
  Rng rng(1);
  const std::vector<std::size_t> hidden{8, 6, 4};
  Model m = init_model(hidden, 5, 3);
  for (auto& l : m.backbone.layers) l.bias.setConstant(0.05);
  const Eigen::MatrixXd x = random_input(rng, 40, kFeatureWidth);
  const auto fwd = forward(m, x);
  CHECK(fwd.logits.rows() == 40);
  CHECK(fwd.logits.cols() == 5);
  CHECK((fwd.logits - naive_forward(m, x)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(extract_penultimate(m, x) == fwd.cache.penultimate());
  CHECK(fwd.cache.penultimate().cols() == 4);
  CHECK_THROWS_AS(forward(m, random_input(rng, 3, 5)), Error);
}

TEST_CASE("backprop matches central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto trial = test::random_trial(seed);
    CAPTURE(seed);
    CHECK(test::max_gradient_gap(trial.model, trial.x, trial.targets, 1.0) < 1e-5);
    CHECK(test::max_gradient_gap(trial.model, trial.x, trial.targets, 0.0) < 1e-5);
  }
}

TEST_CASE("swap_head keeps the backbone bit-for-bit") {
  const std::vector<std::size_t> hidden{6, 5};
  const Model m = init_model(hidden, 8, 9);
  const Model s = swap_head(m, 13, 10);
  CHECK(s.n_classes() == 13);
  CHECK(s.head.fan_in() == 5);
  REQUIRE(s.backbone.layers.size() == m.backbone.layers.size());
  for (std::size_t l = 0; l < m.backbone.layers.size(); ++l) {
    const auto& a = m.backbone.layers[l];
    const auto& b = s.backbone.layers[l];
    CHECK(std::memcmp(a.weight.data(), b.weight.data(), sizeof(double) * a.weight.size()) == 0);
    CHECK(std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * a.bias.size()) == 0);
  }
  CHECK(s.head == init_dense(5, 13, 10));
}

TEST_CASE("multi-head model shares its trunk") {
  const std::vector<std::size_t> hidden{6, 4};
  const MHModel mh = init_mh_model(hidden, {{"a", 3}, {"b", 5}}, 2);
  Rng rng(4);
  const Eigen::MatrixXd x = random_input(rng, 10, kFeatureWidth);
  const Eigen::MatrixXd la = mh_forward(mh, x, "a");
  const Eigen::MatrixXd lb = mh_forward(mh, x, "b");
  CHECK(la.cols() == 3);
  CHECK(lb.cols() == 5);
  CHECK(extract_penultimate(mh_as_model(mh, "a"), x) == extract_penultimate(mh_as_model(mh, "b"), x));
  CHECK(forward(mh_as_model(mh, "a"), x).logits == la);
  CHECK_THROWS_AS(mh_forward(mh, x, "c"), Error);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const std::vector<std::size_t> hidden{7, 3};
  Model m = init_model(hidden, 4, 12);
  m.backbone.layers[0].bias(2) = -0.0;
  m.backbone.layers[1].bias(0) = 1e-300;
  CheckpointStats stats;
  stats.features.mean.setConstant(0.5);
  stats.features.stddev(3) = 2.25;
  stats.coarse_variant = 8;
  stats.corpus_digest = 0xDEADBEEFCAFEF00DULL;
  stats.seed = 77;
  stats.note = "cola syn_a syn_b";
  const Bytes bytes = save_checkpoint(m, stats);
  CHECK(std::memcmp(bytes.data(), "COLA", 4) == 0);
  const Checkpoint ck = load_checkpoint(bytes);
  CHECK(ck.model() == m);
  CHECK(std::signbit(ck.backbone.layers[0].bias(2)));
  CHECK(ck.stats.features.mean == stats.features.mean);
  CHECK(ck.stats.features.stddev == stats.features.stddev);
  CHECK(ck.stats.coarse_variant == 8);
  CHECK(ck.stats.corpus_digest == stats.corpus_digest);
  CHECK(ck.stats.seed == 77);
  CHECK(ck.stats.note == stats.note);
  CHECK(save_checkpoint(ck) == bytes);
}

TEST_CASE("multi-head checkpoints keep every head") {
  const std::vector<std::size_t> hidden{4};
  const MHModel mh = init_mh_model(hidden, {{"x", 2}, {"y", 3}}, 1);
  Checkpoint ck;
  ck.backbone = mh.backbone;
  for (const auto& [name, head] : mh.heads) ck.heads.emplace_back(name, head);
  const Checkpoint back = load_checkpoint(save_checkpoint(ck));
  CHECK(back.mh_model() == mh);
  CHECK_THROWS_AS(back.model(2), Error);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::vector<std::size_t> hidden{3};
  const Bytes good = save_checkpoint(init_model(hidden, 2, 1), CheckpointStats{});
  auto code_of = [](const Bytes& b) {
    try {
      load_checkpoint(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;
  };
  Bytes bad = good;
  bad[0] = 'X';
  CHECK(code_of(bad) == ErrorCode::CorruptCheckpoint);
  CHECK(code_of(Bytes(good.begin(), good.end() - 5)) == ErrorCode::CorruptCheckpoint);
  bad = good;
  bad.push_back(0);
  CHECK(code_of(bad) == ErrorCode::CorruptCheckpoint);
  bad = good;
  bad[4] = 99;
  CHECK(code_of(bad) == ErrorCode::CorruptCheckpoint);
  CHECK(code_of(Bytes{}) == ErrorCode::CorruptCheckpoint);
}

TEST_CASE("finite parameter check") {
  const std::vector<std::size_t> hidden{3};
  Model m = init_model(hidden, 2, 1);
  CHECK(parameters_finite(m));
  m.head.bias(0) = std::nan("");
  CHECK_FALSE(parameters_finite(m));
}

}  // TEST_SUITE
