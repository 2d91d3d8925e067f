#include <doctest.h>

#include <cmath>
#include <set>

#include "cola/error.hpp"
#include "cola/metrics.hpp"
#include "test_util.hpp"

using namespace cola;

TEST_SUITE("metrics") {

TEST_CASE("hand-derived two-class example") {
  // Truth 0: 50 right, 10 called 1. Truth 1: 40 right.
  std::vector<int> truth, pred;
  for (int i = 0; i < 50; ++i) truth.push_back(0), pred.push_back(0);
  for (int i = 0; i < 10; ++i) truth.push_back(0), pred.push_back(1);
  for (int i = 0; i < 40; ++i) truth.push_back(1), pred.push_back(1);
  ConfusionMatrix cm(2);
  cm.add(pred, truth, -1);
  CHECK(cm.at(0, 0) == 50);
  CHECK(cm.at(0, 1) == 10);
  CHECK(cm.at(1, 1) == 40);
  const auto iou = iou_per_class(cm);
  CHECK(iou[0].intersection == 50);
  CHECK(iou[0].union_count == 60);
  CHECK(iou[1].intersection == 40);
  CHECK(iou[1].union_count == 50);
  CHECK(miou(cm) == doctest::Approx((50.0 / 60.0 + 40.0 / 50.0) / 2.0).epsilon(1e-15));
  CHECK(miou(cm) == doctest::Approx(0.8166666666666667));
}

TEST_CASE("absent classes and averaging modes") {
  ConfusionMatrix cm(3);
  const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
  cm.add(pred, truth, -1);
  const auto iou = iou_per_class(cm);
  CHECK(iou[2].absent());
  CHECK(miou(cm, IouAveraging::PresentOnly) == doctest::Approx((0.5 + 0.5) / 2));
  CHECK(miou(cm, IouAveraging::AllClasses) == doctest::Approx(1.0 / 3));
  try {
    miou(ConfusionMatrix(3));
    FAIL("expected NoEvaluableClass");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoEvaluableClass);
  }
}

TEST_CASE("ignored ground truth is skipped, bad ids rejected") {
  ConfusionMatrix cm(2);
  const std::vector<int> truth{0, 7, 1}, pred{0, 1, 1};
  cm.add(pred, truth, 7);
  CHECK(cm.total() == 2);
  const std::vector<int> bad_truth{2};
  const std::vector<int> one{0};
  CHECK_THROWS_AS(cm.add(one, bad_truth, -1), Error);
  const std::vector<int> two{0, 1};
  CHECK_THROWS_AS(cm.add(two, one, -1), Error);
  CHECK_THROWS_AS(cm += ConfusionMatrix(3), Error);
}

TEST_CASE("accumulation is additive") {
  Rng rng(4);
  ConfusionMatrix whole(4), a(4), b(4);
  std::vector<int> t1(50), p1(50), t2(30), p2(30);
  for (auto* v : {&t1, &p1, &t2, &p2})
    for (auto& x : *v) x = static_cast<int>(rng.below(4));
  whole.add(p1, t1, -1);
  whole.add(p2, t2, -1);
  a = accumulate(a, p1, t1, -1);
  b = accumulate(b, p2, t2, -1);
  a += b;
  CHECK(a == whole);
  CHECK(whole.total() == 80);
  std::uint64_t rows = 0;
  for (std::size_t c = 0; c < 4; ++c) rows += whole.row_sum(c);
  CHECK(rows == 80);
}

TEST_CASE("IoU matches set-based counting on random labelings") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n_classes = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(n_classes));
      pred[i] = static_cast<int>(rng.below(n_classes));
    }
    ConfusionMatrix cm(n_classes);
    cm.add(pred, truth, -1);
    const auto iou = iou_per_class(cm);
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::set<std::size_t> tset, pset;
      for (std::size_t i = 0; i < n; ++i) {
        if (truth[i] == static_cast<int>(c)) tset.insert(i);
        if (pred[i] == static_cast<int>(c)) pset.insert(i);
      }
      std::size_t inter = 0;
      for (auto i : tset) inter += pset.count(i);
      const std::size_t uni = tset.size() + pset.size() - inter;
      CHECK(iou[c].intersection == inter);
      CHECK(iou[c].union_count == uni);
    }
  }
}

TEST_CASE("formatted outputs") {
  ConfusionMatrix cm(2);
  const std::vector<int> truth{0, 1}, pred{0, 0};
  cm.add(pred, truth, -1);
  const std::vector<std::string> names{"road", "car"};
  const std::string csv = format_iou_csv(cm, names);
  CHECK(csv.find("class,name,intersection,union,iou") != std::string::npos);
  CHECK(csv.find("0,road,1,2,0.5") != std::string::npos);
  CHECK(csv.find("1,car,0,1,0") != std::string::npos);
  const std::string table = format_iou_table(cm, names);
  CHECK(table.find("road") != std::string::npos);
  CHECK(table.find("mIoU") != std::string::npos);
}

}  // TEST_SUITE
