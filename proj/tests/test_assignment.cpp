#include "pseqseg/assignment.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <set>

using namespace pseqseg;
using pseqseg::testutil::random_mat;

namespace {

// Exhaustive minimum over all ways to assign exactly demand[g] distinct
// predictions to each target (the rest go to the zero-cost background).
Scalar brute_force_best(const Mat& cost, const std::vector<Index>& demand) {
  const Index p_count = cost.rows();
  const Index g_count = cost.cols();
  std::vector<Index> column(static_cast<std::size_t>(p_count), -1);
  Scalar best = std::numeric_limits<Scalar>::infinity();

  std::function<void(Index, Scalar, std::vector<Index>&)> recurse =
      [&](Index p, Scalar acc, std::vector<Index>& remaining) {
        if (p == p_count) {
          bool feasible = true;
          for (const Index r : remaining) feasible = feasible && r == 0;
          if (feasible) best = std::min(best, acc);
          return;
        }
        // background
        recurse(p + 1, acc, remaining);
        for (Index g = 0; g < g_count; ++g) {
          if (remaining[static_cast<std::size_t>(g)] == 0) continue;
          --remaining[static_cast<std::size_t>(g)];
          recurse(p + 1, acc + cost(p, g), remaining);
          ++remaining[static_cast<std::size_t>(g)];
        }
      };
  std::vector<Index> remaining = demand;
  recurse(0, 0.0, remaining);
  (void)column;
  return best;
}

Scalar assignment_total_cost(const Assignment& asg, const Mat& cost) {
  Scalar total = 0;
  for (std::size_t g = 0; g < asg.per_target.size(); ++g) {
    for (const Index p : asg.per_target[g]) total += cost(p, static_cast<Index>(g));
  }
  return total;
}

void check_partition(const Assignment& asg) {
  std::set<Index> seen;
  Index count = 0;
  for (const auto& ids : asg.per_target) {
    for (const Index p : ids) {
      CHECK(seen.insert(p).second);
      ++count;
    }
  }
  for (const Index p : asg.background) {
    CHECK(seen.insert(p).second);
    ++count;
  }
  CHECK(count == asg.prediction_count);
}

}  // namespace

TEST_CASE("pairwise_cost of a perfect prediction hits every term's minimum") {
  PredictionBatch pred;
  pred.class_scores = Mat::Constant(1, 1, 1.0);
  pred.boxes = Mat(1, 4);
  pred.boxes << 0.2, 0.2, 0.7, 0.8;
  pred.masks = Mat::Zero(1, 16);
  pred.masks.leftCols(8).setConstant(1.0);
  pred.embeddings = Mat::Zero(1, 4);

  TargetSet targets;
  targets.labels = {0};
  targets.boxes = pred.boxes;
  targets.masks = pred.masks;

  const CostMatrix cost = pairwise_cost(pred, targets, LossWeights{});
  CHECK(cost.class_cost(0, 0) == doctest::Approx(0.0));
  CHECK(cost.box_cost(0, 0) == doctest::Approx(0.0));
  CHECK(cost.mask_cost(0, 0) == doctest::Approx(0.0));
  CHECK(cost.values(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("pairwise_cost matches term-by-term recomputation via the loss ops") {
  Rng rng(31);
  PredictionBatch pred;
  pred.class_scores = random_mat(rng, 4, 2, 0.05, 0.95);
  pred.boxes = Mat(4, 4);
  for (Index i = 0; i < 4; ++i) {
    const Scalar x0 = rng.uniform(0, 0.4), y0 = rng.uniform(0, 0.4);
    pred.boxes.row(i) << x0, y0, x0 + rng.uniform(0.1, 0.5), y0 + rng.uniform(0.1, 0.5);
  }
  pred.masks = random_mat(rng, 4, 20, 0.05, 0.95);
  pred.embeddings = Mat::Zero(4, 3);

  TargetSet targets;
  targets.labels = {1, 0};
  targets.boxes = Mat(2, 4);
  targets.boxes << 0.1, 0.1, 0.5, 0.6, 0.3, 0.2, 0.9, 0.7;
  targets.masks = Mat::Zero(2, 20);
  for (Index j = 0; j < 20; ++j) {
    targets.masks(0, j) = rng.bernoulli(0.5);
    targets.masks(1, j) = rng.bernoulli(0.5);
  }

  LossWeights w;
  const CostMatrix cost = pairwise_cost(pred, targets, w);
  for (Index p = 0; p < 4; ++p) {
    for (Index g = 0; g < 2; ++g) {
      const Scalar cls = 1.0 - pred.class_scores(p, targets.labels[static_cast<std::size_t>(g)]);
      const Scalar box = ad::item(
          box_loss(ad::constant(pred.boxes.row(p)), targets.boxes.row(g).transpose()));
      // The dice cost is the dice part of mask_loss: recompute via the op by
      // subtracting the focal part evaluated through the plain twin.
      const Scalar dice = soft_dice_cost(pred.masks.row(p), targets.masks.row(g));
      CHECK(cost.class_cost(p, g) == doctest::Approx(cls));
      CHECK(cost.box_cost(p, g) == doctest::Approx(box));
      CHECK(cost.mask_cost(p, g) == doctest::Approx(dice));
      CHECK(cost.values(p, g) == doctest::Approx(cls + w.lambda1 * box + w.lambda2 * dice));
    }
  }

  // Symmetric two-prediction/two-target case gives a symmetric matrix.
  PredictionBatch sym = pred;
  sym.class_scores = Mat::Constant(2, 1, 0.7);
  sym.boxes = Mat(2, 4);
  sym.boxes << 0.1, 0.1, 0.4, 0.4, 0.6, 0.6, 0.9, 0.9;
  sym.masks = Mat::Zero(2, 20);
  sym.masks.row(0).leftCols(10).setConstant(1.0);
  sym.masks.row(1).rightCols(10).setConstant(1.0);
  sym.embeddings = Mat::Zero(2, 3);
  TargetSet sym_t;
  sym_t.labels = {0, 0};
  sym_t.boxes = sym.boxes;
  sym_t.masks = sym.masks;
  const CostMatrix sym_cost = pairwise_cost(sym, sym_t, w);
  CHECK(sym_cost.values(0, 1) == doctest::Approx(sym_cost.values(1, 0)));
  CHECK(sym_cost.values(0, 0) == doctest::Approx(sym_cost.values(1, 1)));
}

TEST_CASE("ot_assign trivial cases") {
  // P=1, G=1, k=1.
  {
    const Assignment asg = ot_assign(Mat::Constant(1, 1, 0.3), 1);
    REQUIRE(asg.per_target.size() == 1);
    CHECK(asg.per_target[0] == std::vector<Index>{0});
    CHECK(asg.background.empty());
  }
  // k=2, P=2, G=1: both predictions assigned.
  {
    Mat cost(2, 1);
    cost << 0.9, 0.1;
    const Assignment asg = ot_assign(cost, 2);
    CHECK(asg.per_target[0].size() == 2);
    CHECK(asg.background.empty());
  }
  // Non-finite cost rejected.
  {
    Mat cost = Mat::Constant(2, 1, std::numeric_limits<Scalar>::infinity());
    CHECK_THROWS_AS(ot_assign(cost, 1), InvalidInputError);
  }
  // G = 0: everything is background.
  {
    const Assignment asg = ot_assign(Mat::Zero(3, 0), 1);
    CHECK(asg.background.size() == 3);
  }
}

TEST_CASE("ot_assign matches exhaustive enumeration on small instances") {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const Index p_count = rng.uniform_int(1, 6);
    const Index g_count = rng.uniform_int(1, 2);
    const int k = static_cast<int>(rng.uniform_int(1, 2));
    const Mat cost = random_mat(rng, p_count, g_count, 0.0, 2.0);

    const Assignment asg = ot_assign(cost, k);
    check_partition(asg);

    std::vector<Index> demand(static_cast<std::size_t>(g_count), k);
    if (static_cast<Index>(k) * g_count > p_count) {
      const Index base = p_count / g_count, rem = p_count % g_count;
      for (Index g = 0; g < g_count; ++g) {
        demand[static_cast<std::size_t>(g)] = std::min<Index>(k, base + (g < rem ? 1 : 0));
      }
    }
    for (std::size_t g = 0; g < demand.size(); ++g) {
      CHECK(static_cast<Index>(asg.per_target[g].size()) == demand[g]);
    }

    const Scalar got = assignment_total_cost(asg, cost);
    const Scalar want = brute_force_best(cost, demand);
    CHECK(got <= want + 1e-6);
    CHECK(got >= want - 1e-6);
  }
}

TEST_CASE("select_views caps and covers") {
  // 3 predictions, 1 target, cap 10: all assigned predictions positive.
  Mat cost(3, 1);
  cost << 0.5, 0.2, 0.9;
  Assignment asg;
  asg.per_target = {{0, 1, 2}};
  asg.prediction_count = 3;
  const ViewSplit views = select_views(asg, cost, 10);
  CHECK(views.positives[0].size() == 3);
  CHECK(views.negatives.empty());
  // Sorted by ascending cost.
  CHECK(views.positives[0] == std::vector<Index>{1, 0, 2});

  // Cap 1 reduces to the argmin-cost prediction.
  const ViewSplit one = select_views(asg, cost, 1);
  CHECK(one.positives[0] == std::vector<Index>{1});
  CHECK(one.negatives == std::vector<Index>{0, 2});
}

TEST_CASE("select_views covers every prediction exactly once") {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const Index p_count = rng.uniform_int(2, 12);
    const Index g_count = rng.uniform_int(1, 3);
    const Mat cost = random_mat(rng, p_count, g_count, 0.0, 1.0);
    const Assignment asg = ot_assign(cost, 2);
    const int cap = static_cast<int>(rng.uniform_int(1, 4));
    const ViewSplit views = select_views(asg, cost, cap);

    std::set<Index> seen;
    for (const auto& pos : views.positives) {
      CHECK(static_cast<int>(pos.size()) <= cap);
      for (const Index p : pos) CHECK(seen.insert(p).second);
    }
    for (const Index p : views.negatives) CHECK(seen.insert(p).second);
    CHECK(static_cast<Index>(seen.size()) == p_count);
  }
}

TEST_CASE("multi_label_match rules") {
  // Single-class input is returned unchanged.
  {
    std::vector<ScoredBox> preds = {{0, 0.9, BBox(0, 0, 10, 10)},
                                    {0, 0.8, BBox(1, 1, 11, 11)},
                                    {0, 0.7, BBox(30, 30, 40, 40)}};
    const auto kept = multi_label_match(preds);
    CHECK(kept == std::vector<Index>{0, 1, 2});
  }
  // Two overlapping predictions with different classes: lower score dropped.
  {
    std::vector<ScoredBox> preds = {{0, 0.9, BBox(0, 0, 10, 10)}, {1, 0.8, BBox(0, 0, 10, 10)}};
    const auto kept = multi_label_match(preds);
    CHECK(kept == std::vector<Index>{0});
  }
  // Non-overlapping predictions are retained regardless of class.
  {
    std::vector<ScoredBox> preds = {{0, 0.9, BBox(0, 0, 5, 5)}, {1, 0.8, BBox(20, 20, 30, 30)}};
    const auto kept = multi_label_match(preds);
    CHECK(kept == std::vector<Index>{0, 1});
  }
}

TEST_CASE("multi_label_match is idempotent") {
  Rng rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredBox> preds;
    const int n = static_cast<int>(rng.uniform_int(1, 10));
    for (int i = 0; i < n; ++i) {
      const Scalar x0 = rng.uniform(0, 20), y0 = rng.uniform(0, 20);
      preds.push_back(ScoredBox{static_cast<int>(rng.uniform_int(0, 2)), rng.uniform(),
                                BBox(x0, y0, x0 + rng.uniform(2, 15), y0 + rng.uniform(2, 15))});
    }
    const auto kept1 = multi_label_match(preds);
    std::vector<ScoredBox> retained;
    for (const Index i : kept1) retained.push_back(preds[static_cast<std::size_t>(i)]);
    const auto kept2 = multi_label_match(retained);
    std::vector<Index> identity(retained.size());
    for (std::size_t i = 0; i < retained.size(); ++i) identity[i] = static_cast<Index>(i);
    CHECK(kept2 == identity);
  }
}
