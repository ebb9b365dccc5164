#include "pseqseg/losses.hpp"

#include "pseqseg/assignment.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace pseqseg;
using pseqseg::testutil::check_gradient;
using pseqseg::testutil::random_mat;

namespace {

// Random soft masks in (0.1, 0.9): smooth points for finite differences.
Mat random_soft(Rng& rng, Index r, Index c) { return random_mat(rng, r, c, 0.1, 0.9); }

}  // namespace

TEST_CASE("class_loss frozen values") {
  // Perfect confident assigned prediction.
  {
    Mat scores = Mat::Constant(1, 1, 1.0 - 1e-9);
    const Scalar loss = ad::item(class_loss(ad::constant(scores), {0}));
    CHECK(loss < 1e-4);
  }
  // Score 0.5 on the positive class: alpha * 0.25 * ln 2.
  {
    Mat scores = Mat::Constant(1, 1, 0.5);
    const Scalar loss = ad::item(class_loss(ad::constant(scores), {0}));
    CHECK(loss == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-9));
  }
  // Confident background prediction costs almost nothing.
  {
    Mat scores = Mat::Constant(1, 1, 1e-9);
    const Scalar loss = ad::item(class_loss(ad::constant(scores), {-1}));
    CHECK(loss < 1e-4);
  }
}

TEST_CASE("class_loss gradient") {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const Mat scores = random_mat(rng, 5, 2, 0.05, 0.95);
    std::vector<int> targets = {0, -1, 1, -1, 0};
    check_gradient(
        [&](const std::vector<ad::Value>& in) { return class_loss(in[0], targets); }, {scores},
        1e-5, 1e-5);
  }
}

TEST_CASE("box_loss frozen values") {
  Mat same(1, 4);
  same << 0.2, 0.3, 0.6, 0.9;
  CHECK(ad::item(box_loss(ad::constant(same), Vec4(0.2, 0.3, 0.6, 0.9))) ==
        doctest::Approx(0.0));

  // Disjoint unit boxes: L1 mean 1, gIoU -1/3.
  Mat pred(1, 4);
  pred << 0, 0, 1, 1;
  const Scalar loss = ad::item(box_loss(ad::constant(pred), Vec4(2, 0, 3, 1)));
  CHECK(loss == doctest::Approx(1.0 + 4.0 / 3.0));
}

TEST_CASE("box_loss and giou gradients") {
  Rng rng(22);
  for (int i = 0; i < 30; ++i) {
    // Ordered corner boxes away from coordinate ties.
    const Scalar x0 = rng.uniform(0.0, 0.4), y0 = rng.uniform(0.0, 0.4);
    Mat pred(1, 4);
    pred << x0, y0, x0 + rng.uniform(0.1, 0.5), y0 + rng.uniform(0.1, 0.5);
    const Vec4 target(rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3), rng.uniform(0.45, 0.95),
                      rng.uniform(0.45, 0.95));
    check_gradient(
        [&](const std::vector<ad::Value>& in) { return box_loss(in[0], target); }, {pred}, 1e-6,
        1e-5);
  }
}

TEST_CASE("mask_loss and dice behavior") {
  // p = g binary: dice exactly 0, focal negligible.
  Mat target(1, 40);
  for (Index i = 0; i < 40; ++i) target(0, i) = i % 3 == 0 ? 1.0 : 0.0;
  CHECK(ad::item(mask_loss(ad::constant(target), target)) < 1e-6);

  // Disjoint dice cost tends to 1.
  Mat a = Mat::Zero(1, 200), b = Mat::Zero(1, 200);
  a.leftCols(100).setConstant(1.0);
  b.rightCols(100).setConstant(1.0);
  CHECK(soft_dice_cost(a, b) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(soft_dice_cost(a, a) == doctest::Approx(0.0));
}

TEST_CASE("mask_loss gradient") {
  Rng rng(23);
  for (int i = 0; i < 10; ++i) {
    const Mat pred = random_soft(rng, 1, 30);
    Mat target(1, 30);
    for (Index j = 0; j < 30; ++j) target(0, j) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    check_gradient(
        [&](const std::vector<ad::Value>& in) { return mask_loss(in[0], target); }, {pred}, 1e-6,
        1e-5);
  }
}

namespace {

struct Fixture {
  TracedPrediction pred;
  TargetSet targets;
  Assignment assignment;
};

Fixture perfect_fixture() {
  Fixture f;
  // Two predictions, one target, prediction 0 is perfect.
  Mat scores(2, 1);
  scores << 1.0 - 1e-9, 1e-9;
  Mat boxes(2, 4);
  boxes << 0.1, 0.2, 0.5, 0.6, 0.3, 0.3, 0.4, 0.4;
  Mat masks(2, 24);
  masks.setConstant(1e-9);
  for (Index i = 0; i < 12; ++i) masks(0, i) = 1.0 - 1e-9;
  Mat embeds = Mat::Zero(2, 4);

  f.pred = TracedPrediction{ad::constant(scores), ad::constant(boxes), ad::constant(masks),
                            ad::constant(embeds)};
  f.targets.labels = {0};
  f.targets.boxes = Mat(1, 4);
  f.targets.boxes << 0.1, 0.2, 0.5, 0.6;
  f.targets.masks = Mat::Zero(1, 24);
  f.targets.masks.leftCols(12).setConstant(1.0);
  f.assignment.per_target = {{0}};
  f.assignment.background = {1};
  f.assignment.prediction_count = 2;
  return f;
}

}  // namespace

TEST_CASE("supervised_loss composition") {
  const Fixture f = perfect_fixture();
  LossWeights w;
  CHECK(ad::item(supervised_loss(f.pred, f.targets, f.assignment, w)) < 1e-3);

  // Random case: equals the hand-sum of the three terms.
  Rng rng(24);
  Mat scores = random_mat(rng, 3, 2, 0.05, 0.95);
  Mat boxes(3, 4);
  for (Index i = 0; i < 3; ++i) {
    const Scalar x0 = rng.uniform(0, 0.4), y0 = rng.uniform(0, 0.4);
    boxes.row(i) << x0, y0, x0 + rng.uniform(0.1, 0.5), y0 + rng.uniform(0.1, 0.5);
  }
  Mat masks = random_soft(rng, 3, 24);
  TracedPrediction pred{ad::constant(scores), ad::constant(boxes), ad::constant(masks),
                        ad::constant(Mat::Zero(3, 4))};
  TargetSet targets;
  targets.labels = {1, 0};
  targets.boxes = Mat(2, 4);
  targets.boxes << 0.1, 0.1, 0.6, 0.7, 0.2, 0.3, 0.8, 0.9;
  targets.masks = Mat::Zero(2, 24);
  for (Index j = 0; j < 24; ++j) {
    targets.masks(0, j) = rng.bernoulli(0.5) ? 1 : 0;
    targets.masks(1, j) = rng.bernoulli(0.5) ? 1 : 0;
  }
  Assignment asg;
  asg.per_target = {{2}, {0}};
  asg.background = {1};
  asg.prediction_count = 3;

  const Scalar total = ad::item(supervised_loss(pred, targets, asg, w));

  const Scalar cls = ad::item(class_loss(pred.class_scores, {0, -1, 1}));
  const Scalar box_term =
      0.5 * (ad::item(box_loss(ad::rows(pred.boxes, {2}), targets.boxes.row(0).transpose())) +
             ad::item(box_loss(ad::rows(pred.boxes, {0}), targets.boxes.row(1).transpose())));
  const Scalar mask_term =
      0.5 * (ad::item(mask_loss(ad::rows(pred.masks, {2}), targets.masks.row(0))) +
             ad::item(mask_loss(ad::rows(pred.masks, {0}), targets.masks.row(1))));
  CHECK(total == doctest::Approx(cls + w.lambda1 * box_term + w.lambda2 * mask_term));

  // Doubling lambda1 doubles the box contribution exactly.
  LossWeights w2 = w;
  w2.lambda1 *= 2;
  const Scalar total2 = ad::item(supervised_loss(pred, targets, asg, w2));
  CHECK(total2 - total == doctest::Approx(w.lambda1 * box_term));
}

TEST_CASE("unsupervised_loss equals supervised form on identical targets") {
  const Fixture f = perfect_fixture();
  LossWeights w;
  const Scalar sup = ad::item(supervised_loss(f.pred, f.targets, f.assignment, w));
  const Scalar unsup = ad::item(unsupervised_loss(f.pred, f.targets, f.assignment, w));
  CHECK(sup == unsup);

  // Empty pseudo-label set: background-only class term.
  TargetSet empty;
  empty.boxes = Mat::Zero(0, 4);
  empty.masks = Mat::Zero(0, 24);
  Assignment none;
  none.prediction_count = 2;
  none.background = {0, 1};
  const Scalar bg_only = ad::item(unsupervised_loss(f.pred, empty, none, w));
  const Scalar cls_only = ad::item(class_loss(f.pred.class_scores, {-1, -1}));
  CHECK(bg_only == doctest::Approx(cls_only));
}

TEST_CASE("association_scores closed forms") {
  // N = M = 1: both softmaxes are degenerate.
  {
    Rng rng(1);
    Mat z1 = random_mat(rng, 1, 4);
    const Mat f = association_scores(z1, z1);
    CHECK(f(0, 0) == doctest::Approx(1.0));
  }
  // Identical embeddings, N=2, M=4: every entry 0.5*(1/4 + 1/2) = 0.375.
  {
    Mat z1 = Mat::Ones(2, 3), z2 = Mat::Ones(4, 3);
    const Mat f = association_scores(z1, z2);
    for (Index i = 0; i < 2; ++i) {
      for (Index j = 0; j < 4; ++j) CHECK(f(i, j) == doctest::Approx(0.375));
    }
  }
}

TEST_CASE("association_scores invariants on random embeddings") {
  Rng rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = rng.uniform_int(1, 8), m = rng.uniform_int(1, 8);
    const Index d = rng.uniform_int(2, 16);
    const Mat z1 = random_mat(rng, n, d, -2, 2);
    const Mat z2 = random_mat(rng, m, d, -2, 2);
    const Mat f = association_scores(z1, z2);
    CHECK(f.sum() == doctest::Approx(static_cast<Scalar>(n + m) / 2.0).epsilon(1e-12));
    CHECK((f.array() > 0.0).all());
    CHECK((f.array() < 1.0 + 1e-15).all());
  }

  Mat bad = Mat::Ones(2, 2);
  bad(0, 0) = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(association_scores(bad, Mat::Ones(2, 2)), InvalidInputError);
}

TEST_CASE("positive_match rules") {
  // Single pair: f = 1 > 0.5.
  Mat z = Mat::Ones(1, 3);
  const Mat f1 = association_scores(z, z);
  CHECK(positive_match(f1, 0).value() == 0);

  // Identical embeddings with M >= 3: uniform f stays below 0.5.
  Mat z1 = Mat::Ones(2, 3), z2 = Mat::Ones(4, 3);
  const Mat f2 = association_scores(z1, z2);
  CHECK_FALSE(positive_match(f2, 0).has_value());
  CHECK_FALSE(positive_match(f2, 1).has_value());

  // Well-separated embeddings match identically.
  Mat e1 = 10.0 * Mat::Identity(3, 3), e2 = 10.0 * Mat::Identity(3, 3);
  const Mat f3 = association_scores(e1, e2);
  for (Index i = 0; i < 3; ++i) CHECK(positive_match(f3, i).value() == i);
}

TEST_CASE("embed_loss closed forms") {
  Rng rng(26);
  // One positive, no negatives: ratio is 1, loss 0.
  {
    const Mat anchor = random_mat(rng, 1, 4);
    const Mat pos = random_mat(rng, 1, 4);
    const Scalar loss = ad::item(
        embed_loss(ad::constant(anchor), ad::constant(pos), ad::constant(Mat::Zero(0, 4))));
    CHECK(loss == 0.0);
  }
  // Equal positive and negative dot products: ln 2.
  {
    Mat anchor(1, 2);
    anchor << 1.0, 0.0;
    Mat pos(1, 2), neg(1, 2);
    pos << 0.7, 0.3;
    neg << 0.7, -0.3;
    const Scalar loss =
        ad::item(embed_loss(ad::constant(anchor), ad::constant(pos), ad::constant(neg)));
    CHECK(loss == doctest::Approx(std::log(2.0)));
  }
}

TEST_CASE("embed_loss gradient in both aggregation modes") {
  Rng rng(27);
  for (const auto agg :
       {PositiveAggregation::numerator_sum, PositiveAggregation::per_positive_mean}) {
    for (int i = 0; i < 10; ++i) {
      const Mat anchor = random_mat(rng, 1, 5);
      const Mat pos = random_mat(rng, 3, 5);
      const Mat neg = random_mat(rng, 4, 5);
      check_gradient(
          [&](const std::vector<ad::Value>& in) {
            return embed_loss(in[0], in[1], in[2], agg);
          },
          {anchor, pos, neg}, 1e-6, 1e-6);
    }
  }
}

TEST_CASE("total_loss indicator semantics and linearity") {
  LossWeights w;
  w.lambda3 = 0.05;
  w.lambda4 = 1.5;
  SampleLossTerms labeled;
  labeled.labeled = true;
  labeled.supervised = ad::scalar(2.0);
  labeled.embedding = ad::scalar(3.0);
  labeled.unsupervised = ad::scalar(100.0);  // must be ignored for labeled samples

  SampleLossTerms unlabeled;
  unlabeled.labeled = false;
  unlabeled.supervised = ad::scalar(100.0);  // ignored
  unlabeled.embedding = ad::scalar(1.0);
  unlabeled.unsupervised = ad::scalar(4.0);

  const Scalar total = ad::item(total_loss({labeled, unlabeled}, w));
  CHECK(total == doctest::Approx(2.0 + 0.05 * 3.0 + 0.05 * 1.0 + 1.5 * 4.0));

  // lambda3 = 0 drops the association term entirely.
  LossWeights w0 = w;
  w0.lambda3 = 0;
  CHECK(ad::item(total_loss({labeled, unlabeled}, w0)) == doctest::Approx(2.0 + 1.5 * 4.0));

  // Linear in lambda4 at fixed components.
  LossWeights w2 = w;
  w2.lambda4 = 3.0;
  CHECK(ad::item(total_loss({unlabeled}, w2)) - ad::item(total_loss({unlabeled}, w)) ==
        doctest::Approx((3.0 - 1.5) * 4.0));
}
