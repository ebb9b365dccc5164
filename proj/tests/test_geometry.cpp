#include "pseqseg/geometry.hpp"
#include "pseqseg/rng.hpp"

#include <doctest.h>

using namespace pseqseg;

namespace {

BinaryMask mask_from(std::initializer_list<std::pair<Index, Index>> pixels, Index h, Index w) {
  BinaryMask m(h, w);
  for (const auto& [v, u] : pixels) m.values(v, u) = 1;
  return m;
}

BinaryMask random_mask(Rng& rng, Index h, Index w, double density) {
  BinaryMask m(h, w);
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) m.values(v, u) = rng.bernoulli(density) ? 1 : 0;
  }
  return m;
}

// Brute-force bound oracle, independent of mask_to_box.
BBox scan_box(const BinaryMask& m) {
  Index min_u = 1 << 30, max_u = -1, min_v = 1 << 30, max_v = -1;
  for (Index v = 0; v < m.height(); ++v) {
    for (Index u = 0; u < m.width(); ++u) {
      if (!m.values(v, u)) continue;
      min_u = std::min(min_u, u);
      max_u = std::max(max_u, u);
      min_v = std::min(min_v, v);
      max_v = std::max(max_v, v);
    }
  }
  return BBox(static_cast<Scalar>(min_u), static_cast<Scalar>(min_v), static_cast<Scalar>(max_u),
              static_cast<Scalar>(max_v));
}

}  // namespace

TEST_CASE("mask_iou basics") {
  const BinaryMask a = mask_from({{0, 0}, {0, 1}}, 1, 3);
  const BinaryMask b = mask_from({{0, 1}, {0, 2}}, 1, 3);
  CHECK(mask_iou(a, a) == doctest::Approx(1.0));
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0));

  const BinaryMask c = mask_from({{0, 2}}, 1, 3);
  CHECK(mask_iou(a, c) == doctest::Approx(0.0));

  const BinaryMask empty1(1, 3), empty2(1, 3);
  CHECK(mask_iou(empty1, empty2) == 0.0);

  const BinaryMask other_shape(2, 3);
  CHECK_THROWS_AS(mask_iou(a, other_shape), InvalidInputError);
}

TEST_CASE("mask_iou range and identity property") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const BinaryMask a = random_mask(rng, 9, 11, 0.4);
    const BinaryMask b = random_mask(rng, 9, 11, 0.4);
    const Scalar iou = mask_iou(a, b);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
    const bool identical = (a.values == b.values).all();
    if (identical && !a.empty()) {
      CHECK(iou == doctest::Approx(1.0));
    }
    if (iou == 1.0) {
      CHECK(identical);
      CHECK(!a.empty());
    }
  }
}

TEST_CASE("overlap_ratio matches pixel counting") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const BinaryMask a = random_mask(rng, 8, 8, 0.5);
    const BinaryMask b = random_mask(rng, 8, 8, 0.5);
    std::int64_t inter = 0, area_a = 0;
    for (Index v = 0; v < 8; ++v) {
      for (Index u = 0; u < 8; ++u) {
        inter += a.values(v, u) & b.values(v, u);
        area_a += a.values(v, u);
      }
    }
    const Scalar expected = area_a == 0 ? 0.0 : static_cast<Scalar>(inter) / area_a;
    CHECK(overlap_ratio(a, b) == doctest::Approx(expected));
  }
}

TEST_CASE("box_giou frozen examples") {
  const BBox unit(0, 0, 1, 1);
  CHECK(box_giou(unit, unit) == doctest::Approx(1.0));

  // Disjoint: hull 3, union 2.
  CHECK(box_giou(BBox(0, 0, 1, 1), BBox(2, 0, 3, 1)) == doctest::Approx(-1.0 / 3.0));

  // Nested: hull equals the outer box, so gIoU equals IoU.
  const BBox outer(0, 0, 4, 4), inner(1, 1, 2, 2);
  CHECK(box_giou(outer, inner) == doctest::Approx(box_iou(outer, inner)));

  // Both zero-area.
  CHECK(box_giou(BBox(1, 1, 1, 1), BBox(3, 3, 3, 3)) == 0.0);
}

TEST_CASE("box_giou symmetry and hull property") {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    auto rand_box = [&] {
      const Scalar x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
      return BBox(x0, y0, x0 + rng.uniform(0.1, 5), y0 + rng.uniform(0.1, 5));
    };
    const BBox a = rand_box(), b = rand_box();
    CHECK(box_giou(a, b) == doctest::Approx(box_giou(b, a)));
    CHECK(box_giou(a, b) <= 1.0);
    CHECK(box_giou(a, b) > -1.0);
  }
}

TEST_CASE("box_iou_pixel treats single pixels as unit squares") {
  const BBox px(3, 5, 3, 5);
  CHECK(box_iou_pixel(px, px) == doctest::Approx(1.0));
  CHECK(box_iou_pixel(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("mask_to_box examples") {
  BinaryMask full(4, 6);
  full.values.setConstant(1);
  const BBox fb = mask_to_box(full);
  CHECK(fb.x_min == 0);
  CHECK(fb.y_min == 0);
  CHECK(fb.x_max == 5);
  CHECK(fb.y_max == 3);

  const BinaryMask single = mask_from({{5, 3}}, 8, 8);
  const BBox sb = mask_to_box(single);
  CHECK(sb.x_min == 3);
  CHECK(sb.y_min == 5);
  CHECK(sb.x_max == 3);
  CHECK(sb.y_max == 5);

  const BinaryMask two = mask_from({{1, 1}, {2, 4}}, 6, 6);
  const BBox tb = mask_to_box(two);
  CHECK(tb.x_min == 1);
  CHECK(tb.y_min == 1);
  CHECK(tb.x_max == 4);
  CHECK(tb.y_max == 2);

  CHECK_THROWS_AS(mask_to_box(BinaryMask(3, 3)), EmptyMaskError);
}

TEST_CASE("mask_to_box equals brute-force scan on 1000 random masks") {
  Rng rng(1234);
  int checked = 0;
  while (checked < 1000) {
    const Index h = static_cast<Index>(rng.uniform_int(1, 24));
    const Index w = static_cast<Index>(rng.uniform_int(1, 24));
    const BinaryMask m = random_mask(rng, h, w, rng.uniform(0.02, 0.6));
    if (m.empty()) continue;
    const BBox got = mask_to_box(m);
    const BBox want = scan_box(m);
    CHECK(got.x_min == want.x_min);
    CHECK(got.y_min == want.y_min);
    CHECK(got.x_max == want.x_max);
    CHECK(got.y_max == want.y_max);
    ++checked;
  }
}

TEST_CASE("binarize strict threshold") {
  Arr all_high = Arr::Constant(3, 3, 0.9);
  CHECK(binarize(all_high, 0.5).area() == 9);

  Arr at_gamma = Arr::Constant(3, 3, 0.5);
  CHECK(binarize(at_gamma, 0.5).area() == 0);  // ties fall to background

  Rng rng(5);
  Arr mixed(6, 7);
  for (Index v = 0; v < 6; ++v) {
    for (Index u = 0; u < 7; ++u) mixed(v, u) = rng.uniform();
  }
  const Scalar gamma = 0.37;
  const BinaryMask got = binarize(mixed, gamma);
  for (Index v = 0; v < 6; ++v) {
    for (Index u = 0; u < 7; ++u) {
      CHECK(got.values(v, u) == (mixed(v, u) > gamma ? 1 : 0));
    }
  }
}

TEST_CASE("binarize is antitone in gamma") {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    Arr soft(5, 5);
    for (Index v = 0; v < 5; ++v) {
      for (Index u = 0; u < 5; ++u) soft(v, u) = rng.uniform();
    }
    const Scalar g1 = rng.uniform(0, 1), g2 = rng.uniform(0, 1);
    const Scalar lo = std::min(g1, g2), hi = std::max(g1, g2);
    const BinaryMask wide = binarize(soft, lo), tight = binarize(soft, hi);
    // tight subset of wide
    CHECK(((tight.values.cast<int>() - wide.values.cast<int>()).maxCoeff() <= 0));
  }
}

TEST_CASE("rle codec") {
  BinaryMask zeros(4, 5);
  const RLEMask rz = rle_encode(zeros);
  CHECK(rz.runs == std::vector<std::uint64_t>{20});

  BinaryMask ones(4, 5);
  ones.values.setConstant(1);
  const RLEMask ro = rle_encode(ones);
  CHECK(ro.runs == std::vector<std::uint64_t>{0, 20});

  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    const Index h = static_cast<Index>(rng.uniform_int(1, 20));
    const Index w = static_cast<Index>(rng.uniform_int(1, 20));
    const BinaryMask m = random_mask(rng, h, w, rng.uniform(0.05, 0.95));
    const BinaryMask back = rle_decode(rle_encode(m));
    CHECK((back.values == m.values).all());
  }

  RLEMask corrupt;
  corrupt.height = 2;
  corrupt.width = 2;
  corrupt.runs = {1, 2};  // sums to 3, not 4
  CHECK_THROWS_AS(rle_decode(corrupt), CorruptAnnotationError);
}

TEST_CASE("pixel_box_to_normalized maps the full mask to the unit box") {
  const BBox full(0, 0, 9, 4);  // 10x5 grid
  const BBox nb = pixel_box_to_normalized(full, 5, 10);
  CHECK(nb.x_min == doctest::Approx(0.0));
  CHECK(nb.y_min == doctest::Approx(0.0));
  CHECK(nb.x_max == doctest::Approx(1.0));
  CHECK(nb.y_max == doctest::Approx(1.0));
}
