#include "pseqseg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace pseqseg {

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw InvalidInputError(std::string(op) + ": mask dimensions differ");
  }
}

}  // namespace

Scalar mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_iou");
  const auto inter = (a.values.cast<std::int64_t>() * b.values.cast<std::int64_t>()).sum();
  const auto area_a = a.values.cast<std::int64_t>().sum();
  const auto area_b = b.values.cast<std::int64_t>().sum();
  const auto uni = area_a + area_b - inter;
  if (uni == 0) return 0.0;  // both empty, by convention
  return static_cast<Scalar>(inter) / static_cast<Scalar>(uni);
}

Scalar overlap_ratio(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "overlap_ratio");
  const auto area_a = a.values.cast<std::int64_t>().sum();
  if (area_a == 0) return 0.0;
  const auto inter = (a.values.cast<std::int64_t>() * b.values.cast<std::int64_t>()).sum();
  return static_cast<Scalar>(inter) / static_cast<Scalar>(area_a);
}

namespace {

Scalar clamped_extent(Scalar lo, Scalar hi) { return std::max<Scalar>(0, hi - lo); }

}  // namespace

Scalar box_iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw InvalidInputError("box_iou: invalid box");
  const Scalar area_a = clamped_extent(a.x_min, a.x_max) * clamped_extent(a.y_min, a.y_max);
  const Scalar area_b = clamped_extent(b.x_min, b.x_max) * clamped_extent(b.y_min, b.y_max);
  const Scalar iw = clamped_extent(std::max(a.x_min, b.x_min), std::min(a.x_max, b.x_max));
  const Scalar ih = clamped_extent(std::max(a.y_min, b.y_min), std::min(a.y_max, b.y_max));
  const Scalar inter = iw * ih;
  const Scalar uni = area_a + area_b - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

Scalar box_giou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw InvalidInputError("box_giou: invalid box");
  const Scalar area_a = clamped_extent(a.x_min, a.x_max) * clamped_extent(a.y_min, a.y_max);
  const Scalar area_b = clamped_extent(b.x_min, b.x_max) * clamped_extent(b.y_min, b.y_max);
  const Scalar iw = clamped_extent(std::max(a.x_min, b.x_min), std::min(a.x_max, b.x_max));
  const Scalar ih = clamped_extent(std::max(a.y_min, b.y_min), std::min(a.y_max, b.y_max));
  const Scalar inter = iw * ih;
  const Scalar uni = area_a + area_b - inter;
  const Scalar hull = clamped_extent(std::min(a.x_min, b.x_min), std::max(a.x_max, b.x_max)) *
                      clamped_extent(std::min(a.y_min, b.y_min), std::max(a.y_max, b.y_max));
  if (area_a <= 0 && area_b <= 0) return 0.0;  // both degenerate
  const Scalar iou = uni > 0 ? inter / uni : 0.0;
  const Scalar penalty = hull > 0 ? (hull - uni) / hull : 0.0;
  return iou - penalty;
}

Scalar box_iou_pixel(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw InvalidInputError("box_iou_pixel: invalid box");
  const Scalar area_a = (a.x_max - a.x_min + 1) * (a.y_max - a.y_min + 1);
  const Scalar area_b = (b.x_max - b.x_min + 1) * (b.y_max - b.y_min + 1);
  const Scalar iw = std::max<Scalar>(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min) + 1);
  const Scalar ih = std::max<Scalar>(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min) + 1);
  const Scalar inter = iw * ih;
  const Scalar uni = area_a + area_b - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

BBox mask_to_box(const BinaryMask& m) {
  Index min_u = m.width(), max_u = -1, min_v = m.height(), max_v = -1;
  for (Index v = 0; v < m.height(); ++v) {
    for (Index u = 0; u < m.width(); ++u) {
      if (m.values(v, u)) {
        min_u = std::min(min_u, u);
        max_u = std::max(max_u, u);
        min_v = std::min(min_v, v);
        max_v = std::max(max_v, v);
      }
    }
  }
  if (max_u < 0) throw EmptyMaskError("mask_to_box: mask has no foreground pixel");
  return BBox(static_cast<Scalar>(min_u), static_cast<Scalar>(min_v), static_cast<Scalar>(max_u),
              static_cast<Scalar>(max_v));
}

BBox pixel_box_to_normalized(const BBox& b, Index height, Index width) {
  if (height <= 0 || width <= 0) throw InvalidInputError("pixel_box_to_normalized: bad grid");
  const Scalar w = static_cast<Scalar>(width);
  const Scalar h = static_cast<Scalar>(height);
  return BBox(b.x_min / w, b.y_min / h, (b.x_max + 1) / w, (b.y_max + 1) / h);
}

RLEMask rle_encode(const BinaryMask& m) {
  RLEMask r;
  r.height = m.height();
  r.width = m.width();
  std::uint8_t current = 0;
  std::uint64_t run = 0;
  for (Index v = 0; v < m.height(); ++v) {
    for (Index u = 0; u < m.width(); ++u) {
      const std::uint8_t px = m.values(v, u) ? 1 : 0;
      if (px == current) {
        ++run;
      } else {
        r.runs.push_back(run);
        current = px;
        run = 1;
      }
    }
  }
  r.runs.push_back(run);
  return r;
}

BinaryMask rle_decode(const RLEMask& r) {
  if (r.height <= 0 || r.width <= 0) {
    throw CorruptAnnotationError("rle_decode: non-positive dimensions");
  }
  const std::uint64_t total = static_cast<std::uint64_t>(r.height) * static_cast<std::uint64_t>(r.width);
  std::uint64_t sum = 0;
  for (const auto run : r.runs) sum += run;
  if (sum != total) {
    throw CorruptAnnotationError("rle_decode: runs sum to " + std::to_string(sum) + ", expected " +
                                 std::to_string(total));
  }
  BinaryMask m(r.height, r.width);
  std::uint64_t pos = 0;
  std::uint8_t value = 0;
  for (const auto run : r.runs) {
    for (std::uint64_t i = 0; i < run; ++i, ++pos) {
      const Index v = static_cast<Index>(pos / static_cast<std::uint64_t>(r.width));
      const Index u = static_cast<Index>(pos % static_cast<std::uint64_t>(r.width));
      m.values(v, u) = value;
    }
    value = static_cast<std::uint8_t>(1 - value);
  }
  return m;
}

}  // namespace pseqseg
