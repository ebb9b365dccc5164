#pragma once

#include "pseqseg/types.hpp"

#include <cstdint>
#include <vector>

namespace pseqseg {

// H x W array over {0,1}; row v, column u.
struct BinaryMask {
  ArrU8 values;

  BinaryMask() = default;
  BinaryMask(Index height, Index width) : values(ArrU8::Zero(height, width)) {}
  explicit BinaryMask(ArrU8 v) : values(std::move(v)) {}

  Index height() const { return values.rows(); }
  Index width() const { return values.cols(); }
  Index area() const { return static_cast<Index>(values.cast<std::int64_t>().sum()); }
  bool empty() const { return area() == 0; }
};

// H x W array in [0,1].
struct SoftMask {
  Arr values;

  SoftMask() = default;
  SoftMask(Index height, Index width) : values(Arr::Zero(height, width)) {}
  explicit SoftMask(Arr v) : values(std::move(v)) {}

  Index height() const { return values.rows(); }
  Index width() const { return values.cols(); }
};

// Corner-form box; x runs along u (horizontal), y along v (vertical).
// Pixel boxes store inclusive pixel indices; normalized boxes store
// continuous coordinates in [0,1]. Which one a BBox holds is decided by the
// producing operation.
struct BBox {
  Scalar x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  BBox() = default;
  BBox(Scalar x0, Scalar y0, Scalar x1, Scalar y1) : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {}

  bool valid() const { return x_min <= x_max && y_min <= y_max; }
};

// Row-major RLE; runs alternate starting with the zero run.
struct RLEMask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint64_t> runs;
};

Scalar mask_iou(const BinaryMask& a, const BinaryMask& b);

// |a intersect b| / |a|; 0 when a is empty. The asymmetric overlap used by
// the scene-synthesis insertion guard.
Scalar overlap_ratio(const BinaryMask& a, const BinaryMask& b);

// Generalized IoU on continuous corner coordinates, range (-1, 1].
// Zero-area boxes contribute zero area; two zero-area boxes give 0.
Scalar box_giou(const BBox& a, const BBox& b);

// Plain IoU on continuous corner coordinates.
Scalar box_iou(const BBox& a, const BBox& b);

// IoU on inclusive pixel-index boxes: extents are (max - min + 1). Use for
// mask-derived boxes, where a single pixel is a 1x1 box.
Scalar box_iou_pixel(const BBox& a, const BBox& b);

// Tight inclusive pixel bound [min_u, min_v, max_u, max_v] of the 1-pixels.
// Throws EmptyMaskError on an all-zero mask.
BBox mask_to_box(const BinaryMask& m);

// Maps an inclusive pixel box on a height x width grid to normalized [0,1]
// corner coordinates (pixel i spans [i, i+1) before scaling).
BBox pixel_box_to_normalized(const BBox& b, Index height, Index width);

// pixel = 1 iff s(v,u) > gamma, strict.
template <class Derived>
BinaryMask binarize(const Eigen::ArrayBase<Derived>& soft, typename Derived::Scalar gamma) {
  BinaryMask out;
  out.values = (soft.derived() > gamma).template cast<std::uint8_t>();
  return out;
}

inline BinaryMask binarize(const SoftMask& s, Scalar gamma) { return binarize(s.values, gamma); }

RLEMask rle_encode(const BinaryMask& m);

// Throws CorruptAnnotationError when the runs do not sum to height*width.
BinaryMask rle_decode(const RLEMask& r);

}  // namespace pseqseg
