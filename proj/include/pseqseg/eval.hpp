#pragma once

#include "pseqseg/dataset.hpp"
#include "pseqseg/geometry.hpp"
#include "pseqseg/types.hpp"

#include <string>
#include <vector>

namespace pseqseg {

struct MaskPrediction {
  int image_id = 0;
  int category_id = 1;
  Scalar score = 0;
  RLEMask mask;
};

struct ApResult {
  Scalar ap = 0;
  Scalar ap50 = 0;
  Scalar ap75 = 0;
};

// Fast RLE mask statistics used by the evaluator.
std::uint64_t rle_area(const RLEMask& r);
std::uint64_t rle_intersect_area(const RLEMask& a, const RLEMask& b);
Scalar rle_iou(const RLEMask& a, const RLEMask& b);

// Mask AP over the 10 IoU thresholds 0.50..0.95: per-image greedy matching in
// descending score order, 101-point interpolated precision, mean over
// thresholds; categories are evaluated independently and averaged.
ApResult evaluate_ap(const std::vector<MaskPrediction>& predictions, const AnnotationSet& gt);

std::vector<MaskPrediction> load_predictions(const std::string& path);
void save_predictions(const std::string& path, const std::vector<MaskPrediction>& predictions);

}  // namespace pseqseg
