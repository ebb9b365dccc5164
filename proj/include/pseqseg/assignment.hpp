#pragma once

#include "pseqseg/geometry.hpp"
#include "pseqseg/losses.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/types.hpp"

#include <vector>

namespace pseqseg {

struct CostMatrix {
  Mat values;      // (P, G)
  Mat class_cost;  // per-term components kept for inspection
  Mat box_cost;
  Mat mask_cost;

  Index predictions() const { return values.rows(); }
  Index targets() const { return values.cols(); }
};

struct Assignment {
  std::vector<std::vector<Index>> per_target;  // prediction ids per target
  std::vector<Index> background;               // unassigned prediction ids
  Index prediction_count = 0;
};

struct ViewSplit {
  std::vector<std::vector<Index>> positives;  // per target
  std::vector<Index> negatives;               // shared across targets
};

// cost(p,g) = (1 - score_p[label_g]) + lambda1*(L1 + (1 - gIoU)) + lambda2*dice.
CostMatrix pairwise_cost(const PredictionBatch& preds, const TargetSet& targets,
                         const LossWeights& weights);

// Transportation problem: unit supply per prediction, demand k per target and
// a zero-cost background sink absorbing the rest. Solved by entropic
// iterative scaling in the log domain (tolerance 1e-6, at most 1000
// iterations overall, epsilon annealed from 0.05*mean cost), rounded to a
// hard assignment by per-target plan mass, then polished by improving swaps.
// When k*targets exceeds the prediction count, per-target demands are
// truncated to an even split.
Assignment ot_assign(const CostMatrix& cost, int k_per_target);
Assignment ot_assign(const Mat& cost, int k_per_target);

// Per target, the up-to-cap best (lowest-cost) assigned predictions become
// positive views; every prediction not positive for any target is a shared
// negative.
ViewSplit select_views(const Assignment& assignment, const Mat& cost, int per_target_cap = 10);

struct ScoredBox {
  int label = 0;
  Scalar score = 0;
  BBox box;  // inclusive pixel box
};

// Multi-label matching: group by pixel-box IoU > iou_thresh greedily in
// descending score order; within a group, members whose label differs from
// the top-scoring member are discarded, and all dominant-label members are
// retained. Returns retained indices in input order.
std::vector<Index> multi_label_match(const std::vector<ScoredBox>& preds,
                                     Scalar iou_thresh = 0.7);

}  // namespace pseqseg
