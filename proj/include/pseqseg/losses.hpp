#pragma once

#include "pseqseg/autograd.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/types.hpp"

#include <optional>
#include <vector>

namespace pseqseg {

struct Assignment;  // defined in assignment.hpp

struct LossWeights {
  Scalar lambda1 = 2.0;   // box loss
  Scalar lambda2 = 1.0;   // mask loss
  Scalar lambda3 = 0.05;  // association/embedding loss
  Scalar lambda4 = 1.0;   // unsupervised consistency loss
};

// Assignment targets for one image: labels, normalized corner boxes and
// flattened {0,1} masks at model resolution.
struct TargetSet {
  std::vector<int> labels;
  Mat boxes;  // (G, 4)
  Mat masks;  // (G, H*W)

  Index count() const { return static_cast<Index>(labels.size()); }
};

// Focal parameters shared by the class and pixel terms.
inline constexpr Scalar kFocalAlpha = 0.25;
inline constexpr Scalar kFocalGamma = 2.0;

// Sigmoid focal loss over all (prediction, class) cells, normalized by the
// number of assigned predictions. target_class[p] is the class of the
// prediction's target, or -1 for background.
ad::Value class_loss(const ad::Value& scores, const std::vector<int>& target_class);

// Mean L1 over the four normalized corners plus (1 - gIoU).
ad::Value box_loss(const ad::Value& pred_box, const Vec4& target_box);

// Soft dice (smoothing 1) plus mean pixel focal loss.
ad::Value mask_loss(const ad::Value& pred_mask, const Eigen::Ref<const Mat>& target_mask);

// L_cls + lambda1 * L_box + lambda2 * L_mask over assigned pairs; the box and
// mask terms are averaged over the assigned pairs.
ad::Value supervised_loss(const TracedPrediction& pred, const TargetSet& targets,
                          const Assignment& assignment, const LossWeights& weights);

// Identical form with pseudo-label targets. Targets are plain values, so no
// gradient can reach the branch that produced them.
ad::Value unsupervised_loss(const TracedPrediction& strong_pred, const TargetSet& pseudo_targets,
                            const Assignment& assignment, const LossWeights& weights);

// Differentiable gIoU of a (1,4) corner box against a fixed target.
ad::Value box_giou_value(const ad::Value& pred_box, const Vec4& target_box);

// Plain-scalar twins used by the assignment cost; same math as the ops above.
Scalar box_l1_giou(const Vec4& a, const Vec4& b);
Scalar soft_dice_cost(const Eigen::Ref<const Mat>& pred_row,
                      const Eigen::Ref<const Mat>& target_row);

// Symmetrized bidirectional softmax association between the instance
// embeddings of two frames; result is (N, M) with entries in (0, 1).
Mat association_scores(const Mat& z1, const Mat& z2);

// argmax_j f(i, j) when it clears 0.5, ties broken by lowest index.
std::optional<Index> positive_match(const Mat& f, Index i);

enum class PositiveAggregation {
  numerator_sum,      // all positives aggregated inside the numerator
  per_positive_mean,  // mean of per-positive contrastive terms
};

// Contrastive embedding loss for one anchor row against positive and
// negative embedding rows. Zero positives yields 0 (the anchor is skipped).
ad::Value embed_loss(const ad::Value& anchor, const ad::Value& positives,
                     const ad::Value& negatives,
                     PositiveAggregation agg = PositiveAggregation::numerator_sum);

// Per-sample pieces of the unified objective; null terms count as zero.
struct SampleLossTerms {
  bool labeled = false;
  ad::Value supervised;
  ad::Value embedding;
  ad::Value unsupervised;
};

// sum over samples of 1[labeled]*L_s + lambda3*L_embed + 1[!labeled]*lambda4*L_u.
ad::Value total_loss(const std::vector<SampleLossTerms>& samples, const LossWeights& weights);

}  // namespace pseqseg
