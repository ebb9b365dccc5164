#pragma once

#include "pseqseg/geometry.hpp"
#include "pseqseg/losses.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/types.hpp"

#include <vector>

namespace pseqseg {

enum class FilterMode { threshold_only, quantile_only, cascade_tq, cascade_qt };

FilterMode filter_mode_from_string(const std::string& s);
std::string to_string(FilterMode mode);

// Time-dependent class/mask threshold ramp and quantile probability decay.
// The class and mask thresholds share one schedule.
struct FilterSchedule {
  Scalar gamma_start = 0.5;
  Scalar gamma_peak = 0.85;
  long step_interval = 1000;
  Scalar a0 = 0.995;
  long total_steps = 12000;
  FilterMode mode = FilterMode::cascade_tq;

  void validate() const;
};

// Piecewise-constant ramp from gamma_start to gamma_peak in step_interval
// increments, clipped at gamma_peak. Valid for 0 <= t <= total_steps.
Scalar gamma_at(const FilterSchedule& schedule, long t);

// a0 * (1 - t / T).
Scalar quantile_prob_at(const FilterSchedule& schedule, long t);

// Empirical p-quantile with linear interpolation of the sorted values.
Scalar interpolated_quantile(std::vector<Scalar> values, Scalar p);

// Indices retained by the configured filter strategy:
//   threshold_only: score > gamma
//   quantile_only:  score >= p-quantile of all scores
//   cascade_tq:     threshold first, then quantile over the survivors
//   cascade_qt:     quantile over all scores first, then threshold
std::vector<Index> cascade_filter(const std::vector<Scalar>& scores, Scalar gamma, Scalar p,
                                  FilterMode mode = FilterMode::cascade_tq);

// Filtered labels, pixel boxes and binarized masks used as targets in the
// unsupervised loss.
struct PseudoLabelSet {
  std::vector<int> labels;
  std::vector<BBox> boxes;  // inclusive pixel boxes
  std::vector<BinaryMask> masks;
  std::vector<Index> source_index;  // originating prediction per entry

  Index count() const { return static_cast<Index>(labels.size()); }
};

struct FilterDiagnostics {
  long step = 0;
  Scalar gamma = 0;
  Scalar p = 0;
  Index survivors = 0;       // past the class threshold
  Index class_retained = 0;  // past the full class cascade
  Index retained = 0;        // final pseudo-label count
  Index dropped_empty_mask = 0;
};

// Class cascade on the per-prediction confidence, pixel binarization of the
// soft masks at the mask threshold, instance drop on empty masks, pseudo-box
// assembly (mask bound when use_m2b, otherwise the raw predicted box), and
// multi-label matching last when use_mlm. The mask threshold follows the
// shared schedule unless mask_gamma_override is non-negative.
PseudoLabelSet build_pseudo_labels(const PredictionBatch& weak_pred, long t,
                                   const FilterSchedule& schedule, bool use_m2b, bool use_mlm,
                                   Index mask_h, Index mask_w,
                                   FilterDiagnostics* diag = nullptr,
                                   Scalar mask_gamma_override = -1.0);

// Converts pseudo-labels to normalized-box/flat-mask targets at the given
// resolution.
TargetSet to_target_set(const PseudoLabelSet& set, Index mask_h, Index mask_w);

}  // namespace pseqseg
