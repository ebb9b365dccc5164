#include "pseqseg/filter.hpp"

#include "pseqseg/assignment.hpp"

#include <algorithm>
#include <cmath>

namespace pseqseg {

FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "threshold_only") return FilterMode::threshold_only;
  if (s == "quantile_only") return FilterMode::quantile_only;
  if (s == "cascade_tq") return FilterMode::cascade_tq;
  if (s == "cascade_qt") return FilterMode::cascade_qt;
  throw ConfigError("unknown filter mode: " + s);
}

std::string to_string(FilterMode mode) {
  switch (mode) {
    case FilterMode::threshold_only: return "threshold_only";
    case FilterMode::quantile_only: return "quantile_only";
    case FilterMode::cascade_tq: return "cascade_tq";
    case FilterMode::cascade_qt: return "cascade_qt";
  }
  return "?";
}

void FilterSchedule::validate() const {
  if (!(0 <= gamma_start && gamma_start <= gamma_peak && gamma_peak <= 1)) {
    throw ConfigError("FilterSchedule: need 0 <= gamma_start <= gamma_peak <= 1");
  }
  if (!(0 <= a0 && a0 <= 1)) throw ConfigError("FilterSchedule: a0 must be in [0,1]");
  if (total_steps <= 0) throw ConfigError("FilterSchedule: total_steps must be positive");
  if (step_interval <= 0) throw ConfigError("FilterSchedule: step_interval must be positive");
}

Scalar gamma_at(const FilterSchedule& schedule, long t) {
  schedule.validate();
  if (t < 0 || t > schedule.total_steps) {
    throw InvalidInputError("gamma_at: step out of range");
  }
  const Scalar progress =
      static_cast<Scalar>((t / schedule.step_interval) * schedule.step_interval) /
      static_cast<Scalar>(schedule.total_steps);
  const Scalar g = schedule.gamma_start + (schedule.gamma_peak - schedule.gamma_start) * progress;
  return std::min(g, schedule.gamma_peak);
}

Scalar quantile_prob_at(const FilterSchedule& schedule, long t) {
  schedule.validate();
  if (t < 0 || t > schedule.total_steps) {
    throw InvalidInputError("quantile_prob_at: step out of range");
  }
  return schedule.a0 * (1.0 - static_cast<Scalar>(t) / static_cast<Scalar>(schedule.total_steps));
}

Scalar interpolated_quantile(std::vector<Scalar> values, Scalar p) {
  if (values.empty()) throw InvalidInputError("interpolated_quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("interpolated_quantile: p outside [0,1]");
  std::sort(values.begin(), values.end());
  const Scalar pos = p * static_cast<Scalar>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const Scalar frac = pos - static_cast<Scalar>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

std::vector<Index> threshold_pass(const std::vector<Scalar>& scores, Scalar gamma) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > gamma) out.push_back(static_cast<Index>(i));
  }
  return out;
}

std::vector<Index> quantile_pass(const std::vector<Scalar>& scores,
                                 const std::vector<Index>& candidates, Scalar p) {
  if (candidates.empty()) return {};
  std::vector<Scalar> pool;
  pool.reserve(candidates.size());
  for (const Index i : candidates) pool.push_back(scores[static_cast<std::size_t>(i)]);
  const Scalar cut = interpolated_quantile(pool, p);
  std::vector<Index> out;
  for (const Index i : candidates) {
    if (scores[static_cast<std::size_t>(i)] >= cut) out.push_back(i);
  }
  return out;
}

std::vector<Index> all_indices(std::size_t n) {
  std::vector<Index> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Index>(i);
  return out;
}

}  // namespace

std::vector<Index> cascade_filter(const std::vector<Scalar>& scores, Scalar gamma, Scalar p,
                                  FilterMode mode) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("cascade_filter: p outside [0,1]");
  switch (mode) {
    case FilterMode::threshold_only:
      return threshold_pass(scores, gamma);
    case FilterMode::quantile_only:
      return quantile_pass(scores, all_indices(scores.size()), p);
    case FilterMode::cascade_tq:
      return quantile_pass(scores, threshold_pass(scores, gamma), p);
    case FilterMode::cascade_qt: {
      const auto quantiled = quantile_pass(scores, all_indices(scores.size()), p);
      std::vector<Index> out;
      for (const Index i : quantiled) {
        if (scores[static_cast<std::size_t>(i)] > gamma) out.push_back(i);
      }
      return out;
    }
  }
  throw InvalidInputError("cascade_filter: bad mode");
}

PseudoLabelSet build_pseudo_labels(const PredictionBatch& weak_pred, long t,
                                   const FilterSchedule& schedule, bool use_m2b, bool use_mlm,
                                   Index mask_h, Index mask_w, FilterDiagnostics* diag,
                                   Scalar mask_gamma_override) {
  if (weak_pred.masks.cols() != mask_h * mask_w) {
    throw InvalidInputError("build_pseudo_labels: mask shape mismatch");
  }
  const Index p_count = weak_pred.count();
  const Scalar gamma = gamma_at(schedule, t);
  const Scalar mask_gamma = mask_gamma_override >= 0 ? mask_gamma_override : gamma;
  const Scalar p = quantile_prob_at(schedule, t);

  std::vector<Scalar> confidence(static_cast<std::size_t>(p_count));
  std::vector<int> best_class(static_cast<std::size_t>(p_count));
  for (Index i = 0; i < p_count; ++i) {
    Index arg = 0;
    weak_pred.class_scores.row(i).maxCoeff(&arg);
    best_class[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    confidence[static_cast<std::size_t>(i)] = weak_pred.class_scores(i, arg);
  }

  const auto retained = cascade_filter(confidence, gamma, p, schedule.mode);

  PseudoLabelSet out;
  Index dropped_empty = 0;
  for (const Index i : retained) {
    Arr soft(mask_h, mask_w);
    for (Index v = 0; v < mask_h; ++v) {
      for (Index u = 0; u < mask_w; ++u) soft(v, u) = weak_pred.masks(i, v * mask_w + u);
    }
    BinaryMask mask = binarize(soft, mask_gamma);
    if (mask.empty()) {
      ++dropped_empty;
      continue;
    }
    BBox box;
    if (use_m2b) {
      box = mask_to_box(mask);
    } else {
      // Standard pseudo-box: the raw predicted box of the class-filtered
      // prediction, mapped to inclusive pixel coordinates.
      const Scalar x0 = weak_pred.boxes(i, 0), y0 = weak_pred.boxes(i, 1);
      const Scalar x1 = weak_pred.boxes(i, 2), y1 = weak_pred.boxes(i, 3);
      const Scalar w = static_cast<Scalar>(mask_w), h = static_cast<Scalar>(mask_h);
      box.x_min = std::clamp<Scalar>(std::floor(x0 * w), 0, w - 1);
      box.y_min = std::clamp<Scalar>(std::floor(y0 * h), 0, h - 1);
      box.x_max = std::clamp<Scalar>(std::ceil(x1 * w) - 1, box.x_min, w - 1);
      box.y_max = std::clamp<Scalar>(std::ceil(y1 * h) - 1, box.y_min, h - 1);
    }
    out.labels.push_back(best_class[static_cast<std::size_t>(i)]);
    out.boxes.push_back(box);
    out.masks.push_back(std::move(mask));
    out.source_index.push_back(i);
  }

  if (use_mlm && out.count() > 1) {
    std::vector<ScoredBox> boxes(static_cast<std::size_t>(out.count()));
    for (Index i = 0; i < out.count(); ++i) {
      boxes[static_cast<std::size_t>(i)] = ScoredBox{
          out.labels[static_cast<std::size_t>(i)],
          confidence[static_cast<std::size_t>(out.source_index[static_cast<std::size_t>(i)])],
          out.boxes[static_cast<std::size_t>(i)]};
    }
    const auto kept = multi_label_match(boxes);
    PseudoLabelSet filtered;
    for (const Index i : kept) {
      filtered.labels.push_back(out.labels[static_cast<std::size_t>(i)]);
      filtered.boxes.push_back(out.boxes[static_cast<std::size_t>(i)]);
      filtered.masks.push_back(std::move(out.masks[static_cast<std::size_t>(i)]));
      filtered.source_index.push_back(out.source_index[static_cast<std::size_t>(i)]);
    }
    out = std::move(filtered);
  }

  if (diag) {
    diag->step = t;
    diag->gamma = gamma;
    diag->p = p;
    diag->survivors = static_cast<Index>(threshold_pass(confidence, gamma).size());
    if (schedule.mode == FilterMode::quantile_only) {
      diag->survivors = p_count;
    }
    diag->class_retained = static_cast<Index>(retained.size());
    diag->retained = out.count();
    diag->dropped_empty_mask = dropped_empty;
  }
  return out;
}

TargetSet to_target_set(const PseudoLabelSet& set, Index mask_h, Index mask_w) {
  TargetSet t;
  t.labels = set.labels;
  t.boxes = Mat::Zero(set.count(), 4);
  t.masks = Mat::Zero(set.count(), mask_h * mask_w);
  for (Index g = 0; g < set.count(); ++g) {
    const BBox nb = pixel_box_to_normalized(set.boxes[static_cast<std::size_t>(g)], mask_h, mask_w);
    t.boxes(g, 0) = nb.x_min;
    t.boxes(g, 1) = nb.y_min;
    t.boxes(g, 2) = nb.x_max;
    t.boxes(g, 3) = nb.y_max;
    const BinaryMask& m = set.masks[static_cast<std::size_t>(g)];
    if (m.height() != mask_h || m.width() != mask_w) {
      throw InvalidInputError("to_target_set: mask resolution mismatch");
    }
    for (Index v = 0; v < mask_h; ++v) {
      for (Index u = 0; u < mask_w; ++u) {
        t.masks(g, v * mask_w + u) = m.values(v, u) ? 1.0 : 0.0;
      }
    }
  }
  return t;
}

}  // namespace pseqseg
