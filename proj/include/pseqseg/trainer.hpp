#pragma once

#include "pseqseg/config.hpp"
#include "pseqseg/dataset.hpp"
#include "pseqseg/eval.hpp"
#include "pseqseg/filter.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/synthesis.hpp"
#include "pseqseg/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace pseqseg {

// Dataset preloaded at model resolution, with ground truth kept per image.
struct DatasetCache {
  std::vector<int> ids;
  std::vector<ImageRGB> images;
  std::vector<std::vector<BinaryMask>> gt_masks;
  std::vector<std::vector<int>> gt_labels;  // class indices (category order)
  std::vector<int> category_ids;            // class index -> category id
  Index height = 0, width = 0;
  Index native_h = 0, native_w = 0;

  static DatasetCache load(const std::string& dataset_dir, Index model_h, Index model_w);
  std::size_t index_of(int image_id) const;
};

struct StepLoss {
  long step = 0;
  Scalar lr = 0;
  Scalar total = 0;
  Scalar supervised = 0;
  Scalar embedding = 0;
  Scalar unsupervised = 0;
};

struct TraceRow {
  long step = 0;
  int slot = 0;
  Scalar score = 0;
};

struct RunReport {
  std::vector<StepLoss> losses;  // every log_interval steps
  std::vector<FilterDiagnostics> filter_diags;
  std::vector<TraceRow> score_trace;
  std::vector<std::pair<long, ApResult>> ap_history;
};

struct TrainResult {
  SegModel model;
  RunReport report;
  std::vector<Scalar> loss_trajectory;  // total loss at every step
};

// End-to-end training: labeled slots run the supervised path on synthesized
// sequences, unlabeled slots run the association and consistency paths with
// the weak branch detached. When out_dir is non-empty, CSV reports and
// checkpoints are written there. When eval_data is given, test AP is
// recorded at every checkpoint interval.
TrainResult train(const TrainConfig& config, const DatasetCache& data,
                  const std::vector<int>& labeled_ids, const std::vector<int>& unlabeled_ids,
                  const std::string& out_dir = "", const DatasetCache* eval_data = nullptr);

// Per-image inference: binarize masks at mask_threshold, drop empty masks and
// scores below score_floor, emit RLE predictions at (out_h, out_w).
std::vector<MaskPrediction> predict_image(const SegModel& model, const DatasetCache& data,
                                          std::size_t index, Scalar mask_threshold = 0.5,
                                          Scalar score_floor = 0.05, Index out_h = 0,
                                          Index out_w = 0);

// Mask AP of the model against the cache's ground truth.
ApResult evaluate_model(const SegModel& model, const DatasetCache& data,
                        Scalar mask_threshold = 0.5, Scalar score_floor = 0.05);

struct AblationRow {
  std::string name;
  std::vector<ApResult> per_seed;
  ApResult median;  // by AP
};

// Table of filter strategies (threshold_only, quantile_only, cascade_tq,
// cascade_qt), identical otherwise, median over the given seeds.
std::vector<AblationRow> ablate_filters(const TrainConfig& base, const DatasetCache& train_data,
                                        const std::vector<int>& labeled_ids,
                                        const std::vector<int>& unlabeled_ids,
                                        const DatasetCache& test_data,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& out_dir = "");

// Grid over mask threshold {0.5, 0.6, 0.7} x {standard pseudo-box, M2B,
// M2B+MLM}.
std::vector<AblationRow> ablate_pseudo_box(const TrainConfig& base,
                                           const DatasetCache& train_data,
                                           const std::vector<int>& labeled_ids,
                                           const std::vector<int>& unlabeled_ids,
                                           const DatasetCache& test_data,
                                           const std::vector<std::uint64_t>& seeds,
                                           const std::string& out_dir = "");

// Confidence-density histograms per 1000-step band, recomputed from a score
// trace under each quantile base value. Returns per-a0 bucketed bin counts
// and, when out_dir is non-empty, writes CSV tables and PNG bar charts.
struct DensityReport {
  std::vector<Scalar> a0_values;
  // [a0][bucket][bin] retained-score counts; bins split [0,1] evenly.
  std::vector<std::vector<std::vector<long>>> counts;
  int bins = 20;
};

DensityReport report_density(const std::vector<TraceRow>& trace, const FilterSchedule& schedule,
                             const std::vector<Scalar>& a0_values, const std::string& out_dir = "",
                             int bins = 20);
DensityReport report_density_file(const std::string& trace_csv, const FilterSchedule& schedule,
                                  const std::vector<Scalar>& a0_values,
                                  const std::string& out_dir = "", int bins = 20);

std::vector<TraceRow> load_trace(const std::string& path);

AblationRow median_row(std::string name, std::vector<ApResult> per_seed);

}  // namespace pseqseg
