#pragma once

#include "pseqseg/filter.hpp"
#include "pseqseg/losses.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/synthesis.hpp"
#include "pseqseg/types.hpp"

#include <cstdint>
#include <string>

namespace pseqseg {

struct TrainConfig {
  long total_steps = 12000;
  Scalar learning_rate = 1e-4;
  Scalar weight_decay = 1e-4;
  long decay_step = 8000;
  Scalar decay_factor = 0.1;
  int labeled_per_step = 1;
  int unlabeled_per_step = 2;

  LossWeights loss_weights;
  FilterSchedule filter_schedule;  // total_steps is synced to the trainer's T
  AugmentationSpec augmentation;
  SynthesisConfig synthesis;
  PlacementSampler placement;
  ModelConfig model;

  bool use_m2b = true;
  bool use_mlm = true;
  // Ablation-only override of the mask binarization threshold; negative
  // follows the shared schedule.
  Scalar mask_gamma_override = -1.0;

  int ot_k = 4;
  int view_cap = 10;
  bool embed_average_positives = false;
  bool embed_negatives_both_frames = false;

  bool grow_bank = false;
  Scalar grow_bank_iou = 0.75;

  std::uint64_t seed = 1;
  long log_interval = 100;
  long checkpoint_interval = 2000;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Plain "key: value" text with dotted paths mirroring the field names above.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string dump_train_config(const TrainConfig& config);

}  // namespace pseqseg
