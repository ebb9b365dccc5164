#pragma once

#include "pseqseg/geometry.hpp"
#include "pseqseg/image.hpp"
#include "pseqseg/rng.hpp"
#include "pseqseg/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pseqseg {

// Labeled object cutout: rgb cropped to the mask's bounding box, background
// zeroed outside the mask.
struct BankEntry {
  ImageRGB rgb;
  BinaryMask mask;
  int label = 0;
  std::string source_id;
};

struct InstanceBank {
  std::vector<BankEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct LabeledImage {
  ImageRGB image;
  std::vector<BinaryMask> masks;
  std::vector<int> labels;
  std::string source_id;
};

// One bank entry per annotated instance; throws ConfigError when the data
// holds no annotated instance at all.
InstanceBank build_bank(const std::vector<LabeledImage>& labeled);

// Placement of the top-left insertion corner: each axis is an independent
// Beta(alpha, beta) draw scaled by the feasible region.
struct PlacementSampler {
  Scalar alpha = 0.5;
  Scalar beta = 0.5;

  void validate() const;
  // Raw per-axis draw in [0,1].
  Scalar sample_axis(Rng& rng) const;
};

// Integer (u, v) with the object fully inside the frame. Throws
// InvalidInputError when the object cannot fit.
std::pair<Index, Index> sample_placement(const PlacementSampler& sampler, Index frame_w,
                                         Index frame_h, Index obj_w, Index obj_h, Rng& rng);

struct WeakAugmentSpec {
  Scalar rotation_deg = 5.0;
  Scalar translation_frac = 0.05;
  Scalar brightness_delta = 0.1;
  Scalar scale_lo = 0.9;
  Scalar scale_hi = 1.1;
  Scalar crop_frac = 0.05;  // extra zoom-in range
};

struct StrongAugmentSpec {
  Scalar brightness = 0.3;
  Scalar contrast = 0.3;
  Scalar saturation = 0.3;
  Scalar temperature = 0.15;
  Scalar blur_sigma_lo = 0.3;
  Scalar blur_sigma_hi = 1.5;
  Scalar grayscale_prob = 0.2;
};

struct PerObjectAugmentSpec {
  Scalar scale_lo = 0.7;
  Scalar scale_hi = 1.3;
  Scalar rotation_deg = 30.0;
  Scalar flip_prob = 0.5;
  Scalar brightness_delta = 0.1;
};

struct AugmentationSpec {
  WeakAugmentSpec weak;
  StrongAugmentSpec strong;
  PerObjectAugmentSpec per_object;
};

struct SynthesisConfig {
  int insert_min = 1;  // K ~ Uniform{insert_min..insert_max}
  int insert_max = 4;
  Scalar removal_prob = 0.3;
  int x2_insert_min = 0;
  int x2_insert_max = 2;
  Scalar overlap_cap = 0.85;
  int max_placement_attempts = 10;
  // Cumulative-occlusion guard: every instance keeps at least this fraction
  // of its pixels visible.
  Scalar min_visible_frac = 0.15;
};

// Shared geometric + brightness transform applied to the frame and all masks
// together; masks that leave the frame entirely come back empty.
struct WeakAugmentResult {
  ImageRGB frame;
  std::vector<BinaryMask> masks;
};
WeakAugmentResult weak_augment(const ImageRGB& frame, const std::vector<BinaryMask>& masks,
                               const WeakAugmentSpec& spec, Rng& rng);

// Photometric-only transforms sampled RandAugment-style (random subset,
// random magnitude). A zero-magnitude spec is the exact identity.
ImageRGB strong_augment(const ImageRGB& frame, const StrongAugmentSpec& spec, Rng& rng);

// Composites an augmented bank entry over the frame. Placement is resampled
// on overlap rejection; nullopt after max_placement_attempts rejections.
// protected_masks are the amodal masks of previously inserted objects plus,
// in the supervised variant, the ground-truth objects; the pairwise overlap
// cap applies against each of them.
std::optional<BinaryMask> insert_instance(ImageRGB& frame, const BankEntry& entry,
                                          const PlacementSampler& sampler,
                                          const PerObjectAugmentSpec& per_object,
                                          const std::vector<BinaryMask>& protected_masks,
                                          const SynthesisConfig& config, Rng& rng);

// Ground truth for one frame of a pseudo-sequence.
struct SeqInstance {
  int id = 0;
  int label = 0;
  BinaryMask mask;  // modal (visible) mask
  BBox box;         // inclusive pixel box of the modal mask
};

struct FrameTruth {
  std::vector<SeqInstance> instances;

  const SeqInstance* find(int id) const {
    for (const auto& inst : instances) {
      if (inst.id == id) return &inst;
    }
    return nullptr;
  }
};

// Frame triplet x1 (before), x2 (after), x3 (strong view of x1), the
// inserted-instance ground truth for x1/x2, and the id correspondence of
// instances present in both frames.
struct PseudoSequence {
  ImageRGB x1, x2, x3;
  FrameTruth gt1, gt2;
  std::vector<int> correspondence;  // ids present in both gt1 and gt2
  int inserted_count = 0;           // K

  // Amodal (pre-occlusion) masks of the objects inserted into x1 and into
  // x2 (before its spatial augmentation), kept for overlap diagnostics.
  std::vector<BinaryMask> inserted_amodal;
  std::vector<BinaryMask> inserted_amodal_x2;
};

// base_truth carries the ground-truth instances of a labeled base image (the
// supervised variant); pass an empty vector for unlabeled inputs.
PseudoSequence make_sequence(const ImageRGB& base, const std::vector<SeqInstance>& base_truth,
                             const InstanceBank& bank, const AugmentationSpec& aug,
                             const SynthesisConfig& config, const PlacementSampler& sampler,
                             Rng& rng);

}  // namespace pseqseg
