#pragma once

#include "pseqseg/geometry.hpp"
#include "pseqseg/image.hpp"
#include "pseqseg/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pseqseg {

struct ImageRecord {
  int id = 0;
  std::string file;
  Index height = 0;
  Index width = 0;
};

struct AnnotationRecord {
  int id = 0;
  int image_id = 0;
  int category_id = 1;
  RLEMask mask;
  BBox bbox;  // inclusive pixel box
};

struct CategoryRecord {
  int id = 1;
  std::string name = "object";
};

struct AnnotationSet {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<CategoryRecord> categories;

  // Throws CorruptAnnotationError on duplicate ids, dangling references or
  // RLE runs that do not cover the image.
  void validate() const;
};

// Synthetic benchmark: a textured tote background with 3..8 overlapping
// colored shapes (ellipses, rectangles, polygons) per image, modal masks
// with correct occlusion ordering, single category.
struct ShapesConfig {
  Index height = 480;
  Index width = 600;
  int min_instances = 3;
  int max_instances = 8;
  Scalar min_size_frac = 0.18;  // of min(height, width)
  Scalar max_size_frac = 0.40;
  Scalar min_visible_frac = 0.25;
};

// Writes out_dir/images/*.png and out_dir/annotations.json; byte-identical
// for a fixed (n_images, seed, config).
AnnotationSet gen_shapes_dataset(const std::string& out_dir, int n_images, std::uint64_t seed,
                                 const ShapesConfig& config = {});

AnnotationSet load_annotations(const std::string& path);
void save_annotations(const std::string& path, const AnnotationSet& set);

struct SplitSpec {
  double labeled_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Deterministic labeled/unlabeled partition of the image ids;
// |labeled| = max(1, floor(fraction * n)).
std::pair<std::vector<int>, std::vector<int>> split_labeled(const AnnotationSet& set,
                                                            const SplitSpec& spec);

}  // namespace pseqseg
