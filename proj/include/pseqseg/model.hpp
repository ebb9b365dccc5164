#pragma once

#include "pseqseg/autograd.hpp"
#include "pseqseg/image.hpp"
#include "pseqseg/nn.hpp"
#include "pseqseg/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace pseqseg {

struct ModelConfig {
  int classes = 1;
  int queries = 16;    // production query-based decoders use 300; toy default 16
  int embed_dim = 32;  // instance embedding width D
  int key_dim = 32;
  int value_dim = 64;
  int hidden_dim = 64;
  std::array<int, 3> widths = {16, 32, 48};
  int input_h = 480;
  int input_w = 600;

  int feat_h() const { return input_h / 8; }
  int feat_w() const { return input_w / 8; }
  void validate() const;
};

// Per-image model output: P instances with class scores in [0,1]^C,
// normalized corner box in [0,1]^4, soft mask in [0,1]^{H*W} (row-major
// flattened), and embedding in R^D.
struct PredictionBatch {
  Mat class_scores;  // (P, C)
  Mat boxes;         // (P, 4) as (x0, y0, x1, y1)
  Mat masks;         // (P, H*W)
  Mat embeddings;    // (P, D)

  Index count() const { return class_scores.rows(); }
};

// Autograd view of one forward pass.
struct TracedPrediction {
  ad::Value class_scores;
  ad::Value boxes;
  ad::Value masks;
  ad::Value embeddings;

  PredictionBatch detach() const {
    return PredictionBatch{class_scores->val, boxes->val, masks->val, embeddings->val};
  }
};

// Toy query-based instance segmentation model: a small strided conv encoder,
// learned queries attending over the final feature map, feed-forward class /
// box / embedding heads, and a mask head formed by query-pixel dot products
// upsampled to input size.
class SegModel {
 public:
  SegModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Parameter leaves used by forward_traced; shares the order of params().
  std::vector<ad::Value> make_leaves(bool needs_grad) const;
  TracedPrediction forward_traced(const ImageRGB& img, const std::vector<ad::Value>& leaves) const;

  // Plain forwards. Both are pure functions of (parameters, input) and
  // bit-identical to each other; forward_no_grad exists as the explicit
  // detached entry point for the weak branch.
  PredictionBatch forward(const ImageRGB& img) const;
  PredictionBatch forward_no_grad(const ImageRGB& img) const;

  void save(const std::string& path) const;
  static SegModel load(const std::string& path);

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
};

// Flattens an RGB frame into the (3, H*W) row-major matrix the model consumes.
Mat flatten_image(const ImageRGB& img);

}  // namespace pseqseg
