#pragma once

#include "pseqseg/geometry.hpp"
#include "pseqseg/types.hpp"

#include <array>

namespace pseqseg {

// RGB frame as three H x W channel planes in [0,1].
struct ImageRGB {
  std::array<Arr, 3> ch;

  ImageRGB() = default;
  ImageRGB(Index height, Index width) {
    for (auto& c : ch) c = Arr::Zero(height, width);
  }

  Index height() const { return ch[0].rows(); }
  Index width() const { return ch[0].cols(); }

  void clamp01() {
    for (auto& c : ch) c = c.cwiseMax(0.0).cwiseMin(1.0);
  }
};

// Affine map from output pixel coordinates (u,v) to source coordinates.
// Applied as: src = A * [u, v, 1]^T.
using AffineMap = Eigen::Matrix<Scalar, 2, 3>;

AffineMap affine_identity();
// Inverse map for "rotate by angle about the frame center, then scale about
// the center, then translate by (tx, ty)" applied to a height x width frame.
AffineMap affine_inverse(Scalar angle_rad, Scalar scale, Scalar tx, Scalar ty, Index height,
                         Index width);

// Bilinear sampling, clamp-to-edge outside the source.
ImageRGB warp_image(const ImageRGB& src, const AffineMap& inv, Index out_h, Index out_w);
// Nearest-neighbor sampling, zero outside the source.
BinaryMask warp_mask(const BinaryMask& src, const AffineMap& inv, Index out_h, Index out_w);

ImageRGB resize_bilinear(const ImageRGB& src, Index out_h, Index out_w);
BinaryMask resize_nearest(const BinaryMask& src, Index out_h, Index out_w);

ImageRGB hflip(const ImageRGB& src);
BinaryMask hflip(const BinaryMask& src);

// Pastes cutout pixels where cutout_mask is set, with the cutout's top-left
// at (u0, v0). The pasted region must fit inside the frame.
void composite_over(ImageRGB& frame, const ImageRGB& cutout, const BinaryMask& cutout_mask,
                    Index u0, Index v0);
// Full-frame mask of the pasted cutout at (u0, v0).
BinaryMask place_mask(const BinaryMask& cutout_mask, Index u0, Index v0, Index frame_h,
                      Index frame_w);

// Photometric primitives; all results are clamped to [0,1].
void adjust_brightness(ImageRGB& img, Scalar delta);
void adjust_contrast(ImageRGB& img, Scalar factor);
void adjust_saturation(ImageRGB& img, Scalar factor);
// Color-temperature gain: warm > 0 boosts red and damps blue, < 0 inverse.
void temperature_shift(ImageRGB& img, Scalar warm);
void to_grayscale(ImageRGB& img);
void gaussian_blur(ImageRGB& img, Scalar sigma);

}  // namespace pseqseg
