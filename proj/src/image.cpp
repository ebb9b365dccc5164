#include "pseqseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace pseqseg {

AffineMap affine_identity() {
  AffineMap m;
  m << 1, 0, 0, 0, 1, 0;
  return m;
}

AffineMap affine_inverse(Scalar angle_rad, Scalar scale, Scalar tx, Scalar ty, Index height,
                         Index width) {
  if (scale <= 0) throw InvalidInputError("affine_inverse: scale must be positive");
  const Scalar cu = (static_cast<Scalar>(width) - 1) / 2;
  const Scalar cv = (static_cast<Scalar>(height) - 1) / 2;
  // Forward: p' = R*S*(p - c) + c + t. Inverse: p = S^-1*R^-1*(p' - c - t) + c.
  const Scalar cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  const Scalar inv_s = 1.0 / scale;
  AffineMap m;
  m(0, 0) = cs * inv_s;
  m(0, 1) = sn * inv_s;
  m(1, 0) = -sn * inv_s;
  m(1, 1) = cs * inv_s;
  const Scalar du = -(cu + tx), dv = -(cv + ty);
  m(0, 2) = m(0, 0) * du + m(0, 1) * dv + cu;
  m(1, 2) = m(1, 0) * du + m(1, 1) * dv + cv;
  return m;
}

ImageRGB warp_image(const ImageRGB& src, const AffineMap& inv, Index out_h, Index out_w) {
  ImageRGB out(out_h, out_w);
  const Index h = src.height(), w = src.width();
  for (Index v = 0; v < out_h; ++v) {
    for (Index u = 0; u < out_w; ++u) {
      const Scalar x = inv(0, 0) * u + inv(0, 1) * v + inv(0, 2);
      const Scalar y = inv(1, 0) * u + inv(1, 1) * v + inv(1, 2);
      const Scalar xc = std::clamp<Scalar>(x, 0, static_cast<Scalar>(w - 1));
      const Scalar yc = std::clamp<Scalar>(y, 0, static_cast<Scalar>(h - 1));
      const Index x0 = static_cast<Index>(std::floor(xc));
      const Index y0 = static_cast<Index>(std::floor(yc));
      const Index x1 = std::min(x0 + 1, w - 1);
      const Index y1 = std::min(y0 + 1, h - 1);
      const Scalar fx = xc - static_cast<Scalar>(x0);
      const Scalar fy = yc - static_cast<Scalar>(y0);
      for (int c = 0; c < 3; ++c) {
        const Arr& s = src.ch[c];
        const Scalar top = s(y0, x0) * (1 - fx) + s(y0, x1) * fx;
        const Scalar bot = s(y1, x0) * (1 - fx) + s(y1, x1) * fx;
        out.ch[c](v, u) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

BinaryMask warp_mask(const BinaryMask& src, const AffineMap& inv, Index out_h, Index out_w) {
  BinaryMask out(out_h, out_w);
  const Index h = src.height(), w = src.width();
  for (Index v = 0; v < out_h; ++v) {
    for (Index u = 0; u < out_w; ++u) {
      const Scalar x = inv(0, 0) * u + inv(0, 1) * v + inv(0, 2);
      const Scalar y = inv(1, 0) * u + inv(1, 1) * v + inv(1, 2);
      const Index xi = static_cast<Index>(std::lround(x));
      const Index yi = static_cast<Index>(std::lround(y));
      if (xi >= 0 && xi < w && yi >= 0 && yi < h) out.values(v, u) = src.values(yi, xi);
    }
  }
  return out;
}

ImageRGB resize_bilinear(const ImageRGB& src, Index out_h, Index out_w) {
  if (out_h <= 0 || out_w <= 0) throw InvalidInputError("resize_bilinear: bad size");
  AffineMap inv = affine_identity();
  inv(0, 0) = static_cast<Scalar>(src.width()) / static_cast<Scalar>(out_w);
  inv(1, 1) = static_cast<Scalar>(src.height()) / static_cast<Scalar>(out_h);
  inv(0, 2) = 0.5 * inv(0, 0) - 0.5;
  inv(1, 2) = 0.5 * inv(1, 1) - 0.5;
  return warp_image(src, inv, out_h, out_w);
}

BinaryMask resize_nearest(const BinaryMask& src, Index out_h, Index out_w) {
  if (out_h <= 0 || out_w <= 0) throw InvalidInputError("resize_nearest: bad size");
  BinaryMask out(out_h, out_w);
  for (Index v = 0; v < out_h; ++v) {
    const Index sv = std::min<Index>(src.height() - 1,
                                     static_cast<Index>((v + 0.5) * src.height() / out_h));
    for (Index u = 0; u < out_w; ++u) {
      const Index su = std::min<Index>(src.width() - 1,
                                       static_cast<Index>((u + 0.5) * src.width() / out_w));
      out.values(v, u) = src.values(sv, su);
    }
  }
  return out;
}

ImageRGB hflip(const ImageRGB& src) {
  ImageRGB out(src.height(), src.width());
  for (int c = 0; c < 3; ++c) out.ch[c] = src.ch[c].rowwise().reverse();
  return out;
}

BinaryMask hflip(const BinaryMask& src) {
  BinaryMask out;
  out.values = src.values.rowwise().reverse();
  return out;
}

void composite_over(ImageRGB& frame, const ImageRGB& cutout, const BinaryMask& cutout_mask,
                    Index u0, Index v0) {
  const Index h = cutout.height(), w = cutout.width();
  if (cutout_mask.height() != h || cutout_mask.width() != w) {
    throw InvalidInputError("composite_over: cutout/mask shape mismatch");
  }
  if (u0 < 0 || v0 < 0 || u0 + w > frame.width() || v0 + h > frame.height()) {
    throw InvalidInputError("composite_over: cutout does not fit in frame");
  }
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      if (cutout_mask.values(v, u)) {
        for (int c = 0; c < 3; ++c) frame.ch[c](v0 + v, u0 + u) = cutout.ch[c](v, u);
      }
    }
  }
}

BinaryMask place_mask(const BinaryMask& cutout_mask, Index u0, Index v0, Index frame_h,
                      Index frame_w) {
  if (u0 < 0 || v0 < 0 || u0 + cutout_mask.width() > frame_w ||
      v0 + cutout_mask.height() > frame_h) {
    throw InvalidInputError("place_mask: cutout does not fit in frame");
  }
  BinaryMask out(frame_h, frame_w);
  out.values.block(v0, u0, cutout_mask.height(), cutout_mask.width()) = cutout_mask.values;
  return out;
}

void adjust_brightness(ImageRGB& img, Scalar delta) {
  for (auto& c : img.ch) c += delta;
  img.clamp01();
}

void adjust_contrast(ImageRGB& img, Scalar factor) {
  const Scalar mean = (img.ch[0].mean() + img.ch[1].mean() + img.ch[2].mean()) / 3.0;
  for (auto& c : img.ch) c = mean + (c - mean) * factor;
  img.clamp01();
}

void adjust_saturation(ImageRGB& img, Scalar factor) {
  const Arr gray = 0.299 * img.ch[0] + 0.587 * img.ch[1] + 0.114 * img.ch[2];
  for (auto& c : img.ch) c = gray + (c - gray) * factor;
  img.clamp01();
}

void temperature_shift(ImageRGB& img, Scalar warm) {
  img.ch[0] *= (1.0 + warm);
  img.ch[2] *= (1.0 - warm);
  img.clamp01();
}

void to_grayscale(ImageRGB& img) {
  const Arr gray = 0.299 * img.ch[0] + 0.587 * img.ch[1] + 0.114 * img.ch[2];
  for (auto& c : img.ch) c = gray;
}

void gaussian_blur(ImageRGB& img, Scalar sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<Scalar> kernel(2 * radius + 1);
  Scalar sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  const Index h = img.height(), w = img.width();
  for (auto& c : img.ch) {
    Arr tmp(h, w);
    for (Index v = 0; v < h; ++v) {  // horizontal pass
      for (Index u = 0; u < w; ++u) {
        Scalar acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const Index uu = std::clamp<Index>(u + i, 0, w - 1);
          acc += kernel[i + radius] * c(v, uu);
        }
        tmp(v, u) = acc;
      }
    }
    for (Index v = 0; v < h; ++v) {  // vertical pass
      for (Index u = 0; u < w; ++u) {
        Scalar acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const Index vv = std::clamp<Index>(v + i, 0, h - 1);
          acc += kernel[i + radius] * tmp(vv, u);
        }
        c(v, u) = acc;
      }
    }
  }
}

}  // namespace pseqseg
