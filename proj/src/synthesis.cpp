#include "pseqseg/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace pseqseg {

InstanceBank build_bank(const std::vector<LabeledImage>& labeled) {
  InstanceBank bank;
  for (const auto& img : labeled) {
    if (img.masks.size() != img.labels.size()) {
      throw InvalidInputError("build_bank: masks/labels size mismatch");
    }
    for (std::size_t i = 0; i < img.masks.size(); ++i) {
      const BinaryMask& mask = img.masks[i];
      if (mask.height() != img.image.height() || mask.width() != img.image.width()) {
        throw InvalidInputError("build_bank: mask does not match image size");
      }
      if (mask.empty()) continue;
      const BBox box = mask_to_box(mask);
      const Index u0 = static_cast<Index>(box.x_min), v0 = static_cast<Index>(box.y_min);
      const Index w = static_cast<Index>(box.x_max - box.x_min) + 1;
      const Index h = static_cast<Index>(box.y_max - box.y_min) + 1;

      BankEntry entry;
      entry.label = img.labels[i];
      entry.source_id = img.source_id + "#" + std::to_string(i);
      entry.mask.values = mask.values.block(v0, u0, h, w);
      entry.rgb = ImageRGB(h, w);
      for (int c = 0; c < 3; ++c) {
        entry.rgb.ch[c] = img.image.ch[c].block(v0, u0, h, w) *
                          entry.mask.values.cast<Scalar>();
      }
      bank.entries.push_back(std::move(entry));
    }
  }
  if (bank.empty()) throw ConfigError("build_bank: no annotated instances in the labeled split");
  return bank;
}

void PlacementSampler::validate() const {
  if (!(alpha > 0) || !(beta > 0)) throw ConfigError("PlacementSampler: alpha, beta must be > 0");
}

Scalar PlacementSampler::sample_axis(Rng& rng) const {
  validate();
  return rng.beta(alpha, beta);
}

std::pair<Index, Index> sample_placement(const PlacementSampler& sampler, Index frame_w,
                                         Index frame_h, Index obj_w, Index obj_h, Rng& rng) {
  if (obj_w > frame_w || obj_h > frame_h) {
    throw InvalidInputError("sample_placement: object larger than frame");
  }
  const Scalar feas_w = static_cast<Scalar>(frame_w - obj_w);
  const Scalar feas_h = static_cast<Scalar>(frame_h - obj_h);
  const Index u = static_cast<Index>(std::lround(sampler.sample_axis(rng) * feas_w));
  const Index v = static_cast<Index>(std::lround(sampler.sample_axis(rng) * feas_h));
  return {u, v};
}

namespace {

struct AugmentedCutout {
  ImageRGB rgb;
  BinaryMask mask;
};

// Scale/rotate/flip/brightness on the cutout, rendered into a canvas sized
// to the transformed extent.
std::optional<AugmentedCutout> augment_cutout(const BankEntry& entry,
                                              const PerObjectAugmentSpec& spec, Rng& rng) {
  const bool flip = rng.bernoulli(spec.flip_prob);
  const Scalar s = rng.uniform(spec.scale_lo, spec.scale_hi);
  const Scalar theta = rng.uniform(-spec.rotation_deg, spec.rotation_deg) * M_PI / 180.0;
  const Scalar delta = rng.uniform(-spec.brightness_delta, spec.brightness_delta);

  const Scalar w = static_cast<Scalar>(entry.mask.width());
  const Scalar h = static_cast<Scalar>(entry.mask.height());
  const Index out_w = std::max<Index>(
      1, static_cast<Index>(std::ceil(s * (w * std::abs(std::cos(theta)) +
                                           h * std::abs(std::sin(theta))))));
  const Index out_h = std::max<Index>(
      1, static_cast<Index>(std::ceil(s * (w * std::abs(std::sin(theta)) +
                                           h * std::abs(std::cos(theta))))));

  // src = R^-1 S^-1 (dst - c_out) + c_in
  const Scalar cs = std::cos(theta), sn = std::sin(theta);
  const Scalar inv_s = 1.0 / s;
  AffineMap inv;
  inv(0, 0) = cs * inv_s;
  inv(0, 1) = sn * inv_s;
  inv(1, 0) = -sn * inv_s;
  inv(1, 1) = cs * inv_s;
  const Scalar cox = (static_cast<Scalar>(out_w) - 1) / 2, coy = (static_cast<Scalar>(out_h) - 1) / 2;
  const Scalar cix = (w - 1) / 2, ciy = (h - 1) / 2;
  inv(0, 2) = cix - inv(0, 0) * cox - inv(0, 1) * coy;
  inv(1, 2) = ciy - inv(1, 0) * cox - inv(1, 1) * coy;

  AugmentedCutout out;
  const ImageRGB base_rgb = flip ? hflip(entry.rgb) : entry.rgb;
  const BinaryMask base_mask = flip ? hflip(entry.mask) : entry.mask;
  out.mask = warp_mask(base_mask, inv, out_h, out_w);
  if (out.mask.empty()) return std::nullopt;
  out.rgb = warp_image(base_rgb, inv, out_h, out_w);
  if (delta != 0.0) adjust_brightness(out.rgb, delta);
  return out;
}

Scalar pairwise_overlap(const BinaryMask& a, const BinaryMask& b) {
  return std::max(overlap_ratio(a, b), overlap_ratio(b, a));
}

struct PlacedCutout {
  ImageRGB rgb;
  BinaryMask mask;  // cutout-local
  Index u0 = 0, v0 = 0;
  BinaryMask amodal;  // full-frame
  int label = 0;
};

// Shared placement core: augments once, then resamples the placement until
// the overlap guard and the optional extra predicate accept it.
std::optional<PlacedCutout> try_place(Index frame_h, Index frame_w, const BankEntry& entry,
                                      const PlacementSampler& sampler,
                                      const PerObjectAugmentSpec& per_object,
                                      const std::vector<BinaryMask>& protected_masks,
                                      const SynthesisConfig& config, Rng& rng,
                                      const std::function<bool(const BinaryMask&)>& extra_ok) {
  auto cutout = augment_cutout(entry, per_object, rng);
  if (!cutout) return std::nullopt;
  if (cutout->mask.width() > frame_w || cutout->mask.height() > frame_h) return std::nullopt;

  for (int attempt = 0; attempt < config.max_placement_attempts; ++attempt) {
    const auto [u, v] =
        sample_placement(sampler, frame_w, frame_h, cutout->mask.width(), cutout->mask.height(), rng);
    BinaryMask amodal = place_mask(cutout->mask, u, v, frame_h, frame_w);
    bool ok = true;
    for (const auto& prot : protected_masks) {
      if (pairwise_overlap(amodal, prot) > config.overlap_cap) {
        ok = false;
        break;
      }
    }
    if (ok && extra_ok && !extra_ok(amodal)) ok = false;
    if (ok) {
      PlacedCutout placed;
      placed.rgb = std::move(cutout->rgb);
      placed.mask = std::move(cutout->mask);
      placed.u0 = u;
      placed.v0 = v;
      placed.amodal = std::move(amodal);
      placed.label = entry.label;
      return placed;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<BinaryMask> insert_instance(ImageRGB& frame, const BankEntry& entry,
                                          const PlacementSampler& sampler,
                                          const PerObjectAugmentSpec& per_object,
                                          const std::vector<BinaryMask>& protected_masks,
                                          const SynthesisConfig& config, Rng& rng) {
  auto placed = try_place(frame.height(), frame.width(), entry, sampler, per_object,
                          protected_masks, config, rng, nullptr);
  if (!placed) return std::nullopt;
  composite_over(frame, placed->rgb, placed->mask, placed->u0, placed->v0);
  return std::move(placed->amodal);
}

WeakAugmentResult weak_augment(const ImageRGB& frame, const std::vector<BinaryMask>& masks,
                               const WeakAugmentSpec& spec, Rng& rng) {
  const Scalar theta = rng.uniform(-spec.rotation_deg, spec.rotation_deg) * M_PI / 180.0;
  const Scalar crop = spec.crop_frac > 0 ? rng.uniform(0.0, spec.crop_frac) : 0.0;
  const Scalar s = rng.uniform(spec.scale_lo, spec.scale_hi) / (1.0 - crop);
  const Scalar tx = rng.uniform(-spec.translation_frac, spec.translation_frac) *
                    static_cast<Scalar>(frame.width());
  const Scalar ty = rng.uniform(-spec.translation_frac, spec.translation_frac) *
                    static_cast<Scalar>(frame.height());
  const Scalar delta = rng.uniform(-spec.brightness_delta, spec.brightness_delta);

  WeakAugmentResult out;
  const bool identity_geometry = theta == 0.0 && s == 1.0 && tx == 0.0 && ty == 0.0;
  if (identity_geometry) {
    out.frame = frame;
    out.masks = masks;
  } else {
    const AffineMap inv = affine_inverse(theta, s, tx, ty, frame.height(), frame.width());
    out.frame = warp_image(frame, inv, frame.height(), frame.width());
    out.masks.reserve(masks.size());
    for (const auto& m : masks) {
      out.masks.push_back(warp_mask(m, inv, frame.height(), frame.width()));
    }
  }
  if (delta != 0.0) adjust_brightness(out.frame, delta);
  return out;
}

ImageRGB strong_augment(const ImageRGB& frame, const StrongAugmentSpec& spec, Rng& rng) {
  ImageRGB out = frame;

  const bool use_bright = rng.bernoulli(0.5);
  const Scalar delta = rng.uniform(-spec.brightness, spec.brightness);
  const bool use_contrast = rng.bernoulli(0.5);
  const Scalar contrast = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
  const bool use_sat = rng.bernoulli(0.5);
  const Scalar sat = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
  const bool use_temp = rng.bernoulli(0.5);
  const Scalar warm = rng.uniform(-spec.temperature, spec.temperature);
  const bool use_blur = rng.bernoulli(0.5);
  const Scalar sigma = rng.uniform(spec.blur_sigma_lo, spec.blur_sigma_hi);
  const bool use_gray = spec.grayscale_prob > 0 && rng.bernoulli(spec.grayscale_prob);

  if (use_bright && delta != 0.0) adjust_brightness(out, delta);
  if (use_contrast && contrast != 1.0) adjust_contrast(out, contrast);
  if (use_sat && sat != 1.0) adjust_saturation(out, sat);
  if (use_temp && warm != 0.0) temperature_shift(out, warm);
  if (use_blur && sigma > 0.0) gaussian_blur(out, sigma);
  if (use_gray) to_grayscale(out);
  return out;
}

namespace {

// Removes `by`'s pixels from m.
void occlude(BinaryMask& m, const BinaryMask& by) {
  m.values = (m.values.cast<int>() * (1 - by.values.cast<int>())).cast<std::uint8_t>();
}

// Modal (visible) mask of layer i: its amodal mask minus every later layer.
std::vector<BinaryMask> modal_masks(const std::vector<const BinaryMask*>& amodal_in_order) {
  std::vector<BinaryMask> out;
  out.reserve(amodal_in_order.size());
  for (std::size_t i = 0; i < amodal_in_order.size(); ++i) {
    BinaryMask m = *amodal_in_order[i];
    for (std::size_t j = i + 1; j < amodal_in_order.size(); ++j) {
      occlude(m, *amodal_in_order[j]);
    }
    out.push_back(std::move(m));
  }
  return out;
}

struct Layer {
  int id = 0;
  PlacedCutout cutout;
};

}  // namespace

PseudoSequence make_sequence(const ImageRGB& base, const std::vector<SeqInstance>& base_truth,
                             const InstanceBank& bank, const AugmentationSpec& aug,
                             const SynthesisConfig& config, const PlacementSampler& sampler,
                             Rng& rng) {
  if (bank.empty()) throw ConfigError("make_sequence: empty instance bank");
  const Index frame_h = base.height(), frame_w = base.width();

  // psi_1: weak augmentation of the base image together with its labels.
  std::vector<BinaryMask> base_masks;
  for (const auto& inst : base_truth) base_masks.push_back(inst.mask);
  WeakAugmentResult warped = weak_augment(base, base_masks, aug.weak, rng);
  const ImageRGB x1_base = std::move(warped.frame);

  struct BaseInstance {
    int id;
    int label;
    BinaryMask mask;  // amodal w.r.t. inserted objects
  };
  std::vector<BaseInstance> base_instances;
  int next_id = 0;
  for (std::size_t i = 0; i < base_truth.size(); ++i) {
    next_id = std::max(next_id, base_truth[i].id + 1);
    if (warped.masks[i].empty()) continue;
    base_instances.push_back({base_truth[i].id, base_truth[i].label, std::move(warped.masks[i])});
  }

  // Insert K bank objects; ground-truth objects are protected by the same
  // overlap cap in the supervised variant.
  auto visible_ok = [&](const std::vector<const BinaryMask*>& existing,
                        const std::vector<Index>& areas, const BinaryMask& candidate) {
    for (std::size_t i = 0; i < existing.size(); ++i) {
      const Index covered =
          (existing[i]->values.cast<std::int64_t>() * candidate.values.cast<std::int64_t>()).sum();
      const Index visible = existing[i]->area() - static_cast<Index>(covered);
      if (static_cast<Scalar>(visible) <
          config.min_visible_frac * static_cast<Scalar>(areas[i])) {
        return false;
      }
    }
    return true;
  };

  std::vector<Layer> layers1;
  {
    std::vector<BinaryMask> visible_state;  // modal masks of protected objects
    std::vector<Index> full_areas;
    std::vector<BinaryMask> protected_amodal;
    for (const auto& b : base_instances) {
      visible_state.push_back(b.mask);
      full_areas.push_back(b.mask.area());
      protected_amodal.push_back(b.mask);
    }
    const int k_draw = static_cast<int>(rng.uniform_int(config.insert_min, config.insert_max));
    for (int k = 0; k < k_draw; ++k) {
      const auto& entry = bank.entries[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(bank.size()) - 1))];
      std::vector<const BinaryMask*> existing;
      for (const auto& m : visible_state) existing.push_back(&m);
      auto placed = try_place(frame_h, frame_w, entry, sampler, aug.per_object, protected_amodal,
                              config, rng, [&](const BinaryMask& cand) {
                                return visible_ok(existing, full_areas, cand);
                              });
      if (!placed) continue;  // skip signal: fewer than K inserted
      for (auto& m : visible_state) occlude(m, placed->amodal);
      visible_state.push_back(placed->amodal);
      full_areas.push_back(placed->amodal.area());
      protected_amodal.push_back(placed->amodal);
      layers1.push_back({next_id++, std::move(*placed)});
    }
  }

  PseudoSequence seq;
  seq.inserted_count = static_cast<int>(layers1.size());

  // x1 = composited frame.
  seq.x1 = x1_base;
  for (const auto& layer : layers1) {
    composite_over(seq.x1, layer.cutout.rgb, layer.cutout.mask, layer.cutout.u0, layer.cutout.v0);
    seq.inserted_amodal.push_back(layer.cutout.amodal);
  }

  // gt1 = modal masks in paint order: base instances first, then layers.
  {
    std::vector<const BinaryMask*> order;
    for (const auto& b : base_instances) order.push_back(&b.mask);
    for (const auto& layer : layers1) order.push_back(&layer.cutout.amodal);
    std::vector<BinaryMask> modal = modal_masks(order);
    std::size_t idx = 0;
    for (const auto& b : base_instances) {
      if (!modal[idx].empty()) {
        seq.gt1.instances.push_back(
            {b.id, b.label, modal[idx], mask_to_box(modal[idx])});
      }
      ++idx;
    }
    for (const auto& layer : layers1) {
      if (!modal[idx].empty()) {
        seq.gt1.instances.push_back(
            {layer.id, layer.cutout.label, modal[idx], mask_to_box(modal[idx])});
      }
      ++idx;
    }
  }

  // x2: drop a random subset of the inserted layers, optionally add more,
  // then apply another weak augmentation to the composited result.
  std::vector<Layer> layers2;
  for (auto& layer : layers1) {
    if (!rng.bernoulli(config.removal_prob)) layers2.push_back(layer);
  }
  {
    std::vector<BinaryMask> visible_state;
    std::vector<Index> full_areas;
    std::vector<BinaryMask> protected_amodal;
    for (const auto& b : base_instances) {
      visible_state.push_back(b.mask);
      full_areas.push_back(b.mask.area());
      protected_amodal.push_back(b.mask);
    }
    for (const auto& layer : layers2) {
      BinaryMask m = layer.cutout.amodal;
      for (auto& vs : visible_state) occlude(vs, m);
      visible_state.push_back(m);
      full_areas.push_back(m.area());
      protected_amodal.push_back(layer.cutout.amodal);
    }
    const int n_new =
        static_cast<int>(rng.uniform_int(config.x2_insert_min, config.x2_insert_max));
    for (int k = 0; k < n_new; ++k) {
      const auto& entry = bank.entries[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(bank.size()) - 1))];
      std::vector<const BinaryMask*> existing;
      for (const auto& m : visible_state) existing.push_back(&m);
      auto placed = try_place(frame_h, frame_w, entry, sampler, aug.per_object, protected_amodal,
                              config, rng, [&](const BinaryMask& cand) {
                                return visible_ok(existing, full_areas, cand);
                              });
      if (!placed) continue;
      for (auto& m : visible_state) occlude(m, placed->amodal);
      visible_state.push_back(placed->amodal);
      full_areas.push_back(placed->amodal.area());
      protected_amodal.push_back(placed->amodal);
      layers2.push_back({next_id++, std::move(*placed)});
    }
  }

  ImageRGB x2_pre = x1_base;
  for (const auto& layer : layers2) {
    composite_over(x2_pre, layer.cutout.rgb, layer.cutout.mask, layer.cutout.u0, layer.cutout.v0);
    seq.inserted_amodal_x2.push_back(layer.cutout.amodal);
  }

  // Modal masks before psi_2, then the shared spatial augmentation re-warps
  // frame and masks together.
  std::vector<int> ids2;
  std::vector<int> labels2;
  std::vector<BinaryMask> modal2;
  {
    std::vector<const BinaryMask*> order;
    for (const auto& b : base_instances) order.push_back(&b.mask);
    for (const auto& layer : layers2) order.push_back(&layer.cutout.amodal);
    std::vector<BinaryMask> modal = modal_masks(order);
    std::size_t idx = 0;
    for (const auto& b : base_instances) {
      ids2.push_back(b.id);
      labels2.push_back(b.label);
      modal2.push_back(std::move(modal[idx++]));
    }
    for (const auto& layer : layers2) {
      ids2.push_back(layer.id);
      labels2.push_back(layer.cutout.label);
      modal2.push_back(std::move(modal[idx++]));
    }
  }
  WeakAugmentResult warped2 = weak_augment(x2_pre, modal2, aug.weak, rng);
  seq.x2 = std::move(warped2.frame);
  for (std::size_t i = 0; i < ids2.size(); ++i) {
    if (warped2.masks[i].empty()) continue;
    seq.gt2.instances.push_back(
        {ids2[i], labels2[i], warped2.masks[i], mask_to_box(warped2.masks[i])});
  }

  // x3: photometric-only strong view of x1, identical geometry.
  seq.x3 = strong_augment(seq.x1, aug.strong, rng);

  for (const auto& inst : seq.gt1.instances) {
    if (seq.gt2.find(inst.id) != nullptr) seq.correspondence.push_back(inst.id);
  }
  return seq;
}

}  // namespace pseqseg
