#include "pseqseg/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace pseqseg {

using json = nlohmann::json;

std::uint64_t rle_area(const RLEMask& r) {
  std::uint64_t area = 0;
  for (std::size_t i = 1; i < r.runs.size(); i += 2) area += r.runs[i];
  return area;
}

std::uint64_t rle_intersect_area(const RLEMask& a, const RLEMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw InvalidInputError("rle_intersect_area: dimension mismatch");
  }
  std::uint64_t inter = 0;
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = ia < a.runs.size() ? a.runs[ia] : 0;
  std::uint64_t rb = ib < b.runs.size() ? b.runs[ib] : 0;
  while (ia < a.runs.size() && ib < b.runs.size()) {
    if (ra == 0) {
      ++ia;
      ra = ia < a.runs.size() ? a.runs[ia] : 0;
      continue;
    }
    if (rb == 0) {
      ++ib;
      rb = ib < b.runs.size() ? b.runs[ib] : 0;
      continue;
    }
    const std::uint64_t step = std::min(ra, rb);
    if ((ia % 2 == 1) && (ib % 2 == 1)) inter += step;
    ra -= step;
    rb -= step;
  }
  return inter;
}

Scalar rle_iou(const RLEMask& a, const RLEMask& b) {
  const std::uint64_t inter = rle_intersect_area(a, b);
  const std::uint64_t uni = rle_area(a) + rle_area(b) - inter;
  if (uni == 0) return 0.0;
  return static_cast<Scalar>(inter) / static_cast<Scalar>(uni);
}

namespace {

struct ScoredFlag {
  Scalar score;
  bool tp;
  int image_id;
  Index order;  // per-image prediction rank, for deterministic ties
};

Scalar interpolated_ap(std::vector<ScoredFlag> flags, std::size_t gt_total) {
  if (gt_total == 0) return 0.0;
  std::sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.order < b.order;
  });
  std::vector<Scalar> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& f : flags) {
    f.tp ? ++tp : ++fp;
    precision.push_back(static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fp));
    recall.push_back(static_cast<Scalar>(tp) / static_cast<Scalar>(gt_total));
  }
  // Precision envelope from the right.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  Scalar ap = 0;
  std::size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    const Scalar level = static_cast<Scalar>(r) / 100.0;
    while (j < recall.size() && recall[j] < level) ++j;
    if (j < precision.size()) ap += precision[j];
  }
  return ap / 101.0;
}

}  // namespace

ApResult evaluate_ap(const std::vector<MaskPrediction>& predictions, const AnnotationSet& gt) {
  gt.validate();
  std::set<int> image_ids;
  for (const auto& img : gt.images) image_ids.insert(img.id);
  for (const auto& pred : predictions) {
    if (!image_ids.count(pred.image_id)) {
      throw InvalidInputError("evaluate_ap: prediction references unknown image " +
                              std::to_string(pred.image_id));
    }
  }

  constexpr int kThresholds = 10;
  auto threshold = [](int k) { return 0.5 + 0.05 * static_cast<Scalar>(k); };

  // Group ground truth and predictions by (category, image).
  std::map<int, std::map<int, std::vector<const AnnotationRecord*>>> gt_by_cat;
  for (const auto& ann : gt.annotations) gt_by_cat[ann.category_id][ann.image_id].push_back(&ann);
  std::map<int, std::map<int, std::vector<const MaskPrediction*>>> pred_by_cat;
  for (const auto& pred : predictions) pred_by_cat[pred.category_id][pred.image_id].push_back(&pred);

  std::vector<ApResult> per_category;
  for (const auto& [cat_id, gt_images] : gt_by_cat) {
    std::size_t gt_total = 0;
    for (const auto& [img_id, anns] : gt_images) gt_total += anns.size();
    if (gt_total == 0) continue;

    std::vector<std::vector<ScoredFlag>> flags(kThresholds);
    const auto pred_it = pred_by_cat.find(cat_id);
    if (pred_it != pred_by_cat.end()) {
      for (const auto& [img_id, preds_raw] : pred_it->second) {
        std::vector<const MaskPrediction*> preds = preds_raw;
        std::sort(preds.begin(), preds.end(),
                  [](const MaskPrediction* a, const MaskPrediction* b) {
                    return a->score > b->score;
                  });
        const auto gt_it = gt_images.find(img_id);
        const std::size_t n_gt = gt_it == gt_images.end() ? 0 : gt_it->second.size();

        // IoU matrix once per image, shared across thresholds.
        Mat iou(static_cast<Index>(preds.size()), static_cast<Index>(n_gt));
        for (std::size_t p = 0; p < preds.size(); ++p) {
          for (std::size_t g = 0; g < n_gt; ++g) {
            iou(static_cast<Index>(p), static_cast<Index>(g)) =
                rle_iou(preds[p]->mask, gt_it->second[g]->mask);
          }
        }
        for (int k = 0; k < kThresholds; ++k) {
          const Scalar tau = threshold(k);
          std::vector<bool> gt_used(n_gt, false);
          for (std::size_t p = 0; p < preds.size(); ++p) {
            Scalar best = 0;
            std::ptrdiff_t best_g = -1;
            for (std::size_t g = 0; g < n_gt; ++g) {
              if (gt_used[g]) continue;
              if (iou(static_cast<Index>(p), static_cast<Index>(g)) > best) {
                best = iou(static_cast<Index>(p), static_cast<Index>(g));
                best_g = static_cast<std::ptrdiff_t>(g);
              }
            }
            const bool tp = best_g >= 0 && best >= tau;
            if (tp) gt_used[static_cast<std::size_t>(best_g)] = true;
            flags[k].push_back(
                ScoredFlag{preds[p]->score, tp, img_id, static_cast<Index>(p)});
          }
        }
      }
    }

    ApResult res;
    Scalar mean_ap = 0;
    for (int k = 0; k < kThresholds; ++k) {
      const Scalar ap_k = interpolated_ap(flags[k], gt_total);
      mean_ap += ap_k;
      if (k == 0) res.ap50 = ap_k;
      if (k == 5) res.ap75 = ap_k;
    }
    res.ap = mean_ap / kThresholds;
    per_category.push_back(res);
  }

  ApResult out;
  if (per_category.empty()) return out;
  for (const auto& r : per_category) {
    out.ap += r.ap;
    out.ap50 += r.ap50;
    out.ap75 += r.ap75;
  }
  const Scalar n = static_cast<Scalar>(per_category.size());
  out.ap /= n;
  out.ap50 /= n;
  out.ap75 /= n;
  return out;
}

std::vector<MaskPrediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_predictions: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptAnnotationError(std::string("load_predictions: bad JSON: ") + e.what());
  }
  std::vector<MaskPrediction> out;
  for (const auto& p : j) {
    MaskPrediction pred;
    pred.image_id = p.at("image_id");
    pred.category_id = p.at("category_id");
    pred.score = p.at("score");
    pred.mask.height = p.at("rle").at("height");
    pred.mask.width = p.at("rle").at("width");
    pred.mask.runs = p.at("rle").at("runs").get<std::vector<std::uint64_t>>();
    out.push_back(std::move(pred));
  }
  return out;
}

void save_predictions(const std::string& path, const std::vector<MaskPrediction>& predictions) {
  json j = json::array();
  for (const auto& p : predictions) {
    j.push_back({{"image_id", p.image_id},
                 {"category_id", p.category_id},
                 {"score", p.score},
                 {"rle", {{"height", p.mask.height}, {"width", p.mask.width}, {"runs", p.mask.runs}}}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_predictions: cannot open " + path);
  out << j.dump() << "\n";
}

}  // namespace pseqseg
