#include "pseqseg/losses.hpp"

#include "pseqseg/assignment.hpp"

#include <algorithm>
#include <cmath>

namespace pseqseg {

using ad::Value;

namespace {

constexpr Scalar kProbEps = 1e-12;

// Elementwise sigmoid focal terms for probabilities against a {0,1} target
// matrix; returns the (rows, cols) matrix of per-cell losses.
Value focal_elements(const Value& probs, const Mat& targets) {
  const Mat alpha_mat = kFocalAlpha * targets.array() + (1.0 - kFocalAlpha) * (1.0 - targets.array());
  Value p = ad::clamp(probs, kProbEps, 1.0 - kProbEps);
  Value one_minus_p = ad::add_scalar(ad::scale(p, -1.0), 1.0);
  // pt = p on positives, 1-p on negatives; focal = alpha * (1-pt)^2 * (-log pt)
  Value pos = ad::mul(ad::square(one_minus_p), ad::scale(ad::log_(p), -1.0));
  Value neg = ad::mul(ad::square(p), ad::scale(ad::log_(one_minus_p), -1.0));
  Value mixed = ad::add(ad::mul(ad::constant(targets), pos),
                        ad::mul(ad::constant(Mat::Ones(targets.rows(), targets.cols()) - targets), neg));
  return ad::mul(ad::constant(alpha_mat), mixed);
}

}  // namespace

Value class_loss(const Value& scores, const std::vector<int>& target_class) {
  const Index p_count = scores->val.rows();
  const Index c_count = scores->val.cols();
  if (static_cast<Index>(target_class.size()) != p_count) {
    throw InvalidInputError("class_loss: target_class size must match prediction count");
  }
  Mat targets = Mat::Zero(p_count, c_count);
  Index assigned = 0;
  for (Index i = 0; i < p_count; ++i) {
    const int c = target_class[static_cast<std::size_t>(i)];
    if (c >= 0) {
      if (c >= c_count) throw InvalidInputError("class_loss: class index out of range");
      targets(i, c) = 1.0;
      ++assigned;
    }
  }
  const Scalar norm = 1.0 / static_cast<Scalar>(std::max<Index>(1, assigned));
  return ad::scale(ad::sum(focal_elements(scores, targets)), norm);
}

Value box_giou_value(const Value& pred_box, const Vec4& t) {
  if (pred_box->val.rows() != 1 || pred_box->val.cols() != 4) {
    throw InvalidInputError("box_giou_value: expected (1,4) box");
  }
  struct Geometry {
    Scalar inter, uni, hull, giou;
    Scalar d_coord[4];  // d(giou)/d(pred coord)
  };
  auto eval = [](const Mat& p, const Vec4& t) {
    Geometry g{};
    const Scalar px0 = p(0, 0), py0 = p(0, 1), px1 = p(0, 2), py1 = p(0, 3);
    const Scalar tx0 = t(0), ty0 = t(1), tx1 = t(2), ty1 = t(3);
    const Scalar ap = std::max<Scalar>(0, px1 - px0) * std::max<Scalar>(0, py1 - py0);
    const Scalar at = std::max<Scalar>(0, tx1 - tx0) * std::max<Scalar>(0, ty1 - ty0);
    const Scalar iw = std::max<Scalar>(0, std::min(px1, tx1) - std::max(px0, tx0));
    const Scalar ih = std::max<Scalar>(0, std::min(py1, ty1) - std::max(py0, ty0));
    g.inter = iw * ih;
    g.uni = ap + at - g.inter;
    const Scalar hw = std::max(px1, tx1) - std::min(px0, tx0);
    const Scalar hh = std::max(py1, ty1) - std::min(py0, ty0);
    g.hull = hw * hh;
    if (g.uni <= 0 && g.hull <= 0) {
      g.giou = 0;
      return g;
    }
    const Scalar iou = g.uni > 0 ? g.inter / g.uni : 0.0;
    const Scalar penalty = g.hull > 0 ? (g.hull - g.uni) / g.hull : 0.0;
    g.giou = iou - penalty;

    // f(S, A, H) = S / (A + at - S) - 1 + (A + at - S) / H with S = inter,
    // A = pred area, H = hull area; chain through coordinate subgradients.
    const Scalar U = g.uni, H = g.hull;
    const Scalar df_dS = (U > 0 ? (U + g.inter) / (U * U) : 0.0) - (H > 0 ? 1.0 / H : 0.0);
    const Scalar df_dA = (U > 0 ? -g.inter / (U * U) : 0.0) + (H > 0 ? 1.0 / H : 0.0);
    const Scalar df_dH = H > 0 ? -U / (H * H) : 0.0;

    const Scalar pw = px1 - px0, ph = py1 - py0;
    Scalar dA[4] = {0, 0, 0, 0};
    if (pw > 0 && ph > 0) {
      dA[0] = -ph;
      dA[1] = -pw;
      dA[2] = ph;
      dA[3] = pw;
    }
    Scalar dS[4] = {0, 0, 0, 0};
    if (iw > 0 && ih > 0) {
      if (px0 > tx0) dS[0] = -ih;
      if (py0 > ty0) dS[1] = -iw;
      if (px1 < tx1) dS[2] = ih;
      if (py1 < ty1) dS[3] = iw;
    }
    Scalar dH[4] = {0, 0, 0, 0};
    if (px0 < tx0) dH[0] = -hh;
    if (py0 < ty0) dH[1] = -hw;
    if (px1 > tx1) dH[2] = hh;
    if (py1 > ty1) dH[3] = hw;

    for (int i = 0; i < 4; ++i) g.d_coord[i] = df_dS * dS[i] + df_dA * dA[i] + df_dH * dH[i];
    return g;
  };

  const Geometry g = eval(pred_box->val, t);
  auto n = std::make_shared<ad::Node>();
  n->val = Mat::Constant(1, 1, g.giou);
  n->needs_grad = pred_box->needs_grad;
  n->parents = {pred_box};
  if (n->needs_grad) {
    n->backward_fn = [t, eval](ad::Node& node) {
      const Geometry gg = eval(node.parents[0]->val, t);
      Mat d(1, 4);
      for (int i = 0; i < 4; ++i) d(0, i) = node.grad(0, 0) * gg.d_coord[i];
      node.parents[0]->add_grad(d);
    };
  }
  return n;
}

Value box_loss(const Value& pred_box, const Vec4& target_box) {
  Mat t(1, 4);
  t << target_box(0), target_box(1), target_box(2), target_box(3);
  Value l1 = ad::mean(ad::abs_(ad::sub(pred_box, ad::constant(t))));
  Value giou = box_giou_value(pred_box, target_box);
  return ad::add(l1, ad::add_scalar(ad::scale(giou, -1.0), 1.0));
}

Value mask_loss(const Value& pred_mask, const Eigen::Ref<const Mat>& target_mask) {
  if (pred_mask->val.rows() != 1 || target_mask.rows() != 1 ||
      pred_mask->val.cols() != target_mask.cols()) {
    throw InvalidInputError("mask_loss: expected matching (1,S) rows");
  }
  constexpr Scalar kDiceSmooth = 1.0;
  Value tgt = ad::constant(target_mask);
  Value num = ad::add_scalar(ad::scale(ad::sum(ad::mul(pred_mask, tgt)), 2.0), kDiceSmooth);
  Value den = ad::add_scalar(ad::sum(pred_mask), target_mask.sum() + kDiceSmooth);
  Value dice = ad::add_scalar(ad::scale(ad::mul(num, ad::pow_(den, -1.0)), -1.0), 1.0);
  Value focal = ad::mean(focal_elements(pred_mask, target_mask));
  return ad::add(dice, focal);
}

namespace {

std::vector<int> target_class_of(const Assignment& assignment, const TargetSet& targets,
                                 Index p_count) {
  std::vector<int> cls(static_cast<std::size_t>(p_count), -1);
  for (std::size_t g = 0; g < assignment.per_target.size(); ++g) {
    for (const Index p : assignment.per_target[g]) {
      cls[static_cast<std::size_t>(p)] = targets.labels[g];
    }
  }
  return cls;
}

Value matched_loss(const TracedPrediction& pred, const TargetSet& targets,
                   const Assignment& assignment, const LossWeights& weights) {
  const Index p_count = pred.class_scores->val.rows();
  if (assignment.prediction_count != p_count) {
    throw InvalidInputError("supervised_loss: assignment does not match prediction count");
  }
  if (static_cast<Index>(assignment.per_target.size()) != targets.count()) {
    throw InvalidInputError("supervised_loss: assignment does not match target count");
  }

  Value loss = class_loss(pred.class_scores, target_class_of(assignment, targets, p_count));

  Index pairs = 0;
  Value box_sum;
  Value mask_sum;
  for (std::size_t g = 0; g < assignment.per_target.size(); ++g) {
    const Vec4 tbox = targets.boxes.row(static_cast<Index>(g)).transpose();
    for (const Index p : assignment.per_target[g]) {
      Value pbox = ad::rows(pred.boxes, {p});
      Value pmask = ad::rows(pred.masks, {p});
      Value b = box_loss(pbox, tbox);
      Value m = mask_loss(pmask, targets.masks.row(static_cast<Index>(g)));
      box_sum = box_sum ? ad::add(box_sum, b) : b;
      mask_sum = mask_sum ? ad::add(mask_sum, m) : m;
      ++pairs;
    }
  }
  if (pairs > 0) {
    const Scalar norm = 1.0 / static_cast<Scalar>(pairs);
    loss = ad::add(loss, ad::scale(box_sum, weights.lambda1 * norm));
    loss = ad::add(loss, ad::scale(mask_sum, weights.lambda2 * norm));
  }
  return loss;
}

}  // namespace

Value supervised_loss(const TracedPrediction& pred, const TargetSet& targets,
                      const Assignment& assignment, const LossWeights& weights) {
  return matched_loss(pred, targets, assignment, weights);
}

Value unsupervised_loss(const TracedPrediction& strong_pred, const TargetSet& pseudo_targets,
                        const Assignment& assignment, const LossWeights& weights) {
  return matched_loss(strong_pred, pseudo_targets, assignment, weights);
}

Scalar box_l1_giou(const Vec4& a, const Vec4& b) {
  const Scalar l1 = (a - b).cwiseAbs().mean();
  const Scalar giou = box_giou(BBox(a(0), a(1), a(2), a(3)), BBox(b(0), b(1), b(2), b(3)));
  return l1 + (1.0 - giou);
}

Scalar soft_dice_cost(const Eigen::Ref<const Mat>& pred_row,
                      const Eigen::Ref<const Mat>& target_row) {
  constexpr Scalar kDiceSmooth = 1.0;
  const Scalar num = 2.0 * pred_row.cwiseProduct(target_row).sum() + kDiceSmooth;
  const Scalar den = pred_row.sum() + target_row.sum() + kDiceSmooth;
  return 1.0 - num / den;
}

Mat association_scores(const Mat& z1, const Mat& z2) {
  if (z1.rows() < 1 || z2.rows() < 1) {
    throw InvalidInputError("association_scores: need at least one embedding per frame");
  }
  if (z1.cols() != z2.cols()) {
    throw InvalidInputError("association_scores: embedding dimensions differ");
  }
  if (!z1.allFinite() || !z2.allFinite()) {
    throw InvalidInputError("association_scores: non-finite embeddings");
  }
  const Mat sims = z1 * z2.transpose();  // (N, M)
  const Index n = sims.rows(), m = sims.cols();

  Mat forward(n, m), reverse(n, m);
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = sims.row(i).maxCoeff();
    const Eigen::ArrayXd e = (sims.row(i).array() - mx).exp();
    forward.row(i) = (e / e.sum()).matrix();
  }
  for (Index j = 0; j < m; ++j) {
    const Scalar mx = sims.col(j).maxCoeff();
    const Eigen::ArrayXd e = (sims.col(j).array() - mx).exp();
    reverse.col(j) = (e / e.sum()).matrix();
  }
  return 0.5 * (forward + reverse);
}

std::optional<Index> positive_match(const Mat& f, Index i) {
  if (i < 0 || i >= f.rows()) throw InvalidInputError("positive_match: row out of range");
  if (f.cols() == 0) return std::nullopt;
  Index best = 0;
  for (Index j = 1; j < f.cols(); ++j) {
    if (f(i, j) > f(i, best)) best = j;
  }
  if (!(f(i, best) > 0.5)) return std::nullopt;
  return best;
}

Value embed_loss(const Value& anchor, const Value& positives, const Value& negatives,
                 PositiveAggregation agg) {
  if (anchor->val.rows() != 1) throw InvalidInputError("embed_loss: anchor must be one row");
  const Index np = positives->val.rows();
  const Index nn = negatives->val.rows();
  if (np == 0) return ad::scalar(0.0);

  Value s_pos = ad::matmul(anchor, ad::transpose(positives));  // (1, np)
  Value lse_neg;
  if (nn > 0) {
    Value s_neg = ad::matmul(anchor, ad::transpose(negatives));
    lse_neg = ad::logsumexp_rows(s_neg);
  }

  if (agg == PositiveAggregation::numerator_sum) {
    Value lse_pos = ad::logsumexp_rows(s_pos);
    if (!lse_neg) return ad::scalar(0.0);  // ratio is exactly 1
    Value lse_all = ad::logaddexp(lse_pos, lse_neg);
    return ad::sub(lse_all, lse_pos);
  }

  // per-positive mean: average of -log(exp(s_k) / (exp(s_k) + sum_neg)).
  Value acc;
  for (Index k = 0; k < np; ++k) {
    Mat selector = Mat::Zero(s_pos->val.cols(), 1);
    selector(k, 0) = 1.0;
    Value s_k = ad::matmul(s_pos, ad::constant(std::move(selector)));
    Value term;
    if (lse_neg) {
      term = ad::sub(ad::logaddexp(s_k, lse_neg), s_k);
    } else {
      term = ad::scalar(0.0);
    }
    acc = acc ? ad::add(acc, term) : term;
  }
  return ad::scale(acc, 1.0 / static_cast<Scalar>(np));
}

Value total_loss(const std::vector<SampleLossTerms>& samples, const LossWeights& weights) {
  Value total = ad::scalar(0.0);
  for (const auto& s : samples) {
    if (s.labeled && s.supervised) total = ad::add(total, s.supervised);
    if (s.embedding) total = ad::add(total, ad::scale(s.embedding, weights.lambda3));
    if (!s.labeled && s.unsupervised) {
      total = ad::add(total, ad::scale(s.unsupervised, weights.lambda4));
    }
  }
  return total;
}

}  // namespace pseqseg
