#include "pseqseg/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pseqseg {

CostMatrix pairwise_cost(const PredictionBatch& preds, const TargetSet& targets,
                         const LossWeights& weights) {
  const Index p_count = preds.count();
  const Index g_count = targets.count();
  CostMatrix out;
  out.class_cost = Mat::Zero(p_count, g_count);
  out.box_cost = Mat::Zero(p_count, g_count);
  out.mask_cost = Mat::Zero(p_count, g_count);
  for (Index g = 0; g < g_count; ++g) {
    const int label = targets.labels[static_cast<std::size_t>(g)];
    if (label < 0 || label >= preds.class_scores.cols()) {
      throw InvalidInputError("pairwise_cost: target label out of range");
    }
    const Vec4 tbox = targets.boxes.row(g).transpose();
    for (Index p = 0; p < p_count; ++p) {
      out.class_cost(p, g) = 1.0 - preds.class_scores(p, label);
      out.box_cost(p, g) = box_l1_giou(preds.boxes.row(p).transpose(), tbox);
      out.mask_cost(p, g) = soft_dice_cost(preds.masks.row(p), targets.masks.row(g));
    }
  }
  out.values = out.class_cost + weights.lambda1 * out.box_cost + weights.lambda2 * out.mask_cost;
  return out;
}

namespace {

// Demands per target: k each when supply allows, otherwise an even split of
// the available predictions (earlier targets get the remainder).
std::vector<Index> target_demands(Index p_count, Index g_count, int k) {
  std::vector<Index> demand(static_cast<std::size_t>(g_count), k);
  if (static_cast<Index>(k) * g_count <= p_count) return demand;
  const Index base = p_count / g_count;
  const Index rem = p_count % g_count;
  for (Index g = 0; g < g_count; ++g) {
    demand[static_cast<std::size_t>(g)] = std::min<Index>(k, base + (g < rem ? 1 : 0));
  }
  return demand;
}

Scalar logsumexp(const Vec& v) {
  const Scalar m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

struct HardAssignment {
  std::vector<Index> column_of;  // per prediction: target index or -1 (sink)
};

// Improving-move polish: swaps of two predictions' columns plus rotations of
// three, which covers the elementary cycles of these small transportation
// instances.
void polish(HardAssignment& h, const Mat& cost) {
  const Index p_count = cost.rows();
  auto cell = [&](Index p, Index g) -> Scalar { return g >= 0 ? cost(p, g) : 0.0; };
  bool improved = true;
  int sweeps = 0;
  while (improved && sweeps++ < 50) {
    improved = false;
    for (Index a = 0; a < p_count; ++a) {
      for (Index b = a + 1; b < p_count; ++b) {
        const Index ga = h.column_of[a], gb = h.column_of[b];
        if (ga == gb) continue;
        const Scalar delta = cell(a, gb) + cell(b, ga) - cell(a, ga) - cell(b, gb);
        if (delta < -1e-12) {
          std::swap(h.column_of[a], h.column_of[b]);
          improved = true;
        }
      }
    }
    for (Index a = 0; a < p_count; ++a) {
      for (Index b = 0; b < p_count; ++b) {
        if (b == a) continue;
        for (Index c = 0; c < p_count; ++c) {
          if (c == a || c == b) continue;
          const Index ga = h.column_of[a], gb = h.column_of[b], gc = h.column_of[c];
          if (ga == gb || gb == gc || ga == gc) continue;
          // rotate a->gb, b->gc, c->ga
          const Scalar delta = cell(a, gb) + cell(b, gc) + cell(c, ga) - cell(a, ga) -
                               cell(b, gb) - cell(c, gc);
          if (delta < -1e-12) {
            const Index tmp = h.column_of[a];
            h.column_of[a] = h.column_of[b];
            h.column_of[b] = h.column_of[c];
            h.column_of[c] = tmp;
            improved = true;
          }
        }
      }
    }
  }
}

}  // namespace

Assignment ot_assign(const Mat& cost, int k_per_target) {
  if (k_per_target < 1) throw InvalidInputError("ot_assign: k_per_target must be >= 1");
  if (!cost.allFinite()) throw InvalidInputError("ot_assign: non-finite cost");
  const Index p_count = cost.rows();
  const Index g_count = cost.cols();

  Assignment out;
  out.prediction_count = p_count;
  out.per_target.assign(static_cast<std::size_t>(g_count), {});
  if (p_count == 0) return out;
  if (g_count == 0) {
    out.background.resize(static_cast<std::size_t>(p_count));
    std::iota(out.background.begin(), out.background.end(), Index{0});
    return out;
  }

  const std::vector<Index> demand = target_demands(p_count, g_count, k_per_target);
  const Index assigned_total = std::accumulate(demand.begin(), demand.end(), Index{0});
  const Index sink_demand = p_count - assigned_total;

  // Columns: targets plus a zero-cost sink (omitted when its demand is 0).
  const bool has_sink = sink_demand > 0;
  const Index cols = g_count + (has_sink ? 1 : 0);
  Mat c(p_count, cols);
  c.leftCols(g_count) = cost;
  if (has_sink) c.col(g_count).setZero();
  Vec log_demand(cols);
  for (Index g = 0; g < g_count; ++g) log_demand(g) = std::log(static_cast<Scalar>(demand[g]));
  if (has_sink) log_demand(g_count) = std::log(static_cast<Scalar>(sink_demand));

  // Log-domain Sinkhorn with epsilon annealing; potentials warm-start levels.
  const Scalar scale = std::max<Scalar>(1e-12, c.array().abs().mean());
  constexpr Scalar kTol = 1e-6;
  constexpr int kMaxIters = 1000;
  Scalar eps = 0.05 * scale;
  const Scalar eps_final = 1e-8 * scale;
  Vec f = Vec::Zero(p_count), g_pot = Vec::Zero(cols);
  int iters = 0;
  while (iters < kMaxIters) {
    const bool last_level = eps <= eps_final;
    // Inner loop at this temperature.
    for (; iters < kMaxIters; ++iters) {
      for (Index j = 0; j < cols; ++j) {
        Vec col = (f.array() - c.col(j).array()) / eps;
        g_pot(j) = eps * (log_demand(j) - logsumexp(col));
      }
      for (Index i = 0; i < p_count; ++i) {
        Vec row = (g_pot.array() - c.row(i).transpose().array()) / eps;
        f(i) = -eps * logsumexp(row);  // log supply = log 1 = 0
      }
      // Rows are exact after the f-update; measure column drift.
      Scalar err = 0;
      for (Index j = 0; j < cols; ++j) {
        Vec col = (f.array() + g_pot(j) - c.col(j).array()) / eps;
        const Scalar mass = std::exp(logsumexp(col));
        err = std::max(err, std::abs(mass - std::exp(log_demand(j))) /
                                std::exp(log_demand(j)));
      }
      if (err < kTol) break;
    }
    if (last_level) break;
    eps = std::max(eps * 0.5, eps_final);
  }

  // Plan mass, rounded greedily by descending mass subject to demands.
  Mat plan(p_count, cols);
  for (Index i = 0; i < p_count; ++i) {
    for (Index j = 0; j < cols; ++j) plan(i, j) = (f(i) + g_pot(j) - c(i, j)) / eps;
  }
  struct Cell {
    Index p, g;
    Scalar mass;
    Scalar cost;
  };
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(p_count) * g_count);
  for (Index i = 0; i < p_count; ++i) {
    for (Index j = 0; j < g_count; ++j) cells.push_back({i, j, plan(i, j), cost(i, j)});
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });

  HardAssignment hard;
  hard.column_of.assign(static_cast<std::size_t>(p_count), -1);
  std::vector<Index> remaining = demand;
  std::vector<bool> taken(static_cast<std::size_t>(p_count), false);
  Index placed = 0;
  for (const auto& cell : cells) {
    if (placed == assigned_total) break;
    if (taken[static_cast<std::size_t>(cell.p)]) continue;
    if (remaining[static_cast<std::size_t>(cell.g)] == 0) continue;
    taken[static_cast<std::size_t>(cell.p)] = true;
    hard.column_of[static_cast<std::size_t>(cell.p)] = cell.g;
    --remaining[static_cast<std::size_t>(cell.g)];
    ++placed;
  }

  polish(hard, cost);

  for (Index p = 0; p < p_count; ++p) {
    const Index g = hard.column_of[static_cast<std::size_t>(p)];
    if (g >= 0) {
      out.per_target[static_cast<std::size_t>(g)].push_back(p);
    } else {
      out.background.push_back(p);
    }
  }
  return out;
}

Assignment ot_assign(const CostMatrix& cost, int k_per_target) {
  return ot_assign(cost.values, k_per_target);
}

ViewSplit select_views(const Assignment& assignment, const Mat& cost, int per_target_cap) {
  if (per_target_cap < 0) throw InvalidInputError("select_views: negative cap");
  if (cost.rows() != assignment.prediction_count ||
      static_cast<std::size_t>(cost.cols()) != assignment.per_target.size()) {
    throw InvalidInputError("select_views: cost shape does not match assignment");
  }
  ViewSplit out;
  out.positives.resize(assignment.per_target.size());
  std::vector<bool> is_positive(static_cast<std::size_t>(assignment.prediction_count), false);
  for (std::size_t g = 0; g < assignment.per_target.size(); ++g) {
    std::vector<Index> ids = assignment.per_target[g];
    std::sort(ids.begin(), ids.end(), [&](Index a, Index b) {
      const Scalar ca = cost(a, static_cast<Index>(g)), cb = cost(b, static_cast<Index>(g));
      if (ca != cb) return ca < cb;
      return a < b;
    });
    if (static_cast<int>(ids.size()) > per_target_cap) ids.resize(per_target_cap);
    for (const Index p : ids) is_positive[static_cast<std::size_t>(p)] = true;
    out.positives[g] = std::move(ids);
  }
  for (Index p = 0; p < assignment.prediction_count; ++p) {
    if (!is_positive[static_cast<std::size_t>(p)]) out.negatives.push_back(p);
  }
  return out;
}

std::vector<Index> multi_label_match(const std::vector<ScoredBox>& preds, Scalar iou_thresh) {
  const Index n = static_cast<Index>(preds.size());
  std::vector<Index> order(preds.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    return a < b;
  });

  std::vector<bool> processed(preds.size(), false);
  std::vector<bool> keep(preds.size(), false);
  for (Index oi = 0; oi < n; ++oi) {
    const Index seed = order[static_cast<std::size_t>(oi)];
    if (processed[static_cast<std::size_t>(seed)]) continue;
    processed[static_cast<std::size_t>(seed)] = true;
    keep[static_cast<std::size_t>(seed)] = true;
    const int dominant = preds[static_cast<std::size_t>(seed)].label;
    for (Index oj = oi + 1; oj < n; ++oj) {
      const Index m = order[static_cast<std::size_t>(oj)];
      if (processed[static_cast<std::size_t>(m)]) continue;
      if (box_iou_pixel(preds[static_cast<std::size_t>(seed)].box,
                        preds[static_cast<std::size_t>(m)].box) > iou_thresh) {
        processed[static_cast<std::size_t>(m)] = true;
        keep[static_cast<std::size_t>(m)] = preds[static_cast<std::size_t>(m)].label == dominant;
      }
    }
  }

  std::vector<Index> retained;
  for (Index i = 0; i < n; ++i) {
    if (keep[static_cast<std::size_t>(i)]) retained.push_back(i);
  }
  return retained;
}

}  // namespace pseqseg
