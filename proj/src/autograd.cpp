#include "pseqseg/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace pseqseg::ad {

void Node::add_grad(const Eigen::Ref<const Mat>& g) {
  if (grad.size() == 0) {
    grad = Mat::Zero(val.rows(), val.cols());
  }
  grad += g;
}

Value constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  return n;
}

Value leaf(Mat v, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->needs_grad = needs_grad;
  return n;
}

Scalar item(const Value& v) {
  if (v->val.size() != 1) throw InvalidInputError("item: value is not 1x1");
  return v->val(0, 0);
}

namespace {

Value make_op(Mat val, std::vector<Value> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (const auto& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
  n->parents = std::move(parents);
  if (n->needs_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols()) {
    throw InvalidInputError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

void backward(const Value& root) {
  if (root->val.size() != 1) throw InvalidInputError("backward: root must be 1x1");
  if (!root->needs_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Mat::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  return make_op(a->val + b->val, {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  return make_op(a->val - b->val, {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(-n.grad);
  });
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  return make_op(a->val.cwiseProduct(b->val), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad.cwiseProduct(n.parents[1]->val));
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.grad.cwiseProduct(n.parents[0]->val));
  });
}

Value scale(const Value& a, Scalar s) {
  return make_op(a->val * s, {a}, [s](Node& n) { n.parents[0]->add_grad(n.grad * s); });
}

Value add_scalar(const Value& a, Scalar s) {
  return make_op(a->val.array() + s, {a}, [](Node& n) { n.parents[0]->add_grad(n.grad); });
}

Value add_rowvec(const Value& a, const Value& bias) {
  if (bias->val.rows() != 1 || bias->val.cols() != a->val.cols()) {
    throw InvalidInputError("add_rowvec: bias must be 1 x cols(a)");
  }
  Mat out = a->val;
  out.rowwise() += bias->val.row(0);
  return make_op(std::move(out), {a, bias}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.grad.colwise().sum());
  });
}

Value add_colvec(const Value& a, const Value& bias) {
  if (bias->val.cols() != 1 || bias->val.rows() != a->val.rows()) {
    throw InvalidInputError("add_colvec: bias must be rows(a) x 1");
  }
  Mat out = a->val;
  out.colwise() += bias->val.col(0);
  return make_op(std::move(out), {a, bias}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.grad.rowwise().sum());
  });
}

Value mul_colvec(const Value& a, const Value& s) {
  if (s->val.cols() != 1 || s->val.rows() != a->val.rows()) {
    throw InvalidInputError("mul_colvec: scale must be rows(a) x 1");
  }
  Mat out = a->val.array().colwise() * s->val.col(0).array();
  return make_op(std::move(out), {a, s}, [](Node& n) {
    if (n.parents[0]->needs_grad) {
      n.parents[0]->add_grad(n.grad.array().colwise() * n.parents[1]->val.col(0).array());
    }
    if (n.parents[1]->needs_grad) {
      n.parents[1]->add_grad(n.grad.cwiseProduct(n.parents[0]->val).rowwise().sum());
    }
  });
}

Value matmul(const Value& a, const Value& b) {
  if (a->val.cols() != b->val.rows()) throw InvalidInputError("matmul: inner dims differ");
  return make_op(a->val * b->val, {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad * n.parents[1]->val.transpose());
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.parents[0]->val.transpose() * n.grad);
  });
}

Value transpose(const Value& a) {
  return make_op(a->val.transpose(), {a},
                 [](Node& n) { n.parents[0]->add_grad(n.grad.transpose()); });
}

Value rows(const Value& a, const std::vector<Index>& idx) {
  Mat out(static_cast<Index>(idx.size()), a->val.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a->val.rows()) throw InvalidInputError("rows: index out of range");
    out.row(static_cast<Index>(i)) = a->val.row(idx[i]);
  }
  auto indices = idx;
  return make_op(std::move(out), {a}, [indices](Node& n) {
    Mat g = Mat::Zero(n.parents[0]->val.rows(), n.parents[0]->val.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      g.row(indices[i]) += n.grad.row(static_cast<Index>(i));
    }
    n.parents[0]->add_grad(g);
  });
}

Value relu(const Value& a) {
  return make_op(a->val.cwiseMax(0.0), {a}, [](Node& n) {
    const Mat mask = (n.parents[0]->val.array() > 0.0).cast<Scalar>();
    n.parents[0]->add_grad(n.grad.cwiseProduct(mask));
  });
}

Value sigmoid(const Value& a) {
  Mat out = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
  return make_op(std::move(out), {a}, [](Node& n) {
    const auto y = n.val.array();
    n.parents[0]->add_grad((n.grad.array() * y * (1.0 - y)).matrix());
  });
}

Value exp_(const Value& a) {
  Mat out = a->val.array().exp().matrix();
  return make_op(std::move(out), {a}, [](Node& n) {
    n.parents[0]->add_grad(n.grad.cwiseProduct(n.val));
  });
}

Value log_(const Value& a) {
  Mat out = a->val.array().log().matrix();
  return make_op(std::move(out), {a}, [](Node& n) {
    n.parents[0]->add_grad((n.grad.array() / n.parents[0]->val.array()).matrix());
  });
}

Value abs_(const Value& a) {
  Mat out = a->val.array().abs().matrix();
  return make_op(std::move(out), {a}, [](Node& n) {
    const Mat sign = n.parents[0]->val.array().sign().matrix();
    n.parents[0]->add_grad(n.grad.cwiseProduct(sign));
  });
}

Value square(const Value& a) {
  Mat out = a->val.array().square().matrix();
  return make_op(std::move(out), {a}, [](Node& n) {
    n.parents[0]->add_grad((n.grad.array() * 2.0 * n.parents[0]->val.array()).matrix());
  });
}

Value pow_(const Value& a, Scalar p) {
  Mat out = a->val.array().pow(p).matrix();
  return make_op(std::move(out), {a}, [p](Node& n) {
    n.parents[0]->add_grad((n.grad.array() * p * n.parents[0]->val.array().pow(p - 1.0)).matrix());
  });
}

Value clamp(const Value& a, Scalar lo, Scalar hi) {
  Mat out = a->val.cwiseMax(lo).cwiseMin(hi);
  return make_op(std::move(out), {a}, [lo, hi](Node& n) {
    const auto x = n.parents[0]->val.array();
    const Mat inside = ((x >= lo) && (x <= hi)).cast<Scalar>();
    n.parents[0]->add_grad(n.grad.cwiseProduct(inside));
  });
}

Value sum(const Value& a) {
  return make_op(Mat::Constant(1, 1, a->val.sum()), {a}, [](Node& n) {
    n.parents[0]->add_grad(
        Mat::Constant(n.parents[0]->val.rows(), n.parents[0]->val.cols(), n.grad(0, 0)));
  });
}

Value mean(const Value& a) {
  const Scalar inv = 1.0 / static_cast<Scalar>(a->val.size());
  return make_op(Mat::Constant(1, 1, a->val.mean()), {a}, [inv](Node& n) {
    n.parents[0]->add_grad(Mat::Constant(n.parents[0]->val.rows(), n.parents[0]->val.cols(),
                                         n.grad(0, 0) * inv));
  });
}

Value softmax_rows(const Value& a) {
  Mat out(a->val.rows(), a->val.cols());
  for (Index i = 0; i < a->val.rows(); ++i) {
    const Scalar m = a->val.row(i).maxCoeff();
    Eigen::ArrayXd e = (a->val.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    Mat g(n.val.rows(), n.val.cols());
    for (Index i = 0; i < n.val.rows(); ++i) {
      const auto y = n.val.row(i).array();
      const auto dy = n.grad.row(i).array();
      const Scalar dot = (y * dy).sum();
      g.row(i) = (y * (dy - dot)).matrix();
    }
    n.parents[0]->add_grad(g);
  });
}

Value logsumexp_rows(const Value& a) {
  Mat out(a->val.rows(), 1);
  for (Index i = 0; i < a->val.rows(); ++i) {
    const Scalar m = a->val.row(i).maxCoeff();
    out(i, 0) = m + std::log((a->val.row(i).array() - m).exp().sum());
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    Mat g(n.parents[0]->val.rows(), n.parents[0]->val.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      g.row(i) = ((n.parents[0]->val.row(i).array() - n.val(i, 0)).exp() * n.grad(i, 0)).matrix();
    }
    n.parents[0]->add_grad(g);
  });
}

Value logaddexp(const Value& a, const Value& b) {
  if (a->val.size() != 1 || b->val.size() != 1) throw InvalidInputError("logaddexp: inputs must be 1x1");
  const Scalar x = a->val(0, 0), y = b->val(0, 0);
  const Scalar m = std::max(x, y);
  const Scalar out = m + std::log(std::exp(x - m) + std::exp(y - m));
  return make_op(Mat::Constant(1, 1, out), {a, b}, [](Node& n) {
    const Scalar o = n.val(0, 0), g = n.grad(0, 0);
    if (n.parents[0]->needs_grad) {
      n.parents[0]->add_grad(Mat::Constant(1, 1, g * std::exp(n.parents[0]->val(0, 0) - o)));
    }
    if (n.parents[1]->needs_grad) {
      n.parents[1]->add_grad(Mat::Constant(1, 1, g * std::exp(n.parents[1]->val(0, 0) - o)));
    }
  });
}

Value add_broadcast(const Value& a, const Value& s) {
  if (s->val.size() != 1) throw InvalidInputError("add_broadcast: s must be 1x1");
  Mat out = a->val.array() + s->val(0, 0);
  return make_op(std::move(out), {a, s}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(Mat::Constant(1, 1, n.grad.sum()));
  });
}

Value vcat(const Value& a, const Value& b) {
  if (a->val.cols() != b->val.cols()) throw InvalidInputError("vcat: column mismatch");
  Mat out(a->val.rows() + b->val.rows(), a->val.cols());
  out.topRows(a->val.rows()) = a->val;
  out.bottomRows(b->val.rows()) = b->val;
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Index ra = n.parents[0]->val.rows();
    if (n.parents[0]->needs_grad) n.parents[0]->add_grad(n.grad.topRows(ra));
    if (n.parents[1]->needs_grad) {
      n.parents[1]->add_grad(n.grad.bottomRows(n.grad.rows() - ra));
    }
  });
}

namespace {

// Column of the im2col matrix holds the (c, ky, kx)-ordered patch for one
// output pixel; pixels are flattened row-major.
Mat im2col(const Mat& x, const ConvGeom& g) {
  const int oh = g.out_h(), ow = g.out_w();
  Mat cols = Mat::Zero(static_cast<Index>(g.in_c) * g.kernel * g.kernel,
                       static_cast<Index>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Index col = static_cast<Index>(oy) * ow + ox;
      Index r = 0;
      for (int c = 0; c < g.in_c; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride + ky - g.pad;
          for (int kx = 0; kx < g.kernel; ++kx, ++r) {
            const int ix = ox * g.stride + kx - g.pad;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              cols(r, col) = x(c, static_cast<Index>(iy) * g.in_w + ix);
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(Mat& dx, const Mat& dcols, const ConvGeom& g) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Index col = static_cast<Index>(oy) * ow + ox;
      Index r = 0;
      for (int c = 0; c < g.in_c; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride + ky - g.pad;
          for (int kx = 0; kx < g.kernel; ++kx, ++r) {
            const int ix = ox * g.stride + kx - g.pad;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              dx(c, static_cast<Index>(iy) * g.in_w + ix) += dcols(r, col);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, const ConvGeom& geom) {
  if (x->val.rows() != geom.in_c || x->val.cols() != static_cast<Index>(geom.in_h) * geom.in_w) {
    throw InvalidInputError("conv2d: input shape does not match geometry");
  }
  if (w->val.rows() != geom.out_c ||
      w->val.cols() != static_cast<Index>(geom.in_c) * geom.kernel * geom.kernel) {
    throw InvalidInputError("conv2d: weight shape does not match geometry");
  }
  auto cols = std::make_shared<Mat>(im2col(x->val, geom));
  Mat out = w->val * (*cols);
  out.colwise() += b->val.col(0);
  return make_op(std::move(out), {x, w, b}, [cols, geom](Node& n) {
    if (n.parents[1]->needs_grad) n.parents[1]->add_grad(n.grad * cols->transpose());
    if (n.parents[2]->needs_grad) n.parents[2]->add_grad(n.grad.rowwise().sum());
    if (n.parents[0]->needs_grad) {
      const Mat dcols = n.parents[1]->val.transpose() * n.grad;
      Mat dx = Mat::Zero(n.parents[0]->val.rows(), n.parents[0]->val.cols());
      col2im_add(dx, dcols, geom);
      n.parents[0]->add_grad(dx);
    }
  });
}

namespace {

struct ResampleTap {
  Index src;
  Scalar weight;
};

// Four taps per output pixel (some may repeat at the borders).
std::vector<std::array<ResampleTap, 4>> bilinear_taps(int in_h, int in_w, int out_h, int out_w) {
  std::vector<std::array<ResampleTap, 4>> taps(static_cast<std::size_t>(out_h) * out_w);
  const Scalar sy = static_cast<Scalar>(in_h) / out_h;
  const Scalar sx = static_cast<Scalar>(in_w) / out_w;
  for (int v = 0; v < out_h; ++v) {
    const Scalar y = std::clamp<Scalar>((v + 0.5) * sy - 0.5, 0, in_h - 1);
    const Index y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min<Index>(y0 + 1, in_h - 1);
    const Scalar fy = y - static_cast<Scalar>(y0);
    for (int u = 0; u < out_w; ++u) {
      const Scalar x = std::clamp<Scalar>((u + 0.5) * sx - 0.5, 0, in_w - 1);
      const Index x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min<Index>(x0 + 1, in_w - 1);
      const Scalar fx = x - static_cast<Scalar>(x0);
      auto& t = taps[static_cast<std::size_t>(v) * out_w + u];
      t[0] = {y0 * in_w + x0, (1 - fy) * (1 - fx)};
      t[1] = {y0 * in_w + x1, (1 - fy) * fx};
      t[2] = {y1 * in_w + x0, fy * (1 - fx)};
      t[3] = {y1 * in_w + x1, fy * fx};
    }
  }
  return taps;
}

}  // namespace

Value upsample_bilinear(const Value& x, int in_h, int in_w, int out_h, int out_w) {
  if (x->val.cols() != static_cast<Index>(in_h) * in_w) {
    throw InvalidInputError("upsample_bilinear: row length != in_h*in_w");
  }
  auto taps = std::make_shared<std::vector<std::array<ResampleTap, 4>>>(
      bilinear_taps(in_h, in_w, out_h, out_w));
  const Index p_count = x->val.rows();
  Mat out(p_count, static_cast<Index>(out_h) * out_w);
  for (Index p = 0; p < p_count; ++p) {
    for (std::size_t o = 0; o < taps->size(); ++o) {
      Scalar acc = 0;
      for (const auto& t : (*taps)[o]) acc += t.weight * x->val(p, t.src);
      out(p, static_cast<Index>(o)) = acc;
    }
  }
  return make_op(std::move(out), {x}, [taps](Node& n) {
    Mat dx = Mat::Zero(n.parents[0]->val.rows(), n.parents[0]->val.cols());
    for (Index p = 0; p < dx.rows(); ++p) {
      for (std::size_t o = 0; o < taps->size(); ++o) {
        const Scalar g = n.grad(p, static_cast<Index>(o));
        if (g == 0.0) continue;
        for (const auto& t : (*taps)[o]) dx(p, t.src) += t.weight * g;
      }
    }
    n.parents[0]->add_grad(dx);
  });
}

Value boxes_from_cxcywh(const Value& p) {
  if (p->val.cols() != 4) throw InvalidInputError("boxes_from_cxcywh: expected (P,4)");
  const Index n_rows = p->val.rows();
  Mat out(n_rows, 4);
  for (Index i = 0; i < n_rows; ++i) {
    const Scalar cx = p->val(i, 0), cy = p->val(i, 1), w = p->val(i, 2), h = p->val(i, 3);
    out(i, 0) = cx * (1 - w);
    out(i, 1) = cy * (1 - h);
    out(i, 2) = cx * (1 - w) + w;
    out(i, 3) = cy * (1 - h) + h;
  }
  return make_op(std::move(out), {p}, [](Node& n) {
    Mat dp = Mat::Zero(n.parents[0]->val.rows(), 4);
    for (Index i = 0; i < dp.rows(); ++i) {
      const Scalar cx = n.parents[0]->val(i, 0), cy = n.parents[0]->val(i, 1);
      const Scalar w = n.parents[0]->val(i, 2), h = n.parents[0]->val(i, 3);
      const Scalar g0 = n.grad(i, 0), g1 = n.grad(i, 1), g2 = n.grad(i, 2), g3 = n.grad(i, 3);
      dp(i, 0) = (g0 + g2) * (1 - w);
      dp(i, 1) = (g1 + g3) * (1 - h);
      dp(i, 2) = -g0 * cx + g2 * (1 - cx);
      dp(i, 3) = -g1 * cy + g3 * (1 - cy);
    }
    n.parents[0]->add_grad(dp);
  });
}

}  // namespace pseqseg::ad
