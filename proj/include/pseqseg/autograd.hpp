#pragma once

#include "pseqseg/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace pseqseg::ad {

// Reverse-mode automatic differentiation over dense Eigen matrices.
// Values are shared nodes of an implicit DAG; backward() releases gradients
// to every leaf created with needs_grad = true. Graphs are independent, so
// distinct computations can run on separate threads.
struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
  Mat val;
  Mat grad;  // empty until touched by backward
  bool needs_grad = false;
  std::vector<Value> parents;
  std::function<void(Node&)> backward_fn;

  void add_grad(const Eigen::Ref<const Mat>& g);
};

Value constant(Mat v);
Value leaf(Mat v, bool needs_grad);
inline Value scalar(Scalar s) { return constant(Mat::Constant(1, 1, s)); }

// The scalar held by a 1x1 value.
Scalar item(const Value& v);

// Runs reverse accumulation from a 1x1 root.
void backward(const Value& root);

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);  // elementwise
Value scale(const Value& a, Scalar s);
Value add_scalar(const Value& a, Scalar s);
// a (N,M) + bias (1,M) broadcast over rows.
Value add_rowvec(const Value& a, const Value& bias);
// a (N,M) + bias (N,1) broadcast over columns.
Value add_colvec(const Value& a, const Value& bias);
// Broadcast multiply of every column of a (N,M) by s (N,1).
Value mul_colvec(const Value& a, const Value& s);

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value rows(const Value& a, const std::vector<Index>& idx);

Value relu(const Value& a);
Value sigmoid(const Value& a);
Value exp_(const Value& a);
Value log_(const Value& a);
Value abs_(const Value& a);
Value square(const Value& a);
Value pow_(const Value& a, Scalar p);  // elementwise, a > 0 expected for non-integer p
// Clamp with pass-through gradient inside (lo, hi) and zero outside.
Value clamp(const Value& a, Scalar lo, Scalar hi);

Value sum(const Value& a);   // -> 1x1
Value mean(const Value& a);  // -> 1x1
Value softmax_rows(const Value& a);
Value logsumexp_rows(const Value& a);  // (N,M) -> (N,1)
Value logaddexp(const Value& a, const Value& b);  // 1x1 op
// a + s broadcast, where s is a 1x1 value.
Value add_broadcast(const Value& a, const Value& s);
// Stacks a over b; both must share a column count.
Value vcat(const Value& a, const Value& b);

struct ConvGeom {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, kernel = 3, stride = 1, pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

// x: (in_c, in_h*in_w), w: (out_c, in_c*k*k), b: (out_c, 1) ->
// (out_c, out_h*out_w). Zero padding, row-major pixel flattening.
Value conv2d(const Value& x, const Value& w, const Value& b, const ConvGeom& geom);

// Rows of x are flattened (in_h x in_w) maps; each is bilinearly resized to
// (out_h x out_w). Same sample-point convention as resize_bilinear.
Value upsample_bilinear(const Value& x, int in_h, int in_w, int out_h, int out_w);

// p: (P,4) with columns (cx, cy, w, h) in (0,1) -> corner boxes
// (x0, y0, x1, y1) with x0 = cx*(1-w), x1 = x0 + w (and same for y), which
// keeps corners ordered and inside [0,1].
Value boxes_from_cxcywh(const Value& p);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }

}  // namespace pseqseg::ad
