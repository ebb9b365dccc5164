#include "pseqseg/autograd.hpp"
#include "pseqseg/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace pseqseg;
using ad::Value;

namespace {

Mat random_mat(Rng& rng, Index r, Index c, Scalar lo = -1.0, Scalar hi = 1.0) {
  Mat m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

// Central finite differences on a scalar-valued graph builder.
void check_gradient(const std::function<Value(const std::vector<Value>&)>& fn,
                    std::vector<Mat> inputs, Scalar step = 1e-5, Scalar tol = 1e-6) {
  std::vector<Value> leaves;
  for (const auto& m : inputs) leaves.push_back(ad::leaf(m, true));
  Value out = fn(leaves);
  ad::backward(out);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].rows(); ++i) {
      for (Index j = 0; j < inputs[k].cols(); ++j) {
        auto eval = [&](Scalar delta) {
          std::vector<Value> probe;
          for (std::size_t kk = 0; kk < inputs.size(); ++kk) {
            Mat m = inputs[kk];
            if (kk == k) m(i, j) += delta;
            probe.push_back(ad::leaf(std::move(m), false));
          }
          return ad::item(fn(probe));
        };
        const Scalar fd = (eval(step) - eval(-step)) / (2 * step);
        const Scalar analytic = leaves[k]->grad.size() ? leaves[k]->grad(i, j) : 0.0;
        const Scalar err = std::abs(fd - analytic) / std::max<Scalar>(1.0, std::abs(fd));
        CHECK(err < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("elementwise and matmul gradients") {
  Rng rng(1);
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::mul(ad::add(in[0], in[1]), ad::sub(in[0], in[1])));
      },
      {random_mat(rng, 3, 4), random_mat(rng, 3, 4)});

  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::matmul(in[0], in[1])); },
      {random_mat(rng, 3, 5), random_mat(rng, 5, 2)});

  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::mean(ad::square(ad::matmul(in[0], ad::transpose(in[1]))));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 2, 3)});
}

TEST_CASE("broadcast op gradients") {
  Rng rng(2);
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::add_rowvec(in[0], in[1])));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 1, 3)});
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::add_colvec(in[0], in[1])));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 4, 1)});
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::mul_colvec(in[0], in[1])));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 4, 1)});
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::add_broadcast(in[0], in[1])));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 1, 1)});
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::vcat(in[0], in[1])));
      },
      {random_mat(rng, 2, 3), random_mat(rng, 4, 3)});
}

TEST_CASE("nonlinearity gradients") {
  Rng rng(3);
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::sigmoid(in[0])); },
      {random_mat(rng, 3, 3, -3, 3)});
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::exp_(in[0])); },
      {random_mat(rng, 3, 3)});
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::log_(in[0])); },
      {random_mat(rng, 3, 3, 0.2, 2.0)});
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::pow_(in[0], -1.0)); },
      {random_mat(rng, 3, 3, 0.5, 2.0)});
  // relu and abs away from their kinks
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::relu(in[0])); },
      {random_mat(rng, 3, 3, 0.2, 2.0)});
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::abs_(in[0])); },
      {random_mat(rng, 3, 3, 0.3, 2.0)});
}

TEST_CASE("softmax and logsumexp gradients") {
  Rng rng(4);
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::softmax_rows(in[0])));
      },
      {random_mat(rng, 3, 5, -2, 2)});
  check_gradient(
      [](const std::vector<Value>& in) { return ad::sum(ad::logsumexp_rows(in[0])); },
      {random_mat(rng, 4, 6, -2, 2)});
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::logaddexp(ad::sum(in[0]), ad::sum(in[1]));
      },
      {random_mat(rng, 1, 1), random_mat(rng, 1, 1)});
}

TEST_CASE("row gather gradient") {
  Rng rng(5);
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::rows(in[0], {2, 0, 2})));
      },
      {random_mat(rng, 4, 3)});
}

TEST_CASE("conv2d matches direct convolution and its gradient") {
  Rng rng(6);
  ad::ConvGeom g{2, 5, 6, 3, 3, 2, 1};
  const Mat x = random_mat(rng, 2, 30);
  const Mat w = random_mat(rng, 3, 18);
  const Mat b = random_mat(rng, 3, 1);

  // Direct evaluation oracle.
  Value out = ad::conv2d(ad::leaf(x, false), ad::leaf(w, false), ad::leaf(b, false), g);
  const int oh = g.out_h(), ow = g.out_w();
  REQUIRE(out->val.rows() == 3);
  REQUIRE(out->val.cols() == oh * ow);
  for (int oc = 0; oc < 3; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        Scalar acc = b(oc, 0);
        for (int ic = 0; ic < 2; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
              acc += w(oc, (ic * 3 + ky) * 3 + kx) * x(ic, iy * 6 + ix);
            }
          }
        }
        CHECK(out->val(oc, oy * ow + ox) == doctest::Approx(acc));
      }
    }
  }

  check_gradient(
      [&](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::conv2d(in[0], in[1], in[2], g)));
      },
      {x, w, b}, 1e-5, 1e-5);
}

TEST_CASE("upsample_bilinear gradient and integer-factor identity") {
  Rng rng(7);
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::upsample_bilinear(in[0], 3, 4, 7, 9)));
      },
      {random_mat(rng, 2, 12)});

  // Factor-1 upsample is the identity.
  const Mat x = random_mat(rng, 2, 12);
  Value same = ad::upsample_bilinear(ad::leaf(x, false), 3, 4, 3, 4);
  CHECK((same->val - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("boxes_from_cxcywh stays ordered inside the unit square") {
  Rng rng(8);
  const Mat p = random_mat(rng, 10, 4, 0.01, 0.99);
  Value boxes = ad::boxes_from_cxcywh(ad::leaf(p, false));
  for (Index i = 0; i < 10; ++i) {
    CHECK(boxes->val(i, 0) >= 0.0);
    CHECK(boxes->val(i, 1) >= 0.0);
    CHECK(boxes->val(i, 2) <= 1.0);
    CHECK(boxes->val(i, 3) <= 1.0);
    CHECK(boxes->val(i, 0) < boxes->val(i, 2));
    CHECK(boxes->val(i, 1) < boxes->val(i, 3));
  }
  check_gradient(
      [](const std::vector<Value>& in) {
        return ad::sum(ad::square(ad::boxes_from_cxcywh(in[0])));
      },
      {p});
}

TEST_CASE("backward accumulates through shared subgraphs") {
  // f(x) = sum(x*x) used twice: grad should double.
  const Mat x = Mat::Constant(2, 2, 3.0);
  Value leaf = ad::leaf(x, true);
  Value sq = ad::mul(leaf, leaf);
  Value out = ad::add(ad::sum(sq), ad::sum(sq));
  ad::backward(out);
  CHECK(leaf->grad(0, 0) == doctest::Approx(12.0));
}
