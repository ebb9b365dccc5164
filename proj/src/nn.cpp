#include "pseqseg/nn.hpp"

#include <cmath>

namespace pseqseg::nn {

Mat& ParamStore::create(const std::string& name, Index rows, Index cols) {
  if (has(name)) throw InvalidInputError("ParamStore: duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.emplace_back(Mat::Zero(rows, cols));
  return values_.back();
}

Mat& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInputError("ParamStore: unknown parameter " + name);
  return values_[it->second];
}

const Mat& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInputError("ParamStore: unknown parameter " + name);
  return values_[it->second];
}

std::vector<Mat> ParamStore::zeros_like() const {
  std::vector<Mat> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(Mat::Zero(v.rows(), v.cols()));
  return out;
}

void AdamW::step(ParamStore& params, const std::vector<Mat>& grads, Scalar lr_scale) {
  if (grads.size() != params.count()) throw InvalidInputError("AdamW: gradient count mismatch");
  if (m_.empty()) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2, static_cast<Scalar>(t_));
  const Scalar lr_now = lr * lr_scale;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Mat& p = params.value(i);
    const Mat& g = grads[i];
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * g.cwiseProduct(g);
    const Mat m_hat = m_[i] / bc1;
    const Mat v_hat = v_[i] / bc2;
    p.array() -= lr_now * (m_hat.array() / (v_hat.array().sqrt() + eps) + weight_decay * p.array());
  }
}

}  // namespace pseqseg::nn
