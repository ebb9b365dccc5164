#pragma once

#include "pseqseg/autograd.hpp"
#include "pseqseg/types.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace pseqseg::nn {

// Ordered, named parameter set. Order is fixed at creation time and shared
// by gradient buffers and optimizer state.
class ParamStore {
 public:
  Mat& create(const std::string& name, Index rows, Index cols);
  Mat& get(const std::string& name);
  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t count() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat& value(std::size_t i) { return values_[i]; }
  const Mat& value(std::size_t i) const { return values_[i]; }

  std::vector<Mat> zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Adam with decoupled weight decay and StepLR-style external lr scaling.
class AdamW {
 public:
  Scalar lr = 1e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  Scalar weight_decay = 1e-4;

  void step(ParamStore& params, const std::vector<Mat>& grads, Scalar lr_scale = 1.0);

 private:
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace pseqseg::nn
