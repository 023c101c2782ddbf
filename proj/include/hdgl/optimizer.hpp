#pragma once

#include "hdgl/autodiff.hpp"

#include <unordered_map>
#include <vector>

namespace hdgl {

/// Adam without weight decay. Parameters absent from a step's gradients are
/// left untouched, moments included.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(const Gradients& grads, double lr);
  long steps() const { return t_; }

 private:
  struct Moments {
    Mat m, v;
  };
  std::vector<Parameter*> params_;
  std::unordered_map<const Parameter*, Moments> state_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace hdgl
