#include "hdgl/optimizer.hpp"

#include "hdgl/errors.hpp"

#include <cmath>

namespace hdgl {

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    state_[p] = {Mat::Zero(p->value.rows(), p->value.cols()),
                 Mat::Zero(p->value.rows(), p->value.cols())};
  }
}

void Adam::step(const Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params_) {
    const Mat* g = grads.find(p);
    if (g == nullptr) continue;
    if (g->rows() != p->value.rows() || g->cols() != p->value.cols()) {
      fail(ErrorCode::Shape, "gradient shape mismatch for " + p->name);
    }
    Moments& s = state_[p];
    s.m = beta1_ * s.m + (1.0 - beta1_) * *g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g->cwiseProduct(*g);
    p->value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

}  // namespace hdgl
