#include "hdgl/layers.hpp"

#include "hdgl/errors.hpp"

#include <cmath>

namespace hdgl {

Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

ForwardContext::ForwardContext(ad::Tape& tape, bool training, double dropout, std::mt19937_64* rng)
    : tape_(&tape), training_(training), rate_(dropout), rng_(rng) {
  if (training_ && rate_ > 0.0 && rng_ == nullptr) {
    fail(ErrorCode::InvalidInput, "training with dropout needs an RNG");
  }
  if (rate_ < 0.0 || rate_ >= 1.0) fail(ErrorCode::InvalidParameter, "dropout rate must lie in [0, 1)");
}

ad::Var ForwardContext::bind(const Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  const bool trainable = !frozen_.count(&p);
  ad::Var v = tape_->param(p, trainable);
  bound_.emplace(&p, v);
  return v;
}

void ForwardContext::freeze(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) frozen_[p] = true;
}

ad::Var ForwardContext::dropout(ad::Var x) {
  if (!training_ || rate_ <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate_);
  Mat mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate_);
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(*rng_) ? s : 0.0;
  }
  return ad::mul_const(x, mask);
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool bias)
    : w{name + ".w", glorot(in, out, rng)}, b{name + ".b", Mat::Zero(1, out)}, has_bias(bias) {}

ad::Var Linear::forward(ForwardContext& ctx, ad::Var x) const {
  ad::Var y = ad::matmul(x, ctx.bind(w));
  return has_bias ? ad::add_row(y, ctx.bind(b)) : y;
}

std::vector<Parameter*> Linear::parameters() {
  if (has_bias) return {&w, &b};
  return {&w};
}

}  // namespace hdgl
