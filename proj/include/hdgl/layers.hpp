#pragma once

#include "hdgl/autodiff.hpp"

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace hdgl {

/// Glorot-uniform matrix.
Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

/// State shared by one forward pass: the tape, the train/eval switch, and the
/// dropout stream. Each parameter is bound to a single tape leaf so repeated
/// uses accumulate into one gradient.
class ForwardContext {
 public:
  explicit ForwardContext(ad::Tape& tape, bool training = false, double dropout = 0.0,
                          std::mt19937_64* rng = nullptr);

  ad::Tape& tape() { return *tape_; }
  bool training() const { return training_; }

  ad::Var bind(const Parameter& p);
  /// Parameters in this set enter the tape as constants.
  void freeze(const std::vector<Parameter*>& params);
  /// Inverted dropout at the context rate; identity outside training.
  ad::Var dropout(ad::Var x);

 private:
  ad::Tape* tape_;
  bool training_;
  double rate_;
  std::mt19937_64* rng_;
  std::unordered_map<const Parameter*, ad::Var> bound_;
  std::unordered_map<const Parameter*, bool> frozen_;
};

/// Row-major affine map x W + b with W stored in x out.
struct Linear {
  Parameter w;
  Parameter b;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool bias = true);

  ad::Var forward(ForwardContext& ctx, ad::Var x) const;
  std::vector<Parameter*> parameters();
};

}  // namespace hdgl
