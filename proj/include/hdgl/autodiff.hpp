#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Each recorded node
// holds its value and a closure that pushes the incoming gradient to its
// parents. Tapes are single-threaded; independent forward passes (one per
// subject) use independent tapes and are merged through Gradients.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

namespace hdgl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// A named trainable tensor. Modules own their parameters by value.
struct Parameter {
  std::string name;
  Mat value;
};

/// Accumulated gradients keyed by parameter identity.
class Gradients {
 public:
  void add(const Parameter* p, const Mat& g);
  const Mat* find(const Parameter* p) const;
  void merge(const Gradients& other);
  void clear() { grads_.clear(); }
  bool empty() const { return grads_.empty(); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Mat> grads_;
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Mat value);
  /// Leaf whose gradient is kept and readable through grad().
  Var input(Mat value);
  /// Leaf bound to a parameter; frozen parameters enter as constants.
  Var param(const Parameter& p, bool trainable = true);

  Var record(Mat value, std::initializer_list<Var> parents, Backward fn);
  Var record(Mat value, const std::vector<Var>& parents, Backward fn);

  /// Backpropagates from a 1x1 root.
  void backward(Var root);
  void backward(Var root, const Mat& seed);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  /// Gradient of v; an all-zero matrix when no gradient reached it.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return node(v.id()).requires_grad; }
  void accumulate(int id, const Mat& g);
  /// Adds the gradients of every trainable parameter leaf into out.
  void collect(Gradients& out) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool requires_grad = false;
    const Parameter* param = nullptr;
  };
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Var push(Node n);

  std::deque<Node> nodes_;
};

// Elementwise and linear-algebra primitives.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
/// a (r x c) + b (1 x c) broadcast over rows.
Var add_row(Var a, Var b);
Var add_const(Var a, const Mat& c);
Var mul_const(Var a, const Mat& c);
/// C * a for a constant matrix C.
Var left_mul_const(const Mat& c, Var a);
/// Block-diagonal left multiply: row block i of a (blocks[i].cols() rows) is
/// multiplied by blocks[i]. Output rows are the concatenation of the blocks.
Var block_left_mul_const(const std::vector<Mat>& blocks, Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);

// Structural ops.
Var gather_rows(Var a, const std::vector<int>& rows);
/// Returns a copy of base (constant) with rows[i] replaced by row i of a.
Var place_rows(const Mat& base, Var a, const std::vector<int>& rows);
/// Row i of a scaled by s(i, 0).
Var scale_rows(Var a, Var s);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Stacks `times` copies of a vertically.
Var tile_rows(Var a, int times);
/// Repeats each row of a `times` times consecutively.
Var repeat_rows(Var a, int times);

// Reductions.
Var sum_rows(Var a);
Var mean_rows(Var a);
/// Means over consecutive groups of block_rows rows.
Var block_mean_rows(Var a, int block_rows);

/// Row-wise softmax. Entries where mask is false are excluded; rows with no
/// admissible entry produce all zeros.
Var softmax_rows(Var a);
Var softmax_rows(Var a, const BoolMat& mask);
Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5);

/// Mean negative log-softmax of the true class over rows with mask set.
Var masked_cross_entropy(Var logits, const std::vector<int>& labels,
                         const std::vector<bool>& mask);

}  // namespace ad

/// Per-row negative log-softmax of the label; rows outside mask report 0.
Vec cross_entropy_terms(const Mat& logits, const std::vector<int>& labels,
                        const std::vector<bool>& mask);
Mat softmax_rows_value(const Mat& a);

}  // namespace hdgl
