#include "hdgl/autodiff.hpp"

#include "hdgl/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace hdgl {

void Gradients::add(const Parameter* p, const Mat& g) {
  auto it = grads_.find(p);
  if (it == grads_.end()) {
    grads_.emplace(p, g);
  } else {
    it->second += g;
  }
}

const Mat* Gradients::find(const Parameter* p) const {
  auto it = grads_.find(p);
  return it == grads_.end() ? nullptr : &it->second;
}

void Gradients::merge(const Gradients& other) {
  for (const auto& [p, g] : other.grads_) add(p, g);
}

namespace ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) fail(ErrorCode::InvalidInput, "operands recorded on different tapes");
}

void require_shape(bool ok, const char* op, const Mat& a, const Mat& b) {
  if (!ok) {
    fail(ErrorCode::Shape, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                               "x" + std::to_string(b.cols()));
  }
}

}  // namespace

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(const Parameter& p, bool trainable) {
  Node n;
  n.value = p.value;
  n.requires_grad = trainable;
  n.param = trainable ? &p : nullptr;
  return push(std::move(n));
}

Var Tape::record(Mat value, std::initializer_list<Var> parents, Backward fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Mat value, const std::vector<Var>& parents, Backward fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) fail(ErrorCode::InvalidInput, "parent recorded on a different tape");
    n.requires_grad = n.requires_grad || node(p.id()).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1) {
    fail(ErrorCode::Shape, "backward without seed needs a scalar root");
  }
  backward(root, Mat::Ones(1, 1));
}

void Tape::backward(Var root, const Mat& seed) {
  if (root.tape() != this) fail(ErrorCode::InvalidInput, "root recorded on a different tape");
  require_shape(seed.rows() == root.rows() && seed.cols() == root.cols(), "backward seed",
                root.value(), seed);
  accumulate(root.id(), seed);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) {
      // Copy: the closure may accumulate into other nodes of the deque.
      const Mat g = n.grad;
      n.backward(*this, g);
    }
  }
}

Mat Tape::grad(Var v) const {
  const Node& n = node(v.id());
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::collect(Gradients& out) const {
  for (const Node& n : nodes_) {
    if (n.param != nullptr && n.grad.size() != 0) out.add(n.param, n.grad);
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Tape& t, const Mat& g) {
                            t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a},
                          [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {a},
                          [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Var add_row(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b.rows() == 1 && a.cols() == b.cols(), "add_row", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  Mat out = a.value().rowwise() + b.value().row(0);
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g.colwise().sum());
  });
}

Var add_const(Var a, const Mat& c) {
  require_shape(a.rows() == c.rows() && a.cols() == c.cols(), "add_const", a.value(), c);
  const int ia = a.id();
  return a.tape()->record(a.value() + c, {a},
                          [ia](Tape& t, const Mat& g) { t.accumulate(ia, g); });
}

Var mul_const(Var a, const Mat& c) {
  require_shape(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const", a.value(), c);
  const int ia = a.id();
  return a.tape()->record(a.value().cwiseProduct(c), {a}, [ia, c](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseProduct(c));
  });
}

Var left_mul_const(const Mat& c, Var a) {
  require_shape(c.cols() == a.rows(), "left_mul_const", c, a.value());
  const int ia = a.id();
  return a.tape()->record(c * a.value(), {a}, [ia, c](Tape& t, const Mat& g) {
    t.accumulate(ia, c.transpose() * g);
  });
}

Var block_left_mul_const(const std::vector<Mat>& blocks, Var a) {
  Eigen::Index in_rows = 0, out_rows = 0;
  for (const Mat& b : blocks) {
    in_rows += b.cols();
    out_rows += b.rows();
  }
  if (in_rows != a.rows()) {
    fail(ErrorCode::Shape, "block_left_mul_const: blocks cover " + std::to_string(in_rows) +
                               " rows, input has " + std::to_string(a.rows()));
  }
  Mat out(out_rows, a.cols());
  Eigen::Index ri = 0, ro = 0;
  for (const Mat& b : blocks) {
    out.middleRows(ro, b.rows()).noalias() = b * a.value().middleRows(ri, b.cols());
    ri += b.cols();
    ro += b.rows();
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, blocks](Tape& t, const Mat& g) {
    Mat ga(t.value(ia).rows(), g.cols());
    Eigen::Index ri = 0, ro = 0;
    for (const Mat& b : blocks) {
      ga.middleRows(ri, b.cols()).noalias() = b.transpose() * g.middleRows(ro, b.rows());
      ri += b.cols();
      ro += b.rows();
    }
    t.accumulate(ia, ga);
  });
}

Var relu(Var a) {
  const int ia = a.id();
  Mat out = a.value().cwiseMax(0.0);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, const Mat& g) {
    const Mat& x = t.value(ia);
    t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  const int ia = a.id();
  const int iy = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(out), {a}, [ia, iy](Tape& t, const Mat& g) {
    const auto s = t.value(iy).array();
    t.accumulate(ia, (g.array() * s * (1.0 - s)).matrix());
  });
}

Var tanh(Var a) {
  Mat out = a.value().array().tanh().matrix();
  const int ia = a.id();
  const int iy = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(out), {a}, [ia, iy](Tape& t, const Mat& g) {
    const auto th = t.value(iy).array();
    t.accumulate(ia, (g.array() * (1.0 - th * th)).matrix());
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) fail(ErrorCode::Index, "gather_rows: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, rows](Tape& t, const Mat& g) {
    Mat ga = Mat::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, ga);
  });
}

Var place_rows(const Mat& base, Var a, const std::vector<int>& rows) {
  if (static_cast<Eigen::Index>(rows.size()) != a.rows() || a.cols() != base.cols()) {
    fail(ErrorCode::Shape, "place_rows: row count or width mismatch");
  }
  Mat out = base;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= base.rows()) fail(ErrorCode::Index, "place_rows: row out of range");
    out.row(rows[i]) = a.value().row(static_cast<Eigen::Index>(i));
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, rows](Tape& t, const Mat& g) {
    Mat ga(static_cast<Eigen::Index>(rows.size()), g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(rows[i]);
    t.accumulate(ia, ga);
  });
}

Var scale_rows(Var a, Var s) {
  require_same_tape(a, s);
  require_shape(s.cols() == 1 && s.rows() == a.rows(), "scale_rows", a.value(), s.value());
  const int ia = a.id(), is = s.id();
  Mat out = s.value().col(0).asDiagonal() * a.value();
  return a.tape()->record(std::move(out), {a, s}, [ia, is](Tape& t, const Mat& g) {
    t.accumulate(ia, t.value(is).col(0).asDiagonal() * g);
    t.accumulate(is, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) fail(ErrorCode::Index, "slice_cols out of range");
  const int ia = a.id();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [ia, start, count](Tape& t, const Mat& g) {
                            Mat ga = Mat::Zero(t.value(ia).rows(), t.value(ia).cols());
                            ga.middleCols(start, count) = g;
                            t.accumulate(ia, ga);
                          });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidInput, "concat_cols of nothing");
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != parts.front().rows()) fail(ErrorCode::Shape, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(parts.front().rows(), cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts.front().tape()->record(std::move(out), parts, [ids, widths](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleCols(c, widths[i]));
      c += widths[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidInput, "concat_rows of nothing");
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != parts.front().cols()) fail(ErrorCode::Shape, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, parts.front().cols());
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts.front().tape()->record(std::move(out), parts, [ids, heights](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleRows(r, heights[i]));
      r += heights[i];
    }
  });
}

Var tile_rows(Var a, int times) {
  if (times < 1) fail(ErrorCode::InvalidInput, "tile_rows needs times >= 1");
  const Eigen::Index r = a.rows();
  Mat out(r * times, a.cols());
  for (int k = 0; k < times; ++k) out.middleRows(k * r, r) = a.value();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, r, times](Tape& t, const Mat& g) {
    Mat ga = Mat::Zero(r, g.cols());
    for (int k = 0; k < times; ++k) ga += g.middleRows(k * r, r);
    t.accumulate(ia, ga);
  });
}

Var repeat_rows(Var a, int times) {
  if (times < 1) fail(ErrorCode::InvalidInput, "repeat_rows needs times >= 1");
  const Eigen::Index r = a.rows();
  Mat out(r * times, a.cols());
  for (Eigen::Index i = 0; i < r; ++i) out.middleRows(i * times, times).rowwise() = a.value().row(i);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, r, times](Tape& t, const Mat& g) {
    Mat ga(r, g.cols());
    for (Eigen::Index i = 0; i < r; ++i) ga.row(i) = g.middleRows(i * times, times).colwise().sum();
    t.accumulate(ia, ga);
  });
}

Var sum_rows(Var a) {
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  return a.tape()->record(a.value().colwise().sum(), {a}, [ia, r](Tape& t, const Mat& g) {
    t.accumulate(ia, g.replicate(r, 1));
  });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) fail(ErrorCode::EmptyGraph, "mean over zero rows");
  return block_mean_rows(a, static_cast<int>(a.rows()));
}

Var block_mean_rows(Var a, int block_rows) {
  if (block_rows < 1 || a.rows() % block_rows != 0) {
    fail(ErrorCode::Shape, "block_mean_rows: rows not divisible into blocks");
  }
  const Eigen::Index blocks = a.rows() / block_rows;
  Mat out(blocks, a.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.row(b) = a.value().middleRows(b * block_rows, block_rows).colwise().mean();
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, block_rows, blocks](Tape& t, const Mat& g) {
    Mat ga(blocks * block_rows, g.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      ga.middleRows(b * block_rows, block_rows).rowwise() = g.row(b) / block_rows;
    }
    t.accumulate(ia, ga);
  });
}

namespace {

Mat masked_softmax(const Mat& x, const BoolMat* mask) {
  Mat out = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask == nullptr || (*mask)(i, j)) mx = std::max(mx, x(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask == nullptr || (*mask)(i, j)) {
        out(i, j) = std::exp(x(i, j) - mx);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return out;
}

Var softmax_impl(Var a, const BoolMat* mask) {
  if (mask != nullptr && (mask->rows() != a.rows() || mask->cols() != a.cols())) {
    fail(ErrorCode::Shape, "softmax mask shape mismatch");
  }
  Mat y = masked_softmax(a.value(), mask);
  const int ia = a.id();
  const int iy = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(y), {a}, [ia, iy](Tape& t, const Mat& g) {
    const Mat& s = t.value(iy);
    const Vec dot = g.cwiseProduct(s).rowwise().sum();
    t.accumulate(ia, s.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, nullptr); }
Var softmax_rows(Var a, const BoolMat& mask) { return softmax_impl(a, &mask); }

Var layer_norm_rows(Var a, Var gamma, Var beta, double eps) {
  require_same_tape(a, gamma);
  require_same_tape(a, beta);
  require_shape(gamma.rows() == 1 && gamma.cols() == a.cols(), "layer_norm gamma", a.value(),
                gamma.value());
  require_shape(beta.rows() == 1 && beta.cols() == a.cols(), "layer_norm beta", a.value(),
                beta.value());
  const Mat& x = a.value();
  const Eigen::Index n = x.cols();
  Mat xhat(x.rows(), n);
  Vec inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  const int ia = a.id(), ig = gamma.id(), ib = beta.id();
  return a.tape()->record(
      std::move(out), {a, gamma, beta}, [ia, ig, ib, xhat, inv_std, n](Tape& t, const Mat& g) {
        const RowVec gam = t.value(ig).row(0);
        t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(ib, g.colwise().sum());
        const Mat gx_hat = g.array().rowwise() * gam.array();
        Mat ga(g.rows(), n);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double m1 = gx_hat.row(i).mean();
          const double m2 = gx_hat.row(i).dot(xhat.row(i)) / static_cast<double>(n);
          ga.row(i) = inv_std(i) * (gx_hat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
        t.accumulate(ia, ga);
      });
}

Var masked_cross_entropy(Var logits, const std::vector<int>& labels,
                         const std::vector<bool>& mask) {
  const Mat& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows() ||
      static_cast<Eigen::Index>(mask.size()) != z.rows()) {
    fail(ErrorCode::Shape, "masked_cross_entropy: labels/mask length differs from logits rows");
  }
  int count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) fail(ErrorCode::InvalidMask, "mask selects no node");
  const Vec terms = cross_entropy_terms(z, labels, mask);
  Mat loss(1, 1);
  loss(0, 0) = terms.sum() / count;
  const int il = logits.id();
  return logits.tape()->record(std::move(loss), {logits},
                               [il, labels, mask, count](Tape& t, const Mat& g) {
                                 Mat p = softmax_rows_value(t.value(il));
                                 for (Eigen::Index i = 0; i < p.rows(); ++i) {
                                   if (!mask[static_cast<std::size_t>(i)]) {
                                     p.row(i).setZero();
                                     continue;
                                   }
                                   p(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                                 }
                                 t.accumulate(il, p * (g(0, 0) / count));
                               });
}

}  // namespace ad

Mat softmax_rows_value(const Mat& a) { return ad::masked_softmax(a, nullptr); }

Vec cross_entropy_terms(const Mat& logits, const std::vector<int>& labels,
                        const std::vector<bool>& mask) {
  Vec terms = Vec::Zero(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) fail(ErrorCode::InvalidInput, "label outside class range");
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    terms(i) = lse - logits(i, y);
  }
  return terms;
}

}  // namespace hdgl
