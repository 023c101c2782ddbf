#include "hdgl/node_features.hpp"

#include "hdgl/errors.hpp"

#include <cmath>

namespace hdgl {

namespace {

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Vec sigmoid(const Vec& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

struct GruStep {
  Vec r, z, n, gh_n;
};

// One recurrence step; returns the new hidden state.
Vec gru_step(const Mat& w_ih, const Mat& w_hh, const Vec& b_ih, const Vec& b_hh,
             const Vec& x, const Vec& h, GruStep* cache) {
  const Eigen::Index d = h.size();
  const Vec gi = w_ih * x + b_ih;
  const Vec gh = w_hh * h + b_hh;
  Vec r = sigmoid(gi.segment(0, d) + gh.segment(0, d));
  Vec z = sigmoid(gi.segment(d, d) + gh.segment(d, d));
  Vec gh_n = gh.segment(2 * d, d);
  Vec n = (gi.segment(2 * d, d) + r.cwiseProduct(gh_n)).array().tanh().matrix();
  Vec out = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
  if (cache != nullptr) *cache = {std::move(r), std::move(z), std::move(n), std::move(gh_n)};
  return out;
}

}  // namespace

GruEncoder::GruEncoder(int input_size_, int hidden_size_, std::mt19937_64& rng)
    : input_size(input_size_), hidden_size(hidden_size_) {
  if (input_size <= 0 || hidden_size <= 0) fail(ErrorCode::InvalidInput, "GRU sizes must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  w_ih = {"gru.w_ih", uniform_matrix(3 * hidden_size, input_size, bound, rng)};
  w_hh = {"gru.w_hh", uniform_matrix(3 * hidden_size, hidden_size, bound, rng)};
  b_ih = {"gru.b_ih", uniform_matrix(3 * hidden_size, 1, bound, rng)};
  b_hh = {"gru.b_hh", uniform_matrix(3 * hidden_size, 1, bound, rng)};
}

std::vector<Parameter*> GruEncoder::parameters() { return {&w_ih, &w_hh, &b_ih, &b_hh}; }

NodeFeatureProjector::NodeFeatureProjector(int n_rois_, int dim_, std::mt19937_64& rng)
    : n_rois(n_rois_), dim(dim_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(n_rois + dim));
  w = {"features.w", uniform_matrix(dim, n_rois + dim, bound, rng)};
}

std::vector<Parameter*> NodeFeatureProjector::parameters() { return {&w}; }

Vec gru_encode_prefix(const RoiTimeSeries& ts, int endpoint, const GruEncoder& enc) {
  if (endpoint < 1 || endpoint > ts.n_timepoints()) {
    fail(ErrorCode::InvalidInput, "endpoint " + std::to_string(endpoint) + " outside [1, " +
                                      std::to_string(ts.n_timepoints()) + "]");
  }
  if (ts.n_rois() != enc.input_size) fail(ErrorCode::Shape, "GRU input size differs from ROI count");
  Vec h = Vec::Zero(enc.hidden_size);
  const Vec b_ih = enc.b_ih.value.col(0), b_hh = enc.b_hh.value.col(0);
  for (int t = 0; t < endpoint; ++t) {
    h = gru_step(enc.w_ih.value, enc.w_hh.value, b_ih, b_hh, ts.values.col(t), h, nullptr);
  }
  return h;
}

Vec node_feature(int v, const Vec& eta, const NodeFeatureProjector& proj) {
  if (v < 0 || v >= proj.n_rois) fail(ErrorCode::Index, "ROI index " + std::to_string(v) + " out of range");
  if (eta.size() != proj.w.value.cols() - proj.n_rois) fail(ErrorCode::Shape, "eta width mismatch");
  return proj.w.value.col(v) + proj.w.value.rightCols(eta.size()) * eta;
}

std::vector<Mat> feature_matrix(const RoiTimeSeries& ts, const DynamicBrainGraph& g,
                                const GruEncoder& enc, const NodeFeatureProjector& proj) {
  if (g.n_rois() != ts.n_rois() || proj.n_rois != ts.n_rois()) {
    fail(ErrorCode::Shape, "dynamic graph, projector and series disagree on ROI count");
  }
  std::vector<Mat> out;
  for (int endpoint : g.window_endpoints) {
    const Vec eta = gru_encode_prefix(ts, endpoint, enc);
    Mat x(ts.n_rois(), proj.dim);
    for (int v = 0; v < ts.n_rois(); ++v) x.row(v) = node_feature(v, eta, proj).transpose();
    out.push_back(std::move(x));
  }
  return out;
}

namespace ad {

Var gru_snapshots(Var w_ih, Var w_hh, Var b_ih, Var b_hh, const Mat& series,
                  const std::vector<int>& endpoints) {
  if (endpoints.empty()) fail(ErrorCode::EmptySequence, "no GRU endpoints");
  const Eigen::Index d = w_hh.cols();
  if (w_ih.rows() != 3 * d || w_ih.cols() != series.rows() || w_hh.rows() != 3 * d ||
      b_ih.rows() != 3 * d || b_hh.rows() != 3 * d) {
    fail(ErrorCode::Shape, "GRU parameter shapes inconsistent with input/hidden sizes");
  }
  for (std::size_t t = 0; t < endpoints.size(); ++t) {
    if (endpoints[t] < 1 || endpoints[t] > series.cols() || (t > 0 && endpoints[t] <= endpoints[t - 1])) {
      fail(ErrorCode::InvalidInput, "GRU endpoints must be strictly increasing within [1, Tmax]");
    }
  }
  const int steps = endpoints.back();
  const Vec bi = b_ih.value().col(0), bh = b_hh.value().col(0);

  Mat hidden(d, steps + 1);  // column s = state after s steps
  hidden.col(0).setZero();
  Mat r(d, steps), z(d, steps), n(d, steps), gh_n(d, steps);
  GruStep cache;
  for (int s = 0; s < steps; ++s) {
    hidden.col(s + 1) = gru_step(w_ih.value(), w_hh.value(), bi, bh, series.col(s),
                                 hidden.col(s), &cache);
    r.col(s) = cache.r;
    z.col(s) = cache.z;
    n.col(s) = cache.n;
    gh_n.col(s) = cache.gh_n;
  }
  Mat out(static_cast<Eigen::Index>(endpoints.size()), d);
  for (std::size_t t = 0; t < endpoints.size(); ++t) {
    out.row(static_cast<Eigen::Index>(t)) = hidden.col(endpoints[t]).transpose();
  }

  const int i_wih = w_ih.id(), i_whh = w_hh.id(), i_bih = b_ih.id(), i_bhh = b_hh.id();
  return w_ih.tape()->record(
      std::move(out), {w_ih, w_hh, b_ih, b_hh},
      [=, series = series](Tape& tp, const Mat& g) {
        const Mat& W_hh = tp.value(i_whh);
        Mat g_wih = Mat::Zero(3 * d, series.rows());
        Mat g_whh = Mat::Zero(3 * d, d);
        Vec g_bih = Vec::Zero(3 * d), g_bhh = Vec::Zero(3 * d);
        Vec dh = Vec::Zero(d);
        int next_snapshot = static_cast<int>(endpoints.size()) - 1;
        Vec dgi(3 * d), dgh(3 * d);
        for (int s = steps - 1; s >= 0; --s) {
          while (next_snapshot >= 0 && endpoints[static_cast<std::size_t>(next_snapshot)] == s + 1) {
            dh += g.row(next_snapshot).transpose();
            --next_snapshot;
          }
          const auto rs = r.col(s).array(), zs = z.col(s).array(), ns = n.col(s).array();
          const auto hp = hidden.col(s).array();
          const Eigen::ArrayXd dn_pre = dh.array() * (1.0 - zs) * (1.0 - ns * ns);
          const Eigen::ArrayXd dz_pre = dh.array() * (hp - ns) * zs * (1.0 - zs);
          const Eigen::ArrayXd dr_pre = dn_pre * gh_n.col(s).array() * rs * (1.0 - rs);
          dgi << dr_pre.matrix(), dz_pre.matrix(), dn_pre.matrix();
          dgh << dr_pre.matrix(), dz_pre.matrix(), (dn_pre * rs).matrix();
          g_wih.noalias() += dgi * series.col(s).transpose();
          g_whh.noalias() += dgh * hidden.col(s).transpose();
          g_bih += dgi;
          g_bhh += dgh;
          dh = (dh.array() * zs).matrix() + W_hh.transpose() * dgh;
        }
        tp.accumulate(i_wih, g_wih);
        tp.accumulate(i_whh, g_whh);
        tp.accumulate(i_bih, g_bih);
        tp.accumulate(i_bhh, g_bhh);
      });
}

Var stacked_node_features(Var projector, Var snapshots, int n_rois) {
  const Eigen::Index d = snapshots.cols();
  if (projector.cols() != n_rois + d) fail(ErrorCode::Shape, "projector width must be N + D");
  const int t = static_cast<int>(snapshots.rows());
  // One-hot block: row v of W[:, :N]^T; GRU block: eta_t^T W[:, N:]^T.
  Var identity_part = transpose(slice_cols(projector, 0, n_rois));              // N x D
  Var temporal_part = matmul(snapshots, transpose(slice_cols(projector, n_rois, d)));  // T x D
  return add(tile_rows(identity_part, t), repeat_rows(temporal_part, n_rois));
}

}  // namespace ad

}  // namespace hdgl
