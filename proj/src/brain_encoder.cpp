#include "hdgl/brain_encoder.hpp"

#include "hdgl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hdgl {

Mat normalized_adjacency(const Mat& a) {
  if (a.rows() != a.cols()) fail(ErrorCode::Shape, "adjacency must be square");
  Mat tilde = a;
  tilde.diagonal().array() += 1.0;
  const Vec inv_sqrt = tilde.rowwise().sum().array().rsqrt().matrix();
  return inv_sqrt.asDiagonal() * tilde * inv_sqrt.asDiagonal();
}

int pooled_size(int n, double ratio) {
  if (n < 1) fail(ErrorCode::EmptyGraph, "cannot pool an empty graph");
  const int k = static_cast<int>(std::ceil(ratio * n - 1e-9));
  return std::clamp(k, 1, n);
}

std::vector<int> top_k_indices(const Vec& scores, int k) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  order.resize(static_cast<std::size_t>(std::min<Eigen::Index>(k, scores.size())));
  std::sort(order.begin(), order.end());
  return order;
}

GcnLayer::GcnLayer(const std::string& name, int in, int out, std::mt19937_64& rng)
    : theta{name + ".theta", glorot(in, out, rng)} {}

Mat gcn_forward(const Mat& x, const Mat& a, const GcnLayer& layer) {
  if (x.rows() != a.rows()) fail(ErrorCode::Shape, "feature rows differ from adjacency size");
  if (x.cols() != layer.theta.value.rows()) fail(ErrorCode::Shape, "feature width differs from theta rows");
  return (normalized_adjacency(a) * x * layer.theta.value).cwiseMax(0.0);
}

SagPoolLayer::SagPoolLayer(const std::string& name, int dim, double ratio_, std::mt19937_64& rng)
    : ratio(ratio_), score{name + ".score", glorot(dim, 1, rng)} {
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::InvalidParameter, "pooling ratio must lie in (0, 1)");
}

PoolResult sagpool(const Mat& x, const Mat& a, const SagPoolLayer& layer) {
  if (x.rows() < 1) fail(ErrorCode::EmptyGraph, "cannot pool an empty graph");
  if (x.rows() != a.rows()) fail(ErrorCode::Shape, "feature rows differ from adjacency size");
  PoolResult out;
  out.scores = (normalized_adjacency(a) * x * layer.score.value).col(0);
  out.retained = top_k_indices(out.scores, pooled_size(static_cast<int>(x.rows()), layer.ratio));
  const auto k = static_cast<Eigen::Index>(out.retained.size());
  out.x.resize(k, x.cols());
  out.a.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const int src = out.retained[static_cast<std::size_t>(i)];
    out.x.row(i) = x.row(src) * std::tanh(out.scores(src));
    for (Eigen::Index j = 0; j < k; ++j) out.a(i, j) = a(src, out.retained[static_cast<std::size_t>(j)]);
  }
  return out;
}

Vec mean_readout(const Mat& x) {
  if (x.rows() == 0) fail(ErrorCode::EmptyGraph, "readout of a graph with no nodes");
  return x.colwise().mean().transpose();
}

Mat sinusoidal_positions(int length, int dim) {
  Mat pe(length, dim);
  for (int t = 0; t < length; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
  }
  return pe;
}

TemporalEncoder::TemporalEncoder(const std::string& name, int dim, int attn_dim_, int ff_hidden,
                                 int n_blocks, int out_dim, std::mt19937_64& rng,
                                 bool positional_encoding_)
    : attn_dim(attn_dim_), positional_encoding(positional_encoding_) {
  for (int b = 0; b < n_blocks; ++b) {
    const std::string p = name + ".block" + std::to_string(b);
    TemporalBlock blk;
    blk.wq = {p + ".wq", glorot(dim, attn_dim, rng)};
    blk.wk = {p + ".wk", glorot(dim, attn_dim, rng)};
    blk.wv = {p + ".wv", glorot(dim, attn_dim, rng)};
    blk.wo = {p + ".wo", glorot(attn_dim, dim, rng)};
    blk.ln1_gamma = {p + ".ln1.gamma", Mat::Ones(1, dim)};
    blk.ln1_beta = {p + ".ln1.beta", Mat::Zero(1, dim)};
    blk.ff1 = Linear(p + ".ff1", dim, ff_hidden, rng);
    blk.ff2 = Linear(p + ".ff2", ff_hidden, dim, rng);
    blk.ln2_gamma = {p + ".ln2.gamma", Mat::Ones(1, dim)};
    blk.ln2_beta = {p + ".ln2.beta", Mat::Zero(1, dim)};
    blocks.push_back(std::move(blk));
  }
  head = Linear(name + ".head", dim, out_dim, rng);
}

std::vector<Parameter*> TemporalEncoder::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks) {
    for (Parameter* p : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ln1_gamma, &b.ln1_beta}) out.push_back(p);
    for (Parameter* p : b.ff1.parameters()) out.push_back(p);
    for (Parameter* p : b.ff2.parameters()) out.push_back(p);
    out.push_back(&b.ln2_gamma);
    out.push_back(&b.ln2_beta);
  }
  for (Parameter* p : head.parameters()) out.push_back(p);
  return out;
}

ad::Var temporal_encode(ForwardContext& ctx, ad::Var h, const TemporalEncoder& enc,
                        TemporalTrace* trace) {
  if (h.rows() == 0) fail(ErrorCode::EmptySequence, "temporal encoder needs at least one segment");
  if (enc.positional_encoding) {
    h = ad::add_const(h, sinusoidal_positions(static_cast<int>(h.rows()), static_cast<int>(h.cols())));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(enc.attn_dim));
  for (const TemporalBlock& b : enc.blocks) {
    ad::Var q = ad::matmul(h, ctx.bind(b.wq));
    ad::Var k = ad::matmul(h, ctx.bind(b.wk));
    ad::Var v = ad::matmul(h, ctx.bind(b.wv));
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dk));
    if (trace != nullptr) trace->attention.push_back(attn.value());
    ad::Var o = ad::matmul(ad::matmul(attn, v), ctx.bind(b.wo));
    h = ad::layer_norm_rows(ad::add(h, ctx.dropout(o)), ctx.bind(b.ln1_gamma), ctx.bind(b.ln1_beta));
    ad::Var f = ctx.dropout(ad::relu(b.ff1.forward(ctx, h)));
    f = b.ff2.forward(ctx, f);
    h = ad::layer_norm_rows(ad::add(h, ctx.dropout(f)), ctx.bind(b.ln2_gamma), ctx.bind(b.ln2_beta));
  }
  ad::Var pooled = enc.sum_readout ? ad::sum_rows(h) : ad::mean_rows(h);
  return ad::relu(enc.head.forward(ctx, pooled));
}

Vec temporal_encode(const Mat& h, const TemporalEncoder& enc, TemporalTrace* trace) {
  ad::Tape tape;
  ForwardContext ctx(tape);
  return temporal_encode(ctx, tape.constant(h), enc, trace).value().row(0).transpose();
}

BrainEncoder::BrainEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  const EncoderConfig& c = config_;
  if (c.layers < 1) fail(ErrorCode::Config, "encoder needs at least one layer");
  if (c.use_gru) {
    gru = GruEncoder(c.n_rois, c.embed_dim, rng);
    projector = NodeFeatureProjector(c.n_rois, c.embed_dim, rng);
  }
  for (int k = 0; k < c.layers; ++k) {
    const std::string p = "layer" + std::to_string(k);
    const int in = (k == 0 && !c.use_gru) ? c.window_length : c.embed_dim;
    gcn.emplace_back(p + ".gcn", in, c.embed_dim, rng);
    if (c.use_sagpool) pool.emplace_back(p + ".pool", c.embed_dim, c.pooling_ratio, rng);
    TemporalEncoder te(p + ".temporal", c.embed_dim, c.attn_dim, c.ff_hidden,
                       c.use_transformer ? c.encoder_layers : 0, c.embed_dim, rng,
                       c.positional_encoding);
    te.sum_readout = c.use_transformer;
    temporal.push_back(std::move(te));
  }
}

std::vector<Parameter*> BrainEncoder::parameters() {
  std::vector<Parameter*> out;
  if (config_.use_gru) {
    for (Parameter* p : gru.parameters()) out.push_back(p);
    for (Parameter* p : projector.parameters()) out.push_back(p);
  }
  for (auto& g : gcn) out.push_back(&g.theta);
  for (auto& p : pool) out.push_back(&p.score);
  for (auto& t : temporal) {
    for (Parameter* p : t.parameters()) out.push_back(p);
  }
  return out;
}

BrainEncoder::Output BrainEncoder::forward(ForwardContext& ctx, const RoiTimeSeries& ts,
                                           const DynamicBrainGraph& g) const {
  if (ts.n_rois() != config_.n_rois || g.n_rois() != config_.n_rois) {
    fail(ErrorCode::Shape, "subject '" + ts.subject_id + "' has " + std::to_string(ts.n_rois()) +
                               " ROIs, encoder expects " + std::to_string(config_.n_rois));
  }
  if (g.n_segments() == 0) fail(ErrorCode::EmptySequence, "dynamic graph has no segments");
  ad::Tape& tape = ctx.tape();
  ad::Var x;
  if (config_.use_gru) {
    ad::Var snaps = ad::gru_snapshots(ctx.bind(gru.w_ih), ctx.bind(gru.w_hh), ctx.bind(gru.b_ih),
                                      ctx.bind(gru.b_hh), ts.values, g.window_endpoints);
    x = ad::stacked_node_features(ctx.bind(projector.w), snaps, config_.n_rois);
  } else {
    // Raw windowed signal as node features.
    const int n = config_.n_rois, len = config_.window_length;
    Mat raw(static_cast<Eigen::Index>(g.n_segments()) * n, len);
    for (int t = 0; t < g.n_segments(); ++t) {
      const int start = g.window_endpoints[static_cast<std::size_t>(t)] - len;
      if (start < 0) fail(ErrorCode::Shape, "window length larger than segment endpoint");
      raw.middleRows(static_cast<Eigen::Index>(t) * n, n) = ts.values.middleCols(start, len);
    }
    x = tape.constant(std::move(raw));
  }
  return forward_features(ctx, x, g);
}

BrainEncoder::Output BrainEncoder::forward_features(ForwardContext& ctx, ad::Var x,
                                                    const DynamicBrainGraph& g) const {
  calls_->fetch_add(1);
  const int segments = g.n_segments();
  int nodes = g.n_rois();
  if (x.rows() != static_cast<Eigen::Index>(segments) * nodes) {
    fail(ErrorCode::Shape, "stacked features do not match segments x ROIs");
  }
  std::vector<Mat> adjacency = g.adjacencies;
  std::vector<std::vector<int>> global(static_cast<std::size_t>(segments));
  for (auto& idx : global) {
    idx.resize(static_cast<std::size_t>(nodes));
    std::iota(idx.begin(), idx.end(), 0);
  }

  Output out;
  std::vector<ad::Var> per_layer;
  for (int k = 0; k < config_.layers; ++k) {
    std::vector<Mat> norm;
    norm.reserve(adjacency.size());
    for (const Mat& a : adjacency) norm.push_back(normalized_adjacency(a));

    ad::Var z = ad::relu(ad::block_left_mul_const(norm, ad::matmul(x, ctx.bind(gcn[static_cast<std::size_t>(k)].theta))));
    z = ctx.dropout(z);

    if (config_.use_sagpool) {
      const SagPoolLayer& layer = pool[static_cast<std::size_t>(k)];
      ad::Var score = ad::block_left_mul_const(norm, ad::matmul(z, ctx.bind(layer.score)));
      const int kept = pooled_size(nodes, layer.ratio);
      std::vector<int> rows;
      rows.reserve(static_cast<std::size_t>(segments * kept));
      std::vector<std::vector<int>> layer_retained(static_cast<std::size_t>(segments));
      for (int t = 0; t < segments; ++t) {
        const auto st = static_cast<std::size_t>(t);
        const Vec seg_scores = score.value().col(0).segment(static_cast<Eigen::Index>(t) * nodes, nodes);
        const std::vector<int> local = top_k_indices(seg_scores, kept);
        Mat induced(kept, kept);
        std::vector<int> next_global;
        for (int i = 0; i < kept; ++i) {
          rows.push_back(t * nodes + local[static_cast<std::size_t>(i)]);
          next_global.push_back(global[st][static_cast<std::size_t>(local[static_cast<std::size_t>(i)])]);
          for (int j = 0; j < kept; ++j) {
            induced(i, j) = adjacency[st](local[static_cast<std::size_t>(i)], local[static_cast<std::size_t>(j)]);
          }
        }
        adjacency[st] = std::move(induced);
        global[st] = std::move(next_global);
        layer_retained[st] = global[st];
      }
      out.retained.push_back(std::move(layer_retained));
      x = ad::scale_rows(ad::gather_rows(z, rows), ad::tanh(ad::gather_rows(score, rows)));
      nodes = kept;
    } else {
      out.retained.push_back(global);
      x = z;
    }

    ad::Var readout = ad::block_mean_rows(x, nodes);  // T x D
    per_layer.push_back(temporal_encode(ctx, readout, temporal[static_cast<std::size_t>(k)]));
  }
  out.embedding = per_layer.size() == 1 ? per_layer.front() : ad::concat_cols(per_layer);
  return out;
}

}  // namespace hdgl
