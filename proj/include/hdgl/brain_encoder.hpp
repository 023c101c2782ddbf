#pragma once

// Brain-network level: per-segment spatial embedding (GCN -> SAGPool -> mean
// readout), then a single-head Transformer encoder over the segment sequence
// with sum readout and a perceptron head. K such layers are stacked, layer
// j > 1 consuming the pooled graphs of layer j - 1, and their outputs are
// concatenated.

#include "hdgl/autodiff.hpp"
#include "hdgl/data_ingest.hpp"
#include "hdgl/dynfc.hpp"
#include "hdgl/layers.hpp"
#include "hdgl/node_features.hpp"

#include <atomic>
#include <memory>
#include <random>
#include <vector>

namespace hdgl {

struct EncoderConfig {
  int n_rois = 16;
  int window_length = 20;  // node feature width when the GRU is disabled
  int embed_dim = 16;      // D
  int attn_dim = 16;       // d
  int ff_hidden = 16;
  int layers = 2;          // K
  int encoder_layers = 2;
  double pooling_ratio = 0.8;
  bool use_gru = true;
  bool use_sagpool = true;
  bool use_transformer = true;
  bool positional_encoding = false;
};

/// D^{-1/2} (A + I) D^{-1/2}.
Mat normalized_adjacency(const Mat& a);

/// ceil(ratio * n), never below 1.
int pooled_size(int n, double ratio);

/// Indices of the k largest scores; ties go to the lower index. Returned in
/// ascending index order.
std::vector<int> top_k_indices(const Vec& scores, int k);

struct GcnLayer {
  Parameter theta;  // D_in x D_out

  GcnLayer() = default;
  GcnLayer(const std::string& name, int in, int out, std::mt19937_64& rng);
};

/// ReLU(norm(A) X theta).
Mat gcn_forward(const Mat& x, const Mat& a, const GcnLayer& layer);

struct SagPoolLayer {
  double ratio = 0.8;
  Parameter score;  // D x 1, one-output-channel GCN

  SagPoolLayer() = default;
  SagPoolLayer(const std::string& name, int dim, double ratio, std::mt19937_64& rng);
};

struct PoolResult {
  Mat x;                  // ceil(kN) x D, gated by tanh(score)
  Mat a;                  // induced subgraph
  std::vector<int> retained;
  Vec scores;             // raw scores of all input nodes
};

PoolResult sagpool(const Mat& x, const Mat& a, const SagPoolLayer& layer);

/// Column means; throws EmptyGraph on zero rows.
Vec mean_readout(const Mat& x);

struct TemporalBlock {
  Parameter wq, wk, wv, wo;
  Parameter ln1_gamma, ln1_beta;
  Linear ff1, ff2;
  Parameter ln2_gamma, ln2_beta;
};

/// Post-norm single-head Transformer encoder with sum readout and a
/// Linear + ReLU perceptron head.
struct TemporalEncoder {
  std::vector<TemporalBlock> blocks;
  Linear head;
  int attn_dim = 0;
  bool positional_encoding = false;
  /// Sum over segments (Transformer path); false averages instead, which is
  /// the aggregation used when the Transformer is ablated (no blocks).
  bool sum_readout = true;

  TemporalEncoder() = default;
  TemporalEncoder(const std::string& name, int dim, int attn_dim, int ff_hidden, int n_blocks,
                  int out_dim, std::mt19937_64& rng, bool positional_encoding = false);

  std::vector<Parameter*> parameters();
};

struct TemporalTrace {
  std::vector<Mat> attention;  // per block, T x T
};

ad::Var temporal_encode(ForwardContext& ctx, ad::Var h, const TemporalEncoder& enc,
                        TemporalTrace* trace = nullptr);
Vec temporal_encode(const Mat& h, const TemporalEncoder& enc, TemporalTrace* trace = nullptr);

Mat sinusoidal_positions(int length, int dim);

class BrainEncoder {
 public:
  struct Output {
    ad::Var embedding;  // 1 x K*D
    /// retained[layer][segment] holds global ROI indices kept by that pool.
    std::vector<std::vector<std::vector<int>>> retained;
  };

  BrainEncoder() = default;
  BrainEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }
  int embedding_dim() const { return config_.layers * config_.embed_dim; }

  Output forward(ForwardContext& ctx, const RoiTimeSeries& ts, const DynamicBrainGraph& g) const;
  /// Runs the spatial/temporal stack on caller-supplied stacked node
  /// features ((T*N) x D_in, segment-major).
  Output forward_features(ForwardContext& ctx, ad::Var x, const DynamicBrainGraph& g) const;

  std::vector<Parameter*> parameters();
  long forward_calls() const { return calls_->load(); }
  void reset_forward_calls() { calls_->store(0); }

  GruEncoder gru;
  NodeFeatureProjector projector;
  std::vector<GcnLayer> gcn;
  std::vector<SagPoolLayer> pool;
  std::vector<TemporalEncoder> temporal;

 private:
  EncoderConfig config_;
  std::shared_ptr<std::atomic<long>> calls_ = std::make_shared<std::atomic<long>>(0);
};

}  // namespace hdgl
