#pragma once

#include "hdgl/autodiff.hpp"
#include "hdgl/data_ingest.hpp"
#include "hdgl/dynfc.hpp"

#include <random>
#include <vector>

namespace hdgl {

/// Single-layer unidirectional GRU over the ROI vector at each timepoint.
/// Gate rows are stacked reset, update, candidate (3D rows).
struct GruEncoder {
  int input_size = 0;
  int hidden_size = 0;
  Parameter w_ih;  // 3D x N
  Parameter w_hh;  // 3D x D
  Parameter b_ih;  // 3D x 1
  Parameter b_hh;  // 3D x 1

  GruEncoder() = default;
  /// Uniform(-1/sqrt(D), 1/sqrt(D)) initialization.
  GruEncoder(int input_size, int hidden_size, std::mt19937_64& rng);

  std::vector<Parameter*> parameters();
};

/// W in R^{D x (N + D)} mapping [one_hot(v) || eta] to a node feature.
struct NodeFeatureProjector {
  int n_rois = 0;
  int dim = 0;
  Parameter w;

  NodeFeatureProjector() = default;
  NodeFeatureProjector(int n_rois, int dim, std::mt19937_64& rng);

  std::vector<Parameter*> parameters();
};

/// Hidden state after consuming columns [0, endpoint) from a zero state.
Vec gru_encode_prefix(const RoiTimeSeries& ts, int endpoint, const GruEncoder& enc);

/// x_v = W [one_hot(v) || eta].
Vec node_feature(int v, const Vec& eta, const NodeFeatureProjector& proj);

/// X(t) (N x D) per segment of g.
std::vector<Mat> feature_matrix(const RoiTimeSeries& ts, const DynamicBrainGraph& g,
                                const GruEncoder& enc, const NodeFeatureProjector& proj);

namespace ad {

/// Runs the GRU once over series (N x Tmax) up to the last endpoint and
/// returns the hidden states after endpoints[t] steps as row t (T x D).
/// Prefix states nest, so this equals one prefix evaluation per segment.
Var gru_snapshots(Var w_ih, Var w_hh, Var b_ih, Var b_hh, const Mat& series,
                  const std::vector<int>& endpoints);

/// Stacked node features: row t*N + v is W[:, v] + W[:, N:] eta_t.
Var stacked_node_features(Var projector, Var snapshots, int n_rois);

}  // namespace ad

}  // namespace hdgl
