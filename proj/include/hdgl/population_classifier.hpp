#pragma once

// Subject-level classifier: two graph attention layers over the population
// graph followed by a linear head with two logits per subject.

#include "hdgl/autodiff.hpp"
#include "hdgl/layers.hpp"
#include "hdgl/population_graph.hpp"

#include <random>
#include <string>
#include <vector>

namespace hdgl {

/// h_i' = W1 h_i + sum_{j in N(i)} alpha_ij W2 h_j with
/// alpha_i. = softmax_{j in N(i)} (W3 h_i . W4 h_j) / sqrt(d).
/// Weights are stored in x out and applied on the right of row features.
struct GraphTransformerLayer {
  Parameter w1, w2, w3, w4;

  GraphTransformerLayer() = default;
  GraphTransformerLayer(const std::string& name, int in, int out, std::mt19937_64& rng);

  int out_dim() const { return static_cast<int>(w1.value.cols()); }
  std::vector<Parameter*> parameters();
};

struct AttentionOptions {
  /// Adds log(edge weight) to the attention logits.
  bool weighted = false;
};

ad::Var graph_transformer_forward(ForwardContext& ctx, ad::Var h, const PopulationGraph& graph,
                                  const GraphTransformerLayer& layer,
                                  const AttentionOptions& opts = {}, Mat* alpha = nullptr);
Mat graph_transformer_forward(const Mat& h, const PopulationGraph& graph,
                              const GraphTransformerLayer& layer,
                              const AttentionOptions& opts = {}, Mat* alpha = nullptr);

class PopulationClassifier {
 public:
  PopulationClassifier() = default;
  PopulationClassifier(int in_dim, int hidden_dim, std::mt19937_64& rng);

  /// m x 2 logits. h defaults to graph.features when invalid.
  ad::Var forward(ForwardContext& ctx, ad::Var h, const PopulationGraph& graph) const;
  Mat classify(const PopulationGraph& graph) const;

  std::vector<Parameter*> parameters();

  GraphTransformerLayer layer1, layer2;
  Linear head;
  AttentionOptions attention;
};

}  // namespace hdgl
