#include "hdgl/population_classifier.hpp"

#include "hdgl/errors.hpp"

#include <cmath>

namespace hdgl {

GraphTransformerLayer::GraphTransformerLayer(const std::string& name, int in, int out,
                                             std::mt19937_64& rng)
    : w1{name + ".w1", glorot(in, out, rng)},
      w2{name + ".w2", glorot(in, out, rng)},
      w3{name + ".w3", glorot(in, out, rng)},
      w4{name + ".w4", glorot(in, out, rng)} {}

std::vector<Parameter*> GraphTransformerLayer::parameters() { return {&w1, &w2, &w3, &w4}; }

ad::Var graph_transformer_forward(ForwardContext& ctx, ad::Var h, const PopulationGraph& graph,
                                  const GraphTransformerLayer& layer, const AttentionOptions& opts,
                                  Mat* alpha) {
  if (h.rows() != graph.size()) {
    fail(ErrorCode::Shape, std::to_string(h.rows()) + " feature rows for a graph of " +
                               std::to_string(graph.size()) + " nodes");
  }
  if (h.cols() != layer.w1.value.rows()) {
    fail(ErrorCode::Shape, "feature width " + std::to_string(h.cols()) + " does not match layer input " +
                               std::to_string(layer.w1.value.rows()));
  }
  const BoolMat mask = graph.neighbor_mask();
  ad::Var self = ad::matmul(h, ctx.bind(layer.w1));
  ad::Var msg = ad::matmul(h, ctx.bind(layer.w2));
  ad::Var q = ad::matmul(h, ctx.bind(layer.w3));
  ad::Var k = ad::matmul(h, ctx.bind(layer.w4));
  ad::Var logits = ad::scale(ad::matmul(q, ad::transpose(k)),
                             1.0 / std::sqrt(static_cast<double>(layer.out_dim())));
  if (opts.weighted) {
    Mat bias = Mat::Zero(graph.size(), graph.size());
    for (Eigen::Index i = 0; i < bias.rows(); ++i) {
      for (Eigen::Index j = 0; j < bias.cols(); ++j) {
        if (mask(i, j)) bias(i, j) = std::log(graph.edge_weights(i, j));
      }
    }
    logits = ad::add_const(logits, bias);
  }
  // Rows without neighbors come out of the masked softmax as zeros, leaving
  // only the self term.
  ad::Var a = ad::softmax_rows(logits, mask);
  if (alpha != nullptr) *alpha = a.value();
  return ad::add(self, ad::matmul(a, msg));
}

Mat graph_transformer_forward(const Mat& h, const PopulationGraph& graph,
                              const GraphTransformerLayer& layer, const AttentionOptions& opts,
                              Mat* alpha) {
  ad::Tape tape;
  ForwardContext ctx(tape);
  return graph_transformer_forward(ctx, tape.constant(h), graph, layer, opts, alpha).value();
}

PopulationClassifier::PopulationClassifier(int in_dim, int hidden_dim, std::mt19937_64& rng)
    : layer1("pop.gt1", in_dim, hidden_dim, rng),
      layer2("pop.gt2", hidden_dim, hidden_dim, rng),
      head("pop.head", hidden_dim, 2, rng) {
  // Raw encoder embeddings are large; small first-layer and attention weights
  // keep the initial logits in a range where softmax still has gradient.
  constexpr double kShrink = 0.03;
  for (auto* w : {&layer1.w1, &layer1.w2, &layer1.w3, &layer1.w4, &layer2.w3, &layer2.w4}) {
    w->value *= kShrink;
  }
}

ad::Var PopulationClassifier::forward(ForwardContext& ctx, ad::Var h,
                                      const PopulationGraph& graph) const {
  if (!h.valid()) h = ctx.tape().constant(graph.features);
  ad::Var x = ad::relu(graph_transformer_forward(ctx, h, graph, layer1, attention));
  x = ctx.dropout(x);
  x = ad::relu(graph_transformer_forward(ctx, x, graph, layer2, attention));
  return head.forward(ctx, x);
}

Mat PopulationClassifier::classify(const PopulationGraph& graph) const {
  ad::Tape tape;
  ForwardContext ctx(tape);
  return forward(ctx, ad::Var{}, graph).value();
}

std::vector<Parameter*> PopulationClassifier::parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : layer1.parameters()) out.push_back(p);
  for (Parameter* p : layer2.parameters()) out.push_back(p);
  for (Parameter* p : head.parameters()) out.push_back(p);
  return out;
}

}  // namespace hdgl
