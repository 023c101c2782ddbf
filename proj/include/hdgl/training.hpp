#pragma once

// Training regimes. Every regime encodes subjects on independent tapes (one
// per subject, optionally in parallel), joins them on a population-level tape
// and pushes the embedding gradients back subject by subject. Gradients are
// merged in subject order, so results do not depend on the worker count.

#include "hdgl/brain_encoder.hpp"
#include "hdgl/config.hpp"
#include "hdgl/data_ingest.hpp"
#include "hdgl/evaluation.hpp"
#include "hdgl/population_classifier.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hdgl {

/// Encoder, population classifier and the subject-level linear head used by
/// the first trans_sep phase and by the no-population ablation. Parameters
/// are referenced by address, so a model is never moved once built.
class HdglModel {
 public:
  HdglModel(const TrainConfig& config, int n_rois, std::uint64_t seed);
  HdglModel(const HdglModel&) = delete;
  HdglModel& operator=(const HdglModel&) = delete;

  const TrainConfig& config() const { return config_; }
  int n_rois() const { return n_rois_; }

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> encoder_parameters() { return encoder.parameters(); }
  std::vector<Parameter*> classifier_parameters() { return classifier.parameters(); }
  std::vector<Parameter*> level1_head_parameters() { return level1_head.parameters(); }

  BrainEncoder encoder;
  PopulationClassifier classifier;
  Linear level1_head;

 private:
  TrainConfig config_;
  int n_rois_;
};

/// Rows of the m x H embedding matrix that hold encoder output; the rest
/// are zero.
struct FeatureCache {
  Mat matrix;
  std::vector<bool> populated;

  FeatureCache(int m, int h) : matrix(Mat::Zero(m, h)), populated(static_cast<std::size_t>(m), false) {}
  int populated_count() const;
  void store(const std::vector<int>& rows, const Mat& values);
};

struct FoldSplit {
  std::vector<int> train;  // dataset indices
  std::vector<int> test;
};

struct EpochLog {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double acc = 0.0, f1 = 0.0, auc = 0.0;
};

/// `epoch,split,loss,acc,f1,auc`.
std::string format_log_line(const EpochLog& e);

struct StepInfo {
  std::string phase;  // "pretrain", "train"
  int epoch = 0;
  int step = 0;       // within the epoch
  double lr = 0.0;
  double loss = 0.0;
  long encoder_forwards = 0;
  int populated = -1;  // trans_scl cache rows after the step
  int peak_graphs = 0; // peak live dynamic graphs during the step
  std::vector<std::string> graph_node_ids;  // population graph of the step
  std::vector<bool> loss_mask;              // over graph nodes
  Vec node_loss;                            // per graph node, zero off the mask
};

struct TrainingHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const std::string&)> on_warning;
};

struct Evaluation {
  std::vector<int> nodes;         // dataset indices of the evaluated graph
  std::vector<bool> test_mask;    // over nodes
  Mat embeddings;                 // eval-mode, one row per node
  PopulationGraph graph;          // empty when the population level is off
  Vec probabilities;              // P(class 1) per test node
  std::vector<int> test_labels;
  double loss = 0.0;
  MetricReport metrics;
  std::vector<RetentionTrace> retention;  // per test node
};

struct FoldResult {
  FoldSplit split;
  std::shared_ptr<HdglModel> model;
  std::vector<EpochLog> log;
  Evaluation test;
  int epochs_run = 0;
  std::vector<std::string> warnings;
};

struct CrossValidationResult {
  FoldAssignment folds;
  std::vector<FoldResult> results;
  FoldAggregate aggregate;
};

/// Eval-mode embeddings of the given subjects. graphs may be null, in which
/// case each dynamic graph is built on demand.
Mat encode_eval(const HdglModel& model, const Dataset& data, const std::vector<int>& subjects,
                const std::vector<DynamicBrainGraph>* graphs = nullptr,
                std::vector<RetentionTrace>* retention = nullptr);

/// Evaluates the model on a graph over `nodes` with loss and metrics on the
/// nodes flagged in test_mask. This is the test-time path of every regime.
Evaluation evaluate_model(const HdglModel& model, const Dataset& data, const std::vector<int>& nodes,
                          const std::vector<bool>& test_mask,
                          const std::vector<DynamicBrainGraph>* graphs = nullptr);

/// Test-time evaluation of a fold in the model's regime: transductive
/// regimes use a graph over train and test subjects, induc over test only.
Evaluation evaluate_fold(const HdglModel& model, const Dataset& data, const FoldSplit& split,
                         const std::vector<DynamicBrainGraph>* graphs = nullptr);

/// Trains one fold from scratch. graphs (one per dataset subject) is reused
/// when given, except by trans_scl which builds graphs per batch.
FoldResult train_fold(const Dataset& data, const FoldSplit& split, const TrainConfig& cfg,
                      std::uint64_t seed, const TrainingHooks& hooks = {},
                      const std::vector<DynamicBrainGraph>* graphs = nullptr);

/// Stratified k-fold over the dataset with the configured regime.
CrossValidationResult run_cross_validation(const Dataset& data, const TrainConfig& cfg,
                                           const TrainingHooks& hooks = {});

/// Seed for fold f of a run.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

}  // namespace hdgl
