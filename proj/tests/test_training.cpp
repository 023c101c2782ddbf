#include "hdgl/config.hpp"
#include "hdgl/errors.hpp"
#include "hdgl/training.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace hdgl;

namespace {

Dataset tiny_dataset(int m, std::uint64_t seed = 11, int n_rois = 8) {
  const auto c = generate_synthetic_cohort({m, n_rois, 40, 0.8, seed});
  return make_dataset(c.series, c.phenotypes);
}

TrainConfig tiny_config(Regime regime) {
  TrainConfig c;
  c.regime = regime;
  c.window_length = 10;
  c.window_stride = 5;
  c.embed_dim = 4;
  c.attn_dim = 4;
  c.ff_hidden = 4;
  c.layers = 2;
  c.encoder_layers = 1;
  c.pop_dim = 4;
  c.dropout = 0.0;
  c.epochs = 3;
  c.patience = 50;
  c.batch_size = 4;
  c.sep_phase2_batch = 4;
  c.lr_initial = 1e-3;
  c.lr_max = 1e-2;
  return c;
}

FoldSplit split_of(const Dataset& d, int fold, int k = 4) {
  const auto f = stratified_kfold(d.labels(), k, 5);
  return {f.complement(fold), f.members(fold)};
}

std::vector<Mat> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Mat> out;
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

bool same(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("one-cycle schedule values") {
  TrainConfig c;
  const int total = 100;
  CHECK(one_cycle_lr(0, total, c) == doctest::Approx(5e-4).epsilon(1e-14));
  CHECK(one_cycle_lr(20, total, c) == doctest::Approx(9e-4).epsilon(1e-14));
  CHECK(one_cycle_lr(total - 1, total, c) == doctest::Approx(5e-4).epsilon(1e-14));
  CHECK(one_cycle_lr(10, total, c) == doctest::Approx(7e-4).epsilon(1e-14));
  CHECK_THROWS_AS(one_cycle_lr(total, total, c), Error);
  CHECK_THROWS_AS(one_cycle_lr(-1, total, c), Error);
  c.lr_floor = 1e-5;
  CHECK(one_cycle_lr(total - 1, total, c) == doctest::Approx(1e-5).epsilon(1e-14));
}

TEST_CASE("one-cycle schedule shape") {
  TrainConfig c;
  for (int total : {2, 3, 7, 10, 55, 300}) {
    const int peak = static_cast<int>(std::floor(c.warmup_fraction * total));
    int at_max = 0;
    double max_jump = 0.0;
    for (int s = 0; s < total; ++s) {
      const double lr = one_cycle_lr(s, total, c);
      CHECK(lr >= c.lr_initial - 1e-18);
      CHECK(lr <= c.lr_max + 1e-18);
      if (lr == c.lr_max) ++at_max;
      if (s > 0) max_jump = std::max(max_jump, std::abs(lr - one_cycle_lr(s - 1, total, c)));
      if (s < peak) CHECK(one_cycle_lr(s + 1, total, c) > lr);
      if (s > peak && s + 1 < total) CHECK(one_cycle_lr(s + 1, total, c) < lr);
    }
    CHECK(at_max == 1);
    CHECK(one_cycle_lr(peak, total, c) == c.lr_max);
    // Continuous piecewise-linear: no step larger than the steeper slope.
    const double slope = std::max((c.lr_max - c.lr_initial) / std::max(peak, 1),
                                  (c.lr_max - c.lr_initial) / std::max(total - 1 - peak, 1));
    CHECK(max_jump <= slope + 1e-15);
  }
}

TEST_CASE("masked cross-entropy examples") {
  ad::Tape tape;
  Mat z(3, 2);
  z << 0, 0, 10, -10, -50, 50;
  ad::Var logits = tape.constant(z);
  const double two = ad::masked_cross_entropy(logits, {1, 0, 0}, {true, false, false}).value()(0, 0);
  CHECK(two == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const double strong = ad::masked_cross_entropy(logits, {0, 0, 0}, {false, true, false}).value()(0, 0);
  CHECK(strong < 1e-4);
  const double both = ad::masked_cross_entropy(logits, {0, 0, 0}, {true, true, false}).value()(0, 0);
  // Row 2 is badly mislabeled but masked out.
  CHECK(both == doctest::Approx((std::log(2.0) + strong) / 2.0));
  const Vec terms = cross_entropy_terms(z, {0, 0, 0}, {true, true, false});
  CHECK(terms(2) == 0.0);
  CHECK_THROWS_AS(ad::masked_cross_entropy(logits, {0, 0, 0}, {false, false, false}), Error);
}

TEST_CASE("feature cache fills rows") {
  FeatureCache c(5, 2);
  CHECK(c.populated_count() == 0);
  c.store({1, 3}, Mat::Ones(2, 2));
  CHECK(c.populated_count() == 2);
  CHECK(c.matrix.row(0).sum() == 0.0);
  CHECK(c.matrix.row(3).sum() == 2.0);
  c.store({3}, Mat::Constant(1, 2, 4.0));
  CHECK(c.populated_count() == 2);
  CHECK(c.matrix(3, 0) == 4.0);
}

TEST_CASE("trans_join encodes every subject once per step and masks test nodes") {
  const Dataset d = tiny_dataset(16);
  const FoldSplit split = split_of(d, 0);
  TrainConfig cfg = tiny_config(Regime::TransJoin);
  cfg.epochs = 20;
  std::set<std::string> test_ids;
  for (int i : split.test) test_ids.insert(d.series[static_cast<std::size_t>(i)].subject_id);
  int steps = 0;
  TrainingHooks hooks;
  hooks.on_step = [&](const StepInfo& s) {
    ++steps;
    CHECK(s.encoder_forwards == 16);
    REQUIRE(s.node_loss.size() == 16);
    for (std::size_t i = 0; i < s.graph_node_ids.size(); ++i) {
      if (test_ids.count(s.graph_node_ids[i])) {
        CHECK_FALSE(s.loss_mask[i]);
        CHECK(s.node_loss(static_cast<Eigen::Index>(i)) == 0.0);
      }
    }
  };
  const FoldResult r = train_fold(d, split, cfg, 3, hooks);
  CHECK(steps == 20);
  CHECK(r.log.front().split == "train");
  CHECK(r.log[19].loss < r.log[0].loss);
  CHECK(r.log.back().split == "test");
  CHECK(r.test.graph.size() == 16);

  HdglModel fresh(cfg, 8, 3);
  CHECK(fresh.encoder.gru.w_ih.value != r.model->encoder.gru.w_ih.value);
  CHECK(fresh.encoder.gru.w_hh.value != r.model->encoder.gru.w_hh.value);
}

TEST_CASE("trans_scl encodes Z subjects per step and fills the cache") {
  const int m = 20, z = 6;
  const Dataset d = tiny_dataset(m);
  const FoldSplit split = split_of(d, 1);
  TrainConfig cfg = tiny_config(Regime::TransScl);
  cfg.batch_size = z;
  cfg.epochs = 2;
  std::vector<StepInfo> seen;
  TrainingHooks hooks;
  hooks.on_step = [&](const StepInfo& s) { seen.push_back(s); };
  const FoldResult r = train_fold(d, split, cfg, 4, hooks);
  REQUIRE(seen.size() == 2 * 4);
  int j = 0;
  for (const auto& s : seen) {
    const int batch = (s.step + 1) * z <= m ? z : m - s.step * z;
    CHECK(s.encoder_forwards == batch);
    CHECK(s.peak_graphs <= z);
    if (s.epoch == 0) {
      ++j;
      CHECK(s.populated == std::min(j * z, m));
    } else {
      CHECK(s.populated == m);
    }
    for (std::size_t i = 0; i < s.loss_mask.size(); ++i) {
      if (!s.loss_mask[i]) CHECK(s.node_loss(static_cast<Eigen::Index>(i)) == 0.0);
    }
    CHECK(std::count(s.loss_mask.begin(), s.loss_mask.end(), true) <= z);
  }

  cfg.batch_size = m + 1;
  try {
    train_fold(d, split, cfg, 4);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("induc keeps test subjects out of training graphs") {
  const Dataset d = tiny_dataset(20);
  const FoldSplit split = split_of(d, 2);
  TrainConfig cfg = tiny_config(Regime::Induc);
  cfg.batch_size = 4;
  cfg.epochs = 2;
  std::set<std::string> test_ids;
  for (int i : split.test) test_ids.insert(d.series[static_cast<std::size_t>(i)].subject_id);
  std::vector<int> per_epoch(2, 0);
  TrainingHooks hooks;
  hooks.on_step = [&](const StepInfo& s) {
    ++per_epoch[static_cast<std::size_t>(s.epoch)];
    for (const auto& id : s.graph_node_ids) CHECK(test_ids.count(id) == 0);
    CHECK(std::all_of(s.loss_mask.begin(), s.loss_mask.end(), [](bool b) { return b; }));
  };
  const FoldResult r = train_fold(d, split, cfg, 5, hooks);
  const int expected = (static_cast<int>(split.train.size()) + 3) / 4;
  CHECK(per_epoch[0] == expected);
  CHECK(per_epoch[1] == expected);
  CHECK(r.test.graph.size() == static_cast<int>(split.test.size()));
  for (const auto& id : r.test.graph.node_ids) CHECK(test_ids.count(id) == 1);
}

TEST_CASE("induc warns on single-class batches") {
  const Dataset d = tiny_dataset(12);
  FoldSplit split = split_of(d, 0, 3);
  // Sorting training ids by label and using batch size 1 forces one-class batches.
  TrainConfig cfg = tiny_config(Regime::Induc);
  cfg.batch_size = 1;
  cfg.epochs = 1;
  std::vector<std::string> warnings;
  TrainingHooks hooks;
  hooks.on_warning = [&](const std::string& w) { warnings.push_back(w); };
  const FoldResult r = train_fold(d, split, cfg, 6, hooks);
  CHECK(warnings.size() == split.train.size());
  CHECK(r.warnings == warnings);
}

TEST_CASE("trans_sep freezes the encoder in the second phase") {
  const Dataset d = tiny_dataset(16);
  const FoldSplit split = split_of(d, 3);
  TrainConfig cfg = tiny_config(Regime::TransSep);
  std::vector<std::string> phases;
  TrainingHooks hooks;
  hooks.on_step = [&](const StepInfo& s) {
    phases.push_back(s.phase);
    if (s.phase == "train") {
      CHECK(s.encoder_forwards == 0);
      CHECK(s.graph_node_ids.size() == 16);
    }
  };
  const FoldResult sep = train_fold(d, split, cfg, 7, hooks);
  REQUIRE(phases.front() == "pretrain");
  REQUIRE(phases.back() == "train");

  // The first phase is exactly the level-1-only run; the second touches
  // neither the encoder nor the level-1 head.
  TrainConfig solo = cfg;
  solo.use_population = false;
  const FoldResult level1 = train_fold(d, split, solo, 7);
  CHECK(same(snapshot(sep.model->encoder_parameters()), snapshot(level1.model->encoder_parameters())));
  CHECK(same(snapshot(sep.model->level1_head_parameters()), snapshot(level1.model->level1_head_parameters())));
  HdglModel fresh(cfg, 8, 7);
  CHECK_FALSE(same(snapshot(sep.model->classifier_parameters()), snapshot(fresh.classifier_parameters())));
  CHECK(sep.test.graph.size() == 16);
  CHECK(sep.epochs_run == 2 * cfg.epochs);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset d = tiny_dataset(16);
  const FoldSplit split = split_of(d, 0);
  for (Regime regime : {Regime::TransJoin, Regime::TransScl, Regime::Induc, Regime::TransSep}) {
    const TrainConfig cfg = tiny_config(regime);
    const FoldResult a = train_fold(d, split, cfg, 9);
    const FoldResult b = train_fold(d, split, cfg, 9);
    CHECK(same(snapshot(a.model->parameters()), snapshot(b.model->parameters())));
    CHECK(a.test.probabilities == b.test.probabilities);
    CHECK(a.test.metrics.accuracy == b.test.metrics.accuracy);
  }
}

TEST_CASE("worker count does not change results") {
  const Dataset d = tiny_dataset(12);
  const FoldSplit split = split_of(d, 0, 3);
  TrainConfig cfg = tiny_config(Regime::TransJoin);
  cfg.epochs = 2;
  cfg.threads = 1;
  const FoldResult serial = train_fold(d, split, cfg, 2);
  cfg.threads = 3;
  const FoldResult parallel = train_fold(d, split, cfg, 2);
  CHECK(same(snapshot(serial.model->parameters()), snapshot(parallel.model->parameters())));
}

TEST_CASE("early stopping ends a run whose loss stops improving") {
  const Dataset d = tiny_dataset(12);
  const FoldSplit split = split_of(d, 0, 3);
  TrainConfig cfg = tiny_config(Regime::TransJoin);
  cfg.epochs = 40;
  cfg.patience = 1;
  cfg.lr_initial = 1e-300;
  cfg.lr_max = 1e-300;
  const FoldResult r = train_fold(d, split, cfg, 1);
  // Updates vanish below rounding, so the loss repeats and patience runs out.
  CHECK(r.epochs_run == 2);
}

TEST_CASE("cross-validation covers every subject once") {
  const Dataset d = tiny_dataset(16);
  TrainConfig cfg = tiny_config(Regime::Induc);
  cfg.folds = 4;
  cfg.epochs = 1;
  const auto cv = run_cross_validation(d, cfg);
  REQUIRE(cv.results.size() == 4);
  std::vector<int> seen(16, 0);
  for (const auto& r : cv.results) {
    for (int i : r.split.test) ++seen[static_cast<std::size_t>(i)];
    CHECK(r.split.train.size() + r.split.test.size() == 16);
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  CHECK(fold_seed(3, 0) != fold_seed(3, 1));
}

TEST_CASE("log lines") {
  CHECK(format_log_line({3, "train", 0.5, 0.75, 0.5, 1.0}) == "3,train,0.500000,0.750000,0.500000,1.000000");
}
