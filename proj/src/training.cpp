#include "hdgl/training.hpp"

#include "hdgl/errors.hpp"
#include "hdgl/optimizer.hpp"
#include "hdgl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace hdgl {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix(h ^ p);
  return h;
}

// Stream tags keep the per-purpose RNG streams apart.
enum Stream : std::uint64_t { kInit = 1, kShuffle, kEncoder, kClassifier, kPretrain, kPhase2 };

kernels::Exec exec_mode() {
  return kernels::thread_count() > 1 ? kernels::Exec::Parallel : kernels::Exec::Serial;
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<int>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

// With every pairwise distance zero S_I is 1 for any positive sigma, so a
// collapsed embedding still gets a graph.
double sigma_or_unit(const Mat& embeddings, bool* degenerate = nullptr) {
  if (embeddings.rows() < 2) return 1.0;  // no pairs, sigma unused
  try {
    return sigma_from_embeddings(embeddings);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateSigma) throw;
    if (degenerate) *degenerate = true;
    return 1.0;
  }
}

Mat gather_square(const Mat& m, const std::vector<int>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Mat out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out(i, j) = m(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

Vec class1_probability(const Mat& logits) { return softmax_rows_value(logits).col(1); }

std::vector<std::vector<int>> make_batches(const std::vector<int>& items, int size) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(size)) {
    const auto end = std::min(items.size(), i + static_cast<std::size_t>(size));
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                     items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

/// Per-subject forward pass kept alive until its gradient is pushed back.
struct SubjectPass {
  std::unique_ptr<ad::Tape> tape;
  ad::Var embedding;
};

struct EncodedBatch {
  std::vector<SubjectPass> passes;
  Mat embeddings;
};

const DynamicBrainGraph& graph_for(int subject, const Dataset& data, const TrainConfig& cfg,
                                   const std::vector<DynamicBrainGraph>* graphs,
                                   std::unique_ptr<DynamicBrainGraph>& owned) {
  if (graphs != nullptr) return (*graphs)[static_cast<std::size_t>(subject)];
  owned = std::make_unique<DynamicBrainGraph>(
      build_dynamic_graph(data.series[static_cast<std::size_t>(subject)], cfg.window(), cfg.keep_fraction));
  return *owned;
}

EncodedBatch encode_training(const HdglModel& model, const Dataset& data,
                             const std::vector<int>& subjects,
                             const std::vector<DynamicBrainGraph>* graphs, std::uint64_t stream) {
  const TrainConfig& cfg = model.config();
  EncodedBatch out;
  out.passes.resize(subjects.size());
  out.embeddings.resize(static_cast<Eigen::Index>(subjects.size()), model.encoder.embedding_dim());
  kernels::for_each_index(static_cast<int>(subjects.size()), exec_mode(), [&](int i) {
    const int s = subjects[static_cast<std::size_t>(i)];
    std::unique_ptr<DynamicBrainGraph> owned;
    const DynamicBrainGraph& g = graph_for(s, data, cfg, graphs, owned);
    SubjectPass& pass = out.passes[static_cast<std::size_t>(i)];
    pass.tape = std::make_unique<ad::Tape>();
    std::mt19937_64 rng(mix({stream, static_cast<std::uint64_t>(s)}));
    ForwardContext ctx(*pass.tape, true, cfg.dropout, &rng);
    pass.embedding = model.encoder.forward(ctx, data.series[static_cast<std::size_t>(s)], g).embedding;
    out.embeddings.row(i) = pass.embedding.value();
  });
  return out;
}

/// Pushes d_emb (one row per pass) through the subject tapes.
Gradients backprop_subjects(EncodedBatch& batch, const Mat& d_emb) {
  std::vector<Gradients> per(batch.passes.size());
  kernels::for_each_index(static_cast<int>(batch.passes.size()), exec_mode(), [&](int i) {
    SubjectPass& pass = batch.passes[static_cast<std::size_t>(i)];
    pass.tape->backward(pass.embedding, Mat(d_emb.row(i)));
    pass.tape->collect(per[static_cast<std::size_t>(i)]);
    pass.tape.reset();
  });
  Gradients out;
  for (const auto& g : per) out.merge(g);
  return out;
}

struct LevelTwoStep {
  double loss = 0.0;
  Mat logits;
  Mat d_emb;
  Gradients grads;
  Vec node_loss;
};

/// Population-level forward and backward. When base is given the batch rows
/// are placed into it at `rows` and the graph spans all of base.
LevelTwoStep level_two_step(const HdglModel& model, const Mat& batch_emb, const Mat* base,
                            const std::vector<int>& rows, const PopulationGraph& graph_template,
                            const std::vector<int>& labels, const std::vector<bool>& mask,
                            std::uint64_t stream) {
  const TrainConfig& cfg = model.config();
  ad::Tape tape;
  std::mt19937_64 rng(stream);
  ForwardContext ctx(tape, true, cfg.dropout, &rng);
  ad::Var e = tape.input(batch_emb);
  ad::Var h = base != nullptr ? ad::place_rows(*base, e, rows) : e;
  ad::Var logits = model.classifier.forward(ctx, h, graph_template);
  ad::Var loss = ad::masked_cross_entropy(logits, labels, mask);
  tape.backward(loss);
  LevelTwoStep out;
  out.loss = loss.value()(0, 0);
  out.logits = logits.value();
  out.d_emb = tape.grad(e);
  tape.collect(out.grads);
  out.node_loss = cross_entropy_terms(out.logits, labels, mask);
  return out;
}

struct LevelOneStep {
  double loss = 0.0;
  Mat logits;
  Mat d_emb;
  Gradients grads;
};

LevelOneStep level_one_step(const HdglModel& model, const Mat& batch_emb,
                            const std::vector<int>& labels) {
  ad::Tape tape;
  ForwardContext ctx(tape);
  ad::Var e = tape.input(batch_emb);
  ad::Var logits = model.level1_head.forward(ctx, e);
  ad::Var loss = ad::masked_cross_entropy(logits, labels, std::vector<bool>(labels.size(), true));
  tape.backward(loss);
  LevelOneStep out;
  out.loss = loss.value()(0, 0);
  out.logits = logits.value();
  out.d_emb = tape.grad(e);
  tape.collect(out.grads);
  return out;
}

/// Collects training-split predictions and step losses over one epoch.
struct EpochMeter {
  std::vector<double> prob;
  std::vector<int> labels;
  double loss_sum = 0.0;
  int steps = 0;

  void add_loss(double l) {
    loss_sum += l;
    ++steps;
  }
  void add(const Mat& logits, const std::vector<int>& y, const std::vector<bool>& mask) {
    const Vec p = class1_probability(logits);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!mask[i]) continue;
      prob.push_back(p(static_cast<Eigen::Index>(i)));
      labels.push_back(y[i]);
    }
  }
  EpochLog finish(int epoch, const std::string& split) const {
    EpochLog e;
    e.epoch = epoch;
    e.split = split;
    e.loss = steps > 0 ? loss_sum / steps : std::numeric_limits<double>::quiet_NaN();
    if (!labels.empty()) {
      const MetricReport r = compute_metrics(Eigen::Map<const Vec>(prob.data(), static_cast<Eigen::Index>(prob.size())), labels);
      e.acc = r.accuracy;
      e.f1 = r.f1;
      e.auc = r.auc;
    }
    return e;
  }
};

class EarlyStop {
 public:
  explicit EarlyStop(int patience) : patience_(patience) {}
  /// True when training should stop after this epoch.
  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      stale_ = 0;
      return false;
    }
    return ++stale_ >= patience_;
  }

 private:
  int patience_;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct StepProbe {
  long calls_before;
  int live_before;

  explicit StepProbe(const HdglModel& model)
      : calls_before(model.encoder.forward_calls()), live_before(GraphInstanceCounter::live()) {
    GraphInstanceCounter::reset_peak();
  }
  void fill(StepInfo& info, const HdglModel& model) const {
    info.encoder_forwards = model.encoder.forward_calls() - calls_before;
    info.peak_graphs = GraphInstanceCounter::peak() - live_before;
  }
};

class FoldTrainer {
 public:
  FoldTrainer(const Dataset& data, const FoldSplit& split, const TrainConfig& cfg, std::uint64_t seed,
              const TrainingHooks& hooks, const std::vector<DynamicBrainGraph>* graphs,
              FoldResult& result)
      : data_(data),
        split_(split),
        cfg_(cfg),
        seed_(seed),
        hooks_(hooks),
        graphs_(graphs),
        result_(result),
        model_(*result.model),
        shuffle_rng_(mix({seed, kShuffle})),
        labels_(data.labels()),
        phenotype_sim_(phenotype_similarity_matrix(data.phenotypes, cfg.population())) {
    train_flag_.assign(data.size(), false);
    for (int i : split.train) train_flag_[static_cast<std::size_t>(i)] = true;
  }

  void run() {
    if (!cfg_.use_population) {
      train_level_one("train", kPretrain);
      return;
    }
    switch (cfg_.regime) {
      case Regime::TransJoin: trans_join(); break;
      case Regime::TransSep: trans_sep(); break;
      case Regime::TransScl: trans_scl(); break;
      case Regime::Induc: induc(); break;
    }
  }

 private:
  void warn(const std::string& msg) {
    result_.warnings.push_back(msg);
    if (hooks_.on_warning) hooks_.on_warning(msg);
  }

  double checked_sigma(const Mat& embeddings) {
    bool degenerate = false;
    const double sigma = sigma_or_unit(embeddings, &degenerate);
    if (degenerate) warn("embeddings are perfectly correlated, using sigma = 1");
    return sigma;
  }

  void emit(StepInfo& info) {
    if (hooks_.on_step) hooks_.on_step(info);
  }

  PopulationGraph graph_over(const std::vector<int>& nodes, const Mat& embeddings,
                             std::optional<double> sigma = std::nullopt) {
    if (!sigma) sigma = checked_sigma(embeddings);
    const Mat s_ni = gather_square(phenotype_sim_, nodes);
    PopulationGraph g = build_population_graph(embeddings, gather(data_.phenotypes, nodes),
                                               cfg_.population(), sigma, &s_ni);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      g.train_mask[i] = train_flag_[static_cast<std::size_t>(nodes[i])];
      g.test_mask[i] = !g.train_mask[i];
    }
    return g;
  }

  bool log_epoch(EpochMeter& meter, int epoch, const std::string& split, EarlyStop& stop) {
    const EpochLog e = meter.finish(epoch, split);
    result_.log.push_back(e);
    result_.epochs_run = epoch + 1;
    return stop.update(e.loss);
  }

  std::vector<int> shuffled(std::vector<int> v) {
    std::shuffle(v.begin(), v.end(), shuffle_rng_);
    return v;
  }

  // Encoder + subject-level head on minibatches of training subjects.
  void train_level_one(const std::string& phase, Stream tag) {
    std::vector<Parameter*> params = model_.encoder_parameters();
    for (Parameter* p : model_.level1_head_parameters()) params.push_back(p);
    Adam opt(params);
    const int per_epoch = (static_cast<int>(split_.train.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    const int total = cfg_.epochs * per_epoch;
    EarlyStop stop(cfg_.patience);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      EpochMeter meter;
      const auto batches = make_batches(shuffled(split_.train), cfg_.batch_size);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        StepProbe probe(model_);
        const int step = epoch * per_epoch + static_cast<int>(b);
        const std::vector<int> y = gather(labels_, batches[b]);
        EncodedBatch enc = encode_training(model_, data_, batches[b], graphs_,
                                           mix({seed_, tag, kEncoder, static_cast<std::uint64_t>(step)}));
        LevelOneStep top = level_one_step(model_, enc.embeddings, y);
        Gradients g = backprop_subjects(enc, top.d_emb);
        g.merge(top.grads);
        const double lr = one_cycle_lr(step, total, cfg_);
        opt.step(g, lr);
        meter.add_loss(top.loss);
        meter.add(top.logits, y, std::vector<bool>(y.size(), true));
        StepInfo info;
        info.phase = phase;
        info.epoch = epoch;
        info.step = static_cast<int>(b);
        info.lr = lr;
        info.loss = top.loss;
        probe.fill(info, model_);
        emit(info);
      }
      if (log_epoch(meter, epoch, phase, stop)) break;
    }
  }

  void trans_join() {
    std::vector<Parameter*> params = model_.encoder_parameters();
    for (Parameter* p : model_.classifier_parameters()) params.push_back(p);
    Adam opt(params);
    const std::vector<int> nodes = iota_vec(static_cast<int>(data_.size()));
    EarlyStop stop(cfg_.patience);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      StepProbe probe(model_);
      const auto e = static_cast<std::uint64_t>(epoch);
      EncodedBatch enc = encode_training(model_, data_, nodes, graphs_, mix({seed_, kEncoder, e}));
      PopulationGraph graph = graph_over(nodes, enc.embeddings);
      LevelTwoStep top = level_two_step(model_, enc.embeddings, nullptr, {}, graph, labels_,
                                        graph.train_mask, mix({seed_, kClassifier, e}));
      Gradients g = backprop_subjects(enc, top.d_emb);
      g.merge(top.grads);
      const double lr = one_cycle_lr(epoch, cfg_.epochs, cfg_);
      opt.step(g, lr);

      EpochMeter meter;
      meter.add_loss(top.loss);
      meter.add(top.logits, labels_, graph.train_mask);
      StepInfo info;
      info.phase = "train";
      info.epoch = epoch;
      info.lr = lr;
      info.loss = top.loss;
      info.graph_node_ids = graph.node_ids;
      info.loss_mask = graph.train_mask;
      info.node_loss = top.node_loss;
      probe.fill(info, model_);
      emit(info);
      if (log_epoch(meter, epoch, "train", stop)) break;
    }
  }

  void trans_sep() {
    train_level_one("pretrain", kPretrain);
    const int pretrain_epochs = result_.epochs_run;

    const std::vector<int> nodes = iota_vec(static_cast<int>(data_.size()));
    const Mat emb = encode_eval(model_, data_, nodes, graphs_);
    const PopulationGraph graph = graph_over(nodes, emb);
    Adam opt(model_.classifier_parameters());
    const int z = cfg_.sep_phase2_batch;
    const int per_epoch = (static_cast<int>(split_.train.size()) + z - 1) / z;
    const int total = cfg_.epochs * per_epoch;
    EarlyStop stop(cfg_.patience);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      EpochMeter meter;
      const auto batches = make_batches(shuffled(split_.train), z);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        StepProbe probe(model_);
        const int step = epoch * per_epoch + static_cast<int>(b);
        std::vector<bool> mask(data_.size(), false);
        for (int i : batches[b]) mask[static_cast<std::size_t>(i)] = true;
        LevelTwoStep top = level_two_step(model_, emb, nullptr, {}, graph, labels_, mask,
                                          mix({seed_, kPhase2, static_cast<std::uint64_t>(step)}));
        const double lr = one_cycle_lr(step, total, cfg_);
        opt.step(top.grads, lr);
        meter.add_loss(top.loss);
        meter.add(top.logits, labels_, mask);
        StepInfo info;
        info.phase = "train";
        info.epoch = epoch;
        info.step = static_cast<int>(b);
        info.lr = lr;
        info.loss = top.loss;
        info.graph_node_ids = graph.node_ids;
        info.loss_mask = mask;
        info.node_loss = top.node_loss;
        probe.fill(info, model_);
        emit(info);
      }
      const EpochLog e = meter.finish(pretrain_epochs + epoch, "train");
      result_.log.push_back(e);
      result_.epochs_run = pretrain_epochs + epoch + 1;
      if (stop.update(e.loss)) break;
    }
  }

  void trans_scl() {
    const int m = static_cast<int>(data_.size());
    if (cfg_.batch_size > m) {
      fail(ErrorCode::Config, "batch size " + std::to_string(cfg_.batch_size) +
                                  " exceeds the " + std::to_string(m) + " subjects");
    }
    std::vector<Parameter*> params = model_.encoder_parameters();
    for (Parameter* p : model_.classifier_parameters()) params.push_back(p);
    Adam opt(params);
    const std::vector<int> nodes = iota_vec(m);
    const int per_epoch = (m + cfg_.batch_size - 1) / cfg_.batch_size;
    const int total = cfg_.epochs * per_epoch;
    FeatureCache cache(m, model_.encoder.embedding_dim());
    EarlyStop stop(cfg_.patience);
    std::optional<double> sigma;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      if (epoch > 0) sigma = checked_sigma(cache.matrix);
      EpochMeter meter;
      const auto batches = make_batches(shuffled(nodes), cfg_.batch_size);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        StepProbe probe(model_);
        const int step = epoch * per_epoch + static_cast<int>(b);
        const auto s = static_cast<std::uint64_t>(step);
        const std::vector<int>& batch = batches[b];
        // Graphs are built per batch so at most Z exist at once.
        EncodedBatch enc = encode_training(model_, data_, batch, nullptr, mix({seed_, kEncoder, s}));
        cache.store(batch, enc.embeddings);
        if (epoch == 0) sigma = populated_sigma(cache);

        std::vector<bool> mask(static_cast<std::size_t>(m), false);
        bool any = false;
        for (int i : batch) {
          if (train_flag_[static_cast<std::size_t>(i)]) {
            mask[static_cast<std::size_t>(i)] = true;
            any = true;
          }
        }
        const PopulationGraph graph = graph_over(nodes, cache.matrix, sigma);
        StepInfo info;
        info.phase = "train";
        info.epoch = epoch;
        info.step = static_cast<int>(b);
        info.graph_node_ids = graph.node_ids;
        info.loss_mask = mask;
        info.populated = cache.populated_count();
        if (any) {
          LevelTwoStep top = level_two_step(model_, enc.embeddings, &cache.matrix, batch, graph,
                                            labels_, mask, mix({seed_, kClassifier, s}));
          Gradients g = backprop_subjects(enc, top.d_emb);
          g.merge(top.grads);
          info.lr = one_cycle_lr(step, total, cfg_);
          opt.step(g, info.lr);
          meter.add_loss(top.loss);
          meter.add(top.logits, labels_, mask);
          info.loss = top.loss;
          info.node_loss = top.node_loss;
        } else {
          warn("epoch " + std::to_string(epoch) + " step " + std::to_string(b) +
               ": batch has no training subjects, update skipped");
          info.node_loss = Vec::Zero(m);
        }
        probe.fill(info, model_);
        emit(info);
      }
      if (log_epoch(meter, epoch, "train", stop)) break;
    }
  }

  double populated_sigma(const FeatureCache& cache) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < cache.populated.size(); ++i) {
      if (cache.populated[i]) rows.push_back(static_cast<int>(i));
    }
    if (rows.size() < 2) return 1.0;
    Mat sub(static_cast<Eigen::Index>(rows.size()), cache.matrix.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = cache.matrix.row(rows[i]);
    return checked_sigma(sub);
  }

  void induc() {
    std::vector<Parameter*> params = model_.encoder_parameters();
    for (Parameter* p : model_.classifier_parameters()) params.push_back(p);
    Adam opt(params);
    const int per_epoch = (static_cast<int>(split_.train.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    const int total = cfg_.epochs * per_epoch;
    EarlyStop stop(cfg_.patience);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      EpochMeter meter;
      const auto batches = make_batches(shuffled(split_.train), cfg_.batch_size);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        StepProbe probe(model_);
        const int step = epoch * per_epoch + static_cast<int>(b);
        const auto s = static_cast<std::uint64_t>(step);
        const std::vector<int>& batch = batches[b];
        const std::vector<int> y = gather(labels_, batch);
        if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
          warn("epoch " + std::to_string(epoch) + " step " + std::to_string(b) +
               ": batch contains a single class");
        }
        EncodedBatch enc = encode_training(model_, data_, batch, graphs_, mix({seed_, kEncoder, s}));
        const PopulationGraph graph = graph_over(batch, enc.embeddings);
        const std::vector<bool> mask(batch.size(), true);
        LevelTwoStep top = level_two_step(model_, enc.embeddings, nullptr, {}, graph, y, mask,
                                          mix({seed_, kClassifier, s}));
        Gradients g = backprop_subjects(enc, top.d_emb);
        g.merge(top.grads);
        const double lr = one_cycle_lr(step, total, cfg_);
        opt.step(g, lr);
        meter.add_loss(top.loss);
        meter.add(top.logits, y, mask);
        StepInfo info;
        info.phase = "train";
        info.epoch = epoch;
        info.step = static_cast<int>(b);
        info.lr = lr;
        info.loss = top.loss;
        info.graph_node_ids = graph.node_ids;
        info.loss_mask = mask;
        info.node_loss = top.node_loss;
        probe.fill(info, model_);
        emit(info);
      }
      if (log_epoch(meter, epoch, "train", stop)) break;
    }
  }

  const Dataset& data_;
  const FoldSplit& split_;
  const TrainConfig& cfg_;
  std::uint64_t seed_;
  const TrainingHooks& hooks_;
  const std::vector<DynamicBrainGraph>* graphs_;
  FoldResult& result_;
  HdglModel& model_;
  std::mt19937_64 shuffle_rng_;
  std::vector<int> labels_;
  std::vector<bool> train_flag_;
  Mat phenotype_sim_;
};

}  // namespace

HdglModel::HdglModel(const TrainConfig& config, int n_rois, std::uint64_t seed)
    : config_(config), n_rois_(n_rois) {
  config_.validate();
  std::mt19937_64 rng(mix({seed, kInit}));
  encoder = BrainEncoder(config_.encoder(n_rois), rng);
  classifier = PopulationClassifier(encoder.embedding_dim(), config_.pop_dim, rng);
  classifier.attention.weighted = config_.weighted_attention;
  level1_head = Linear("level1.head", encoder.embedding_dim(), 2, rng);
}

std::vector<Parameter*> HdglModel::parameters() {
  std::vector<Parameter*> out = encoder.parameters();
  for (Parameter* p : classifier.parameters()) out.push_back(p);
  for (Parameter* p : level1_head.parameters()) out.push_back(p);
  return out;
}

int FeatureCache::populated_count() const {
  return static_cast<int>(std::count(populated.begin(), populated.end(), true));
}

void FeatureCache::store(const std::vector<int>& rows, const Mat& values) {
  if (values.rows() != static_cast<Eigen::Index>(rows.size()) || values.cols() != matrix.cols()) {
    fail(ErrorCode::Shape, "cache update does not match the batch");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    matrix.row(rows[i]) = values.row(static_cast<Eigen::Index>(i));
    populated[static_cast<std::size_t>(rows[i])] = true;
  }
}

std::string format_log_line(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f,%.6f", e.epoch, e.split.c_str(), e.loss,
                e.acc, e.f1, e.auc);
  return buf;
}

Mat encode_eval(const HdglModel& model, const Dataset& data, const std::vector<int>& subjects,
                const std::vector<DynamicBrainGraph>* graphs, std::vector<RetentionTrace>* retention) {
  Mat out(static_cast<Eigen::Index>(subjects.size()), model.encoder.embedding_dim());
  if (retention != nullptr) retention->assign(subjects.size(), {});
  kernels::for_each_index(static_cast<int>(subjects.size()), exec_mode(), [&](int i) {
    const int s = subjects[static_cast<std::size_t>(i)];
    std::unique_ptr<DynamicBrainGraph> owned;
    const DynamicBrainGraph& g = graph_for(s, data, model.config(), graphs, owned);
    ad::Tape tape;
    ForwardContext ctx(tape);
    auto res = model.encoder.forward(ctx, data.series[static_cast<std::size_t>(s)], g);
    out.row(i) = res.embedding.value();
    if (retention != nullptr) (*retention)[static_cast<std::size_t>(i)] = std::move(res.retained);
  });
  return out;
}

Evaluation evaluate_model(const HdglModel& model, const Dataset& data, const std::vector<int>& nodes,
                          const std::vector<bool>& test_mask,
                          const std::vector<DynamicBrainGraph>* graphs) {
  if (test_mask.size() != nodes.size()) fail(ErrorCode::Shape, "test mask does not match the nodes");
  if (data.size() > 0 && data.series.front().n_rois() != model.n_rois()) {
    fail(ErrorCode::Checkpoint, "model expects " + std::to_string(model.n_rois()) + " ROIs, data has " +
                                    std::to_string(data.series.front().n_rois()));
  }
  Evaluation ev;
  ev.nodes = nodes;
  ev.test_mask = test_mask;
  std::vector<RetentionTrace> retention;
  ev.embeddings = encode_eval(model, data, nodes, graphs, &retention);
  Mat logits;
  if (model.config().use_population) {
    ev.graph = build_population_graph(ev.embeddings, gather(data.phenotypes, nodes),
                                      model.config().population(), sigma_or_unit(ev.embeddings));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      ev.graph.test_mask[i] = test_mask[i];
      ev.graph.train_mask[i] = !test_mask[i];
    }
    logits = model.classifier.classify(ev.graph);
  } else {
    ad::Tape tape;
    ForwardContext ctx(tape);
    logits = model.level1_head.forward(ctx, tape.constant(ev.embeddings)).value();
  }
  const std::vector<int> labels = gather(data.labels(), nodes);
  const Vec terms = cross_entropy_terms(logits, labels, test_mask);
  const Vec prob = class1_probability(logits);
  std::vector<double> p;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!test_mask[i]) continue;
    p.push_back(prob(static_cast<Eigen::Index>(i)));
    ev.test_labels.push_back(labels[i]);
    ev.retention.push_back(std::move(retention[i]));
  }
  if (p.empty()) fail(ErrorCode::InvalidMask, "no test subjects to evaluate");
  ev.probabilities = Eigen::Map<Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
  ev.loss = terms.sum() / static_cast<double>(p.size());
  ev.metrics = compute_metrics(ev.probabilities, ev.test_labels);
  return ev;
}

Evaluation evaluate_fold(const HdglModel& model, const Dataset& data, const FoldSplit& split,
                         const std::vector<DynamicBrainGraph>* graphs) {
  const TrainConfig& cfg = model.config();
  if (cfg.regime == Regime::Induc || !cfg.use_population) {
    return evaluate_model(model, data, split.test, std::vector<bool>(split.test.size(), true), graphs);
  }
  const std::vector<int> nodes = iota_vec(static_cast<int>(data.size()));
  std::vector<bool> mask(data.size(), false);
  for (int i : split.test) mask[static_cast<std::size_t>(i)] = true;
  return evaluate_model(model, data, nodes, mask, graphs);
}

FoldResult train_fold(const Dataset& data, const FoldSplit& split, const TrainConfig& cfg,
                      std::uint64_t seed, const TrainingHooks& hooks,
                      const std::vector<DynamicBrainGraph>* graphs) {
  cfg.validate();
  if (data.size() == 0) fail(ErrorCode::InvalidInput, "empty dataset");
  if (split.train.empty() || split.test.empty()) fail(ErrorCode::InvalidInput, "fold needs train and test subjects");
  if (cfg.threads > 0) kernels::set_thread_count(cfg.threads);
  FoldResult result;
  result.split = split;
  result.model = std::make_shared<HdglModel>(cfg, data.series.front().n_rois(), seed);
  FoldTrainer(data, split, cfg, seed, hooks, graphs, result).run();
  result.test = evaluate_fold(*result.model, data, split, graphs);
  EpochLog test;
  test.epoch = result.epochs_run;
  test.split = "test";
  test.loss = result.test.loss;
  test.acc = result.test.metrics.accuracy;
  test.f1 = result.test.metrics.f1;
  test.auc = result.test.metrics.auc;
  result.log.push_back(test);
  return result;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return mix({seed, static_cast<std::uint64_t>(fold)});
}

CrossValidationResult run_cross_validation(const Dataset& data, const TrainConfig& cfg,
                                           const TrainingHooks& hooks) {
  cfg.validate();
  if (cfg.threads > 0) kernels::set_thread_count(cfg.threads);
  CrossValidationResult out;
  out.folds = stratified_kfold(data.labels(), cfg.folds, cfg.seed);
  std::vector<DynamicBrainGraph> graphs;
  const bool cached = !(cfg.regime == Regime::TransScl && cfg.use_population);
  if (cached) graphs = kernels::build_dynamic_graphs(data.series, cfg.window(), cfg.keep_fraction, exec_mode());
  std::vector<MetricReport> reports;
  for (int f = 0; f < cfg.folds; ++f) {
    FoldSplit split{out.folds.complement(f), out.folds.members(f)};
    out.results.push_back(train_fold(data, split, cfg, fold_seed(cfg.seed, f), hooks,
                                     cached ? &graphs : nullptr));
    reports.push_back(out.results.back().test.metrics);
  }
  out.aggregate = aggregate_folds(reports);
  return out;
}

}  // namespace hdgl
