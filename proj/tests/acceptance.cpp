// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   hdgl_acceptance [--cli PATH] [--only 1,4,7]
// Criteria 4, 7 and 8 share the trans_join cross-validation runs.

#include "hdgl/brain_encoder.hpp"
#include "hdgl/dynfc.hpp"
#include "hdgl/errors.hpp"
#include "hdgl/evaluation.hpp"
#include "hdgl/parallel.hpp"
#include "hdgl/population_classifier.hpp"
#include "hdgl/population_graph.hpp"
#include "hdgl/training.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace hdgl;
using hdgl::testing::check_gradients;
using hdgl::testing::pearson_oracle;
using hdgl::testing::random_matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

constexpr int kSeeds = 5;
constexpr int kSubjects = 120;
constexpr int kRois = 16;
constexpr int kTimepoints = 120;
constexpr double kGap = 0.8;

Dataset cohort(std::uint64_t seed, int m = kSubjects) {
  const auto c = generate_synthetic_cohort({m, kRois, kTimepoints, kGap, seed});
  return make_dataset(c.series, c.phenotypes);
}

// Desk-scale settings: dropout off and a raised one-cycle peak so the short
// budgets below converge on the synthetic cohort. The minibatch regimes take
// several steps per epoch and diverge at the full-batch peak.
TrainConfig desk_config(Regime regime, std::uint64_t seed) {
  TrainConfig c;
  c.regime = regime;
  c.seed = seed;
  c.dropout = 0.0;
  c.lr_initial = 1e-3;
  c.lr_max = 1e-2;
  switch (regime) {
    case Regime::TransJoin: c.epochs = 50; break;
    case Regime::TransSep: c.epochs = 20; break;
    case Regime::TransScl:
      c.epochs = 20;
      c.batch_size = 24;
      c.lr_max = 3e-3;
      break;
    case Regime::Induc:
      c.epochs = 20;
      c.batch_size = 30;
      c.lr_max = 3e-3;
      break;
  }
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared trans_join runs, one per seed.
struct JoinRuns {
  std::vector<CrossValidationResult> runs;
  double seconds = 0.0;
};

JoinRuns& join_runs() {
  static JoinRuns cache;
  if (cache.runs.empty()) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < kSeeds; ++s) {
      cache.runs.push_back(run_cross_validation(cohort(static_cast<std::uint64_t>(s)),
                                                desk_config(Regime::TransJoin, static_cast<std::uint64_t>(s))));
    }
    cache.seconds = seconds_since(t0);
  }
  return cache;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Mean test accuracy / AUC over every fold of every seed.
std::pair<double, double> pooled_metrics(const std::vector<CrossValidationResult>& runs) {
  std::vector<double> acc, auc;
  for (const auto& r : runs) {
    for (const auto& f : r.results) {
      acc.push_back(f.test.metrics.accuracy);
      if (f.test.metrics.auc_defined) auc.push_back(f.test.metrics.auc);
    }
  }
  return {mean_of(acc), auc.empty() ? std::nan("") : mean_of(auc)};
}

Outcome criterion1() {
  std::mt19937_64 rng(101);
  int bad = 0;
  for (int i = 0; i < 200; ++i) {
    const int len = 2 + static_cast<int>(rng() % 60);
    const int t_max = len + static_cast<int>(rng() % 300);
    const int stride = 1 + static_cast<int>(rng() % 20);
    const int literal = static_cast<int>(std::floor(static_cast<double>(t_max - len) / stride));
    if (num_windows(t_max, {len, stride}) != literal) ++bad;
  }
  for (int i = 0; i < 200; ++i) {
    const int n = 1 + static_cast<int>(rng() % 120);
    const int percent = 1 + static_cast<int>(rng() % 99);
    const double k = percent / 100.0;
    SagPoolLayer layer("pool", 3, k, rng);
    Mat a = Mat::Zero(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c)
        if (rng() % 3 == 0) a(r, c) = a(c, r) = 1.0;
    const auto out = sagpool(random_matrix(n, 3, rng), a, layer);
    const int expected = std::max(1, (percent * n + 99) / 100);
    if (static_cast<int>(out.retained.size()) != expected || out.x.rows() != expected) ++bad;
  }
  return {bad == 0, std::to_string(400 - bad) + "/400 cases match"};
}

Outcome criterion2() {
  std::mt19937_64 rng(202);
  double pearson_err = 0.0, gcn_err = 0.0, auc_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 15, len = 2 + trial % 40;
    Mat seg = random_matrix(n, len, rng, 1.0 + trial % 5);
    if (trial % 9 == 0) seg.row(n - 1).setConstant(0.25);
    const Mat fc = pearson_fc(seg);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        pearson_err = std::max(pearson_err, std::abs(fc(i, j) - pearson_oracle(seg.row(i), seg.row(j))));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 5;
    Mat a = Mat::Zero(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c)
        if (rng() % 2) a(r, c) = a(c, r) = 1.0;
    const Mat x = random_matrix(n, 3, rng);
    GcnLayer layer;
    layer.theta = {"theta", random_matrix(3, 4, rng)};
    // Dense oracle with explicit degree matrix.
    Mat tilde = a + Mat::Identity(n, n);
    Mat dinv = Mat::Zero(n, n);
    for (int r = 0; r < n; ++r) dinv(r, r) = 1.0 / std::sqrt(tilde.row(r).sum());
    const Mat oracle = (dinv * tilde * dinv * x * layer.theta.value).cwiseMax(0.0);
    gcn_err = std::max(gcn_err, (gcn_forward(x, a, layer) - oracle).cwiseAbs().maxCoeff());
  }
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 19;
    std::vector<int> y(static_cast<std::size_t>(n));
    Vec s(n);
    for (int i = 0; i < n; ++i) {
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
      s(i) = static_cast<double>(rng() % 7) / 6.0;
    }
    y[0] = 0;
    y[1] = 1;
    // Exhaustive sweep over every distinct threshold, trapezoid area.
    std::set<double> cuts(s.data(), s.data() + n);
    double pos = 0, neg = 0;
    for (int v : y) (v ? pos : neg) += 1;
    double area = 0.0, px = 0.0, py = 0.0;
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) {
      double tp = 0, fp = 0;
      for (int i = 0; i < n; ++i)
        if (s(i) >= *it) (y[static_cast<std::size_t>(i)] ? tp : fp) += 1;
      area += (fp / neg - px) * (tp / pos + py) / 2.0;
      px = fp / neg;
      py = tp / pos;
    }
    auc_err = std::max(auc_err, std::abs(compute_auc(s, y) - area));
  }
  const bool pass = pearson_err <= 1e-10 && gcn_err <= 1e-10 && auc_err <= 1e-10;
  return {pass, fmt("max error pearson %.2e, gcn %.2e, auc %.2e", pearson_err, gcn_err, auc_err)};
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::string where;
  for (bool pe : {false, true}) {
    EncoderConfig cfg;
    cfg.n_rois = 4;
    cfg.embed_dim = 4;
    cfg.attn_dim = 4;
    cfg.ff_hidden = 4;
    cfg.layers = 2;
    cfg.encoder_layers = 1;
    cfg.pooling_ratio = 0.75;
    cfg.positional_encoding = pe;
    BrainEncoder enc(cfg, rng);
    const RoiTimeSeries ts = normalize_timeseries({"s", random_matrix(4, 15, rng)});
    const DynamicBrainGraph g = build_dynamic_graph(ts, {6, 3, false}, 0.5);
    Linear head("head", enc.embedding_dim(), 2, rng);
    std::vector<Parameter*> params = enc.parameters();
    for (Parameter* p : head.parameters()) params.push_back(p);
    const auto res = check_gradients(params, [&](ForwardContext& ctx) {
      ad::Var e = enc.forward(ctx, ts, g).embedding;
      return ad::masked_cross_entropy(head.forward(ctx, e), {1}, {true});
    });
    if (res.max_error > worst) {
      worst = res.max_error;
      where = res.worst;
    }
  }
  for (bool weighted : {false, true}) {
    const PopulationGraph g = hdgl::testing::small_population(5, rng);
    PopulationClassifier clf(3, 4, rng);
    clf.attention.weighted = weighted;
    const auto res = check_gradients(clf.parameters(), [&](ForwardContext& ctx) {
      return ad::masked_cross_entropy(clf.forward(ctx, ad::Var{}, g), {0, 1, 0, 1, 1},
                                      {true, true, false, true, true});
    });
    if (res.max_error > worst) {
      worst = res.max_error;
      where = res.worst;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          fmt("max relative error %.2e", worst) + " at " + where + fmt(", %.1f s", secs)};
}

Outcome criterion4() {
  JoinRuns& join = join_runs();
  const auto t0 = std::chrono::steady_clock::now();
  std::map<Regime, std::vector<CrossValidationResult>> other;
  for (Regime r : {Regime::TransSep, Regime::TransScl, Regime::Induc}) {
    for (int s = 0; s < kSeeds; ++s) {
      other[r].push_back(run_cross_validation(cohort(static_cast<std::uint64_t>(s)),
                                              desk_config(r, static_cast<std::uint64_t>(s))));
    }
  }
  const double secs = join.seconds + seconds_since(t0);
  const auto [join_acc, join_auc] = pooled_metrics(join.runs);
  const double sep = pooled_metrics(other[Regime::TransSep]).first;
  const double scl = pooled_metrics(other[Regime::TransScl]).first;
  const double ind = pooled_metrics(other[Regime::Induc]).first;
  const bool pass = join_acc >= 0.90 && join_auc >= 0.95 && sep >= 0.80 && scl >= 0.80 && ind >= 0.80 &&
                    secs < 900.0;
  return {pass, fmt("join acc %.3f auc %.3f; ", join_acc, join_auc) +
                    fmt("sep %.3f, scl %.3f, induc %.3f; ", sep, scl, ind) + fmt("%.0f s", secs)};
}

Outcome criterion5() {
  bool ok = true;
  std::ostringstream detail;
  const int z = 8;
  for (int m : {40, 80, 160}) {
    const Dataset d = cohort(7, m);
    TrainConfig cfg = desk_config(Regime::TransScl, 7);
    cfg.batch_size = z;
    cfg.epochs = 2;
    cfg.embed_dim = 4;
    cfg.attn_dim = 4;
    cfg.ff_hidden = 4;
    cfg.pop_dim = 4;
    const auto folds = stratified_kfold(d.labels(), 5, 7);
    const FoldSplit split{folds.complement(0), folds.members(0)};
    std::set<std::string> test_ids;
    for (int i : split.test) test_ids.insert(d.series[static_cast<std::size_t>(i)].subject_id);
    int steps = 0, bad_forwards = 0, bad_fill = 0, bad_loss = 0, bad_peak = 0, j = 0;
    TrainingHooks hooks;
    hooks.on_step = [&](const StepInfo& s) {
      ++steps;
      if (s.encoder_forwards != z) ++bad_forwards;
      if (s.peak_graphs > z) ++bad_peak;
      if (s.epoch == 0 && s.populated != std::min(++j * z, m)) ++bad_fill;
      for (std::size_t i = 0; i < s.graph_node_ids.size(); ++i)
        if (test_ids.count(s.graph_node_ids[i]) && s.node_loss(static_cast<Eigen::Index>(i)) != 0.0) ++bad_loss;
    };
    train_fold(d, split, cfg, 7, hooks);
    ok = ok && steps == 2 * m / z && bad_forwards == 0 && bad_fill == 0 && bad_loss == 0 && bad_peak == 0;
    detail << "scl m=" << m << ": " << steps << " steps, " << bad_forwards << " off-Z, " << bad_fill
           << " fill, " << bad_loss << " test-loss; ";
  }

  // Transductive regimes on one cohort: zero loss on test-mask nodes.
  const Dataset d = cohort(8, 40);
  const auto folds = stratified_kfold(d.labels(), 5, 8);
  const FoldSplit split{folds.complement(1), folds.members(1)};
  std::set<std::string> test_ids;
  for (int i : split.test) test_ids.insert(d.series[static_cast<std::size_t>(i)].subject_id);
  int leaks = 0, graphs = 0;
  for (Regime r : {Regime::TransJoin, Regime::TransSep, Regime::Induc}) {
    TrainConfig cfg = desk_config(r, 8);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    TrainingHooks hooks;
    hooks.on_step = [&](const StepInfo& s) {
      if (s.graph_node_ids.empty()) return;
      ++graphs;
      for (std::size_t i = 0; i < s.graph_node_ids.size(); ++i) {
        const bool is_test = test_ids.count(s.graph_node_ids[i]) > 0;
        if (r == Regime::Induc && is_test) ++leaks;
        if (r != Regime::Induc && is_test && s.node_loss(static_cast<Eigen::Index>(i)) != 0.0) ++leaks;
      }
    };
    train_fold(d, split, cfg, 8, hooks);
  }
  ok = ok && leaks == 0 && graphs > 0;
  detail << graphs << " join/sep/induc graphs, " << leaks << " leaks";
  return {ok, detail.str()};
}

Outcome criterion6() {
  std::mt19937_64 rng(606);
  const char* sexes[] = {"M", "F"};
  const char* sites[] = {"NYU", "KKI", "OHSU", "PKU"};
  int pairs = 0, bad = 0;
  const PopulationGraphConfig cfg;
  while (pairs < 1000) {
    const int m = 2 + static_cast<int>(rng() % 12);
    PhenotypeTable t;
    for (int i = 0; i < m; ++i) {
      PhenotypeRecord r;
      r.subject_id = "s" + std::to_string(i);
      r.sex = sexes[rng() % 2];
      r.site = sites[rng() % 4];
      r.age = 6.0 + static_cast<double>(rng() % 200) / 10.0;
      t.push_back(r);
    }
    const Mat emb = random_matrix(m, 8, rng, 1.0 + static_cast<double>(rng() % 30));
    const PopulationGraph g = build_population_graph(emb, t, cfg);
    const double sigma = sigma_from_embeddings(emb);
    for (int v = 0; v < m; ++v) {
      for (int w = v + 1; w < m && pairs < 1000; ++w, ++pairs) {
        const double si = embedding_similarity(emb.row(v).transpose(), emb.row(w).transpose(), sigma);
        const double sni = phenotype_similarity(t[static_cast<std::size_t>(v)], t[static_cast<std::size_t>(w)],
                                                cfg.features, cfg.age_band);
        const double s = g.edge_weights(v, w);
        if (!(si > 0.0 && si <= 1.0)) ++bad;
        if (sni != std::round(sni) || sni < 0 || sni > static_cast<double>(cfg.features.size())) ++bad;
        if (s != g.edge_weights(w, v)) ++bad;
        if (sni == 0.0 && s != 0.0) ++bad;
        if (std::abs(s - si * sni) > 1e-12 * std::max(1.0, s)) ++bad;
      }
    }
  }
  Vec a(4), b(4);
  a << 1, -1, 1, -1;
  b << 1, 1, -1, -1;  // correlation distance 1
  const double sigma = 1.0 / std::sqrt(2.0);
  const double at_point = embedding_similarity(a, b, sigma);
  const double err = std::abs(at_point - std::exp(-1.0));
  return {bad == 0 && err <= 1e-12,
          std::to_string(pairs) + " pairs, " + std::to_string(bad) + " violations" +
              fmt(", |S_I - e^-1| = %.1e", err)};
}

Outcome criterion7() {
  JoinRuns& join = join_runs();
  const SyntheticLayout layout = synthetic_layout(kRois);
  const int per_segment = pooled_size(kRois, TrainConfig{}.pooling_ratio);
  const int segments = num_windows(kTimepoints, TrainConfig{}.window());
  bool identity = true;
  int seeds_with_signal = 0;
  std::ostringstream detail;
  for (const auto& run : join.runs) {
    std::vector<RetentionTrace> traces;
    for (const auto& f : run.results)
      traces.insert(traces.end(), f.test.retention.begin(), f.test.retention.end());
    const auto report = biomarker_frequency(traces, kRois, 5, 0);
    long total = 0;
    for (long c : report.roi_counts) total += c;
    if (total != static_cast<long>(traces.size()) * segments * per_segment) identity = false;
    int inside = 0;
    for (int roi : report.top) inside += layout.in_discriminative(roi) ? 1 : 0;
    if (inside >= 3) ++seeds_with_signal;
    detail << inside << "/5 ";
  }
  return {identity && seeds_with_signal >= 4,
          std::string("count identity ") + (identity ? "holds" : "broken") + "; top-5 inside block per seed: " +
              detail.str()};
}

Outcome criterion8() {
  struct Variant {
    const char* name;
    bool gru, sagpool, transformer;
  };
  const Variant variants[] = {{"gcn", false, false, false},
                              {"+gru", true, false, false},
                              {"+sagpool", true, true, false},
                              {"+transformer", true, true, true}};
  std::vector<std::vector<double>> acc;
  for (const Variant& v : variants) {
    std::vector<double> per_seed;
    for (int s = 0; s < kSeeds; ++s) {
      TrainConfig cfg = desk_config(Regime::TransJoin, static_cast<std::uint64_t>(s));
      cfg.use_population = false;
      cfg.use_gru = v.gru;
      cfg.use_sagpool = v.sagpool;
      cfg.use_transformer = v.transformer;
      per_seed.push_back(run_cross_validation(cohort(static_cast<std::uint64_t>(s)), cfg).aggregate.accuracy.mean);
    }
    acc.push_back(per_seed);
  }
  std::vector<double> full;
  for (const auto& r : join_runs().runs) full.push_back(r.aggregate.accuracy.mean);
  acc.push_back(full);

  bool ok = true;
  std::ostringstream detail;
  const char* names[] = {"gcn", "+gru", "+sagpool", "+transformer", "+population"};
  for (std::size_t i = 0; i < acc.size(); ++i) {
    detail << names[i] << fmt(" %.3f±%.3f", mean_of(acc[i]), std_of(acc[i])) << (i + 1 < acc.size() ? ", " : "");
    if (i > 0) {
      const double slack = std::max(std_of(acc[i - 1]), std_of(acc[i]));
      if (mean_of(acc[i - 1]) > mean_of(acc[i]) + slack) ok = false;
    }
  }
  return {ok, detail.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion9(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path given (--cli)"};
  hdgl::testing::TempDir dir;
  const std::string root = dir.path().string();
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
    return std::system(cmd.c_str());
  };
  if (run("synth --out " + root + "/data --subjects 40 --rois 16 --timepoints 120 --seed 3") != 0)
    return {false, "synth failed"};
  if (run("train --data " + root + "/data --regime trans_scl --batch 8 --epochs 3 --folds 5 --threads 1 "
          "--embed-dim 4 --attn-dim 4 --ff-hidden 4 --pop-dim 4 --out " + root + "/first") != 0)
    return {false, "initial train failed"};
  for (const char* out : {"a", "b"}) {
    if (run("train --from-manifest " + root + "/first/run_manifest.txt --out " + root + "/" + out) != 0)
      return {false, "rerun failed"};
  }
  int compared = 0;
  for (int f = 0; f < 5; ++f) {
    const std::string name = "/fold" + std::to_string(f) + "_metrics.log";
    const std::string a = slurp(root + "/a" + name), b = slurp(root + "/b" + name);
    if (a.empty() || a != b) return {false, "metrics log differs for fold " + std::to_string(f)};
    ++compared;
  }
  if (slurp(root + "/a/report.txt") != slurp(root + "/b/report.txt")) return {false, "reports differ"};
  return {true, std::to_string(compared) + " fold logs identical byte-for-byte"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      std::string item;
      while (std::getline(list, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: hdgl_acceptance [--cli PATH] [--only 1,2,...]\n";
      return 2;
    }
  }
  // Timings and reproducibility are measured single-threaded.
  kernels::set_thread_count(1);

  const std::pair<int, std::function<Outcome()>> criteria[] = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, criterion7},
      {8, criterion8},
      {9, [&] { return criterion9(cli); }},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
