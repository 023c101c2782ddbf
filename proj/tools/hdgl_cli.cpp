// hdgl: synthetic data generation, cross-validated training, evaluation and
// inspection dumps.

#include "hdgl/checkpoint.hpp"
#include "hdgl/config.hpp"
#include "hdgl/data_ingest.hpp"
#include "hdgl/dynfc.hpp"
#include "hdgl/errors.hpp"
#include "hdgl/evaluation.hpp"
#include "hdgl/parallel.hpp"
#include "hdgl/population_graph.hpp"
#include "hdgl/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace hdgl;

namespace {

constexpr const char* kVersion = "hdgl 0.1.0";

struct DataArgs {
  std::string dir, manifest, phenotypes;

  void add(CLI::App* app) {
    app->add_option("--data", dir, "Dataset directory (manifest.txt + phenotypes.csv)");
    app->add_option("--manifest", manifest, "Subject manifest (id,path per line)");
    app->add_option("--phenotypes", phenotypes, "Phenotype table");
  }
  fs::path manifest_path() const {
    if (!manifest.empty()) return manifest;
    if (dir.empty()) fail(ErrorCode::Usage, "either --data or --manifest/--phenotypes is required");
    return fs::path(dir) / "manifest.txt";
  }
  fs::path phenotype_path() const {
    if (!phenotypes.empty()) return phenotypes;
    if (dir.empty()) fail(ErrorCode::Usage, "either --data or --manifest/--phenotypes is required");
    return fs::path(dir) / "phenotypes.csv";
  }
  Dataset load() const { return load_dataset(manifest_path(), phenotype_path()); }
};

/// Every config key as --key-with-dashes; values are applied after the
/// config file so flags win.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::string config_file, from_manifest;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--from-manifest", from_manifest, "Reuse the settings of a previous run");
    for (const auto& [key, value] : TrainConfig{}.to_key_values()) {
      std::string flag = "--" + key;
      for (char& c : flag) {
        if (c == '_') c = '-';
      }
      if (key == "batch_size") flag += ",--batch";
      app->add_option(flag, values[key], "default: " + (value.empty() ? std::string("unset") : value));
    }
  }

  TrainConfig resolve(CLI::App* app, std::map<std::string, std::string>* extra = nullptr) const {
    TrainConfig cfg;
    if (!from_manifest.empty()) {
      std::ifstream in(from_manifest);
      if (!in) fail(ErrorCode::Io, "cannot read run manifest " + from_manifest);
      std::string line, cfg_text;
      while (std::getline(in, line)) {
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? line : line.substr(0, eq);
        if (values.count(key)) {
          cfg_text += line + "\n";
        } else if (extra != nullptr && eq != std::string::npos) {
          (*extra)[key] = line.substr(eq + 1);
        }
      }
      apply_config_text(cfg, cfg_text, from_manifest);
    }
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& [key, value] : values) {
      std::string flag = "--" + key;
      for (char& c : flag) {
        if (c == '_') c = '-';
      }
      if (app->count(flag) > 0) cfg.set(key, value);
    }
    cfg.validate();
    return cfg;
  }
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::Io, "cannot write " + p.string());
  return out;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) fail(ErrorCode::Io, "cannot create directory " + p.string());
}

void print_metrics(std::ostream& out, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "accuracy=%.6f precision=%.6f recall=%.6f f1=%.6f auc=%.6f tp=%ld tn=%ld fp=%ld fn=%ld\n",
                r.accuracy, r.precision, r.recall, r.f1, r.auc, r.tp, r.tn, r.fp, r.fn);
  out << buf;
}

void write_embeddings(const fs::path& path, const Dataset& data, const Evaluation& ev) {
  auto out = open_out(path);
  out.precision(17);
  for (std::size_t i = 0; i < ev.nodes.size(); ++i) {
    out << data.phenotypes[static_cast<std::size_t>(ev.nodes[i])].subject_id;
    for (Eigen::Index j = 0; j < ev.embeddings.cols(); ++j) out << ',' << ev.embeddings(static_cast<Eigen::Index>(i), j);
    out << '\n';
  }
}

void print_biomarkers(std::ostream& out, const std::vector<RetentionTrace>& traces, int n_rois,
                      int top, const std::string& which) {
  std::vector<int> layers;
  if (which == "first" || which == "both") layers.push_back(0);
  if (which == "last" || which == "both") layers.push_back(-1);
  if (layers.empty()) fail(ErrorCode::Usage, "--layer must be first, last or both");
  out << "layer,rank,roi,count\n";
  for (int layer : layers) {
    const BiomarkerReport r = biomarker_frequency(traces, n_rois, top, layer);
    for (std::size_t k = 0; k < r.top.size(); ++k) {
      out << r.layer + 1 << ',' << k + 1 << ',' << r.top[k] << ','
          << r.roi_counts[static_cast<std::size_t>(r.top[k])] << '\n';
    }
  }
}

// Transductive checkpoints replay their own fold when every stored id is
// present; otherwise all subjects are treated as held out.
Evaluation evaluate_checkpoint(const Checkpoint& ckpt, const HdglModel& model, const Dataset& data,
                               bool held_out) {
  if (data.size() > 0 && data.series.front().n_rois() != ckpt.n_rois) {
    fail(ErrorCode::Checkpoint, "checkpoint expects " + std::to_string(ckpt.n_rois) +
                                    " ROIs, data has " + std::to_string(data.series.front().n_rois()));
  }
  if (!held_out) {
    try {
      return evaluate_fold(model, data, resolve_split(ckpt, data));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Checkpoint) throw;
    }
  }
  std::vector<int> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return evaluate_model(model, data, all, std::vector<bool>(all.size(), true));
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  const SyntheticCohort cohort = generate_synthetic_cohort(spec);
  const fs::path root(out_dir);
  make_dir(root / "ts");
  std::vector<std::pair<std::string, fs::path>> entries;
  for (const auto& ts : cohort.series) {
    const fs::path rel = fs::path("ts") / (ts.subject_id + ".csv");
    write_roi_timeseries(root / rel, ts);
    entries.emplace_back(ts.subject_id, rel);
  }
  write_phenotypes(root / "phenotypes.csv", cohort.phenotypes);
  write_manifest(root / "manifest.txt", entries);
  std::cout << "wrote " << cohort.series.size() << " subjects to " << root.string() << "\n";
  return 0;
}

int cmd_train(CLI::App* app, const ConfigFlags& flags, DataArgs data_args, std::string out_dir,
              bool dump_graphs) {
  std::map<std::string, std::string> extra;
  const TrainConfig cfg = flags.resolve(app, &extra);
  if (data_args.dir.empty() && data_args.manifest.empty() && extra.count("data_manifest")) {
    data_args.manifest = extra["data_manifest"];
    data_args.phenotypes = extra["phenotypes"];
  }
  if (out_dir.empty()) {
    if (!extra.count("output_dir")) fail(ErrorCode::Usage, "--out is required");
    out_dir = extra["output_dir"];
  }
  const Dataset data = data_args.load();
  const fs::path root(out_dir);
  make_dir(root);

  {
    auto m = open_out(root / "run_manifest.txt");
    m << config_text(cfg);
    m << "version=" << kVersion << "\n";
    m << "data_manifest=" << fs::absolute(data_args.manifest_path()).string() << "\n";
    m << "phenotypes=" << fs::absolute(data_args.phenotype_path()).string() << "\n";
    m << "output_dir=" << out_dir << "\n";
  }

  TrainingHooks hooks;
  hooks.on_warning = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
  std::ofstream graph_dump;
  int fold_index = 0;
  if (dump_graphs) {
    graph_dump = open_out(root / "train_graphs.txt");
    hooks.on_step = [&](const StepInfo& s) {
      if (s.graph_node_ids.empty()) return;
      graph_dump << fold_index << ',' << s.phase << ',' << s.epoch << ',' << s.step;
      for (const auto& id : s.graph_node_ids) graph_dump << ',' << id;
      graph_dump << '\n';
    };
  }

  // Folds are trained one at a time so artifacts land as soon as each ends.
  const FoldAssignment folds = stratified_kfold(data.labels(), cfg.folds, cfg.seed);
  std::vector<DynamicBrainGraph> graphs;
  const bool cached = !(cfg.regime == Regime::TransScl && cfg.use_population);
  if (cfg.threads > 0) kernels::set_thread_count(cfg.threads);
  if (cached) {
    graphs = kernels::build_dynamic_graphs(data.series, cfg.window(), cfg.keep_fraction,
                                           kernels::thread_count() > 1 ? kernels::Exec::Parallel
                                                                       : kernels::Exec::Serial);
  }
  std::vector<MetricReport> reports;
  for (int f = 0; f < cfg.folds; ++f) {
    fold_index = f;
    const FoldSplit split{folds.complement(f), folds.members(f)};
    const std::uint64_t seed = fold_seed(cfg.seed, f);
    FoldResult r = train_fold(data, split, cfg, seed, hooks, cached ? &graphs : nullptr);
    const std::string stem = "fold" + std::to_string(f);
    write_checkpoint(root / (stem + ".ckpt"), make_checkpoint(*r.model, seed, split, data));
    auto log = open_out(root / (stem + "_metrics.log"));
    log << "epoch,split,loss,acc,f1,auc\n";
    for (const auto& e : r.log) log << format_log_line(e) << "\n";
    write_embeddings(root / (stem + "_embeddings.csv"), data, r.test);
    if (!r.test.graph.node_ids.empty()) dump_edge_list(root / (stem + "_population_edges.csv"), r.test.graph);
    std::cout << stem << ": ";
    print_metrics(std::cout, r.test.metrics);
    reports.push_back(r.test.metrics);
  }
  std::string model = to_string(cfg.regime);
  if (!cfg.use_population) model = "level1_only";
  const std::vector<ReportRow> rows{{model, aggregate_folds(reports)}};
  write_report(root / "report.txt", rows);
  std::cout << format_report(rows);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const DataArgs& data_args, const std::string& out,
             const std::string& embeddings, int biomarkers, const std::string& layer, bool held_out) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const auto model = restore_model(ckpt);
  const Dataset data = data_args.load();
  const Evaluation ev = evaluate_checkpoint(ckpt, *model, data, held_out);
  std::ostringstream text;
  char buf[64];
  std::snprintf(buf, sizeof buf, "loss=%.6f ", ev.loss);
  text << "subjects=" << ev.test_labels.size() << ' ' << buf;
  print_metrics(text, ev.metrics);
  std::cout << text.str();
  if (!out.empty()) open_out(out) << text.str();
  if (!embeddings.empty()) write_embeddings(embeddings, data, ev);
  if (biomarkers > 0) print_biomarkers(std::cout, ev.retention, ckpt.n_rois, biomarkers, layer);
  return 0;
}

int cmd_biomarkers(const std::string& checkpoint, const DataArgs& data_args, int top,
                   const std::string& layer, bool held_out) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const auto model = restore_model(ckpt);
  const Dataset data = data_args.load();
  const Evaluation ev = evaluate_checkpoint(ckpt, *model, data, held_out);
  print_biomarkers(std::cout, ev.retention, ckpt.n_rois, top, layer);
  return 0;
}

int cmd_fc_dump(const DataArgs& data_args, const std::string& subject, const std::string& out_dir,
                const WindowSpec& w, double keep, bool write_fc) {
  const Dataset data = data_args.load();
  const fs::path root(out_dir);
  make_dir(root);
  int dumped = 0;
  for (const auto& ts : data.series) {
    if (!subject.empty() && ts.subject_id != subject) continue;
    const DynamicBrainGraph g = build_dynamic_graph(ts, w, keep);
    dump_adjacencies(root, g);
    if (write_fc) {
      const auto fcs = kernels::windowed_fc(ts, w, kernels::Exec::Serial);
      for (std::size_t t = 0; t < fcs.size(); ++t) {
        auto out = open_out(root / (ts.subject_id + "_" + std::to_string(t) + ".fc"));
        out.precision(17);
        out << fcs[t] << '\n';
      }
    }
    std::cout << ts.subject_id << ": " << g.n_segments() << " segments of " << g.n_rois() << " ROIs\n";
    ++dumped;
  }
  if (dumped == 0) fail(ErrorCode::InvalidInput, "no subject '" + subject + "' in the dataset");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical dynamic graph learning on ROI time series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-class cohort");
  SyntheticSpec spec;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--subjects", spec.n_subjects, "Number of subjects (even)");
  synth->add_option("--rois", spec.n_rois, "ROIs per subject");
  synth->add_option("--timepoints", spec.n_timepoints, "Timepoints per series");
  synth->add_option("--gap", spec.class_gap, "Coupling gap of the discriminative block");
  synth->add_option("--seed", spec.seed, "Random seed");

  auto* train = app.add_subcommand("train", "Stratified k-fold training");
  DataArgs train_data;
  train_data.add(train);
  ConfigFlags train_flags;
  train_flags.add(train);
  std::string train_out;
  bool dump_graphs = false;
  train->add_option("--out", train_out, "Run directory");
  train->add_flag("--dump-graphs", dump_graphs, "Write the node ids of every training population graph");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  DataArgs eval_data;
  eval_data.add(eval);
  std::string eval_ckpt, eval_out, eval_emb, eval_layer = "first";
  int eval_bio = 0;
  bool eval_held_out = false;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--out", eval_out, "Write the metric report here");
  eval->add_option("--dump-embeddings", eval_emb, "Write subject_id,v1,... lines here");
  eval->add_option("--biomarkers", eval_bio, "Print the N most frequently retained ROIs");
  eval->add_option("--layer", eval_layer, "Pooling layer for biomarkers: first, last, both");
  eval->add_flag("--held-out", eval_held_out, "Treat every subject as unseen");

  auto* bio = app.add_subcommand("biomarkers", "ROIs most often retained by pooling on test subjects");
  DataArgs bio_data;
  bio_data.add(bio);
  std::string bio_ckpt, bio_layer = "first";
  int bio_top = 5;
  bool bio_held_out = false;
  bio->add_option("--checkpoint", bio_ckpt, "Checkpoint file")->required();
  bio->add_option("--top", bio_top, "Number of ROIs");
  bio->add_option("--layer", bio_layer, "first, last or both");
  bio->add_flag("--held-out", bio_held_out, "Treat every subject as unseen");

  auto* fc = app.add_subcommand("fc-dump", "Write dynamic FC adjacency matrices");
  DataArgs fc_data;
  fc_data.add(fc);
  std::string fc_subject, fc_out;
  WindowSpec fc_window;
  double fc_keep = 0.3;
  bool fc_raw = false;
  fc->add_option("--subject", fc_subject, "Only this subject");
  fc->add_option("--out", fc_out, "Output directory")->required();
  fc->add_option("--window-length", fc_window.length, "Window length");
  fc->add_option("--window-stride", fc_window.stride, "Window stride");
  fc->add_option("--keep-fraction", fc_keep, "Fraction of edges kept");
  fc->add_flag("--fc", fc_raw, "Also write the raw correlation matrices");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) return cmd_train(train, train_flags, train_data, train_out, dump_graphs);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_emb, eval_bio, eval_layer, eval_held_out);
    if (*bio) return cmd_biomarkers(bio_ckpt, bio_data, bio_top, bio_layer, bio_held_out);
    if (*fc) return cmd_fc_dump(fc_data, fc_subject, fc_out, fc_window, fc_keep, fc_raw);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == ErrorCode::Usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
