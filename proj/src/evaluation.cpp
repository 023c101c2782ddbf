#include "hdgl/evaluation.hpp"

#include "hdgl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

namespace hdgl {

namespace {

void check_sizes(const Vec& prob, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(prob.size()) != labels.size()) {
    fail(ErrorCode::Shape, std::to_string(prob.size()) + " scores for " +
                               std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorCode::InvalidInput, "labels must be 0 or 1");
  }
}

std::optional<double> auc_or_none(const Vec& prob, const std::vector<int>& labels) {
  const auto n = static_cast<int>(labels.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return prob(a) < prob(b); });
  std::vector<double> rank(static_cast<std::size_t>(n));
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && prob(order[static_cast<std::size_t>(j + 1)]) == prob(order[static_cast<std::size_t>(i)])) ++j;
    const double mid = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] == 1) {
      pos += 1.0;
      rank_sum += rank[static_cast<std::size_t>(i)];
    }
  }
  const double neg = n - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

MetricStat stat(const std::vector<double>& v) {
  MetricStat s;
  if (v.empty()) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

}  // namespace

MetricReport compute_metrics(const Vec& prob, const std::vector<int>& labels) {
  check_sizes(prob, labels);
  if (labels.empty()) fail(ErrorCode::InvalidInput, "no samples to evaluate");
  MetricReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = prob(static_cast<Eigen::Index>(i)) >= 0.5;
    if (labels[i] == 1) {
      pred ? ++r.tp : ++r.fn;
    } else {
      pred ? ++r.fp : ++r.tn;
    }
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.total());
  if (r.tp + r.fp == 0) {
    r.precision_undefined = true;
  } else {
    r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  }
  if (r.tp + r.fn == 0) {
    r.recall_undefined = true;
  } else {
    r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  }
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  const auto auc = auc_or_none(prob, labels);
  r.auc_defined = auc.has_value();
  r.auc = auc ? *auc : std::numeric_limits<double>::quiet_NaN();
  return r;
}

double compute_auc(const Vec& prob, const std::vector<int>& labels) {
  check_sizes(prob, labels);
  const auto auc = auc_or_none(prob, labels);
  if (!auc) fail(ErrorCode::AucUndefined, "AUC needs both classes present");
  return *auc;
}

FoldAggregate aggregate_folds(const std::vector<MetricReport>& folds) {
  if (folds.empty()) fail(ErrorCode::InvalidInput, "no folds to aggregate");
  std::vector<double> acc, prec, rec, f1, auc;
  for (const auto& f : folds) {
    acc.push_back(f.accuracy);
    prec.push_back(f.precision);
    rec.push_back(f.recall);
    f1.push_back(f.f1);
    if (f.auc_defined) auc.push_back(f.auc);
  }
  FoldAggregate a;
  a.accuracy = stat(acc);
  a.precision = stat(prec);
  a.recall = stat(rec);
  a.f1 = stat(f1);
  a.auc = stat(auc);
  a.folds = static_cast<int>(folds.size());
  return a;
}

BiomarkerReport biomarker_frequency(const std::vector<RetentionTrace>& traces, int n_rois,
                                    int top_n, int layer) {
  if (traces.empty()) fail(ErrorCode::InvalidInput, "no retention traces");
  if (n_rois < 1) fail(ErrorCode::InvalidInput, "n_rois must be positive");
  BiomarkerReport r;
  r.roi_counts.assign(static_cast<std::size_t>(n_rois), 0);
  const int layers = static_cast<int>(traces.front().size());
  if (layers == 0) fail(ErrorCode::InvalidInput, "retention traces have no layers");
  r.layer = layer < 0 ? layers + layer : layer;
  if (r.layer < 0 || r.layer >= layers) {
    fail(ErrorCode::Index, "pooling layer " + std::to_string(layer) + " outside the " +
                               std::to_string(layers) + " recorded layers");
  }
  for (const auto& subject : traces) {
    if (static_cast<int>(subject.size()) != layers) {
      fail(ErrorCode::Shape, "retention traces disagree on layer count");
    }
    for (const auto& segment : subject[static_cast<std::size_t>(r.layer)]) {
      for (int roi : segment) {
        if (roi < 0 || roi >= n_rois) fail(ErrorCode::Index, "ROI index " + std::to_string(roi) + " out of range");
        ++r.roi_counts[static_cast<std::size_t>(roi)];
      }
    }
  }
  std::vector<int> order(static_cast<std::size_t>(n_rois));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return r.roi_counts[static_cast<std::size_t>(a)] > r.roi_counts[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(std::clamp(top_n, 0, n_rois)));
  r.top = std::move(order);
  return r;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::string out = "model,acc,f1,auc\n";
  char buf[256];
  for (const auto& row : rows) {
    const auto& a = row.aggregate;
    std::snprintf(buf, sizeof buf, "%.4f±%.4f,%.4f±%.4f,%.4f±%.4f", a.accuracy.mean,
                  a.accuracy.std, a.f1.mean, a.f1.std, a.auc.mean, a.auc.std);
    out += row.model + "," + buf + "\n";
  }
  return out;
}

void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << format_report(rows);
}

}  // namespace hdgl
