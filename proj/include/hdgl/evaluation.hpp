#pragma once

#include "hdgl/autodiff.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hdgl {

struct MetricReport {
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  /// NaN when only one class is present.
  double auc = 0.0;
  bool auc_defined = true;
  /// Set when the corresponding denominator was zero and 0 was reported.
  bool precision_undefined = false, recall_undefined = false;
  long tp = 0, tn = 0, fp = 0, fn = 0;

  long total() const { return tp + tn + fp + fn; }
};

/// prob holds P(class 1); predictions use threshold 0.5.
MetricReport compute_metrics(const Vec& prob, const std::vector<int>& labels);

/// Mann-Whitney AUC with midranks. Throws AucUndefined on a single class.
double compute_auc(const Vec& prob, const std::vector<int>& labels);

struct MetricStat {
  double mean = 0.0, std = 0.0;
};

struct FoldAggregate {
  MetricStat accuracy, precision, recall, f1, auc;
  int folds = 0;
};

/// Mean and population standard deviation per metric. Folds with undefined
/// AUC are left out of the AUC statistic.
FoldAggregate aggregate_folds(const std::vector<MetricReport>& folds);

/// Per test subject: retained[layer][segment] lists global ROI indices.
using RetentionTrace = std::vector<std::vector<std::vector<int>>>;

struct BiomarkerReport {
  int layer = 0;
  std::vector<long> roi_counts;  // indexed by ROI
  std::vector<int> top;          // by count, ties to the lower index
};

/// Tallies retained ROIs of one pooling layer (negative layer counts from the
/// end) across all subjects and segments.
BiomarkerReport biomarker_frequency(const std::vector<RetentionTrace>& traces, int n_rois,
                                    int top_n, int layer = 0);

struct ReportRow {
  std::string model;
  FoldAggregate aggregate;
};

/// `model,acc±std,f1±std,auc±std` per row.
std::string format_report(const std::vector<ReportRow>& rows);
void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

}  // namespace hdgl
