#pragma once

#include "hdgl/autodiff.hpp"
#include "hdgl/data_ingest.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

namespace hdgl {

/// Sliding window of `length` timepoints advanced by `stride`.
struct WindowSpec {
  int length = 20;
  int stride = 5;
  /// Conventional count floor((Tmax - length) / stride) + 1 instead of the
  /// literal floor((Tmax - length) / stride).
  bool count_plus_one = false;
};

/// Number of segments. Throws InvalidWindow when length > t_max, length < 2
/// or stride < 1. May return 0; graph construction rejects that.
int num_windows(int t_max, const WindowSpec& w);

struct WindowSegment {
  Mat values;    // N x length
  int endpoint;  // exclusive end column
};

std::vector<WindowSegment> slice_windows(const RoiTimeSeries& ts, const WindowSpec& w);

/// Pearson correlation between rows. Pairs involving a constant row are 0,
/// including the diagonal entry of that row.
Mat pearson_fc(const Mat& segment);

/// Keeps the top ceil(keep_fraction * N(N-1)/2) upper-triangle entries by
/// |coefficient| (ties: smaller (row, col) first), mirrored; exact zeros never
/// become edges.
Mat threshold_adjacency(const Mat& fc, double keep_fraction);

/// Counts live DynamicBrainGraph objects so callers can bound how many are
/// materialized at once.
class GraphInstanceCounter {
 public:
  GraphInstanceCounter() noexcept { enter(); }
  GraphInstanceCounter(const GraphInstanceCounter&) noexcept { enter(); }
  GraphInstanceCounter& operator=(const GraphInstanceCounter&) noexcept { return *this; }
  ~GraphInstanceCounter() { live_.fetch_sub(1); }

  static int live() { return live_.load(); }
  static int peak() { return peak_.load(); }
  static void reset_peak() { peak_.store(live_.load()); }

 private:
  static void enter() noexcept;
  static inline std::atomic<int> live_{0};
  static inline std::atomic<int> peak_{0};
};

struct DynamicBrainGraph {
  std::string subject_id;
  std::vector<Mat> adjacencies;  // binary, symmetric, zero diagonal
  std::vector<int> window_endpoints;
  GraphInstanceCounter counter;

  int n_segments() const { return static_cast<int>(adjacencies.size()); }
  int n_rois() const { return adjacencies.empty() ? 0 : static_cast<int>(adjacencies.front().rows()); }
};

DynamicBrainGraph build_dynamic_graph(const RoiTimeSeries& ts, const WindowSpec& w,
                                      double keep_fraction);

/// Writes `{subject}_{segment}.adj` text matrices into dir.
void dump_adjacencies(const std::filesystem::path& dir, const DynamicBrainGraph& g);

}  // namespace hdgl
