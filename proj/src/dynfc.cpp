#include "hdgl/dynfc.hpp"

#include "hdgl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hdgl {

void GraphInstanceCounter::enter() noexcept {
  const int now = live_.fetch_add(1) + 1;
  int prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
}

int num_windows(int t_max, const WindowSpec& w) {
  if (w.length < 2) fail(ErrorCode::InvalidWindow, "window length must be >= 2");
  if (w.stride < 1) fail(ErrorCode::InvalidWindow, "window stride must be >= 1");
  if (w.length > t_max) {
    fail(ErrorCode::InvalidWindow, "window length " + std::to_string(w.length) +
                                       " exceeds series length " + std::to_string(t_max));
  }
  const int t = (t_max - w.length) / w.stride;
  return w.count_plus_one ? t + 1 : t;
}

std::vector<WindowSegment> slice_windows(const RoiTimeSeries& ts, const WindowSpec& w) {
  const int t = num_windows(ts.n_timepoints(), w);
  if (t == 0) {
    fail(ErrorCode::TooShortSeries, "series of length " + std::to_string(ts.n_timepoints()) +
                                        " yields no window");
  }
  std::vector<WindowSegment> out;
  out.reserve(static_cast<std::size_t>(t));
  for (int j = 0; j < t; ++j) {
    const int start = j * w.stride;
    out.push_back({ts.values.middleCols(start, w.length), start + w.length});
  }
  return out;
}

Mat pearson_fc(const Mat& segment) {
  if (segment.cols() < 2) fail(ErrorCode::InvalidInput, "Pearson correlation needs >= 2 samples");
  const Eigen::Index n = segment.rows();
  Mat centered = segment.colwise() - segment.rowwise().mean();
  Vec inv_norm(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool constant = segment.row(i).maxCoeff() == segment.row(i).minCoeff();
    const double norm = centered.row(i).norm();
    inv_norm(i) = (constant || norm == 0.0) ? 0.0 : 1.0 / norm;
  }
  centered = inv_norm.asDiagonal() * centered;
  Mat fc = centered * centered.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    fc(i, i) = inv_norm(i) == 0.0 ? 0.0 : 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::clamp(0.5 * (fc(i, j) + fc(j, i)), -1.0, 1.0);
      fc(i, j) = v;
      fc(j, i) = v;
    }
  }
  return fc;
}

Mat threshold_adjacency(const Mat& fc, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    fail(ErrorCode::InvalidParameter, "keep_fraction must lie in (0, 1]");
  }
  if (fc.rows() != fc.cols()) fail(ErrorCode::Shape, "FC matrix must be square");
  const Eigen::Index n = fc.rows();
  struct Entry {
    double mag;
    Eigen::Index i, j;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) entries.push_back({std::abs(fc(i, j)), i, j});
  }
  // Entries are generated in (row, col) order; stable sort keeps that order on ties.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.mag > b.mag; });
  const auto keep = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(entries.size()) - 1e-9));
  Mat adj = Mat::Zero(n, n);
  for (std::size_t e = 0; e < std::min(keep, entries.size()); ++e) {
    if (entries[e].mag == 0.0) break;
    adj(entries[e].i, entries[e].j) = 1.0;
    adj(entries[e].j, entries[e].i) = 1.0;
  }
  return adj;
}

DynamicBrainGraph build_dynamic_graph(const RoiTimeSeries& ts, const WindowSpec& w,
                                      double keep_fraction) {
  if (w.length > ts.n_timepoints()) {
    fail(ErrorCode::TooShortSeries, ts.subject_id + ": series of length " +
                                        std::to_string(ts.n_timepoints()) + " is shorter than the window");
  }
  DynamicBrainGraph g;
  g.subject_id = ts.subject_id;
  for (auto& seg : slice_windows(ts, w)) {
    g.adjacencies.push_back(threshold_adjacency(pearson_fc(seg.values), keep_fraction));
    g.window_endpoints.push_back(seg.endpoint);
  }
  return g;
}

void dump_adjacencies(const std::filesystem::path& dir, const DynamicBrainGraph& g) {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < g.n_segments(); ++s) {
    const auto path = dir / (g.subject_id + "_" + std::to_string(s) + ".adj");
    std::ofstream out(path);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    const Mat& a = g.adjacencies[static_cast<std::size_t>(s)];
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        if (j > 0) out << ' ';
        out << static_cast<int>(a(i, j));
      }
      out << '\n';
    }
  }
}

}  // namespace hdgl
