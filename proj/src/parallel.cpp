#include "hdgl/parallel.hpp"

#include "hdgl/errors.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

namespace hdgl::kernels {

namespace {

int& thread_override() {
  static int n = 0;
  return n;
}

}  // namespace

int thread_count() {
  if (thread_override() > 0) return thread_override();
  if (const char* env = std::getenv("HDGL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return omp_get_max_threads();
}

void set_thread_count(int n) { thread_override() = n; }

void for_each_index(int n, Exec exec, const std::function<void(int)>& body) {
  if (exec == Exec::Serial || n < 2 || thread_count() == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic) num_threads(thread_count())
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::vector<Mat> windowed_fc(const RoiTimeSeries& ts, const WindowSpec& w, Exec exec) {
  const auto segments = slice_windows(ts, w);
  std::vector<Mat> out(segments.size());
  for_each_index(static_cast<int>(segments.size()), exec, [&](int j) {
    out[static_cast<std::size_t>(j)] = pearson_fc(segments[static_cast<std::size_t>(j)].values);
  });
  return out;
}

std::vector<DynamicBrainGraph> build_dynamic_graphs(const std::vector<RoiTimeSeries>& series,
                                                    const WindowSpec& w, double keep_fraction,
                                                    Exec exec) {
  std::vector<DynamicBrainGraph> out(series.size());
  for_each_index(static_cast<int>(series.size()), exec, [&](int i) {
    out[static_cast<std::size_t>(i)] =
        build_dynamic_graph(series[static_cast<std::size_t>(i)], w, keep_fraction);
  });
  return out;
}

Mat correlation_distance_matrix(const Mat& rows, Exec exec) {
  const Eigen::Index m = rows.rows();
  Mat unit = rows.colwise() - rows.rowwise().mean();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double norm = unit.row(i).norm();
    const bool constant = rows.row(i).maxCoeff() == rows.row(i).minCoeff();
    if (constant || norm == 0.0) {
      unit.row(i).setZero();
    } else {
      unit.row(i) /= norm;
    }
  }
  Mat rho = Mat::Zero(m, m);
  for_each_index(static_cast<int>(m), exec, [&](int i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double r = std::clamp(unit.row(i).dot(unit.row(j)), -1.0, 1.0);
      rho(i, j) = 1.0 - r;
      rho(j, i) = 1.0 - r;
    }
  });
  return rho;
}

}  // namespace hdgl::kernels
