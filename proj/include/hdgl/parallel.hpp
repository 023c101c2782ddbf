#pragma once

// Data-parallel kernels. Every kernel has a serial reference path and an
// OpenMP path selected by Exec; both produce identical results because no
// kernel reduces across loop iterations.

#include "hdgl/autodiff.hpp"
#include "hdgl/data_ingest.hpp"
#include "hdgl/dynfc.hpp"

#include <functional>
#include <vector>

namespace hdgl::kernels {

enum class Exec { Serial, Parallel };

/// Worker cap: HDGL_THREADS when set and positive, else the OpenMP default.
int thread_count();
void set_thread_count(int n);

/// Calls body(i) for i in [0, n).
void for_each_index(int n, Exec exec, const std::function<void(int)>& body);

/// One FC matrix per window of a subject.
std::vector<Mat> windowed_fc(const RoiTimeSeries& ts, const WindowSpec& w, Exec exec);

std::vector<DynamicBrainGraph> build_dynamic_graphs(const std::vector<RoiTimeSeries>& series,
                                                    const WindowSpec& w, double keep_fraction,
                                                    Exec exec);

/// rho(i, j) = 1 - Pearson(row i, row j); zero diagonal.
Mat correlation_distance_matrix(const Mat& rows, Exec exec);

}  // namespace hdgl::kernels
