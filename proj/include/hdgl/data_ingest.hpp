#pragma once

#include "hdgl/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hdgl {

/// N regions x Tmax timepoints of ROI-averaged signal for one subject.
struct RoiTimeSeries {
  std::string subject_id;
  Mat values;

  int n_rois() const { return static_cast<int>(values.rows()); }
  int n_timepoints() const { return static_cast<int>(values.cols()); }
};

struct PhenotypeRecord {
  std::string subject_id;
  int label = 0;
  std::string sex;
  std::string site;
  double age = 0.0;
};

using PhenotypeTable = std::vector<PhenotypeRecord>;

/// fold_of[i] is the fold of the i-th subject in the order labels were given.
struct FoldAssignment {
  int fold_count = 0;
  std::vector<int> fold_of;

  std::vector<int> members(int fold) const;
  std::vector<int> complement(int fold) const;
};

/// Plain comma-separated matrix, one ROI per row, no header.
RoiTimeSeries load_roi_timeseries(const std::filesystem::path& path,
                                  std::string subject_id = {});
void write_roi_timeseries(const std::filesystem::path& path, const RoiTimeSeries& ts);

/// Rows standardized to zero mean / unit population variance. Constant rows
/// become zeros.
RoiTimeSeries normalize_timeseries(const RoiTimeSeries& ts);

/// Header `subject_id,label,sex,site,age` (column order free).
PhenotypeTable load_phenotypes(const std::filesystem::path& path);
void write_phenotypes(const std::filesystem::path& path, const PhenotypeTable& table);

/// `subject_id,path` per line; relative paths resolve against the manifest
/// directory.
std::vector<std::pair<std::string, std::filesystem::path>> load_manifest(
    const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, std::filesystem::path>>& entries);

struct SyntheticSpec {
  int n_subjects = 40;
  int n_rois = 16;
  int n_timepoints = 120;
  double class_gap = 0.8;
  std::uint64_t seed = 0;
};

/// ROI ranges of the planted structure: the nuisance block is coupled the
/// same way in both classes, the discriminative block's coupling rises with
/// the class gap in class 1.
struct SyntheticLayout {
  int nuisance_begin = 0, nuisance_end = 0;
  int discriminative_begin = 0, discriminative_end = 0;
  double base_coupling = 0.1;
  double nuisance_coupling = 0.5;

  bool in_discriminative(int roi) const {
    return roi >= discriminative_begin && roi < discriminative_end;
  }
};

SyntheticLayout synthetic_layout(int n_rois);

struct SyntheticCohort {
  std::vector<RoiTimeSeries> series;
  PhenotypeTable phenotypes;
  SyntheticLayout layout;
};

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

/// Throws Stratification when there are fewer subjects than folds or a class
/// has fewer than two members.
FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

/// Normalized series aligned index-by-index with their phenotype records.
struct Dataset {
  std::vector<RoiTimeSeries> series;
  PhenotypeTable phenotypes;

  std::size_t size() const { return series.size(); }
  std::vector<int> labels() const;
};

Dataset load_dataset(const std::filesystem::path& manifest, const std::filesystem::path& phenotypes);
/// Normalizes the series and aligns phenotypes by subject id.
Dataset make_dataset(std::vector<RoiTimeSeries> series, const PhenotypeTable& phenotypes);

}  // namespace hdgl
