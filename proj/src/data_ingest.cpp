#include "hdgl/data_ingest.hpp"

#include "hdgl/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace hdgl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<int> FoldAssignment::members(int fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> FoldAssignment::complement(int fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

RoiTimeSeries load_roi_timeseries(const std::filesystem::path& path, std::string subject_id) {
  const auto lines = read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    if (trim(lines[r]).empty()) continue;
    const auto cells = split_csv(lines[r]);
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], row[c])) {
        fail(ErrorCode::Parse, path.string() + ": non-numeric cell at row " + std::to_string(r) +
                                   ", column " + std::to_string(c) + ": '" + cells[c] + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      fail(ErrorCode::Format, path.string() + ": row " + std::to_string(r) + " has " +
                                  std::to_string(row.size()) + " values, expected " +
                                  std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::Format, path.string() + ": no rows");

  RoiTimeSeries ts;
  ts.subject_id = subject_id.empty() ? path.stem().string() : std::move(subject_id);
  ts.values.resize(static_cast<Eigen::Index>(rows.size()),
                   static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return ts;
}

void write_roi_timeseries(const std::filesystem::path& path, const RoiTimeSeries& ts) {
  auto out = open_out(path);
  for (Eigen::Index r = 0; r < ts.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < ts.values.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_double(ts.values(r, c));
    }
    out << '\n';
  }
}

RoiTimeSeries normalize_timeseries(const RoiTimeSeries& ts) {
  if (ts.n_timepoints() < 2) {
    fail(ErrorCode::InvalidInput, "normalization needs at least 2 timepoints");
  }
  RoiTimeSeries out = ts;
  for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
    auto row = out.values.row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    if (var <= 0.0) {
      row.setZero();
      continue;
    }
    row = (row.array() - mean) / std::sqrt(var);
  }
  return out;
}

PhenotypeTable load_phenotypes(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) fail(ErrorCode::Schema, path.string() + ": missing header");
  const auto header = split_csv(lines.front());
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* name : {"subject_id", "label", "sex", "site", "age"}) {
    if (!col.count(name)) fail(ErrorCode::Schema, path.string() + ": missing column '" + name + "'");
  }

  PhenotypeTable table;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (trim(lines[r]).empty()) continue;
    const auto cells = split_csv(lines[r]);
    if (cells.size() != header.size()) {
      fail(ErrorCode::Format, path.string() + ": row " + std::to_string(r) + " has " +
                                  std::to_string(cells.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    }
    PhenotypeRecord rec;
    rec.subject_id = cells[col["subject_id"]];
    rec.sex = cells[col["sex"]];
    rec.site = cells[col["site"]];
    double label = 0.0;
    if (!parse_double(cells[col["label"]], label) || (label != 0.0 && label != 1.0)) {
      fail(ErrorCode::Parse, path.string() + ": row " + std::to_string(r) + ": label must be 0 or 1");
    }
    rec.label = static_cast<int>(label);
    if (!parse_double(cells[col["age"]], rec.age)) {
      fail(ErrorCode::Parse, path.string() + ": row " + std::to_string(r) + ": bad age '" +
                                 cells[col["age"]] + "'");
    }
    if (!seen.insert(rec.subject_id).second) {
      fail(ErrorCode::Uniqueness, path.string() + ": duplicate subject_id '" + rec.subject_id + "'");
    }
    table.push_back(std::move(rec));
  }
  return table;
}

void write_phenotypes(const std::filesystem::path& path, const PhenotypeTable& table) {
  auto out = open_out(path);
  out << "subject_id,label,sex,site,age\n";
  for (const auto& r : table) {
    out << r.subject_id << ',' << r.label << ',' << r.sex << ',' << r.site << ','
        << format_double(r.age) << '\n';
  }
}

std::vector<std::pair<std::string, std::filesystem::path>> load_manifest(
    const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  const auto base = path.parent_path();
  std::vector<std::pair<std::string, std::filesystem::path>> entries;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const std::string line = trim(lines[r]);
    if (line.empty() || line.front() == '#') continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2) {
      fail(ErrorCode::Format, path.string() + ": line " + std::to_string(r) +
                                  " must be 'subject_id,path'");
    }
    std::filesystem::path p = cells[1];
    if (p.is_relative()) p = base / p;
    entries.emplace_back(cells[0], p);
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, std::filesystem::path>>& entries) {
  auto out = open_out(path);
  for (const auto& [id, p] : entries) out << id << ',' << p.generic_string() << '\n';
}

SyntheticLayout synthetic_layout(int n_rois) {
  SyntheticLayout layout;
  const int block = std::max(2, n_rois / 4);
  layout.nuisance_begin = 0;
  layout.nuisance_end = block;
  layout.discriminative_begin = n_rois / 2;
  layout.discriminative_end = n_rois / 2 + block;
  return layout;
}

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  if (spec.n_subjects <= 0 || spec.n_subjects % 2 != 0) {
    fail(ErrorCode::InvalidInput, "synthetic cohort needs a positive even subject count");
  }
  if (spec.n_rois < 8) fail(ErrorCode::InvalidInput, "synthetic cohort needs at least 8 ROIs");
  if (spec.n_timepoints < 2) fail(ErrorCode::InvalidInput, "synthetic cohort needs >= 2 timepoints");
  if (spec.class_gap < 0.0) fail(ErrorCode::InvalidInput, "class_gap must be >= 0");

  SyntheticCohort cohort;
  cohort.layout = synthetic_layout(spec.n_rois);
  const SyntheticLayout& L = cohort.layout;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const char* sites[] = {"SITE_A", "SITE_B", "SITE_C"};

  const Eigen::Index n = spec.n_rois, t = spec.n_timepoints;
  for (int s = 0; s < spec.n_subjects; ++s) {
    const int label = s % 2;
    // Per-subject jitter keeps classes overlapping slightly.
    const double jitter = 0.05 * (2.0 * unit(rng) - 1.0);
    const double disc = std::clamp(L.base_coupling + jitter + (label == 1 ? spec.class_gap : 0.0),
                                   0.0, 0.95);
    const double nuis = std::clamp(L.nuisance_coupling + jitter, 0.0, 0.95);

    Mat values(n, t);
    Vec nuisance_factor(t), disc_factor(t);
    for (Eigen::Index j = 0; j < t; ++j) nuisance_factor(j) = normal(rng);
    for (Eigen::Index j = 0; j < t; ++j) disc_factor(j) = normal(rng);
    for (Eigen::Index r = 0; r < n; ++r) {
      double coupling = 0.0;
      const Vec* factor = nullptr;
      if (r >= L.nuisance_begin && r < L.nuisance_end) {
        coupling = nuis;
        factor = &nuisance_factor;
      } else if (L.in_discriminative(static_cast<int>(r))) {
        coupling = disc;
        factor = &disc_factor;
      }
      const double a = std::sqrt(coupling), b = std::sqrt(1.0 - coupling);
      for (Eigen::Index j = 0; j < t; ++j) {
        const double noise = normal(rng);
        values(r, j) = (factor ? a * (*factor)(j) : 0.0) + b * noise;
      }
    }

    char id[32];
    std::snprintf(id, sizeof(id), "sub%04d", s);
    cohort.series.push_back({id, std::move(values)});

    PhenotypeRecord rec;
    rec.subject_id = id;
    rec.label = label;
    rec.sex = unit(rng) < 0.7 ? "M" : "F";
    rec.site = sites[static_cast<int>(unit(rng) * 3.0) % 3];
    rec.age = std::round((7.0 + 10.0 * unit(rng)) * 10.0) / 10.0;
    cohort.phenotypes.push_back(std::move(rec));
  }
  return cohort;
}

FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::InvalidInput, "k-fold needs k >= 2");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  if (static_cast<int>(labels.size()) < k) {
    fail(ErrorCode::Stratification, std::to_string(labels.size()) + " subjects cannot fill k=" +
                                        std::to_string(k) + " folds");
  }
  // A class may be smaller than k (some test folds then miss it) but needs at
  // least two members so it can sit on both sides of a split.
  for (const auto& [cls, members] : by_class) {
    if (members.size() < 2) {
      fail(ErrorCode::Stratification, "class " + std::to_string(cls) + " has " +
                                          std::to_string(members.size()) + " member(s)");
    }
  }
  FoldAssignment folds;
  folds.fold_count = k;
  folds.fold_of.assign(labels.size(), -1);
  std::mt19937_64 rng(seed);
  // Round-robin dealing continues across classes so fold sizes stay balanced.
  int next = 0;
  for (auto& [cls, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int idx : members) {
      folds.fold_of[static_cast<std::size_t>(idx)] = next;
      next = (next + 1) % k;
    }
  }
  return folds;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(phenotypes.size());
  for (const auto& p : phenotypes) out.push_back(p.label);
  return out;
}

Dataset make_dataset(std::vector<RoiTimeSeries> series, const PhenotypeTable& phenotypes) {
  std::unordered_map<std::string, const PhenotypeRecord*> by_id;
  for (const auto& p : phenotypes) by_id[p.subject_id] = &p;
  Dataset ds;
  for (auto& ts : series) {
    auto it = by_id.find(ts.subject_id);
    if (it == by_id.end()) {
      fail(ErrorCode::Schema, "no phenotype record for subject '" + ts.subject_id + "'");
    }
    if (!ds.series.empty() && ts.n_rois() != ds.series.front().n_rois()) {
      fail(ErrorCode::Shape, "subject '" + ts.subject_id + "' has " + std::to_string(ts.n_rois()) +
                                 " ROIs, expected " + std::to_string(ds.series.front().n_rois()));
    }
    ds.phenotypes.push_back(*it->second);
    ds.series.push_back(normalize_timeseries(ts));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& manifest, const std::filesystem::path& phenotypes) {
  const auto table = load_phenotypes(phenotypes);
  std::vector<RoiTimeSeries> series;
  for (const auto& [id, path] : load_manifest(manifest)) series.push_back(load_roi_timeseries(path, id));
  return make_dataset(std::move(series), table);
}

}  // namespace hdgl
