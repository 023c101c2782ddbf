#include "hdgl/data_ingest.hpp"
#include "hdgl/dynfc.hpp"
#include "hdgl/errors.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>

using namespace hdgl;
using hdgl::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an hdgl::Error");
  return ErrorCode::Usage;
}

}  // namespace

TEST_CASE("time-series files load verbatim") {
  TempDir dir;
  const auto ts = load_roi_timeseries(dir.write("a.csv", "1,2,3\n4,5,6\n"), "a");
  CHECK(ts.n_rois() == 2);
  CHECK(ts.n_timepoints() == 3);
  CHECK(ts.values(1, 2) == 6.0);
  CHECK(ts.values(0, 0) == 1.0);
}

TEST_CASE("malformed time-series files are rejected") {
  TempDir dir;
  CHECK(code_of([&] { load_roi_timeseries(dir.write("u.csv", "1,2,3\n4,5\n")); }) == ErrorCode::Format);
  CHECK(code_of([&] { load_roi_timeseries(dir.write("e.csv", "")); }) == ErrorCode::Format);
  CHECK(code_of([&] { load_roi_timeseries(dir.write("p.csv", "1,2\n3,x\n")); }) == ErrorCode::Parse);
  try {
    load_roi_timeseries(dir.write("e2.csv", ""));
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no rows") != std::string::npos);
  }
  try {
    load_roi_timeseries(dir.write("u2.csv", "1,2,3\n4,5\n"));
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("time series round-trip bit-exactly") {
  std::mt19937_64 rng(4);
  TempDir dir;
  RoiTimeSeries ts{"x", hdgl::testing::random_matrix(3, 7, rng)};
  write_roi_timeseries(dir.path() / "x.csv", ts);
  const auto back = load_roi_timeseries(dir.path() / "x.csv", "x");
  CHECK(back.values == ts.values);
}

TEST_CASE("normalization standardizes rows with population std") {
  RoiTimeSeries ts{"s", Mat(3, 4)};
  ts.values << 1, 3, 1, 3, 5, 5, 5, 5, 0, 1, 2, 3;
  const auto n = normalize_timeseries(ts);
  CHECK(n.values(0, 0) == doctest::Approx(-1.0));
  CHECK(n.values(0, 1) == doctest::Approx(1.0));
  CHECK(n.values.row(1).cwiseAbs().maxCoeff() == 0.0);
  // Independent accumulation of mean and variance of the output row.
  double mean = 0.0, var = 0.0;
  for (int j = 0; j < 4; ++j) mean += n.values(2, j);
  mean /= 4.0;
  for (int j = 0; j < 4; ++j) var += (n.values(2, j) - mean) * (n.values(2, j) - mean);
  var /= 4.0;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

  RoiTimeSeries two{"t", Mat(1, 2)};
  two.values << 1, 3;
  const auto t = normalize_timeseries(two);
  CHECK(t.values(0, 0) == doctest::Approx(-1.0));
  CHECK(t.values(0, 1) == doctest::Approx(1.0));

  CHECK(code_of([] { normalize_timeseries({"s", Mat::Ones(2, 1)}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("normalization is idempotent on random series") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    RoiTimeSeries ts{"s", hdgl::testing::random_matrix(4, 2 + trial % 17, rng, 3.0)};
    ts.values.row(0).setConstant(2.5);
    const auto once = normalize_timeseries(ts);
    const auto twice = normalize_timeseries(once);
    CHECK((once.values - twice.values).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("phenotype tables") {
  TempDir dir;
  const auto t = load_phenotypes(dir.write("p.csv", "subject_id,label,sex,site,age\ns1,1,M,NYU,12.5\ns2,0,F,KKI,9\n"));
  REQUIRE(t.size() == 2);
  CHECK(t[0].subject_id == "s1");
  CHECK(t[0].label == 1);
  CHECK(t[0].sex == "M");
  CHECK(t[0].site == "NYU");
  CHECK(t[0].age == 12.5);

  const auto reordered = load_phenotypes(dir.write("r.csv", "age,site,sex,label,subject_id\n12.5,NYU,M,1,s1\n"));
  CHECK(reordered[0].site == "NYU");

  CHECK(code_of([&] { load_phenotypes(dir.write("d.csv", "subject_id,label,sex,site,age\ns1,1,M,A,1\ns1,0,F,B,2\n")); }) ==
        ErrorCode::Uniqueness);
  CHECK(code_of([&] { load_phenotypes(dir.write("m.csv", "subject_id,label,sex,site\ns1,1,M,A\n")); }) ==
        ErrorCode::Schema);

  write_phenotypes(dir.path() / "w.csv", t);
  const auto back = load_phenotypes(dir.path() / "w.csv");
  CHECK(back[1].age == 9.0);
  CHECK(back[1].site == "KKI");
}

TEST_CASE("manifests resolve relative paths against their directory") {
  TempDir dir;
  std::filesystem::create_directories(dir.path() / "ts");
  dir.write("ts/a.csv", "1,2,3\n");
  write_manifest(dir.path() / "manifest.txt", {{"a", "ts/a.csv"}});
  const auto m = load_manifest(dir.path() / "manifest.txt");
  REQUIRE(m.size() == 1);
  CHECK(m[0].first == "a");
  CHECK(load_roi_timeseries(m[0].second).n_timepoints() == 3);
}

TEST_CASE("synthetic cohorts are deterministic and balanced") {
  SyntheticSpec spec{4, 8, 60, 0.8, 7};
  const auto a = generate_synthetic_cohort(spec);
  const auto b = generate_synthetic_cohort(spec);
  REQUIRE(a.series.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.series[i].values == b.series[i].values);
    CHECK(a.phenotypes[i].sex == b.phenotypes[i].sex);
    CHECK(a.phenotypes[i].age == b.phenotypes[i].age);
  }
  CHECK(std::count_if(a.phenotypes.begin(), a.phenotypes.end(), [](const auto& p) { return p.label == 1; }) == 2);
  spec.seed = 8;
  CHECK(generate_synthetic_cohort(spec).series[0].values != a.series[0].values);

  spec.n_subjects = 3;
  CHECK(code_of([&] { generate_synthetic_cohort(spec); }) == ErrorCode::InvalidInput);
  spec.n_subjects = 4;
  spec.class_gap = -0.1;
  CHECK(code_of([&] { generate_synthetic_cohort(spec); }) == ErrorCode::InvalidInput);
}

namespace {

// Mean |FC| over the discriminative block pairs, whole-series window.
double block_fc(const RoiTimeSeries& ts, const SyntheticLayout& L) {
  double s = 0.0;
  int n = 0;
  for (int i = L.discriminative_begin; i < L.discriminative_end; ++i) {
    for (int j = i + 1; j < L.discriminative_end; ++j) {
      s += std::abs(hdgl::testing::pearson_oracle(ts.values.row(i), ts.values.row(j)));
      ++n;
    }
  }
  return s / n;
}

std::pair<double, double> class_means(double gap) {
  const auto c = generate_synthetic_cohort({50, 16, 120, gap, 3});
  double m[2] = {0, 0};
  int n[2] = {0, 0};
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    m[c.phenotypes[i].label] += block_fc(c.series[i], c.layout);
    ++n[c.phenotypes[i].label];
  }
  return {m[0] / n[0], m[1] / n[1]};
}

}  // namespace

TEST_CASE("synthetic class signal follows the gap") {
  const auto [z0, z1] = class_means(0.0);
  CHECK(std::abs(z1 - z0) < 0.1);
  const auto [g0, g1] = class_means(0.8);
  CHECK(g1 - g0 > 0.3);
  const auto layout = synthetic_layout(16);
  CHECK(layout.nuisance_end <= layout.discriminative_begin);
}

TEST_CASE("stratified folds") {
  const auto f = stratified_kfold({0, 0, 1, 1}, 2, 1);
  for (int k = 0; k < 2; ++k) {
    const auto m = f.members(k);
    REQUIRE(m.size() == 2);
    std::vector<int> labels{0, 0, 1, 1};
    CHECK(labels[static_cast<std::size_t>(m[0])] + labels[static_cast<std::size_t>(m[1])] == 1);
  }

  const std::vector<int> ten{0, 1, 0, 0, 1, 0, 1, 0, 1, 0};
  const auto g = stratified_kfold(ten, 5, 3);
  for (int k = 0; k < 5; ++k) {
    const auto m = g.members(k);
    CHECK(m.size() == 2);
    int zeros = 0;
    for (int i : m) zeros += ten[static_cast<std::size_t>(i)] == 0;
    CHECK((zeros == 1 || zeros == 2));
  }
  CHECK(g.fold_of == stratified_kfold(ten, 5, 3).fold_of);
  CHECK(code_of([] { stratified_kfold({0, 1}, 3, 0); }) == ErrorCode::Stratification);
}

TEST_CASE("stratification property on random label vectors") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 5);
    const int n0 = k + static_cast<int>(rng() % 30), n1 = k + static_cast<int>(rng() % 30);
    std::vector<int> labels(static_cast<std::size_t>(n0), 0);
    labels.insert(labels.end(), static_cast<std::size_t>(n1), 1);
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto f = stratified_kfold(labels, k, rng());
    int assigned = 0;
    for (int fold = 0; fold < k; ++fold) {
      const auto m = f.members(fold);
      assigned += static_cast<int>(m.size());
      int ones = 0;
      for (int i : m) ones += labels[static_cast<std::size_t>(i)];
      const int zeros = static_cast<int>(m.size()) - ones;
      CHECK(std::abs(zeros - static_cast<double>(n0) / k) <= 1.0);
      CHECK(std::abs(ones - static_cast<double>(n1) / k) <= 1.0);
      CHECK(f.complement(fold).size() + m.size() == labels.size());
    }
    CHECK(assigned == n0 + n1);
  }
}

TEST_CASE("datasets align phenotypes by id") {
  const auto c = generate_synthetic_cohort({6, 8, 30, 0.5, 1});
  PhenotypeTable reversed(c.phenotypes.rbegin(), c.phenotypes.rend());
  const Dataset d = make_dataset(c.series, reversed);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.phenotypes[i].subject_id == d.series[i].subject_id);
  CHECK(d.labels() == std::vector<int>{0, 1, 0, 1, 0, 1});
}
