#include "hdgl/population_graph.hpp"

#include "hdgl/errors.hpp"
#include "hdgl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace hdgl {

std::vector<PhenotypeFeature> parse_phenotype_features(const std::vector<std::string>& names) {
  std::vector<PhenotypeFeature> out;
  for (const auto& n : names) {
    if (n == "sex") {
      out.push_back(PhenotypeFeature::Sex);
    } else if (n == "site") {
      out.push_back(PhenotypeFeature::Site);
    } else if (n == "age") {
      out.push_back(PhenotypeFeature::Age);
    } else {
      fail(ErrorCode::Config, "unknown phenotype feature '" + n + "'");
    }
  }
  return out;
}

double phenotype_similarity(const PhenotypeRecord& a, const PhenotypeRecord& b,
                            const std::vector<PhenotypeFeature>& features, double age_band) {
  double s = 0.0;
  for (PhenotypeFeature f : features) {
    switch (f) {
      case PhenotypeFeature::Sex: s += a.sex == b.sex ? 1.0 : 0.0; break;
      case PhenotypeFeature::Site: s += a.site == b.site ? 1.0 : 0.0; break;
      case PhenotypeFeature::Age: s += std::abs(a.age - b.age) <= age_band ? 1.0 : 0.0; break;
    }
  }
  return s;
}

double phenotype_similarity(const PhenotypeRecord& a, const PhenotypeRecord& b,
                            const std::vector<std::string>& features, double age_band) {
  return phenotype_similarity(a, b, parse_phenotype_features(features), age_band);
}

double correlation_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail(ErrorCode::Shape, "correlation distance of unequal lengths");
  Mat rows(2, a.size());
  rows.row(0) = a.transpose();
  rows.row(1) = b.transpose();
  return kernels::correlation_distance_matrix(rows, kernels::Exec::Serial)(0, 1);
}

double sigma_from_distances(const Mat& rho) {
  const Eigen::Index m = rho.rows();
  if (m < 2) fail(ErrorCode::InvalidInput, "sigma needs at least two embeddings");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) total += rho(i, j) * rho(i, j);
  }
  const double sigma = total / (static_cast<double>(m) * (m - 1) / 2.0);
  if (sigma < 1e-20) fail(ErrorCode::DegenerateSigma, "all pairwise correlation distances are zero");
  return sigma;
}

double sigma_from_embeddings(const Mat& embeddings) {
  return sigma_from_distances(kernels::correlation_distance_matrix(embeddings, kernels::Exec::Serial));
}

namespace {

// A narrow kernel can underflow; the floor keeps S_I positive so only
// phenotype disagreement removes an edge.
double kernel(double rho, double sigma) {
  return std::max(std::exp(-rho * rho / (2.0 * sigma * sigma)), std::numeric_limits<double>::min());
}

}  // namespace

double embedding_similarity(const Vec& hv, const Vec& hw, double sigma) {
  if (!(sigma > 0.0)) fail(ErrorCode::InvalidParameter, "sigma must be positive");
  const double rho = correlation_distance(hv, hw);
  return kernel(rho, sigma);
}

BoolMat PopulationGraph::neighbor_mask() const {
  return (edge_weights.array() > 0.0).matrix();
}

Mat phenotype_similarity_matrix(const PhenotypeTable& table, const PopulationGraphConfig& config) {
  const auto features = parse_phenotype_features(config.features);
  const auto m = static_cast<Eigen::Index>(table.size());
  Mat s = Mat::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double v = phenotype_similarity(table[static_cast<std::size_t>(i)],
                                            table[static_cast<std::size_t>(j)], features,
                                            config.age_band);
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return s;
}

PopulationGraph build_population_graph(const Mat& embeddings, const PhenotypeTable& phenotypes,
                                       const PopulationGraphConfig& config,
                                       std::optional<double> sigma, const Mat* phenotype_matrix) {
  const auto m = static_cast<Eigen::Index>(phenotypes.size());
  if (embeddings.rows() != m) {
    fail(ErrorCode::Shape, std::to_string(embeddings.rows()) + " embeddings for " +
                               std::to_string(m) + " phenotype records");
  }
  Mat s_ni;
  if (phenotype_matrix != nullptr) {
    if (phenotype_matrix->rows() != m || phenotype_matrix->cols() != m) {
      fail(ErrorCode::Shape, "precomputed phenotype similarity has the wrong size");
    }
    s_ni = *phenotype_matrix;
  } else {
    s_ni = phenotype_similarity_matrix(phenotypes, config);
  }

  PopulationGraph g;
  g.features = embeddings;
  g.edge_weights = Mat::Zero(m, m);
  for (const auto& p : phenotypes) g.node_ids.push_back(p.subject_id);
  g.train_mask.assign(static_cast<std::size_t>(m), false);
  g.test_mask.assign(static_cast<std::size_t>(m), false);
  if (m < 2) return g;

  const Mat rho = kernels::correlation_distance_matrix(embeddings, kernels::Exec::Parallel);
  const double sig = sigma ? *sigma : sigma_from_distances(rho);
  if (!(sig > 0.0)) fail(ErrorCode::InvalidParameter, "sigma must be positive");
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      if (s_ni(i, j) <= 0.0) continue;
      const double w = kernel(rho(i, j), sig) * s_ni(i, j);
      g.edge_weights(i, j) = w;
      g.edge_weights(j, i) = w;
      g.edge_list.push_back({static_cast<int>(i), static_cast<int>(j), w});
    }
  }
  return g;
}

void dump_edge_list(const std::filesystem::path& path, const PopulationGraph& graph) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.precision(17);
  for (const auto& e : graph.edge_list) {
    out << graph.node_ids[static_cast<std::size_t>(e.v)] << ','
        << graph.node_ids[static_cast<std::size_t>(e.w)] << ',' << e.weight << '\n';
  }
}

}  // namespace hdgl
