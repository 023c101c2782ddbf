#pragma once

#include "hdgl/autodiff.hpp"
#include "hdgl/data_ingest.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace hdgl {

enum class PhenotypeFeature { Sex, Site, Age };

/// Throws Config on names other than sex, site, age.
std::vector<PhenotypeFeature> parse_phenotype_features(const std::vector<std::string>& names);

/// Number of selected phenotype features on which a and b agree: equality for
/// sex and site, |age_a - age_b| <= age_band for age.
double phenotype_similarity(const PhenotypeRecord& a, const PhenotypeRecord& b,
                            const std::vector<std::string>& features, double age_band);
double phenotype_similarity(const PhenotypeRecord& a, const PhenotypeRecord& b,
                            const std::vector<PhenotypeFeature>& features, double age_band);

/// 1 - Pearson(a, b); a constant vector has coefficient 0 with anything.
double correlation_distance(const Vec& a, const Vec& b);

/// Mean of squared correlation distances over all unordered row pairs.
/// Throws DegenerateSigma when every distance vanishes.
double sigma_from_embeddings(const Mat& embeddings);
double sigma_from_distances(const Mat& rho);

/// exp(-rho^2 / (2 sigma^2)).
double embedding_similarity(const Vec& hv, const Vec& hw, double sigma);

struct PopulationGraphConfig {
  std::vector<std::string> features{"sex", "site", "age"};
  double age_band = 2.0;
};

struct PopulationEdge {
  int v, w;
  double weight;
};

struct PopulationGraph {
  std::vector<std::string> node_ids;
  Mat features;      // m x H
  Mat edge_weights;  // m x m, symmetric, zero diagonal, >= 0
  std::vector<PopulationEdge> edge_list;
  std::vector<bool> train_mask;
  std::vector<bool> test_mask;

  int size() const { return static_cast<int>(node_ids.size()); }
  /// Neighbor sets N(i): weight > 0.
  BoolMat neighbor_mask() const;
};

/// Pairwise S_NI over a table (zero diagonal).
Mat phenotype_similarity_matrix(const PhenotypeTable& table, const PopulationGraphConfig& config);

/// S = S_I * S_NI over all pairs. sigma defaults to sigma_from_embeddings.
/// phenotype_matrix may be passed precomputed (m x m S_NI).
PopulationGraph build_population_graph(const Mat& embeddings, const PhenotypeTable& phenotypes,
                                       const PopulationGraphConfig& config,
                                       std::optional<double> sigma = std::nullopt,
                                       const Mat* phenotype_matrix = nullptr);

/// Lines `id_v,id_w,weight` for v < w.
void dump_edge_list(const std::filesystem::path& path, const PopulationGraph& graph);

}  // namespace hdgl
