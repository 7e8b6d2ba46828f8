#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "kemvol/volume.hpp"

namespace kemvol {

struct KMeansResult {
  std::vector<double> centroids;  // ascending
  std::vector<int> assignments;   // 0-based, indexes the sorted centroids
  std::vector<double> sse_trace;  // within-cluster SSE after each iteration
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm on scalars. Deterministic: initial centroids are the
/// (m + 1/2)/M quantiles of the values; an emptied cluster is reseeded to
/// the point farthest from its assigned centroid. Throws if the values hold
/// fewer than M distinct entries.
KMeansResult kmeans(std::span<const double> values, int M, int max_iter = 100);

/// Spatially constant mixture parameters.
struct GlobalTheta {
  int M = 0;
  std::vector<double> pi;
  std::vector<double> mu;
  std::vector<double> sigma;
};

void to_json(nlohmann::json& j, const GlobalTheta& t);
void from_json(const nlohmann::json& j, GlobalTheta& t);

/// Centroids as means, cluster shares as priors, within-cluster standard
/// deviations (floored) as sigmas.
GlobalTheta theta_from_kmeans(std::span<const double> values,
                              const KMeansResult& km, double sigma_floor);

struct GmmResult {
  GlobalTheta theta;
  std::vector<double> loglik_trace;  // entry 0 is the initial log-likelihood
  int iterations = 0;
  bool converged = false;
  int collapsed_components = 0;  // components whose sigma hit the floor
  double max_decrease = 0.0;     // largest per-iteration loglik drop (>= 0)
};

double gmm_loglik(std::span<const double> values, const GlobalTheta& theta);

/// Classical EM for the constant-parameter mixture. Stops when the
/// log-likelihood gain falls below tol * (1 + |loglik|) or at max_iter.
GmmResult gmm_fit_global(std::span<const double> values,
                         const GlobalTheta& init, double tol = 1e-8,
                         int max_iter = 500, double sigma_floor = 1e-4);

/// sum_m pi_m mu_m.
double baseline_predict(const GlobalTheta& theta);

/// Broadcast of the constants onto every voxel.
ParameterField baseline_field(const GlobalTheta& theta, Dims dims);

/// Nearest-centroid labels (ties to the smaller index), 1-based.
LabelVolume kmeans_labels(const Volume3D& v, std::span<const double> centroids);

/// Posterior-argmax labels under the global mixture, 1-based.
LabelVolume gmm_labels(const Volume3D& v, const GlobalTheta& theta);

}  // namespace kemvol
