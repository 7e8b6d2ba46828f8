#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "kemvol/kernel.hpp"
#include "kemvol/volume.hpp"

namespace kemvol {

/// How the sigma M-step weights squared residuals.
///   standard      -- numerator weighted by responsibilities (weighted EM).
///   paper_literal -- unweighted numerator, denominator still weighted.
enum class SigmaMode { standard, paper_literal };

const char* to_string(SigmaMode mode);
SigmaMode sigma_mode_from_string(const std::string& s);

struct FitConfig {
  int M = 3;
  int max_iter = 50;
  double tol = 1e-4;  // max-abs change over every parameter field
  double sigma_floor = 1e-4;
  double sigma_init = 0.05;
  KernelSpec kernel;
  SigmaMode sigma_mode = SigmaMode::standard;
  int kmeans_max_iter = 100;
  // Voxels at which the locally weighted log-likelihood is traced each
  // iteration. Empty means no trace.
  std::vector<std::size_t> probe_voxels;

  void validate() const;
};

/// Posterior class probabilities at the sample voxels. Zero off the mask.
struct Responsibilities {
  Dims dims{};
  int M = 0;
  std::vector<Volume3D> r;
};

/// Fields from one M-step plus the number of voxels where the kernel sum
/// was empty and the previous iterate was carried over.
struct FieldUpdate {
  std::vector<Volume3D> fields;
  std::size_t carried_over = 0;
};

struct FitResult {
  ParameterField theta;
  int iterations = 0;
  double final_delta = 0.0;
  bool converged = false;
  std::size_t carried_over = 0;  // summed over iterations and fields
  // loglik_trace[t][p]: locally weighted log-likelihood at probe p after
  // iteration t + 1.
  std::vector<std::vector<double>> loglik_trace;
};

/// Called after each iteration with the E-step output that fed it and the
/// updated parameters.
struct IterationInfo {
  int iteration = 0;  // 1-based
  double max_delta = 0.0;
  double seconds = 0.0;
  const Responsibilities* resp = nullptr;
  const ParameterField* theta = nullptr;
};
using IterationObserver = std::function<void(const IterationInfo&)>;

/// k-means centroids (ascending) as constant means, priors 1/M, sigma_init.
ParameterField init_params(const Volume3D& v, const SampleMask& mask,
                           const FitConfig& cfg);

Responsibilities e_step(const Volume3D& v, const SampleMask& mask,
                        const ParameterField& theta);

/// Prior update. `previous` supplies values where the window holds no sample.
FieldUpdate m_step_pi(const Responsibilities& resp, const SampleMask& mask,
                      const KernelSpec& kernel,
                      const std::vector<Volume3D>& previous);

FieldUpdate m_step_mu(const Volume3D& v, const Responsibilities& resp,
                      const SampleMask& mask, const KernelSpec& kernel,
                      const std::vector<Volume3D>& previous);

/// Uses the freshly updated means `mu_next` evaluated at each sample's own
/// voxel. Result floored at `sigma_floor`.
FieldUpdate m_step_sigma(const Volume3D& v, const Responsibilities& resp,
                         const std::vector<Volume3D>& mu_next,
                         const SampleMask& mask, const KernelSpec& kernel,
                         SigmaMode mode, double sigma_floor,
                         const std::vector<Volume3D>& previous);

/// Iterates E-step and the three M-steps until the largest absolute change
/// across all parameter fields drops below cfg.tol, or cfg.max_iter. The
/// mask restricts only the sample side: parameters are estimated at every
/// voxel of the grid.
FitResult kem_fit(const Volume3D& v, const SampleMask& mask,
                  const FitConfig& cfg, const IterationObserver& observer = {});

/// Same, from explicit starting fields.
FitResult kem_fit_from(const Volume3D& v, const SampleMask& mask,
                       const FitConfig& cfg, ParameterField theta0,
                       const IterationObserver& observer = {});

/// Locally weighted log-likelihood at each probe voxel x, using theta(x) as
/// the working parameter and the truncated kernel over masked samples.
std::vector<double> local_loglik(const Volume3D& v, const SampleMask& mask,
                                 const ParameterField& theta,
                                 const KernelSpec& kernel,
                                 const std::vector<std::size_t>& probe_voxels);

/// sum_m pi_m(x) mu_m(x) at every voxel.
Volume3D predict_response(const ParameterField& theta);

/// Posterior probability of `class_index` (0-based) at every voxel.
Volume3D posterior_volume(const Volume3D& v, const ParameterField& theta,
                          int class_index);

/// Argmax class (1-based); ties go to the smallest index.
LabelVolume hard_labels(const Responsibilities& resp);
LabelVolume hard_labels(const Volume3D& v, const ParameterField& theta);

}  // namespace kemvol
