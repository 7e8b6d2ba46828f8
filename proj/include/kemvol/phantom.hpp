#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kemvol/volume.hpp"

namespace kemvol {

/// Three-class synthetic CT-like volume with spatially varying priors,
/// means and standard deviations. Class 1 is background, 2 "lung",
/// 3 "bone".
struct PhantomSpec {
  Dims dims{64, 64, 64};
  int M = 3;
  std::vector<double> base_mu{1.0, 0.30, 0.75};
  std::vector<double> base_sigma{0.05, 0.05, 0.05};
  int neighborhood_radius = 3;  // max-norm offset strictly below this
  double prior_shift = 0.6;
  double prior_scale = 2.8;
  double mu_amplitude = 0.25;
  double frequency = 8.0 * std::numbers::pi;
  double sigma_floor = 1e-4;
  std::uint64_t seed = 0;
  std::optional<LabelVolume> external_labels;

  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Two overlapping "lung" ellipsoids (label 2) inside an ellipsoidal "bone"
/// shell (label 3) on background 1. The seed jitters centers and radii by a
/// few percent.
LabelVolume procedural_labels(Dims dims, std::uint64_t seed);

/// Label fractions over the box neighbourhood (in-bounds part only), then
/// pi -> (pi + shift) / scale.
std::vector<Volume3D> neighborhood_priors(const LabelVolume& labels,
                                          const PhantomSpec& spec);

/// sin(f x1) sin(f x2) sin(f x3) at every voxel.
Volume3D sinusoid_product(Dims dims, double frequency);

/// Means mu_m + A * P(x), sigmas sigma_m * (1 + P(x)) floored.
ParameterField parameter_fields(const PhantomSpec& spec,
                                std::vector<Volume3D> priors);

/// Draws Z ~ Categorical(pi(x)), Y ~ N(mu_Z(x), sigma_Z(x)^2) per voxel from
/// a counter-based stream keyed on (seed, voxel index).
std::pair<Volume3D, LabelVolume> sample_volume(const ParameterField& theta,
                                               std::uint64_t seed);

struct Phantom {
  PhantomSpec spec;
  LabelVolume geometry;  // labels driving the priors
  ParameterField truth;
  Volume3D volume;
  LabelVolume labels;  // realized classes
};

Phantom make_phantom(const PhantomSpec& spec);

}  // namespace kemvol
