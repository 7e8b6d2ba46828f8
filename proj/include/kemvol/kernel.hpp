#pragma once

#include <span>
#include <vector>

#include "kemvol/volume.hpp"

namespace kemvol {

/// Standard normal density, exp(-t^2/2) / sqrt(2 pi).
double gaussian_density(double t);

/// Truncated separable Gaussian product kernel on an s^3 voxel window.
///
/// Bandwidth `h` is in normalized-coordinate units, so the tap at integer
/// offset o along an axis of extent d is gaussian_density(o / (h * d)).
/// Taps are raw density values; every consumer forms a ratio of two sums
/// over the same window, so no normalization is applied.
struct KernelSpec {
  double h = 0.0;
  int s = 1;
  std::vector<double> taps_x;
  std::vector<double> taps_y;
  std::vector<double> taps_z;

  int radius() const { return s / 2; }
  const std::vector<double>& taps(int axis) const {
    return axis == 0 ? taps_x : (axis == 1 ? taps_y : taps_z);
  }
  /// Product weight at a window offset; each |o| <= radius().
  double weight(int oi, int oj, int ok) const;
};

KernelSpec make_kernel(double h, int s, Dims dims);

/// At every output voxel x, the sum over masked voxels X_i in the s^3 window
/// of K*((X_i - x) / h) * field(X_i). Out-of-grid neighbours contribute
/// nothing. Computed as three 1D passes.
Volume3D weighted_conv(const Volume3D& field, const KernelSpec& kernel,
                       const SampleMask& mask);

/// Same sum without the mask, writing into `out`. `field` must already be
/// zero off the sample set. `scratch` is resized as needed.
void convolve_separable(std::span<const double> field, Dims dims,
                        const KernelSpec& kernel, std::span<double> out,
                        std::vector<double>& scratch);

/// Untruncated O(N^2) kernel sum over all masked voxels. Testing oracle only;
/// refuses grids larger than 16 voxels along any axis.
Volume3D conv_direct_reference(const Volume3D& field, double h,
                               const SampleMask& mask);

constexpr int kDirectReferenceMaxExtent = 16;

}  // namespace kemvol
