#include "kemvol/kernel.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "kemvol/parallel.hpp"

namespace kemvol {

double gaussian_density(double t) {
  return std::exp(-0.5 * t * t) * (0.5 * std::numbers::inv_sqrtpi *
                                    std::numbers::sqrt2);
}

double KernelSpec::weight(int oi, int oj, int ok) const {
  const int r = radius();
  return taps_x[oi + r] * taps_y[oj + r] * taps_z[ok + r];
}

KernelSpec make_kernel(double h, int s, Dims dims) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw std::invalid_argument("kernel bandwidth h must be positive");
  }
  if (s < 1 || s % 2 == 0) {
    throw std::invalid_argument("filter size s must be a positive odd integer, got " +
                                std::to_string(s));
  }
  if (!dims.valid()) throw std::invalid_argument("kernel dims must be positive");

  KernelSpec k;
  k.h = h;
  k.s = s;
  const int r = s / 2;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> taps(static_cast<std::size_t>(s));
    const double scale = 1.0 / (h * dims.extent(axis));
    for (int o = -r; o <= r; ++o) {
      taps[o + r] = gaussian_density(o * scale);
      if (!(taps[o + r] > 0.0)) {
        throw std::invalid_argument(
            "kernel tap underflows to zero; bandwidth too small for filter size");
      }
    }
    (axis == 0 ? k.taps_x : (axis == 1 ? k.taps_y : k.taps_z)) = std::move(taps);
  }
  return k;
}

namespace {

// out(i,j,k) = sum_o taps[o] * in(i+o, j, k), in-bounds offsets only.
void pass_x(const double* in, double* out, Dims d, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  const int nx = d.x;
  const long lines = static_cast<long>(d.y) * d.z;
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long line = 0; line < lines; ++line) {
    const double* src = in + line * nx;
    double* dst = out + line * nx;
    for (int i = 0; i < nx; ++i) {
      const int lo = i - r < 0 ? -i : -r;
      const int hi = i + r >= nx ? nx - 1 - i : r;
      double acc = 0.0;
      for (int o = lo; o <= hi; ++o) acc += taps[o + r] * src[i + o];
      dst[i] = acc;
    }
  }
}

// Row-wise accumulation along y: contiguous x rows are scaled and summed in
// ascending offset order.
void pass_y(const double* in, double* out, Dims d, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  const std::size_t nx = static_cast<std::size_t>(d.x);
  const std::size_t plane = nx * static_cast<std::size_t>(d.y);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (int k = 0; k < d.z; ++k) {
    const double* src_plane = in + plane * k;
    double* dst_plane = out + plane * k;
    for (int j = 0; j < d.y; ++j) {
      double* dst = dst_plane + nx * j;
      for (std::size_t i = 0; i < nx; ++i) dst[i] = 0.0;
      const int lo = j - r < 0 ? -j : -r;
      const int hi = j + r >= d.y ? d.y - 1 - j : r;
      for (int o = lo; o <= hi; ++o) {
        const double w = taps[o + r];
        const double* src = src_plane + nx * (j + o);
        for (std::size_t i = 0; i < nx; ++i) dst[i] += w * src[i];
      }
    }
  }
}

void pass_z(const double* in, double* out, Dims d, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (int k = 0; k < d.z; ++k) {
    double* dst = out + plane * k;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = 0.0;
    const int lo = k - r < 0 ? -k : -r;
    const int hi = k + r >= d.z ? d.z - 1 - k : r;
    for (int o = lo; o <= hi; ++o) {
      const double w = taps[o + r];
      const double* src = in + plane * (k + o);
      for (std::size_t p = 0; p < plane; ++p) dst[p] += w * src[p];
    }
  }
}

}  // namespace

void convolve_separable(std::span<const double> field, Dims dims,
                        const KernelSpec& kernel, std::span<double> out,
                        std::vector<double>& scratch) {
  const std::size_t n = dims.voxels();
  if (field.size() != n || out.size() != n) {
    throw std::invalid_argument("convolution buffers do not match dims");
  }
  if (kernel.taps_x.size() != static_cast<std::size_t>(kernel.s)) {
    throw std::invalid_argument("kernel taps not initialized");
  }
  scratch.resize(2 * n);
  double* a = scratch.data();
  double* b = scratch.data() + n;
  pass_x(field.data(), a, dims, kernel.taps_x);
  pass_y(a, b, dims, kernel.taps_y);
  pass_z(b, out.data(), dims, kernel.taps_z);
}

Volume3D weighted_conv(const Volume3D& field, const KernelSpec& kernel,
                       const SampleMask& mask) {
  const Dims d = field.dims();
  if (mask.dims != d || mask.included.size() != d.voxels()) {
    throw std::invalid_argument("weighted_conv: mask dims " + to_string(mask.dims) +
                                " do not match field dims " + to_string(d));
  }
  std::vector<double> masked(d.voxels());
  const auto values = field.values();
  for (std::size_t idx = 0; idx < masked.size(); ++idx) {
    masked[idx] = mask.included[idx] ? values[idx] : 0.0;
  }
  Volume3D out(d);
  std::vector<double> scratch;
  convolve_separable(masked, d, kernel, out.values(), scratch);
  return out;
}

Volume3D conv_direct_reference(const Volume3D& field, double h,
                               const SampleMask& mask) {
  const Dims d = field.dims();
  if (d.max_extent() > kDirectReferenceMaxExtent) {
    throw std::invalid_argument("conv_direct_reference is limited to grids of at most " +
                                std::to_string(kDirectReferenceMaxExtent) +
                                " voxels per axis");
  }
  if (mask.dims != d) throw std::invalid_argument("conv_direct_reference: dims mismatch");
  if (!(h > 0.0)) throw std::invalid_argument("bandwidth must be positive");

  Volume3D out(d);
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        double acc = 0.0;
        for (int kk = 0; kk < d.z; ++kk)
          for (int jj = 0; jj < d.y; ++jj)
            for (int ii = 0; ii < d.x; ++ii) {
              const std::size_t src = d.index(ii, jj, kk);
              if (!mask.included[src]) continue;
              const double w =
                  gaussian_density((ii - i) / (h * d.x)) *
                  gaussian_density((jj - j) / (h * d.y)) *
                  gaussian_density((kk - k) / (h * d.z));
              acc += w * field[src];
            }
        out[d.index(i, j, k)] = acc;
      }
  return out;
}

}  // namespace kemvol
