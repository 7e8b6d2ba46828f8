#include "kemvol/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "kemvol/parallel.hpp"
#include "kemvol/random.hpp"

namespace kemvol {

namespace {

constexpr std::uint64_t kGeometryStream = 0x67656F6DULL;
constexpr std::uint64_t kClassStream = 0x636C6173ULL;
constexpr std::uint64_t kNoiseStream = 0x6E6F6973ULL;

struct Ellipsoid {
  double cx, cy, cz;
  double rx, ry, rz;

  double level(double x, double y, double z) const {
    const double a = (x - cx) / rx;
    const double b = (y - cy) / ry;
    const double c = (z - cz) / rz;
    return a * a + b * b + c * c;
  }
};

}  // namespace

void PhantomSpec::validate() const {
  if (!dims.valid()) throw std::invalid_argument("phantom dims must be positive");
  if (M < 1) throw std::invalid_argument("phantom M must be positive");
  if (static_cast<int>(base_mu.size()) != M || static_cast<int>(base_sigma.size()) != M) {
    throw std::invalid_argument("phantom base_mu/base_sigma must have M entries");
  }
  for (const double s : base_sigma) {
    if (!(s > 0.0)) throw std::invalid_argument("phantom base sigmas must be positive");
  }
  if (neighborhood_radius < 1) {
    throw std::invalid_argument("phantom neighbourhood radius must be >= 1");
  }
  if (!(prior_shift >= 0.0) || !(prior_scale > 0.0)) {
    throw std::invalid_argument("phantom prior rescale constants invalid");
  }
  if (std::abs((1.0 + M * prior_shift) / prior_scale - 1.0) > 1e-12) {
    throw std::invalid_argument(
        "prior rescale (pi + shift) / scale does not preserve the simplex for M = " +
        std::to_string(M));
  }
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("phantom sigma_floor must be positive");
  if (external_labels) {
    if (external_labels->dims() != dims || external_labels->M() != M) {
      throw std::invalid_argument("external label volume does not match dims/M");
    }
  }
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{{"dims", {s.dims.x, s.dims.y, s.dims.z}},
                     {"M", s.M},
                     {"base_mu", s.base_mu},
                     {"base_sigma", s.base_sigma},
                     {"neighborhood_radius", s.neighborhood_radius},
                     {"prior_shift", s.prior_shift},
                     {"prior_scale", s.prior_scale},
                     {"mu_amplitude", s.mu_amplitude},
                     {"frequency", s.frequency},
                     {"sigma_floor", s.sigma_floor},
                     {"seed", s.seed},
                     {"label_source", s.external_labels ? "external" : "procedural"}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  if (j.contains("dims")) {
    s.dims = Dims{j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
  }
  s.M = j.value("M", s.M);
  s.base_mu = j.value("base_mu", s.base_mu);
  s.base_sigma = j.value("base_sigma", s.base_sigma);
  s.neighborhood_radius = j.value("neighborhood_radius", s.neighborhood_radius);
  s.prior_shift = j.value("prior_shift", s.prior_shift);
  s.prior_scale = j.value("prior_scale", s.prior_scale);
  s.mu_amplitude = j.value("mu_amplitude", s.mu_amplitude);
  s.frequency = j.value("frequency", s.frequency);
  s.sigma_floor = j.value("sigma_floor", s.sigma_floor);
  s.seed = j.value("seed", s.seed);
  return s;
}

LabelVolume procedural_labels(Dims dims, std::uint64_t seed) {
  if (!dims.valid()) throw std::invalid_argument("label dims must be positive");
  // +-4% jitter on every geometric constant.
  int draw = 0;
  auto jitter = [&](double value) {
    const double u = rng::uniform_open(seed, kGeometryStream, static_cast<std::uint64_t>(draw++));
    return value * (1.0 + 0.08 * (u - 0.5));
  };
  const Ellipsoid body{0.5, 0.5, 0.5, jitter(0.46), jitter(0.44), jitter(0.47)};
  const double shell_inner = 0.80;  // level-set radius of the inner wall
  const Ellipsoid lung_a{jitter(0.38), jitter(0.5), jitter(0.5), jitter(0.17), jitter(0.26), jitter(0.32)};
  const Ellipsoid lung_b{jitter(0.62), jitter(0.5), jitter(0.5), jitter(0.17), jitter(0.26), jitter(0.32)};

  std::vector<std::uint8_t> labels(dims.voxels(), 1);
  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) {
        const auto p = normalized_position(dims, {i, j, k});
        std::uint8_t label = 1;
        const double level = body.level(p[0], p[1], p[2]);
        if (level <= 1.0 && level >= shell_inner * shell_inner) label = 3;
        if (lung_a.level(p[0], p[1], p[2]) <= 1.0 ||
            lung_b.level(p[0], p[1], p[2]) <= 1.0) {
          label = 2;
        }
        labels[dims.index(i, j, k)] = label;
      }
  return LabelVolume(dims, 3, std::move(labels));
}

std::vector<Volume3D> neighborhood_priors(const LabelVolume& labels,
                                          const PhantomSpec& spec) {
  const Dims d = labels.dims();
  const int M = labels.M();
  if (M != spec.M) throw std::invalid_argument("label M does not match phantom spec");
  if (std::abs((1.0 + M * spec.prior_shift) / spec.prior_scale - 1.0) > 1e-12) {
    throw std::invalid_argument("prior rescale constants do not preserve the simplex for M = " +
                                std::to_string(M));
  }
  const int r = spec.neighborhood_radius - 1;  // offsets with |o| < radius

  // One-hot indicator per class, then box sums via three 1D passes. Counts
  // are small integers so every sum is exact.
  std::vector<Volume3D> priors(M, Volume3D(d));
  std::vector<double> a(d.voxels()), b(d.voxels());
  Volume3D count(d);
  auto box_pass = [&](const std::vector<double>& in, std::vector<double>& out, int axis) {
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          int c[3] = {i, j, k};
          const int centre = c[axis];
          const int lo = std::max(0, centre - r);
          const int hi = std::min(d.extent(axis) - 1, centre + r);
          double acc = 0.0;
          for (int q = lo; q <= hi; ++q) {
            c[axis] = q;
            acc += in[d.index(c[0], c[1], c[2])];
          }
          out[d.index(i, j, k)] = acc;
        }
  };
  auto box_sum = [&](std::vector<double> field) {
    box_pass(field, a, 0);
    box_pass(a, b, 1);
    box_pass(b, field, 2);
    return field;
  };

  const auto total = box_sum(std::vector<double>(d.voxels(), 1.0));
  for (int m = 0; m < M; ++m) {
    std::vector<double> indicator(d.voxels());
    for (std::size_t idx = 0; idx < indicator.size(); ++idx) {
      indicator[idx] = labels[idx] == m + 1 ? 1.0 : 0.0;
    }
    const auto counts = box_sum(std::move(indicator));
    for (std::size_t idx = 0; idx < counts.size(); ++idx) {
      priors[m][idx] = (counts[idx] / total[idx] + spec.prior_shift) / spec.prior_scale;
    }
  }
  return priors;
}

Volume3D sinusoid_product(Dims dims, double frequency) {
  std::vector<double> sx(dims.x), sy(dims.y), sz(dims.z);
  for (int i = 0; i < dims.x; ++i) sx[i] = std::sin(frequency * (i + 1) / dims.x);
  for (int j = 0; j < dims.y; ++j) sy[j] = std::sin(frequency * (j + 1) / dims.y);
  for (int k = 0; k < dims.z; ++k) sz[k] = std::sin(frequency * (k + 1) / dims.z);
  Volume3D out(dims);
  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) out[dims.index(i, j, k)] = sx[i] * sy[j] * sz[k];
  return out;
}

ParameterField parameter_fields(const PhantomSpec& spec, std::vector<Volume3D> priors) {
  spec.validate();
  if (static_cast<int>(priors.size()) != spec.M) {
    throw std::invalid_argument("prior count does not match phantom M");
  }
  const Volume3D wave = sinusoid_product(spec.dims, spec.frequency);
  ParameterField theta(spec.dims, spec.M);
  theta.pi = std::move(priors);
  for (int m = 0; m < spec.M; ++m) {
    Volume3D mu(spec.dims), sigma(spec.dims);
    for (std::size_t idx = 0; idx < wave.size(); ++idx) {
      mu[idx] = spec.base_mu[m] + spec.mu_amplitude * wave[idx];
      sigma[idx] = std::max(spec.base_sigma[m] + spec.base_sigma[m] * wave[idx],
                            spec.sigma_floor);
    }
    theta.mu[m] = std::move(mu);
    theta.sigma[m] = std::move(sigma);
  }
  return theta;
}

std::pair<Volume3D, LabelVolume> sample_volume(const ParameterField& theta,
                                               std::uint64_t seed) {
  const Dims d = theta.dims;
  const int M = theta.M;
  Volume3D y(d);
  std::vector<std::uint8_t> labels(d.voxels());
  const long n = static_cast<long>(d.voxels());
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long idx = 0; idx < n; ++idx) {
    const auto counter = static_cast<std::uint64_t>(idx);
    const double u = rng::uniform_open(seed, kClassStream, counter);
    int cls = M - 1;
    double cum = 0.0;
    for (int m = 0; m < M; ++m) {
      cum += theta.pi[m][idx];
      if (u < cum) {
        cls = m;
        break;
      }
    }
    // Guard against rounding sending u past the last non-zero class.
    while (cls > 0 && !(theta.pi[cls][idx] > 0.0)) --cls;
    labels[idx] = static_cast<std::uint8_t>(cls + 1);
    y[idx] = theta.mu[cls][idx] +
             theta.sigma[cls][idx] * rng::standard_normal(seed, kNoiseStream, counter);
  }
  return {std::move(y), LabelVolume(d, M, std::move(labels))};
}

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  Phantom ph;
  ph.spec = spec;
  ph.geometry = spec.external_labels ? *spec.external_labels
                                     : procedural_labels(spec.dims, spec.seed);
  ph.truth = parameter_fields(spec, neighborhood_priors(ph.geometry, spec));
  auto [y, z] = sample_volume(ph.truth, spec.seed);
  ph.volume = std::move(y);
  ph.labels = std::move(z);
  return ph;
}

}  // namespace kemvol
