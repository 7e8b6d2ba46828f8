#include "kemvol/kem.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "kemvol/baselines.hpp"
#include "kemvol/parallel.hpp"

namespace kemvol {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_theta(const ParameterField& theta, Dims dims) {
  if (theta.dims != dims) {
    throw std::invalid_argument("parameter field dims " + to_string(theta.dims) +
                                " do not match volume dims " + to_string(dims));
  }
  if (theta.M < 1 || static_cast<int>(theta.pi.size()) != theta.M ||
      static_cast<int>(theta.mu.size()) != theta.M ||
      static_cast<int>(theta.sigma.size()) != theta.M) {
    throw std::invalid_argument("parameter field component count is inconsistent");
  }
}

void check_mask(const SampleMask& mask, Dims dims) {
  if (mask.dims != dims || mask.included.size() != dims.voxels()) {
    throw std::invalid_argument("sample mask dims " + to_string(mask.dims) +
                                " do not match volume dims " + to_string(dims));
  }
}

// Log of pi_m * phi((y - mu_m) / sigma_m) / sigma_m for every class at one
// voxel; returns the maximum.
double class_log_weights(double y, const ParameterField& theta, std::size_t idx,
                         double* lw) {
  double best = kNegInf;
  for (int m = 0; m < theta.M; ++m) {
    const double p = theta.pi[m][idx];
    if (!(p > 0.0)) {
      lw[m] = kNegInf;
      continue;
    }
    const double s = theta.sigma[m][idx];
    const double z = (y - theta.mu[m][idx]) / s;
    lw[m] = std::log(p) - std::log(s) - 0.5 * z * z;
    best = std::max(best, lw[m]);
  }
  return best;
}

// Normalized posteriors from log weights, in place.
void softmax_in_place(double* lw, int M, double best) {
  double total = 0.0;
  for (int m = 0; m < M; ++m) {
    lw[m] = lw[m] == kNegInf ? 0.0 : std::exp(lw[m] - best);
    total += lw[m];
  }
  for (int m = 0; m < M; ++m) lw[m] /= total;
}

// Convolution helper that keeps its scratch space across calls.
class Smoother {
 public:
  Smoother(Dims dims, const KernelSpec& kernel) : dims_(dims), kernel_(kernel) {}

  Volume3D operator()(std::span<const double> field) {
    Volume3D out(dims_);
    convolve_separable(field, dims_, kernel_, out.values(), scratch_);
    return out;
  }

 private:
  Dims dims_;
  const KernelSpec& kernel_;
  std::vector<double> scratch_;
};

std::vector<double> mask_as_field(const SampleMask& mask) {
  return std::vector<double>(mask.included.begin(), mask.included.end());
}

struct Sums {
  Volume3D den;                 // sum K* over samples
  std::vector<Volume3D> resp;   // sum K* r_m over samples
};

FieldUpdate update_pi(const Sums& sums, int M,
                      const std::vector<Volume3D>& previous) {
  const Dims d = sums.den.dims();
  const long n = static_cast<long>(d.voxels());
  FieldUpdate out;
  out.fields.assign(M, Volume3D(d));
  std::size_t carried = 0;
#pragma omp parallel for schedule(static) reduction(+ : carried) num_threads(num_threads())
  for (long idx = 0; idx < n; ++idx) {
    const double den = sums.den[idx];
    if (den > 0.0) {
      for (int m = 0; m < M; ++m) out.fields[m][idx] = sums.resp[m][idx] / den;
    } else {
      for (int m = 0; m < M; ++m) out.fields[m][idx] = previous[m][idx];
      ++carried;
    }
  }
  out.carried_over = carried;
  return out;
}

// ratio num/den where den > 0 and the result is finite, else previous.
std::size_t ratio_or_carry(const Volume3D& num, const Volume3D& den,
                           const Volume3D& previous, Volume3D& out) {
  const long n = static_cast<long>(num.size());
  std::size_t carried = 0;
#pragma omp parallel for schedule(static) reduction(+ : carried) num_threads(num_threads())
  for (long idx = 0; idx < n; ++idx) {
    const double q = num[idx] / den[idx];
    if (den[idx] > 0.0 && std::isfinite(q)) {
      out[idx] = q;
    } else {
      out[idx] = previous[idx];
      ++carried;
    }
  }
  return carried;
}

FieldUpdate update_mu(const Volume3D& v, const Responsibilities& resp,
                      const Sums& sums, Smoother& smooth,
                      const std::vector<Volume3D>& previous) {
  const Dims d = v.dims();
  const long n = static_cast<long>(d.voxels());
  FieldUpdate out;
  out.fields.assign(resp.M, Volume3D(d));
  std::vector<double> weighted(static_cast<std::size_t>(n));
  for (int m = 0; m < resp.M; ++m) {
    const auto& r = resp.r[m];
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (long idx = 0; idx < n; ++idx) weighted[idx] = r[idx] * v[idx];
    const Volume3D num = smooth(weighted);
    out.carried_over += ratio_or_carry(num, sums.resp[m], previous[m], out.fields[m]);
  }
  return out;
}

FieldUpdate update_sigma(const Volume3D& v, const Responsibilities& resp,
                         const std::vector<Volume3D>& mu_next,
                         const SampleMask& mask, const Sums& sums,
                         Smoother& smooth, SigmaMode mode, double sigma_floor,
                         const std::vector<Volume3D>& previous) {
  const Dims d = v.dims();
  const long n = static_cast<long>(d.voxels());
  FieldUpdate out;
  out.fields.assign(resp.M, Volume3D(d));
  std::vector<double> weighted(static_cast<std::size_t>(n));
  Volume3D variance(d);
  for (int m = 0; m < resp.M; ++m) {
    const auto& r = resp.r[m];
    const auto& mu = mu_next[m];
    if (mode == SigmaMode::standard) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
      for (long idx = 0; idx < n; ++idx) {
        const double e = v[idx] - mu[idx];
        weighted[idx] = r[idx] * e * e;
      }
    } else {
#pragma omp parallel for schedule(static) num_threads(num_threads())
      for (long idx = 0; idx < n; ++idx) {
        const double e = v[idx] - mu[idx];
        weighted[idx] = mask.included[idx] ? e * e : 0.0;
      }
    }
    const Volume3D num = smooth(weighted);
    // Carry-over happens on the variance scale; previous holds sigmas.
    Volume3D prev_var(d);
    for (long idx = 0; idx < n; ++idx) {
      prev_var[idx] = previous[m][idx] * previous[m][idx];
    }
    out.carried_over += ratio_or_carry(num, sums.resp[m], prev_var, variance);
    auto& sigma = out.fields[m];
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (long idx = 0; idx < n; ++idx) {
      sigma[idx] = std::max(std::sqrt(variance[idx]), sigma_floor);
    }
  }
  return out;
}

Sums responsibility_sums(const Responsibilities& resp, Smoother& smooth,
                         Volume3D den) {
  Sums sums{std::move(den), {}};
  sums.resp.reserve(resp.M);
  for (int m = 0; m < resp.M; ++m) sums.resp.push_back(smooth(resp.r[m].values()));
  return sums;
}

double max_abs_change(const std::vector<Volume3D>& a, const std::vector<Volume3D>& b) {
  double delta = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    const long n = static_cast<long>(a[m].size());
    const auto& x = a[m];
    const auto& y = b[m];
#pragma omp parallel for schedule(static) reduction(max : delta) num_threads(num_threads())
    for (long idx = 0; idx < n; ++idx) delta = std::max(delta, std::abs(x[idx] - y[idx]));
  }
  return delta;
}

void check_normalized(const Volume3D& v) {
  constexpr double slack = 1e-9;
  for (std::size_t idx = 0; idx < v.size(); ++idx) {
    if (!(v[idx] >= -slack && v[idx] <= 1.0 + slack)) {
      throw std::invalid_argument("kem_fit expects data normalized to [0,1]; voxel " +
                                  std::to_string(idx) + " holds " +
                                  std::to_string(v[idx]));
    }
  }
}

}  // namespace

const char* to_string(SigmaMode mode) {
  return mode == SigmaMode::standard ? "standard" : "paper-literal";
}

SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "standard") return SigmaMode::standard;
  if (s == "paper-literal" || s == "paper_literal") return SigmaMode::paper_literal;
  throw std::invalid_argument("unknown sigma mode '" + s + "'");
}

void FitConfig::validate() const {
  if (M < 1) throw std::invalid_argument("FitConfig: M must be at least 1");
  if (max_iter < 1) throw std::invalid_argument("FitConfig: max_iter must be positive");
  if (!(tol > 0.0)) throw std::invalid_argument("FitConfig: tol must be positive");
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("FitConfig: sigma_floor must be positive");
  if (!(sigma_init >= sigma_floor)) {
    throw std::invalid_argument("FitConfig: sigma_init below sigma_floor");
  }
  if (kernel.taps_x.empty()) throw std::invalid_argument("FitConfig: kernel not set");
}

ParameterField init_params(const Volume3D& v, const SampleMask& mask,
                           const FitConfig& cfg) {
  check_mask(mask, v.dims());
  const auto values = masked_values(v, mask);
  const KMeansResult km = kmeans(values, cfg.M, cfg.kmeans_max_iter);
  ParameterField theta(v.dims(), cfg.M);
  for (int m = 0; m < cfg.M; ++m) {
    theta.pi[m] = Volume3D(v.dims(), 1.0 / cfg.M);
    theta.mu[m] = Volume3D(v.dims(), km.centroids[m]);
    theta.sigma[m] = Volume3D(v.dims(), cfg.sigma_init);
  }
  return theta;
}

Responsibilities e_step(const Volume3D& v, const SampleMask& mask,
                        const ParameterField& theta) {
  const Dims d = v.dims();
  check_theta(theta, d);
  check_mask(mask, d);
  Responsibilities resp{d, theta.M, std::vector<Volume3D>(theta.M, Volume3D(d))};
  const long n = static_cast<long>(d.voxels());
  const int M = theta.M;
#pragma omp parallel num_threads(num_threads())
  {
    std::vector<double> lw(static_cast<std::size_t>(M));
#pragma omp for schedule(static)
    for (long idx = 0; idx < n; ++idx) {
      if (!mask.included[idx]) continue;
      const double best = class_log_weights(v[idx], theta, idx, lw.data());
      softmax_in_place(lw.data(), M, best);
      for (int m = 0; m < M; ++m) resp.r[m][idx] = lw[m];
    }
  }
  return resp;
}

FieldUpdate m_step_pi(const Responsibilities& resp, const SampleMask& mask,
                      const KernelSpec& kernel,
                      const std::vector<Volume3D>& previous) {
  check_mask(mask, resp.dims);
  Smoother smooth(resp.dims, kernel);
  const Sums sums = responsibility_sums(resp, smooth, smooth(mask_as_field(mask)));
  return update_pi(sums, resp.M, previous);
}

FieldUpdate m_step_mu(const Volume3D& v, const Responsibilities& resp,
                      const SampleMask& mask, const KernelSpec& kernel,
                      const std::vector<Volume3D>& previous) {
  check_mask(mask, v.dims());
  Smoother smooth(v.dims(), kernel);
  const Sums sums = responsibility_sums(resp, smooth, Volume3D(v.dims()));
  return update_mu(v, resp, sums, smooth, previous);
}

FieldUpdate m_step_sigma(const Volume3D& v, const Responsibilities& resp,
                         const std::vector<Volume3D>& mu_next,
                         const SampleMask& mask, const KernelSpec& kernel,
                         SigmaMode mode, double sigma_floor,
                         const std::vector<Volume3D>& previous) {
  check_mask(mask, v.dims());
  Smoother smooth(v.dims(), kernel);
  const Sums sums = responsibility_sums(resp, smooth, Volume3D(v.dims()));
  return update_sigma(v, resp, mu_next, mask, sums, smooth, mode, sigma_floor,
                      previous);
}

FitResult kem_fit(const Volume3D& v, const SampleMask& mask,
                  const FitConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  check_normalized(v);
  return kem_fit_from(v, mask, cfg, init_params(v, mask, cfg), observer);
}

FitResult kem_fit_from(const Volume3D& v, const SampleMask& mask,
                       const FitConfig& cfg, ParameterField theta0,
                       const IterationObserver& observer) {
  cfg.validate();
  const Dims d = v.dims();
  check_mask(mask, d);
  check_theta(theta0, d);
  if (theta0.M != cfg.M) throw std::invalid_argument("initial field has wrong M");

  Smoother smooth(d, cfg.kernel);
  const Volume3D den = smooth(mask_as_field(mask));

  FitResult result;
  result.theta = std::move(theta0);
  for (int t = 1; t <= cfg.max_iter; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const Responsibilities resp = e_step(v, mask, result.theta);
    const Sums sums = responsibility_sums(resp, smooth, den);

    ParameterField next(d, cfg.M);
    FieldUpdate pi = update_pi(sums, cfg.M, result.theta.pi);
    FieldUpdate mu = update_mu(v, resp, sums, smooth, result.theta.mu);
    FieldUpdate sigma = update_sigma(v, resp, mu.fields, mask, sums, smooth,
                                     cfg.sigma_mode, cfg.sigma_floor,
                                     result.theta.sigma);
    result.carried_over += pi.carried_over + mu.carried_over + sigma.carried_over;
    next.pi = std::move(pi.fields);
    next.mu = std::move(mu.fields);
    next.sigma = std::move(sigma.fields);

    const double delta = std::max({max_abs_change(next.pi, result.theta.pi),
                                   max_abs_change(next.mu, result.theta.mu),
                                   max_abs_change(next.sigma, result.theta.sigma)});
    result.theta = std::move(next);
    result.iterations = t;
    result.final_delta = delta;

    if (!cfg.probe_voxels.empty()) {
      result.loglik_trace.push_back(
          local_loglik(v, mask, result.theta, cfg.kernel, cfg.probe_voxels));
    }
    if (observer) {
      const double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - start)
                              .count();
      observer(IterationInfo{t, delta, secs, &resp, &result.theta});
    }
    if (delta < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

std::vector<double> local_loglik(const Volume3D& v, const SampleMask& mask,
                                 const ParameterField& theta,
                                 const KernelSpec& kernel,
                                 const std::vector<std::size_t>& probe_voxels) {
  const Dims d = v.dims();
  check_theta(theta, d);
  check_mask(mask, d);
  const int r = kernel.radius();
  const int M = theta.M;
  std::vector<double> out;
  out.reserve(probe_voxels.size());
  std::vector<double> lw(static_cast<std::size_t>(M));
  for (const std::size_t probe : probe_voxels) {
    if (probe >= d.voxels()) throw std::out_of_range("probe voxel outside grid");
    const VoxelCoord c = coord_of(d, probe);
    double total = 0.0;
    for (int ok = -r; ok <= r; ++ok) {
      const int k = c.k + ok;
      if (k < 0 || k >= d.z) continue;
      for (int oj = -r; oj <= r; ++oj) {
        const int j = c.j + oj;
        if (j < 0 || j >= d.y) continue;
        for (int oi = -r; oi <= r; ++oi) {
          const int i = c.i + oi;
          if (i < 0 || i >= d.x) continue;
          const std::size_t src = d.index(i, j, k);
          if (!mask.included[src]) continue;
          // theta(x) at the probe, data at the sample.
          const double best = class_log_weights(v[src], theta, probe, lw.data());
          double acc = 0.0;
          for (int m = 0; m < M; ++m) {
            if (lw[m] != kNegInf) acc += std::exp(lw[m] - best);
          }
          const double log_mix = best + std::log(acc) - kLogSqrt2Pi;
          total += log_mix * kernel.weight(oi, oj, ok);
        }
      }
    }
    out.push_back(total);
  }
  return out;
}

Volume3D predict_response(const ParameterField& theta) {
  Volume3D out(theta.dims);
  const long n = static_cast<long>(theta.dims.voxels());
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long idx = 0; idx < n; ++idx) {
    double acc = 0.0;
    for (int m = 0; m < theta.M; ++m) acc += theta.pi[m][idx] * theta.mu[m][idx];
    out[idx] = acc;
  }
  return out;
}

Volume3D posterior_volume(const Volume3D& v, const ParameterField& theta,
                          int class_index) {
  check_theta(theta, v.dims());
  if (class_index < 0 || class_index >= theta.M) {
    throw std::out_of_range("class index " + std::to_string(class_index + 1) +
                            " outside 1.." + std::to_string(theta.M));
  }
  Volume3D out(v.dims());
  const long n = static_cast<long>(v.size());
  const int M = theta.M;
#pragma omp parallel num_threads(num_threads())
  {
    std::vector<double> lw(static_cast<std::size_t>(M));
#pragma omp for schedule(static)
    for (long idx = 0; idx < n; ++idx) {
      const double best = class_log_weights(v[idx], theta, idx, lw.data());
      softmax_in_place(lw.data(), M, best);
      out[idx] = lw[class_index];
    }
  }
  return out;
}

LabelVolume hard_labels(const Responsibilities& resp) {
  std::vector<std::uint8_t> labels(resp.dims.voxels());
  for (std::size_t idx = 0; idx < labels.size(); ++idx) {
    int best = 0;
    for (int m = 1; m < resp.M; ++m) {
      if (resp.r[m][idx] > resp.r[best][idx]) best = m;
    }
    labels[idx] = static_cast<std::uint8_t>(best + 1);
  }
  return LabelVolume(resp.dims, resp.M, std::move(labels));
}

LabelVolume hard_labels(const Volume3D& v, const ParameterField& theta) {
  return hard_labels(e_step(v, SampleMask::full(v.dims()), theta));
}

}  // namespace kemvol
