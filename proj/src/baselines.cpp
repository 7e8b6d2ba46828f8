#include "kemvol/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace kemvol {

namespace {

int nearest(double x, std::span<const double> centroids) {
  int best = 0;
  double best_d = std::abs(x - centroids[0]);
  for (int m = 1; m < static_cast<int>(centroids.size()); ++m) {
    const double d = std::abs(x - centroids[m]);
    if (d < best_d) {
      best = m;
      best_d = d;
    }
  }
  return best;
}

void check_theta(const GlobalTheta& t) {
  if (t.M < 1 || static_cast<int>(t.pi.size()) != t.M ||
      static_cast<int>(t.mu.size()) != t.M ||
      static_cast<int>(t.sigma.size()) != t.M) {
    throw std::invalid_argument("GlobalTheta has inconsistent component count");
  }
  double total = 0.0;
  for (int m = 0; m < t.M; ++m) {
    if (!(t.pi[m] >= 0.0) || !(t.sigma[m] > 0.0)) {
      throw std::invalid_argument("GlobalTheta needs pi >= 0 and sigma > 0");
    }
    total += t.pi[m];
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("GlobalTheta priors do not sum to 1");
}

// log(pi_m phi((x - mu_m)/sigma_m) / sigma_m) per class, without the
// constant -log sqrt(2 pi). The per-class logs are hoisted out of the data
// loop.
class LogWeights {
 public:
  explicit LogWeights(const GlobalTheta& t) : t_(t) {
    for (int m = 0; m < t.M; ++m) {
      offset_.push_back(t.pi[m] > 0.0 ? std::log(t.pi[m]) - std::log(t.sigma[m])
                                      : -std::numeric_limits<double>::infinity());
      inv_sigma_.push_back(1.0 / t.sigma[m]);
    }
  }

  double operator()(double x, double* lw) const {
    double best = -std::numeric_limits<double>::infinity();
    for (int m = 0; m < t_.M; ++m) {
      const double z = (x - t_.mu[m]) * inv_sigma_[m];
      lw[m] = offset_[m] - 0.5 * z * z;
      best = std::max(best, lw[m]);
    }
    return best;
  }

 private:
  const GlobalTheta& t_;
  std::vector<double> offset_, inv_sigma_;
};

GlobalTheta sorted_by_mean(const GlobalTheta& t) {
  std::vector<int> order(static_cast<std::size_t>(t.M));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return t.mu[a] < t.mu[b]; });
  GlobalTheta out{t.M, {}, {}, {}};
  for (const int m : order) {
    out.pi.push_back(t.pi[m]);
    out.mu.push_back(t.mu[m]);
    out.sigma.push_back(t.sigma[m]);
  }
  return out;
}

}  // namespace

KMeansResult kmeans(std::span<const double> values, int M, int max_iter) {
  if (M < 1) throw std::invalid_argument("kmeans: M must be at least 1");
  if (max_iter < 1) throw std::invalid_argument("kmeans: max_iter must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = static_cast<int>(
      std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  if (distinct < M) {
    throw std::invalid_argument("kmeans: " + std::to_string(distinct) +
                                " distinct values for M = " + std::to_string(M));
  }
  sorted.assign(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  const std::size_t n = values.size();
  KMeansResult res;
  res.centroids.resize(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    auto q = static_cast<std::size_t>((m + 0.5) / M * static_cast<double>(n));
    res.centroids[m] = sorted[std::min(q, n - 1)];
  }
  res.assignments.assign(n, -1);

  std::vector<double> sum(static_cast<std::size_t>(M));
  std::vector<std::size_t> count(static_cast<std::size_t>(M));
  for (int it = 1; it <= max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = nearest(values[i], res.centroids);
      if (a != res.assignments[i]) {
        res.assignments[i] = a;
        changed = true;
      }
    }
    res.iterations = it;
    if (!changed) {
      res.converged = true;
      break;
    }

    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[res.assignments[i]] += values[i];
      ++count[res.assignments[i]];
    }
    for (int m = 0; m < M; ++m) {
      if (count[m] > 0) res.centroids[m] = sum[m] / static_cast<double>(count[m]);
    }
    for (int m = 0; m < M; ++m) {
      if (count[m] > 0) continue;
      // Reseed to the point worst served by its current centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = std::abs(values[i] - res.centroids[res.assignments[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.centroids[m] = values[far];
    }

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = values[i] - res.centroids[res.assignments[i]];
      sse += e * e;
    }
    res.sse_trace.push_back(sse);
  }

  // Ascending centroid order with assignments remapped to match.
  std::vector<int> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return res.centroids[a] < res.centroids[b];
  });
  std::vector<int> rank(static_cast<std::size_t>(M));
  std::vector<double> centroids(static_cast<std::size_t>(M));
  for (int pos = 0; pos < M; ++pos) {
    rank[order[pos]] = pos;
    centroids[pos] = res.centroids[order[pos]];
  }
  res.centroids = std::move(centroids);
  for (auto& a : res.assignments) a = rank[a];
  return res;
}

void to_json(nlohmann::json& j, const GlobalTheta& t) {
  j = nlohmann::json{{"M", t.M}, {"pi", t.pi}, {"mu", t.mu}, {"sigma", t.sigma}};
}

void from_json(const nlohmann::json& j, GlobalTheta& t) {
  j.at("M").get_to(t.M);
  j.at("pi").get_to(t.pi);
  j.at("mu").get_to(t.mu);
  j.at("sigma").get_to(t.sigma);
  check_theta(t);
}

GlobalTheta theta_from_kmeans(std::span<const double> values,
                              const KMeansResult& km, double sigma_floor) {
  const int M = static_cast<int>(km.centroids.size());
  GlobalTheta t{M, std::vector<double>(M, 0.0), km.centroids,
                std::vector<double>(M, 0.0)};
  std::vector<std::size_t> count(static_cast<std::size_t>(M), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int a = km.assignments[i];
    const double e = values[i] - km.centroids[a];
    t.sigma[a] += e * e;
    ++count[a];
  }
  const auto n = static_cast<double>(values.size());
  for (int m = 0; m < M; ++m) {
    t.pi[m] = static_cast<double>(count[m]) / n;
    const double var = count[m] > 0 ? t.sigma[m] / static_cast<double>(count[m]) : 0.0;
    t.sigma[m] = std::max(std::sqrt(var), sigma_floor);
  }
  return t;
}

double gmm_loglik(std::span<const double> values, const GlobalTheta& theta) {
  check_theta(theta);
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  const LogWeights log_weights(theta);
  std::vector<double> lw(static_cast<std::size_t>(theta.M));
  double total = 0.0;
  for (const double x : values) {
    const double best = log_weights(x, lw.data());
    double acc = 0.0;
    for (int m = 0; m < theta.M; ++m) acc += std::exp(lw[m] - best);
    total += best + std::log(acc) - log_norm;
  }
  return total;
}

GmmResult gmm_fit_global(std::span<const double> values, const GlobalTheta& init,
                         double tol, int max_iter, double sigma_floor) {
  check_theta(init);
  if (values.empty()) throw std::invalid_argument("gmm_fit_global: no values");
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("sigma_floor must be positive");
  const int M = init.M;
  const std::size_t n = values.size();
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);

  GmmResult res;
  res.theta = init;
  for (auto& s : res.theta.sigma) s = std::max(s, sigma_floor);

  std::vector<double> lw(static_cast<std::size_t>(M));
  std::vector<double> w(static_cast<std::size_t>(M));
  std::vector<double> wx(static_cast<std::size_t>(M));
  std::vector<double> wxx(static_cast<std::size_t>(M));
  std::vector<bool> collapsed(static_cast<std::size_t>(M), false);
  // Pass t scores theta_t and collects the statistics for theta_{t+1}, so
  // the trace costs nothing extra.
  for (int pass = 0;; ++pass) {
    std::fill(w.begin(), w.end(), 0.0);
    std::fill(wx.begin(), wx.end(), 0.0);
    std::fill(wxx.begin(), wxx.end(), 0.0);
    const LogWeights log_weights(res.theta);
    double ll = 0.0;
    for (const double x : values) {
      const double best = log_weights(x, lw.data());
      double total = 0.0;
      for (int m = 0; m < M; ++m) {
        lw[m] = std::exp(lw[m] - best);
        total += lw[m];
      }
      ll += best + std::log(total) - log_norm;
      for (int m = 0; m < M; ++m) {
        const double r = lw[m] / total;
        const double e = x - res.theta.mu[m];  // centered on the old mean
        w[m] += r;
        wx[m] += r * e;
        wxx[m] += r * e * e;
      }
    }
    res.loglik_trace.push_back(ll);
    if (pass > 0) {
      const double previous = res.loglik_trace[pass - 1];
      res.max_decrease = std::max(res.max_decrease, previous - ll);
      if (ll - previous < tol * (1.0 + std::abs(ll))) {
        res.converged = true;
        break;
      }
    }
    if (pass == max_iter) break;

    GlobalTheta next = res.theta;
    for (int m = 0; m < M; ++m) {
      next.pi[m] = w[m] / static_cast<double>(n);
      if (!(w[m] > 0.0)) continue;
      const double shift = wx[m] / w[m];
      next.mu[m] = res.theta.mu[m] + shift;
      const double sd = std::sqrt(std::max(wxx[m] / w[m] - shift * shift, 0.0));
      if (sd < sigma_floor) collapsed[m] = true;
      next.sigma[m] = std::max(sd, sigma_floor);
    }
    res.theta = std::move(next);
    res.iterations = pass + 1;
  }
  res.collapsed_components =
      static_cast<int>(std::count(collapsed.begin(), collapsed.end(), true));
  res.theta = sorted_by_mean(res.theta);
  return res;
}

double baseline_predict(const GlobalTheta& theta) {
  check_theta(theta);
  double acc = 0.0;
  for (int m = 0; m < theta.M; ++m) acc += theta.pi[m] * theta.mu[m];
  return acc;
}

ParameterField baseline_field(const GlobalTheta& theta, Dims dims) {
  check_theta(theta);
  ParameterField f(dims, theta.M);
  for (int m = 0; m < theta.M; ++m) {
    f.pi[m] = Volume3D(dims, theta.pi[m]);
    f.mu[m] = Volume3D(dims, theta.mu[m]);
    f.sigma[m] = Volume3D(dims, theta.sigma[m]);
  }
  return f;
}

LabelVolume kmeans_labels(const Volume3D& v, std::span<const double> centroids) {
  if (centroids.empty()) throw std::invalid_argument("kmeans_labels: no centroids");
  std::vector<std::uint8_t> labels(v.size());
  for (std::size_t idx = 0; idx < v.size(); ++idx) {
    labels[idx] = static_cast<std::uint8_t>(nearest(v[idx], centroids) + 1);
  }
  return LabelVolume(v.dims(), static_cast<int>(centroids.size()), std::move(labels));
}

LabelVolume gmm_labels(const Volume3D& v, const GlobalTheta& theta) {
  check_theta(theta);
  const LogWeights log_weights(theta);
  std::vector<double> lw(static_cast<std::size_t>(theta.M));
  std::vector<std::uint8_t> labels(v.size());
  for (std::size_t idx = 0; idx < v.size(); ++idx) {
    log_weights(v[idx], lw.data());
    int best = 0;
    for (int m = 1; m < theta.M; ++m) {
      if (lw[m] > lw[best]) best = m;
    }
    labels[idx] = static_cast<std::uint8_t>(best + 1);
  }
  return LabelVolume(v.dims(), theta.M, std::move(labels));
}

}  // namespace kemvol
