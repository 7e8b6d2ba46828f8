#include "kemvol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace kemvol {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::pi: return "pi";
    case ParamKind::mu: return "mu";
    case ParamKind::sigma: return "sigma";
  }
  return "unknown";
}

std::vector<int> ascending_mean_order(const ParameterField& theta) {
  std::vector<double> avg(static_cast<std::size_t>(theta.M), 0.0);
  for (int m = 0; m < theta.M; ++m) {
    const auto values = theta.mu[m].values();
    avg[m] = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
  }
  std::vector<int> order(static_cast<std::size_t>(theta.M));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return avg[a] < avg[b]; });
  return order;
}

ParameterField reorder(const ParameterField& theta, std::span<const int> order) {
  if (static_cast<int>(order.size()) != theta.M) {
    throw std::invalid_argument("reorder: permutation length does not match M");
  }
  ParameterField out(theta.dims, theta.M);
  for (int pos = 0; pos < theta.M; ++pos) {
    const int m = order[pos];
    out.pi[pos] = theta.pi.at(m);
    out.mu[pos] = theta.mu.at(m);
    out.sigma[pos] = theta.sigma.at(m);
  }
  return out;
}

LabelVolume relabel(const LabelVolume& labels, std::span<const int> order) {
  const int M = labels.M();
  if (static_cast<int>(order.size()) != M) {
    throw std::invalid_argument("relabel: permutation length does not match M");
  }
  std::vector<std::uint8_t> rank(static_cast<std::size_t>(M) + 1, 0);
  for (int pos = 0; pos < M; ++pos) rank.at(order[pos] + 1) = static_cast<std::uint8_t>(pos + 1);
  std::vector<std::uint8_t> out(labels.size());
  for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] = rank[labels[idx]];
  return LabelVolume(labels.dims(), M, std::move(out));
}

double rmse_field(const ParameterField& estimate, const ParameterField& truth,
                  ParamKind which) {
  if (estimate.dims != truth.dims) throw std::invalid_argument("rmse_field: dims mismatch");
  if (estimate.M != truth.M) throw std::invalid_argument("rmse_field: M mismatch");
  const ParameterField a = reorder(estimate, ascending_mean_order(estimate));
  const ParameterField b = reorder(truth, ascending_mean_order(truth));
  auto pick = [which](const ParameterField& f) -> const std::vector<Volume3D>& {
    switch (which) {
      case ParamKind::pi: return f.pi;
      case ParamKind::mu: return f.mu;
      case ParamKind::sigma: return f.sigma;
    }
    return f.pi;
  };
  const auto& fa = pick(a);
  const auto& fb = pick(b);
  double total = 0.0;
  for (int m = 0; m < a.M; ++m) {
    for (std::size_t idx = 0; idx < fa[m].size(); ++idx) {
      const double e = fa[m][idx] - fb[m][idx];
      total += e * e;
    }
  }
  const double count = static_cast<double>(a.dims.voxels()) * a.M;
  return std::sqrt(total / count);
}

double accuracy(const LabelVolume& pred, const LabelVolume& truth, const SampleMask& mask) {
  if (pred.dims() != truth.dims() || mask.dims != pred.dims()) {
    throw std::invalid_argument("accuracy: dims mismatch");
  }
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t idx = 0; idx < pred.size(); ++idx) {
    if (!mask.included[idx]) continue;
    ++total;
    if (pred[idx] == truth[idx]) ++hits;
  }
  if (total == 0) throw std::invalid_argument("accuracy: mask is empty");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double spe_report(const Volume3D& y, const SampleMask& test, const Volume3D& prediction) {
  if (y.dims() != prediction.dims() || test.dims != y.dims()) {
    throw std::invalid_argument("spe_report: dims mismatch");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t idx = 0; idx < y.size(); ++idx) {
    if (!test.included[idx]) continue;
    const double e = y[idx] - prediction[idx];
    total += e * e;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("spe_report: empty test set");
  return total / static_cast<double>(count);
}

double spe_report(const Volume3D& y, const SampleMask& test, double prediction) {
  return spe_report(y, test, Volume3D(y.dims(), prediction));
}

std::string to_csv_row(const EvalReport& row) {
  std::ostringstream os;
  os.precision(10);
  os << row.method << ',' << row.r << ',';
  if (row.Ch) os << *row.Ch;
  os << ',' << row.rmse_pi << ',' << row.rmse_mu << ',' << row.rmse_sigma << ','
     << row.spe << ',' << row.accuracy << ',' << row.seconds;
  return os.str();
}

void append_csv(const std::filesystem::path& path, std::span<const EvalReport> rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for appending");
  if (fresh) out << kEvalCsvHeader << '\n';
  for (const auto& row : rows) out << to_csv_row(row) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace kemvol
