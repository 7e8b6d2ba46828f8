#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kemvol/bandwidth.hpp"
#include "kemvol/baselines.hpp"
#include "kemvol/kem.hpp"
#include "kemvol/metrics.hpp"
#include "kemvol/phantom.hpp"

namespace kemvol {

/// KEM fit on raw-scale data: normalizes, derives (h, s) from the bandwidth
/// constant and the sample count, fits, and maps the fields back.
struct KemRun {
  FitResult fit;            // on the [0,1] scale
  ParameterField theta;     // original scale, ascending-mean class order
  ValueRange range;
  Pilot pilot;
  double seconds = 0.0;
};

/// `filter_size` overrides the filter size derived from h.
KemRun run_kem(const Volume3D& y, const SampleMask& sample, double Ch,
               const FitConfig& base, std::optional<int> filter_size = std::nullopt,
               const IterationObserver& observer = {});

/// Same with an explicit bandwidth and filter size.
KemRun run_kem_with(const Volume3D& y, const SampleMask& sample, double h, int s,
                    const FitConfig& base, const IterationObserver& observer = {});

struct EvaluationOptions {
  double train_fraction = 0.8;
  double r = 1.0;               // fraction of training voxels used as samples
  std::uint64_t split_seed = 1;
  FitConfig base;               // kernel is filled per method
  std::vector<Pilot> cv_pilots;  // empty -> default schedules
  std::vector<Pilot> reg_pilots;
  std::vector<SelectionMethod> methods{SelectionMethod::cv, SelectionMethod::reg};
  // A fixed bandwidth constant replaces selection with a single "KEM" row.
  std::optional<double> Ch;
  std::optional<int> filter_size;
};

/// Splits, selects bandwidths by CV and REG, and scores KEM-CV, KEM-REG,
/// k-means and the global GMM against the phantom truth.
std::vector<EvalReport> evaluate_methods(const Phantom& ph, const EvaluationOptions& opt);

/// Individual scorers on a prepared split. `sample` is the fitting set, a
/// subset of the complement of `test`.
EvalReport score_kem(const Phantom& ph, const KemRun& run, const SampleMask& test,
                     const std::string& method, double r);
EvalReport score_kmeans(const Phantom& ph, const SampleMask& sample,
                        const SampleMask& test, double r, int M);
EvalReport score_gmm(const Phantom& ph, const SampleMask& sample,
                     const SampleMask& test, double r, int M, double sigma_floor);

/// Parameter recovery at several sampling ratios with a fixed bandwidth
/// constant; the fit uses an r-fraction of all voxels.
std::vector<EvalReport> sampling_sweep(const Phantom& ph, const std::vector<double>& ratios,
                                       double Ch, const FitConfig& base,
                                       std::uint64_t seed,
                                       std::optional<int> filter_size = std::nullopt);

}  // namespace kemvol
