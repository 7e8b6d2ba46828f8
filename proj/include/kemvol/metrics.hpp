#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kemvol/volume.hpp"

namespace kemvol {

enum class ParamKind { pi, mu, sigma };

const char* to_string(ParamKind kind);

/// Component permutation that sorts classes by their grid-averaged mean.
/// order[pos] is the original class index placed at position pos.
std::vector<int> ascending_mean_order(const ParameterField& theta);

ParameterField reorder(const ParameterField& theta, std::span<const int> order);

/// Renames labels so that original class order[pos] + 1 becomes pos + 1.
LabelVolume relabel(const LabelVolume& labels, std::span<const int> order);

/// sqrt( mean over voxels and classes of (estimate - truth)^2 ), after
/// putting both fields in ascending-mean class order.
double rmse_field(const ParameterField& estimate, const ParameterField& truth,
                  ParamKind which);

/// Fraction of masked voxels whose labels agree. Labels are compared as
/// given; align them first with relabel().
double accuracy(const LabelVolume& pred, const LabelVolume& truth,
                const SampleMask& mask);

/// |test|^-1 sum over test voxels of (Y - Yhat)^2, for a per-voxel or a
/// constant prediction.
double spe_report(const Volume3D& y, const SampleMask& test, const Volume3D& prediction);
double spe_report(const Volume3D& y, const SampleMask& test, double prediction);

struct EvalReport {
  std::string method;
  double r = 1.0;
  std::optional<double> Ch;  // blank for bandwidth-free methods
  double rmse_pi = 0.0;
  double rmse_mu = 0.0;
  double rmse_sigma = 0.0;
  double spe = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kEvalCsvHeader =
    "method,r,Ch,rmse_pi,rmse_mu,rmse_sigma,spe,accuracy,seconds";

std::string to_csv_row(const EvalReport& row);

/// Appends rows, writing the header first when the file is new or empty.
void append_csv(const std::filesystem::path& path, std::span<const EvalReport> rows);

}  // namespace kemvol
