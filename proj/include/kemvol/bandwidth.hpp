#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "kemvol/kem.hpp"
#include "kemvol/volume.hpp"

namespace kemvol {

enum class SelectionMethod { cv, reg };

const char* to_string(SelectionMethod m);
SelectionMethod selection_method_from_string(const std::string& s);

/// One candidate bandwidth: h = Ch * N^(-1/7), with filter size s.
struct Pilot {
  double Ch = 0.0;
  double h = 0.0;
  int s = 3;
};

struct BandwidthPlan {
  SelectionMethod method = SelectionMethod::reg;
  std::size_t N = 0;  // training sample size
  std::vector<Pilot> pilots;

  int G() const { return static_cast<int>(pilots.size()); }
};

/// N^(1/7), the factor linking a bandwidth to its constant.
double bandwidth_scale(std::size_t N);

/// Filter sizes 3, 5, ..., 11 with h = s / 512.
BandwidthPlan default_reg_schedule(Dims dims, std::size_t N);

/// The REG pilots, each bandwidth multiplied by 0.3 ... 0.7 (25 pilots).
BandwidthPlan default_cv_schedule(Dims dims, std::size_t N);

struct SpePoint {
  Pilot pilot;
  double spe = 0.0;
};

struct SpeCurve {
  std::vector<SpePoint> points;
};

/// Mean squared error of y against `prediction` over the test voxels.
double mean_squared_error(const Volume3D& y, const Volume3D& prediction,
                          const SampleMask& test);

/// Fits KEM on the training voxels with the pilot kernel (other settings
/// from `base`), predicts sum_m pi_m mu_m at the test voxels, returns MSE.
double spe(const Volume3D& v, const SampleMask& train, const SampleMask& test,
           const Pilot& pilot, const FitConfig& base);

/// Index of the smallest SPE; ties go to the smaller Ch.
std::size_t select_cv(const SpeCurve& curve);

struct RegFit {
  double Ch = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  bool fell_back = false;
  std::string warning;
};

/// OLS of the centered SPE values on the centered design
/// (N^(-4/7) Ch^4 / 4, N^(-4/7) Ch^-3), then Ch = (3 C2 / C1)^(1/7).
/// Falls back to the CV choice on a singular design or a non-positive
/// constant.
RegFit select_reg(const SpeCurve& curve, std::size_t N);

/// Condition-number limit for the (column-equilibrated) 2x2 normal matrix.
constexpr double kRegConditionLimit = 1e12;

/// Smallest odd integer >= h * max(dims), clamped to [min_s, max_s].
int filter_size_for(double h, Dims dims, int min_s = 3, int max_s = 11);

struct BandwidthSelection {
  SelectionMethod method = SelectionMethod::reg;
  double Ch = 0.0;
  double h = 0.0;
  int s = 3;
  std::size_t N = 0;
  SpeCurve curve;
  RegFit reg;  // populated for REG
  double seconds = 0.0;
};

/// Evaluates every pilot of the plan, then applies the plan's selector.
BandwidthSelection select_bandwidth(const Volume3D& v, const SampleMask& train,
                                    const SampleMask& test,
                                    const BandwidthPlan& plan,
                                    const FitConfig& base);

nlohmann::json to_json(const BandwidthSelection& sel);

}  // namespace kemvol
