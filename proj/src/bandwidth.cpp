#include "kemvol/bandwidth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace kemvol {

namespace {

constexpr int kScheduleG = 5;
constexpr double kScheduleGrid = 512.0;
constexpr double kCvMultipliers[] = {0.3, 0.4, 0.5, 0.6, 0.7};

Pilot make_pilot(double h, int s, std::size_t N) {
  return Pilot{h * bandwidth_scale(N), h, s};
}

}  // namespace

const char* to_string(SelectionMethod m) {
  return m == SelectionMethod::cv ? "CV" : "REG";
}

SelectionMethod selection_method_from_string(const std::string& s) {
  if (s == "cv" || s == "CV") return SelectionMethod::cv;
  if (s == "reg" || s == "REG") return SelectionMethod::reg;
  throw std::invalid_argument("unknown bandwidth method '" + s + "'");
}

double bandwidth_scale(std::size_t N) {
  if (N == 0) throw std::invalid_argument("sample size N must be positive");
  return std::pow(static_cast<double>(N), 1.0 / 7.0);
}

BandwidthPlan default_reg_schedule(Dims dims, std::size_t N) {
  if (!dims.valid()) throw std::invalid_argument("schedule dims must be positive");
  BandwidthPlan plan{SelectionMethod::reg, N, {}};
  for (int g = 1; g <= kScheduleG; ++g) {
    const int s = 2 * g + 1;
    plan.pilots.push_back(make_pilot(s / kScheduleGrid, s, N));
  }
  return plan;
}

BandwidthPlan default_cv_schedule(Dims dims, std::size_t N) {
  if (!dims.valid()) throw std::invalid_argument("schedule dims must be positive");
  BandwidthPlan plan{SelectionMethod::cv, N, {}};
  for (int g = 1; g <= kScheduleG; ++g) {
    const int s = 2 * g + 1;
    for (const double mult : kCvMultipliers) {
      plan.pilots.push_back(make_pilot(mult * s / kScheduleGrid, s, N));
    }
  }
  return plan;
}

double mean_squared_error(const Volume3D& y, const Volume3D& prediction,
                          const SampleMask& test) {
  if (y.dims() != prediction.dims() || test.dims != y.dims()) {
    throw std::invalid_argument("mean_squared_error: dims mismatch");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t idx = 0; idx < y.size(); ++idx) {
    if (!test.included[idx]) continue;
    const double e = y[idx] - prediction[idx];
    total += e * e;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("empty test set");
  return total / static_cast<double>(count);
}

double spe(const Volume3D& v, const SampleMask& train, const SampleMask& test,
           const Pilot& pilot, const FitConfig& base) {
  if (test.count() == 0) throw std::invalid_argument("empty test set");
  FitConfig cfg = base;
  cfg.kernel = make_kernel(pilot.h, pilot.s, v.dims());
  const FitResult fit = kem_fit(v, train, cfg);
  return mean_squared_error(v, predict_response(fit.theta), test);
}

std::size_t select_cv(const SpeCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("select_cv: empty curve");
  std::size_t best = 0;
  for (std::size_t g = 1; g < curve.points.size(); ++g) {
    const auto& p = curve.points[g];
    const auto& b = curve.points[best];
    if (p.spe < b.spe || (p.spe == b.spe && p.pilot.Ch < b.pilot.Ch)) best = g;
  }
  return best;
}

RegFit select_reg(const SpeCurve& curve, std::size_t N) {
  const std::size_t G = curve.points.size();
  if (G == 0) throw std::invalid_argument("select_reg: empty curve");
  auto fallback = [&](std::string why) {
    RegFit out;
    out.fell_back = true;
    out.warning = std::move(why);
    out.Ch = curve.points[select_cv(curve)].pilot.Ch;
    return out;
  };

  const double scale = std::pow(static_cast<double>(N), -4.0 / 7.0);
  std::vector<double> x1(G), x2(G), y(G);
  double m1 = 0.0, m2 = 0.0, my = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    const double c = curve.points[g].pilot.Ch;
    if (!(c > 0.0)) throw std::invalid_argument("select_reg: pilot Ch must be positive");
    x1[g] = scale * std::pow(c, 4) / 4.0;
    x2[g] = scale / std::pow(c, 3);
    y[g] = curve.points[g].spe;
    m1 += x1[g];
    m2 += x2[g];
    my += y[g];
  }
  const auto Gd = static_cast<double>(G);
  m1 /= Gd;
  m2 /= Gd;
  my /= Gd;

  double n1 = 0.0, n2 = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    x1[g] -= m1;
    x2[g] -= m2;
    y[g] -= my;
    n1 += x1[g] * x1[g];
    n2 += x2[g] * x2[g];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  if (!(n1 > 0.0) || !(n2 > 0.0)) {
    return fallback("singular design: a centered column is zero");
  }

  // Column-equilibrated normal equations [[1, rho], [rho, 1]] c = b.
  double rho = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    const double a = x1[g] / n1;
    const double b = x2[g] / n2;
    rho += a * b;
    b1 += a * y[g];
    b2 += b * y[g];
  }
  const double det = 1.0 - rho * rho;
  const double cond = (1.0 + std::abs(rho)) / (1.0 - std::abs(rho));
  if (!(det > 0.0) || !(cond < kRegConditionLimit)) {
    return fallback("singular design: condition number exceeds limit");
  }
  RegFit out;
  out.C1 = (b1 - rho * b2) / det / n1;
  out.C2 = (b2 - rho * b1) / det / n2;
  if (!(out.C1 > 0.0) || !(out.C2 > 0.0)) {
    RegFit fb = fallback("non-positive estimated constant");
    fb.C1 = out.C1;
    fb.C2 = out.C2;
    return fb;
  }
  out.Ch = std::pow(3.0 * out.C2 / out.C1, 1.0 / 7.0);
  return out;
}

int filter_size_for(double h, Dims dims, int min_s, int max_s) {
  if (!(h > 0.0)) throw std::invalid_argument("filter_size_for: h must be positive");
  const double span = h * dims.max_extent();
  // Guard against ceil() bumping an exact odd integer by rounding noise.
  auto s = static_cast<long>(std::ceil(span - 1e-9));
  if (s % 2 == 0) ++s;
  return static_cast<int>(std::clamp<long>(s, min_s, max_s));
}

BandwidthSelection select_bandwidth(const Volume3D& v, const SampleMask& train,
                                    const SampleMask& test,
                                    const BandwidthPlan& plan,
                                    const FitConfig& base) {
  if (plan.pilots.empty()) throw std::invalid_argument("bandwidth plan has no pilots");
  const auto start = std::chrono::steady_clock::now();
  BandwidthSelection sel;
  sel.method = plan.method;
  sel.N = plan.N;
  for (const auto& pilot : plan.pilots) {
    sel.curve.points.push_back({pilot, spe(v, train, test, pilot, base)});
  }
  if (plan.method == SelectionMethod::cv) {
    const auto& best = sel.curve.points[select_cv(sel.curve)].pilot;
    sel.Ch = best.Ch;
    sel.h = best.h;
    sel.s = best.s;
  } else {
    sel.reg = select_reg(sel.curve, plan.N);
    if (sel.reg.fell_back) {
      const auto& best = sel.curve.points[select_cv(sel.curve)].pilot;
      sel.Ch = best.Ch;
      sel.h = best.h;
      sel.s = best.s;
    } else {
      sel.Ch = sel.reg.Ch;
      sel.h = sel.Ch / bandwidth_scale(plan.N);
      sel.s = filter_size_for(sel.h, v.dims());
    }
  }
  sel.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sel;
}

nlohmann::json to_json(const BandwidthSelection& sel) {
  nlohmann::json pilots = nlohmann::json::array();
  for (const auto& p : sel.curve.points) {
    pilots.push_back({{"Ch", p.pilot.Ch}, {"h", p.pilot.h}, {"s", p.pilot.s},
                      {"spe", p.spe}});
  }
  nlohmann::json selected{{"Ch", sel.Ch}, {"h", sel.h}, {"s", sel.s}, {"N", sel.N}};
  if (sel.method == SelectionMethod::reg) {
    selected["C1"] = sel.reg.C1;
    selected["C2"] = sel.reg.C2;
    selected["fell_back"] = sel.reg.fell_back;
    if (!sel.reg.warning.empty()) selected["warning"] = sel.reg.warning;
  }
  return {{"method", to_string(sel.method)},
          {"pilots", std::move(pilots)},
          {"selected", std::move(selected)},
          {"seconds", sel.seconds}};
}

}  // namespace kemvol
