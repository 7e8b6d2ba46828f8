#include "kemvol/pipeline.hpp"

#include <chrono>
#include <stdexcept>

namespace kemvol {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

LabelVolume aligned_truth_labels(const Phantom& ph) {
  return relabel(ph.labels, ascending_mean_order(ph.truth));
}

SampleMask complement(const SampleMask& m) {
  SampleMask out = m;
  out.role = MaskRole::test;
  for (auto& b : out.included) b = b ? 0 : 1;
  out.ratio = 1.0 - m.ratio;
  return out;
}

}  // namespace

KemRun run_kem_with(const Volume3D& y, const SampleMask& sample, double h, int s,
                    const FitConfig& base, const IterationObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  const Volume3D unit = normalize_to_unit(y);
  FitConfig cfg = base;
  cfg.kernel = make_kernel(h, s, y.dims());
  KemRun run;
  run.range = *unit.value_range();
  run.pilot = Pilot{h * bandwidth_scale(sample.count()), h, s};
  run.fit = kem_fit(unit, sample, cfg, observer);
  const ParameterField scaled = denormalize_parameters(run.fit.theta, run.range);
  run.theta = reorder(scaled, ascending_mean_order(scaled));
  run.seconds = seconds_since(start);
  return run;
}

KemRun run_kem(const Volume3D& y, const SampleMask& sample, double Ch,
               const FitConfig& base, std::optional<int> filter_size,
               const IterationObserver& observer) {
  const std::size_t N = sample.count();
  if (N == 0) throw std::invalid_argument("run_kem: empty sample mask");
  const double h = Ch / bandwidth_scale(N);
  return run_kem_with(y, sample, h, filter_size.value_or(filter_size_for(h, y.dims())), base,
                      observer);
}

EvalReport score_kem(const Phantom& ph, const KemRun& run, const SampleMask& test,
                     const std::string& method, double r) {
  EvalReport rep;
  rep.method = method;
  rep.r = r;
  rep.Ch = run.pilot.Ch;
  rep.rmse_pi = rmse_field(run.theta, ph.truth, ParamKind::pi);
  rep.rmse_mu = rmse_field(run.theta, ph.truth, ParamKind::mu);
  rep.rmse_sigma = rmse_field(run.theta, ph.truth, ParamKind::sigma);
  rep.spe = spe_report(ph.volume, test, predict_response(run.theta));
  rep.accuracy = accuracy(hard_labels(ph.volume, run.theta), aligned_truth_labels(ph), test);
  rep.seconds = run.seconds;
  return rep;
}

EvalReport score_kmeans(const Phantom& ph, const SampleMask& sample,
                        const SampleMask& test, double r, int M) {
  const auto start = std::chrono::steady_clock::now();
  const auto values = masked_values(ph.volume, sample);
  const KMeansResult km = kmeans(values, M);
  const GlobalTheta theta = theta_from_kmeans(values, km, 1e-12);
  const ParameterField field = baseline_field(theta, ph.volume.dims());
  EvalReport rep;
  rep.method = "k-means";
  rep.r = r;
  rep.rmse_pi = rmse_field(field, ph.truth, ParamKind::pi);
  rep.rmse_mu = rmse_field(field, ph.truth, ParamKind::mu);
  rep.rmse_sigma = rmse_field(field, ph.truth, ParamKind::sigma);
  rep.spe = spe_report(ph.volume, test, baseline_predict(theta));
  rep.accuracy = accuracy(kmeans_labels(ph.volume, km.centroids), aligned_truth_labels(ph), test);
  rep.seconds = seconds_since(start);
  return rep;
}

EvalReport score_gmm(const Phantom& ph, const SampleMask& sample,
                     const SampleMask& test, double r, int M, double sigma_floor) {
  const auto start = std::chrono::steady_clock::now();
  const auto values = masked_values(ph.volume, sample);
  const KMeansResult km = kmeans(values, M);
  const GmmResult gmm =
      gmm_fit_global(values, theta_from_kmeans(values, km, sigma_floor), 1e-8, 500, sigma_floor);
  const ParameterField field = baseline_field(gmm.theta, ph.volume.dims());
  EvalReport rep;
  rep.method = "GMM";
  rep.r = r;
  rep.rmse_pi = rmse_field(field, ph.truth, ParamKind::pi);
  rep.rmse_mu = rmse_field(field, ph.truth, ParamKind::mu);
  rep.rmse_sigma = rmse_field(field, ph.truth, ParamKind::sigma);
  rep.spe = spe_report(ph.volume, test, baseline_predict(gmm.theta));
  rep.accuracy = accuracy(gmm_labels(ph.volume, gmm.theta), aligned_truth_labels(ph), test);
  rep.seconds = seconds_since(start);
  return rep;
}

std::vector<EvalReport> evaluate_methods(const Phantom& ph, const EvaluationOptions& opt) {
  const Dims d = ph.volume.dims();
  auto [train, test] = split_train_test(d, opt.train_fraction, opt.split_seed);
  const SampleMask sample = subsample_within(train, opt.r, opt.split_seed + 1);
  const std::size_t N = sample.count();
  const Volume3D unit = normalize_to_unit(ph.volume);

  std::vector<EvalReport> rows;
  if (opt.Ch) {
    rows.push_back(score_kem(ph, run_kem(ph.volume, sample, *opt.Ch, opt.base, opt.filter_size),
                             test, "KEM", opt.r));
  }
  for (const SelectionMethod method : opt.Ch ? std::vector<SelectionMethod>{} : opt.methods) {
    BandwidthPlan plan = method == SelectionMethod::cv ? default_cv_schedule(d, N)
                                                       : default_reg_schedule(d, N);
    const auto& custom = method == SelectionMethod::cv ? opt.cv_pilots : opt.reg_pilots;
    if (!custom.empty()) plan.pilots = custom;
    const BandwidthSelection sel = select_bandwidth(unit, sample, test, plan, opt.base);
    KemRun run = run_kem_with(ph.volume, sample, sel.h, opt.filter_size.value_or(sel.s), opt.base);
    run.pilot.Ch = sel.Ch;
    run.seconds += sel.seconds;
    rows.push_back(score_kem(ph, run, test,
                             method == SelectionMethod::cv ? "KEM-CV" : "KEM-REG", opt.r));
  }
  rows.push_back(score_kmeans(ph, sample, test, opt.r, opt.base.M));
  rows.push_back(score_gmm(ph, sample, test, opt.r, opt.base.M, opt.base.sigma_floor));
  return rows;
}

std::vector<EvalReport> sampling_sweep(const Phantom& ph, const std::vector<double>& ratios,
                                       double Ch, const FitConfig& base,
                                       std::uint64_t seed, std::optional<int> filter_size) {
  std::vector<EvalReport> rows;
  const Dims d = ph.volume.dims();
  for (const double r : ratios) {
    const SampleMask sample = subsample_mask(d, r, seed);
    const SampleMask held_out = sample.count() < d.voxels() ? complement(sample)
                                                            : SampleMask::full(d);
    const KemRun run = run_kem(ph.volume, sample, Ch, base, filter_size);
    rows.push_back(score_kem(ph, run, held_out, "KEM", r));
  }
  return rows;
}

}  // namespace kemvol
