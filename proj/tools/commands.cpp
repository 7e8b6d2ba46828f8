#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "kemvol/bandwidth.hpp"
#include "kemvol/baselines.hpp"
#include "kemvol/kem.hpp"
#include "kemvol/metrics.hpp"
#include "kemvol/parallel.hpp"
#include "kemvol/phantom.hpp"
#include "kemvol/pipeline.hpp"

namespace kemvol::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  // common
  std::string input;
  std::string out_dir = ".";
  int M = 3;
  double r = 1.0;
  std::uint64_t seed = 0;
  std::string method = "reg";
  std::string sigma_mode = "standard";
  int threads = 1;
  int filter_size = 0;
  double bandwidth_constant = 0.0;

  // per command
  std::vector<int> dims{64, 64, 64};
  std::string labels;
  std::string mask;
  std::string params;
  std::string baseline = "gmm";
  int class_index = 0;
  int max_iter = 50;
  double tol = 1e-4;
  double sigma_floor = 1e-4;
  double train_fraction = 0.8;

  const CLI::App* cmd = nullptr;  // the parsed subcommand

  bool given(const std::string& flag) const { return cmd->count(flag) > 0; }
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--input", o.input, "Input volume (.kvol stem, .json, .raw or .mhd)");
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
  cmd->add_option("--M", o.M, "Number of mixture components")->check(CLI::Range(1, 255));
  cmd->add_option("--r", o.r, "Sampling ratio in (0, 1]")
      ->check(CLI::Range(0.0, 1.0).description("in (0, 1]"));
  cmd->add_option("--seed", o.seed, "Seed for phantoms, splits and subsampling");
  cmd->add_option("--method", o.method, "Bandwidth selection method")
      ->check(CLI::IsMember({"cv", "reg"}));
  cmd->add_option("--sigma-mode", o.sigma_mode, "Sigma M-step variant")
      ->check(CLI::IsMember({"standard", "paper-literal"}));
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--filter-size", o.filter_size,
                  "Filter size s (odd); derived from h when absent");
  cmd->add_option("--bandwidth-constant", o.bandwidth_constant,
                  "Bandwidth constant Ch (h = Ch N^-1/7); selected when absent");
}

void add_fit_controls(CLI::App* cmd, Options& o) {
  cmd->add_option("--max-iter", o.max_iter, "EM iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--tol", o.tol, "Convergence tolerance on the max-abs field change");
  cmd->add_option("--sigma-floor", o.sigma_floor, "Lower bound for sigma");
}

Volume3D read_input(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--input is required");
  const fs::path p(path);
  if (p.extension() == ".mhd") return load_metaimage(p);
  return load_volume(p);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

FitConfig fit_config(const Options& o) {
  FitConfig cfg;
  cfg.M = o.M;
  cfg.max_iter = o.max_iter;
  cfg.tol = o.tol;
  cfg.sigma_floor = o.sigma_floor;
  cfg.sigma_mode = sigma_mode_from_string(o.sigma_mode);
  return cfg;
}

std::optional<int> filter_override(const Options& o) {
  if (!o.given("--filter-size")) return std::nullopt;
  return o.filter_size;
}

SampleMask sample_mask(const Options& o, Dims dims) {
  SampleMask base = SampleMask::full(dims);
  if (!o.mask.empty()) {
    base = mask_from_volume(load_volume(o.mask));
    if (base.dims != dims) throw std::invalid_argument("mask dims do not match the input");
  }
  return o.r < 1.0 ? subsample_within(base, o.r, o.seed) : base;
}

// Train/test halves of the sample for bandwidth selection.
std::pair<SampleMask, SampleMask> selection_split(const SampleMask& sample,
                                                  double train_fraction, std::uint64_t seed) {
  SampleMask train = subsample_within(sample, train_fraction, seed + 1);
  train.role = MaskRole::train;
  SampleMask test = sample;
  test.role = MaskRole::test;
  for (std::size_t idx = 0; idx < test.included.size(); ++idx) {
    if (train.included[idx]) test.included[idx] = 0;
  }
  test.ratio = 1.0 - train_fraction;
  if (test.count() == 0) throw std::invalid_argument("bandwidth selection needs a non-empty test set");
  return {std::move(train), std::move(test)};
}

BandwidthSelection run_selection(const Volume3D& y, const SampleMask& sample, const Options& o,
                                 const FitConfig& cfg) {
  auto [train, test] = selection_split(sample, o.train_fraction, o.seed);
  const SelectionMethod method = selection_method_from_string(o.method);
  const std::size_t N = train.count();
  const BandwidthPlan plan = method == SelectionMethod::cv ? default_cv_schedule(y.dims(), N)
                                                           : default_reg_schedule(y.dims(), N);
  return select_bandwidth(normalize_to_unit(y), train, test, plan, cfg);
}

IterationObserver json_logger(std::ostream& err, json& log) {
  return [&err, &log](const IterationInfo& info) {
    json line{{"iter", info.iteration}, {"max-delta", info.max_delta}, {"seconds", info.seconds}};
    err << line.dump() << '\n';
    log.push_back(std::move(line));
  };
}

int cmd_phantom(const Options& o, std::ostream& out) {
  if (o.dims.size() != 3) throw std::invalid_argument("--dims takes three extents");
  PhantomSpec spec;
  spec.dims = Dims{o.dims[0], o.dims[1], o.dims[2]};
  spec.M = o.M;
  spec.seed = o.seed;
  if (!o.labels.empty()) spec.external_labels = load_labels(o.labels, o.M);
  const Phantom ph = make_phantom(spec);

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  store_volume(ph.volume, dir / "volume");
  store_labels(ph.labels, dir / "labels");
  store_labels(ph.geometry, dir / "geometry");
  store_parameters(ph.truth, dir, "truth_");
  json meta = spec;
  write_json(meta, dir / "phantom.json");
  out << meta.dump(2) << '\n';
  return 0;
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
  const Volume3D y = read_input(o.input);
  const SampleMask sample = sample_mask(o, y.dims());
  const FitConfig cfg = fit_config(o);

  json summary;
  double h = 0.0;
  int s = 3;
  if (o.given("--bandwidth-constant")) {
    h = o.bandwidth_constant / bandwidth_scale(sample.count());
    s = filter_size_for(h, y.dims());
  } else {
    const BandwidthSelection sel = run_selection(y, sample, o, cfg);
    h = sel.h;
    s = sel.s;
    summary["bandwidth"] = to_json(sel);
  }
  s = filter_override(o).value_or(s);

  json log = json::array();
  const KemRun run = run_kem_with(y, sample, h, s, cfg, json_logger(err, log));

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  store_parameters(run.theta, dir);
  store_labels(hard_labels(y, run.theta), dir / "labels");
  summary["M"] = o.M;
  summary["dims"] = {y.dims().x, y.dims().y, y.dims().z};
  summary["N"] = sample.count();
  summary["h"] = h;
  summary["s"] = s;
  summary["Ch"] = run.pilot.Ch;
  summary["sigma_mode"] = o.sigma_mode;
  summary["iterations"] = run.fit.iterations;
  summary["converged"] = run.fit.converged;
  summary["final_delta"] = run.fit.final_delta;
  summary["carried_over"] = run.fit.carried_over;
  summary["value_range"] = {run.range.min, run.range.max};
  summary["seconds"] = run.seconds;
  summary["log"] = std::move(log);
  write_json(summary, dir / "fit.json");
  summary.erase("log");
  out << summary.dump(2) << '\n';
  return 0;
}

int cmd_bandwidth(const Options& o, std::ostream& out) {
  const Volume3D y = read_input(o.input);
  const SampleMask sample = sample_mask(o, y.dims());
  const json sel = to_json(run_selection(y, sample, o, fit_config(o)));
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_json(sel, dir / "bandwidth.json");
  out << sel.dump(2) << '\n';
  return 0;
}

Phantom load_phantom_dir(const fs::path& dir) {
  Phantom ph;
  ph.spec = phantom_spec_from_json(read_json(dir / "phantom.json"));
  ph.volume = load_volume(dir / "volume");
  ph.spec.dims = ph.volume.dims();
  ph.labels = load_labels(dir / "labels", ph.spec.M);
  ph.geometry = fs::exists(sidecar_path(dir / "geometry")) ? load_labels(dir / "geometry", ph.spec.M)
                                                           : ph.labels;
  ph.truth = load_parameters(dir, ph.spec.M, "truth_");
  return ph;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  Phantom ph;
  if (!o.input.empty()) {
    ph = load_phantom_dir(o.input);
  } else {
    if (o.dims.size() != 3) throw std::invalid_argument("--dims takes three extents");
    PhantomSpec spec;
    spec.dims = Dims{o.dims[0], o.dims[1], o.dims[2]};
    spec.M = o.M;
    spec.seed = o.seed;
    ph = make_phantom(spec);
  }
  if (ph.spec.M != o.M) throw std::invalid_argument("--M does not match the phantom");

  EvaluationOptions opt;
  opt.train_fraction = o.train_fraction;
  opt.r = o.r;
  opt.split_seed = o.seed;
  opt.base = fit_config(o);
  if (o.given("--method")) opt.methods = {selection_method_from_string(o.method)};
  if (o.given("--bandwidth-constant")) opt.Ch = o.bandwidth_constant;
  opt.filter_size = filter_override(o);

  const auto rows = evaluate_methods(ph, opt);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  append_csv(dir / "evaluation.csv", rows);
  out << kEvalCsvHeader << '\n';
  for (const auto& row : rows) out << to_csv_row(row) << '\n';
  return 0;
}

int cmd_export_posterior(const Options& o, std::ostream& out) {
  const Volume3D y = read_input(o.input);
  if (o.params.empty()) throw std::invalid_argument("--params (a fit output directory) is required");
  const json fit = read_json(fs::path(o.params) / "fit.json");
  const int M = fit.at("M").get<int>();
  const ParameterField theta = load_parameters(o.params, M);
  if (theta.dims != y.dims()) throw std::invalid_argument("fit dims do not match the input");
  if (o.class_index < 0 || o.class_index > M) {
    throw std::invalid_argument("--class must be in 1.." + std::to_string(M) + " (0 for all)");
  }

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  json written = json::array();
  for (int m = 1; m <= M; ++m) {
    if (o.class_index != 0 && m != o.class_index) continue;
    const fs::path stem = dir / ("posterior_" + std::to_string(m));
    store_volume(posterior_volume(y, theta, m - 1), stem);
    written.push_back(sidecar_path(stem).string());
  }
  out << json{{"posteriors", written}}.dump(2) << '\n';
  return 0;
}

int cmd_baseline(const Options& o, std::ostream& out) {
  const Volume3D y = read_input(o.input);
  const SampleMask sample = sample_mask(o, y.dims());
  const auto values = masked_values(y, sample);
  const KMeansResult km = kmeans(values, o.M);

  json result{{"kind", o.baseline}, {"N", values.size()}};
  LabelVolume labels;
  GlobalTheta theta;
  if (o.baseline == "kmeans") {
    theta = theta_from_kmeans(values, km, o.sigma_floor);
    labels = kmeans_labels(y, km.centroids);
    result["iterations"] = km.iterations;
    result["converged"] = km.converged;
    result["sse_trace"] = km.sse_trace;
  } else {
    const GmmResult gmm = gmm_fit_global(values, theta_from_kmeans(values, km, o.sigma_floor),
                                         1e-8, 500, o.sigma_floor);
    theta = gmm.theta;
    labels = gmm_labels(y, theta);
    result["iterations"] = gmm.iterations;
    result["converged"] = gmm.converged;
    result["collapsed_components"] = gmm.collapsed_components;
    result["loglik_trace"] = gmm.loglik_trace;
  }
  result["theta"] = theta;
  result["prediction"] = baseline_predict(theta);

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  store_labels(labels, dir / "labels");
  write_json(result, dir / "baseline.json");
  result.erase("loglik_trace");
  result.erase("sse_trace");
  out << result.dump(2) << '\n';
  return 0;
}

// Turns one config entry into command-line tokens for `cmd`. Returns false
// if the subcommand has no such option.
bool config_tokens(CLI::App* cmd, const std::string& key, const json& value,
                   std::vector<std::string>& tokens) {
  const std::string flag = "--" + key;
  if (cmd->get_option_no_throw(flag) == nullptr) return false;
  auto scalar = [](const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  if (value.is_boolean()) {
    if (value.get<bool>()) tokens.push_back(flag);
  } else if (value.is_array()) {
    tokens.push_back(flag);
    for (const auto& v : value) tokens.push_back(scalar(v));
  } else {
    tokens.push_back(flag);
    tokens.push_back(scalar(value));
  }
  return true;
}

// Pulls `--config <file>` out of args and splices the file's settings in
// right after the subcommand name, so later command-line flags win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (config.empty()) return args;

  std::size_t pos = 1;
  while (pos < args.size() && args[pos].rfind("-", 0) == 0) ++pos;
  if (pos == args.size()) throw std::invalid_argument("--config needs a subcommand");
  CLI::App* cmd = app.get_subcommand_no_throw(args[pos]);
  if (cmd == nullptr) return args;  // let the parser report it

  const json j = read_json(config);
  if (!j.is_object()) throw std::invalid_argument(config + ": expected a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) continue;
    config_tokens(cmd, key, value, tokens);  // keys for other commands are skipped
  }
  if (j.contains(args[pos]) && j[args[pos]].is_object()) {
    for (const auto& [key, value] : j[args[pos]].items()) {
      if (!config_tokens(cmd, key, value, tokens)) {
        throw std::invalid_argument(config + ": unknown option '" + key + "' for " + args[pos]);
      }
    }
  }
  args.insert(args.begin() + static_cast<long>(pos) + 1, tokens.begin(), tokens.end());
  return args;
}

}  // namespace

void store_parameters(const ParameterField& theta, const fs::path& dir,
                      const std::string& prefix) {
  fs::create_directories(dir);
  for (int m = 0; m < theta.M; ++m) {
    const std::string tag = "_" + std::to_string(m + 1);
    store_volume(theta.pi[m], dir / (prefix + "pi" + tag));
    store_volume(theta.mu[m], dir / (prefix + "mu" + tag));
    store_volume(theta.sigma[m], dir / (prefix + "sigma" + tag));
  }
}

ParameterField load_parameters(const fs::path& dir, int M, const std::string& prefix) {
  if (M < 1) throw std::invalid_argument("load_parameters: M must be positive");
  std::vector<Volume3D> pi, mu, sigma;
  for (int m = 0; m < M; ++m) {
    const std::string tag = "_" + std::to_string(m + 1);
    pi.push_back(load_volume(dir / (prefix + "pi" + tag)));
    mu.push_back(load_volume(dir / (prefix + "mu" + tag)));
    sigma.push_back(load_volume(dir / (prefix + "sigma" + tag)));
  }
  ParameterField theta(pi.front().dims(), M);
  for (int m = 0; m < M; ++m) {
    if (pi[m].dims() != theta.dims || mu[m].dims() != theta.dims ||
        sigma[m].dims() != theta.dims) {
      throw VolumeError("parameter volumes in " + dir.string() + " disagree on dims");
    }
    theta.pi[m] = std::move(pi[m]);
    theta.mu[m] = std::move(mu[m]);
    theta.sigma[m] = std::move(sigma[m]);
  }
  return theta;
}

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kernel EM mixture fitting for 3D volumes"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  app.add_option("--config", "JSON file of option defaults (command-line flags override)");

  Options o;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom with its truth");
  add_common(phantom, o);
  phantom->add_option("--dims", o.dims, "Grid extents x y z")->expected(3);
  phantom->add_option("--labels", o.labels, "Label volume replacing the procedural geometry");

  auto* fit = app.add_subcommand("fit", "Fit the kernel EM mixture");
  add_common(fit, o);
  add_fit_controls(fit, o);
  fit->add_option("--mask", o.mask, "Binary volume restricting the samples");
  fit->add_option("--train-fraction", o.train_fraction, "Training share for bandwidth selection");

  auto* bandwidth = app.add_subcommand("bandwidth", "Select the bandwidth by CV or REG");
  add_common(bandwidth, o);
  add_fit_controls(bandwidth, o);
  bandwidth->add_option("--mask", o.mask, "Binary volume restricting the samples");
  bandwidth->add_option("--train-fraction", o.train_fraction, "Training share of the sample");

  auto* evaluate = app.add_subcommand("evaluate", "Score KEM and the baselines on a phantom");
  add_common(evaluate, o);
  add_fit_controls(evaluate, o);
  evaluate->add_option("--dims", o.dims, "Phantom extents when no --input is given")->expected(3);
  evaluate->add_option("--train-fraction", o.train_fraction, "Training share of the voxels");

  auto* posterior = app.add_subcommand("export-posterior", "Write posterior probability volumes");
  add_common(posterior, o);
  posterior->add_option("--params", o.params, "Directory written by fit")->required();
  posterior->add_option("--class", o.class_index, "Class to export (1-based, 0 for all)");

  auto* baseline = app.add_subcommand("baseline", "Fit k-means or the global GMM");
  add_common(baseline, o);
  baseline->add_option("--kind", o.baseline, "Baseline")->check(CLI::IsMember({"kmeans", "gmm"}));
  baseline->add_option("--mask", o.mask, "Binary volume restricting the samples");
  baseline->add_option("--sigma-floor", o.sigma_floor, "Lower bound for sigma");

  try {
    const auto args = expand_config(app, raw);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (!(o.r > 0.0)) throw std::invalid_argument("--r must be in (0, 1]");
    set_num_threads(o.threads);
    o.cmd = app.get_subcommands().front();
    if (phantom->parsed()) return cmd_phantom(o, out);
    if (fit->parsed()) return cmd_fit(o, out, err);
    if (bandwidth->parsed()) return cmd_bandwidth(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (posterior->parsed()) return cmd_export_posterior(o, out);
    if (baseline->parsed()) return cmd_baseline(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace kemvol::cli
