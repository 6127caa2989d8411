#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "elmi/baselines.hpp"
#include "elmi/common.hpp"
#include "elmi/dataset.hpp"
#include "elmi/el_core.hpp"
#include "elmi/imputation.hpp"
#include "elmi/inference.hpp"
#include "elmi/simulation.hpp"

namespace elmi {

struct RunConfig {
  std::string subcommand;
  std::string data_path;
  std::string columns_path;
  std::string method = "nimpute";  // nimpute | complete | full | wgmm
  std::string estfun;
  std::string calibration = "bootstrap";  // bootstrap | normal | chisq-mix
  int kappa = 20;
  std::string bandwidth = "auto";
  int kernel_order = 2;
  double alpha = 0.05;
  int B = 400;
  long M = 1000000;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_path;
  // simulate
  std::string scenario;
  int n = 200;
  int R = 100;
  std::string methods_csv = "nimpute";
  std::string ci_methods_csv;  // empty = all selected methods
};

namespace cli_detail2 {

inline double resolve_bandwidth(const RunConfig& cfg, const Dataset& d, CvTarget target,
                                WarningLog* wl) {
  if (cfg.bandwidth == "auto")
    return auto_bandwidth(d, target, cfg.kernel_order, BandwidthRule::HalvedCv, wl);
  try {
    size_t pos = 0;
    const double h = std::stod(cfg.bandwidth, &pos);
    if (pos != cfg.bandwidth.size() || !(h > 0.0)) throw std::invalid_argument("");
    return h;
  } catch (const std::exception&) {
    throw ConfigError("--bandwidth must be 'auto' or a positive number, got '" + cfg.bandwidth + "'");
  }
}

inline std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace cli_detail2

// ---------------------------------------------------------------------------
// impute: write the extended-sample file plus a short summary.
// ---------------------------------------------------------------------------

inline int cmd_impute(const RunConfig& cfg, std::ostream& summary) {
  WarningLog wl;
  const ColumnConfig cols = load_column_config(cfg.columns_path);
  const Dataset d = load_csv(cfg.data_path, cols, &wl);
  const double h = cli_detail2::resolve_bandwidth(cfg, d, CvTarget::CdfSmoothing, &wl);
  const KernelSpec k{cfg.kernel_order, h};
  for (const auto& w : validate_conditions(d, k).warnings) wl.add("conditions", w);
  const ExtendedSample es = impute(d, k, cfg.kappa, cfg.seed, &wl);
  save_extended_sample(cfg.out_path, es, cfg.data_path, cfg.columns_path);
  summary << "n=" << d.n() << "\n"
          << "n_complete=" << d.n_complete() << "\n"
          << "kappa=" << cfg.kappa << "\n"
          << "bandwidth=" << cli_detail2::fmt(h) << "\n"
          << "kernel_order=" << cfg.kernel_order << "\n"
          << "out=" << cfg.out_path << "\n"
          << "warnings=" << wl.total() << "\n";
  for (const auto& kv : wl.counts()) summary << "warning." << kv.first << "=" << kv.second << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit: estimate, calibrate, write a report with per-parameter intervals.
// ---------------------------------------------------------------------------

inline int cmd_fit(const RunConfig& cfg, std::ostream& summary) {
  WarningLog wl;
  const ColumnConfig cols = load_column_config(cfg.columns_path);
  const Dataset d = load_csv(cfg.data_path, cols, &wl);
  const EstimatingFunction g = make_estimating_function(cfg.estfun, d);

  std::ostringstream rep;
  rep << "method=" << cfg.method << "\n"
      << "estfun=" << cfg.estfun << "\n"
      << "n=" << d.n() << "\n"
      << "n_complete=" << d.n_complete() << "\n"
      << "alpha=" << cli_detail2::fmt(cfg.alpha) << "\n"
      << "seed=" << cfg.seed << "\n";

  Vector theta;
  CalibrationResult ci;
  if (cfg.method == "wgmm") {
    const double h_prop = cfg.bandwidth == "auto"
                              ? cv_bandwidth(d, CvTarget::Propensity, cfg.kernel_order, &wl)
                              : cli_detail2::resolve_bandwidth(cfg, d, CvTarget::Propensity, &wl);
    const KernelSpec k{cfg.kernel_order, h_prop};
    const WeightedGmm wg = weighted_gmm(d, g, k, {}, {}, &wl);
    theta = wg.theta;
    ci = wgmm_ci_normal(wg, cfg.alpha);
    rep << "bandwidth=" << cli_detail2::fmt(h_prop) << "\n"
        << "objective=" << cli_detail2::fmt(wg.objective) << "\n"
        << "calibration=normal\n";
  } else {
    ExtendedSample es = [&] {
      if (cfg.method == "full") {
        if (!d.missing_rows().empty())
          throw ValidationError("--method full requires a dataset with no missing rows");
        return extended_from_complete(d);
      }
      if (cfg.method == "complete") return extended_from_complete(d.subset(d.complete_rows()));
      if (cfg.method != "nimpute") throw ConfigError("unknown --method '" + cfg.method + "'");
      const double h = cli_detail2::resolve_bandwidth(cfg, d, CvTarget::CdfSmoothing, &wl);
      const KernelSpec k{cfg.kernel_order, h};
      for (const auto& w : validate_conditions(d, k).warnings) wl.add("conditions", w);
      return impute(d, k, cfg.kappa, cfg.seed, &wl);
    }();
    const ELFit fit = mele(es, g, default_starts(es, g, 4, mix_seed(cfg.seed, 0xF17ULL)));
    theta = fit.theta_hat;
    rep << "kappa=" << es.kappa << "\n"
        << "bandwidth=" << cli_detail2::fmt(es.kernel.bandwidth) << "\n"
        << "kernel_order=" << es.kernel.order << "\n"
        << "logelr=" << cli_detail2::fmt(fit.logelr) << "\n"
        << "calibration=" << cfg.calibration << "\n";
    if (cfg.calibration == "bootstrap") {
      BootstrapOptions bo;
      bo.jobs = cfg.jobs;
      const CalibrationResult b =
          bootstrap_calibrate(es, g, fit, cfg.B, cfg.alpha, mix_seed(cfg.seed, 0xB00ULL), bo, &wl);
      ci = b;
      rep << "B=" << cfg.B << "\n"
          << "q_alpha=" << cli_detail2::fmt(b.threshold) << "\n"
          << "bootstrap_discarded=" << b.discarded << "\n"
          << "bootstrap_redraws=" << b.redraws << "\n";
    } else if (cfg.calibration == "chisq-mix") {
      const AsymptoticEstimates asym = estimate_asymptotics(es, g, fit.theta_hat, es.kernel, es.kappa, &wl);
      const double q = chisq_mix_quantile(asym.omega, cfg.alpha, cfg.M, mix_seed(cfg.seed, 0xC11ULL));
      ci = ci_elr(es, g, fit, q, cfg.alpha, {}, "chisq-mix");
      rep << "M=" << cfg.M << "\n"
          << "q_alpha=" << cli_detail2::fmt(q) << "\n";
    } else if (cfg.calibration == "normal") {
      const AsymptoticEstimates asym = estimate_asymptotics(es, g, fit.theta_hat, es.kernel, es.kappa, &wl);
      ci = ci_normal(fit, asym, cfg.alpha, d.n());
    } else {
      throw ConfigError("unknown --calib '" + cfg.calibration + "'");
    }
  }

  rep << "warnings=" << wl.total() << "\n";
  for (const auto& kv : wl.counts()) rep << "warning." << kv.first << "=" << kv.second << "\n";
  rep << "\nparam,estimate,lower,upper,at_hull\n";
  for (size_t j = 0; j < ci.intervals.size(); ++j) {
    const int pj = ci.components.empty() ? static_cast<int>(j) : ci.components[j];
    rep << "theta" << (pj + 1) << "," << cli_detail2::fmt(theta[pj]) << ","
        << cli_detail2::fmt(ci.intervals[j].lower) << "," << cli_detail2::fmt(ci.intervals[j].upper)
        << "," << (ci.intervals[j].lower_at_hull || ci.intervals[j].upper_at_hull ? 1 : 0) << "\n";
  }
  const std::string text = rep.str();
  std::ofstream out(cfg.out_path);
  if (!out) throw ValidationError("cannot open '" + cfg.out_path + "' for writing");
  out << text;
  summary << text;
  return 0;
}

// ---------------------------------------------------------------------------
// simulate: Monte Carlo study; CSV plus aligned text table.
// ---------------------------------------------------------------------------

inline int cmd_simulate(const RunConfig& cfg, std::ostream& summary) {
  const Scenario s = make_scenario(cfg.scenario, cfg.n);
  const auto methods = cli_detail2::split_csv_list(cfg.methods_csv);
  if (methods.empty()) throw ConfigError("--methods is empty");
  StudyOptions so;
  so.jobs = cfg.jobs;
  so.alpha = cfg.alpha;
  so.kernel_order = cfg.kernel_order;
  if (cfg.ci_methods_csv.empty()) {
    for (const auto& m : methods) so.ci_methods.insert(m);
  } else if (cfg.ci_methods_csv != "none") {
    for (const auto& m : cli_detail2::split_csv_list(cfg.ci_methods_csv)) so.ci_methods.insert(m);
  }
  const StudyReport report = run_study(s, methods, cfg.R, cfg.B, cfg.kappa, cfg.seed, so);
  write_study_csv(cfg.out_path + ".csv", report);
  write_study_text(cfg.out_path + ".txt", report);
  std::ifstream txt(cfg.out_path + ".txt");
  summary << txt.rdbuf();
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point shared by the binary and in-process tests.
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  RunConfig cfg;
  CLI::App app{"empirical likelihood for estimating equations with nonparametrically imputed missing values"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub, bool need_seed) {
    sub->add_option("--kappa", cfg.kappa, "imputations per missing row")->check(CLI::PositiveNumber);
    sub->add_option("--bandwidth", cfg.bandwidth, "smoothing bandwidth ('auto' = halved CV)");
    sub->add_option("--kernel-order", cfg.kernel_order, "kernel order (2, 4 or 6)");
    sub->add_option("--alpha", cfg.alpha, "nominal level for confidence sets");
    sub->add_option("--B", cfg.B, "bootstrap resamples");
    sub->add_option("--M", cfg.M, "Monte Carlo draws for the chi-square-mixture quantile");
    sub->add_option("--jobs", cfg.jobs, "worker threads")->check(CLI::PositiveNumber);
    auto* seed = sub->add_option("--seed", cfg.seed, "RNG seed (all randomness derives from it)");
    if (need_seed) seed->required();
  };

  auto* imp = app.add_subcommand("impute", "draw kappa donor imputations per missing row");
  imp->add_option("--data", cfg.data_path, "CSV data file")->required();
  imp->add_option("--columns", cfg.columns_path, "column role/kind config")->required();
  imp->add_option("--out", cfg.out_path, "extended-sample output file")->required();
  add_common(imp, true);

  auto* fit = app.add_subcommand("fit", "estimate parameters and calibrate confidence sets");
  fit->add_option("--data", cfg.data_path, "CSV data file")->required();
  fit->add_option("--columns", cfg.columns_path, "column role/kind config")->required();
  fit->add_option("--estfun", cfg.estfun, "estimating function (mean|correlation|linreg|logistic)")
      ->required();
  fit->add_option("--method", cfg.method, "estimator (nimpute|complete|full|wgmm)");
  fit->add_option("--calib", cfg.calibration, "calibration (bootstrap|normal|chisq-mix)");
  fit->add_option("--out", cfg.out_path, "report output file")->required();
  add_common(fit, false);

  auto* sim = app.add_subcommand("simulate", "Monte Carlo study harness");
  sim->add_option("--scenario", cfg.scenario, "corr-a|corr-b|corr-c|logistic")->required();
  sim->add_option("--n", cfg.n, "sample size per replication");
  sim->add_option("--R", cfg.R, "replications");
  sim->add_option("--methods", cfg.methods_csv, "comma list of full,complete,nimpute,wgmm");
  sim->add_option("--ci-methods", cfg.ci_methods_csv,
                  "methods that compute coverage ('none' disables; default all)");
  sim->add_option("--out", cfg.out_path, "output prefix (.csv and .txt)")->required();
  add_common(sim, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (imp->parsed()) {
      cfg.subcommand = "impute";
      return cmd_impute(cfg, out);
    }
    if (fit->parsed()) {
      cfg.subcommand = "fit";
      return cmd_fit(cfg, out);
    }
    cfg.subcommand = "simulate";
    return cmd_simulate(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace elmi
