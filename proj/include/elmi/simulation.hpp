#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "elmi/baselines.hpp"
#include "elmi/common.hpp"
#include "elmi/el_core.hpp"
#include "elmi/inference.hpp"
#include "elmi/rng.hpp"

namespace elmi {

// ---------------------------------------------------------------------------
// Skew-t sampling via the conditioning construction: a (d+1)-variate normal
// with the shape-derived cross correlations, sign-flipped on the latent
// coordinate, divided by sqrt(chisq(df)/df).
// ---------------------------------------------------------------------------

struct SkewTParams {
  Vector location;
  Matrix dispersion;  // unit-diagonal dispersion of the skew-normal core
  Vector shape;
  double df = 5.0;
};

namespace detail {

struct SkewTSampler {
  Matrix chol;  // (d+1) x (d+1)
  Vector location;
  int d;
  int df;

  explicit SkewTSampler(const SkewTParams& p) {
    if (p.df <= 0.0) throw ValidationError("sample_skew_t: df must be positive");
    if (std::floor(p.df) != p.df) throw ValidationError("sample_skew_t: integer df required");
    d = static_cast<int>(p.shape.size());
    df = static_cast<int>(p.df);
    if (p.dispersion.rows() != d || p.dispersion.cols() != d || p.location.size() != d)
      throw ValidationError("sample_skew_t: dimension mismatch");
    const Vector omega_alpha = p.dispersion * p.shape;
    const double denom = std::sqrt(1.0 + p.shape.dot(omega_alpha));
    const Vector delta = omega_alpha / denom;
    Matrix big(d + 1, d + 1);
    big(0, 0) = 1.0;
    big.block(0, 1, 1, d) = delta.transpose();
    big.block(1, 0, d, 1) = delta;
    big.block(1, 1, d, d) = p.dispersion;
    Eigen::LLT<Matrix> llt(big);
    if (llt.info() != Eigen::Success)
      throw ValidationError("sample_skew_t: dispersion/shape give a non-positive-definite core");
    chol = llt.matrixL();
    location = p.location;
  }

  Vector draw(Rng& rng) const {
    Vector z(d + 1);
    for (int j = 0; j <= d; ++j) z[j] = rng.normal();
    Vector w = chol * z;
    Vector out = w.tail(d);
    if (w[0] <= 0.0) out = -out;
    const double v = rng.chisq(df);
    return location + out / std::sqrt(v / df);
  }
};

}  // namespace detail

inline Matrix sample_skew_t(const SkewTParams& params, int m, std::uint64_t seed) {
  const detail::SkewTSampler sampler(params);
  Matrix out(m, sampler.d);
  Rng rng(mix_seed(seed, 0x5135ULL));
  for (int i = 0; i < m; ++i) out.row(i) = sampler.draw(rng).transpose();
  return out;
}

// Mean of the location-zero skew-t: delta * b_nu per coordinate.
inline Vector skew_t_mean_offset(const SkewTParams& params) {
  const Vector omega_alpha = params.dispersion * params.shape;
  const double denom = std::sqrt(1.0 + params.shape.dot(omega_alpha));
  const Vector delta = omega_alpha / denom;
  const double nu = params.df;
  const double b_nu = std::sqrt(nu / M_PI) * std::tgamma(0.5 * (nu - 1.0)) / std::tgamma(0.5 * nu);
  return delta * b_nu;
}

// ---------------------------------------------------------------------------
// Scenarios.
// ---------------------------------------------------------------------------

enum class ScenarioKind { CorrA, CorrB, CorrC, Logistic };

struct Scenario {
  ScenarioKind kind = ScenarioKind::CorrB;
  std::string name;
  int n = 200;
  std::string estfun;                // registry key
  std::vector<int> report_components;  // parameter indices reported by the study
  std::vector<std::string> report_names;
  Vector truth;  // per reported component, resolved before the study runs
};

inline SkewTParams corr_scenario_skew_t() {
  SkewTParams p;
  p.shape = Vector(2);
  p.shape << 4.0, 1.0;
  p.dispersion = Matrix(2, 2);
  p.dispersion << 1.0, 0.955, 0.955, 1.0;
  p.df = 5.0;
  // centered so (X, U) have mean zero
  p.location = Vector(2);
  p.location = -skew_t_mean_offset(p);
  return p;
}

struct CorrTruth {
  double mu_y = 0.0;
  double theta = 0.0;
};

// Streaming population oracle for the correlation scenario's (mu_y, theta).
inline CorrTruth corr_population_oracle(long draws = 10'000'000,
                                        std::uint64_t seed = 0xE1A07ULL) {
  const detail::SkewTSampler sampler(corr_scenario_skew_t());
  Rng rng(mix_seed(seed, 0x0AC1EULL));
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (long i = 0; i < draws; ++i) {
    const Vector z = sampler.draw(rng);
    const double x = z[0];
    const double y = z[1] - 1.2 * x * (x < 0.0 ? 1.0 : 0.0);
    sx += x;
    sy += y;
    sxx += static_cast<long double>(x) * x;
    syy += static_cast<long double>(y) * y;
    sxy += static_cast<long double>(x) * y;
  }
  const long double m = draws;
  const long double mx = sx / m, my = sy / m;
  const long double vx = sxx / m - mx * mx;
  const long double vy = syy / m - my * my;
  const long double cxy = sxy / m - mx * my;
  CorrTruth t;
  t.mu_y = static_cast<double>(my);
  t.theta = static_cast<double>(cxy / std::sqrt(static_cast<double>(vx * vy)));
  return t;
}

// Paper-reported values, replaced by the oracle when they disagree beyond
// 0.005 (they do for this construction; the oracle wins).
inline const CorrTruth& resolved_corr_truth() {
  static const CorrTruth resolved = [] {
    const CorrTruth paper{0.304, 0.676};
    const CorrTruth oracle = corr_population_oracle();
    if (std::fabs(oracle.theta - paper.theta) > 0.005 || std::fabs(oracle.mu_y - paper.mu_y) > 0.005)
      return oracle;
    return paper;
  }();
  return resolved;
}

inline Scenario make_scenario(const std::string& name, int n) {
  Scenario s;
  s.name = name;
  s.n = n;
  if (name == "corr-a" || name == "corr-b" || name == "corr-c") {
    s.kind = name == "corr-a" ? ScenarioKind::CorrA
                              : (name == "corr-b" ? ScenarioKind::CorrB : ScenarioKind::CorrC);
    s.estfun = "correlation";
    s.report_components = {0};
    s.report_names = {"theta"};
    s.truth = Vector(1);
    s.truth << resolved_corr_truth().theta;
  } else if (name == "logistic") {
    s.kind = ScenarioKind::Logistic;
    s.estfun = "logistic";
    s.report_components = {0, 1, 2, 3};
    s.report_names = {"beta0", "beta1", "beta2", "beta3"};
    s.truth = Vector(4);
    s.truth << -1.0, 1.0, 1.0, -1.5;
  } else {
    throw ConfigError("unknown scenario '" + name + "' (expected corr-a|corr-b|corr-c|logistic)");
  }
  return s;
}

inline double corr_missing_propensity(ScenarioKind kind, double x) {
  switch (kind) {
    case ScenarioKind::CorrA:
      return std::fabs(x) < 4.0 ? 0.3 + 0.175 * std::fabs(x) : 1.0;
    case ScenarioKind::CorrB:
      return 0.65;
    case ScenarioKind::CorrC:
      return x > 0.0 ? 0.5 : 1.0;
    default:
      throw ValidationError("corr_missing_propensity: not a correlation scenario");
  }
}

struct GeneratedData {
  Dataset observed;
  Dataset full;  // hidden complete copy for the full-data comparator
};

inline GeneratedData generate(const Scenario& s, std::uint64_t seed) {
  if (s.kind == ScenarioKind::Logistic) {
    const int n = s.n;
    Matrix x(n, 3), y(n, 1);
    Eigen::VectorXi delta(n), ones = Eigen::VectorXi::Ones(n);
    Rng rng(mix_seed(seed, 0x10C1ULL));
    for (int i = 0; i < n; ++i) {
      const double x1 = 0.5 * rng.normal();
      const double x2 = 3.0 + 0.5 * rng.normal();
      const double yv = rng.uniform() < sigmoid(-1.0 + x1 + 0.5 * x2) ? 1.0 : 0.0;
      const double x3 = rng.uniform() < sigmoid(-1.0 + x1 + x2 - 1.5 * yv) ? 1.0 : 0.0;
      // observation propensity; reproduces the reported complete-case
      // selection pattern
      const double p_obs = sigmoid(0.5 + 2.0 * x1 + x2 - 3.0 * x3);
      x(i, 0) = x1;
      x(i, 1) = x2;
      x(i, 2) = x3;
      y(i, 0) = yv;
      delta[i] = rng.uniform() < p_obs ? 1 : 0;
    }
    std::vector<std::string> xn{"x1", "x2", "x3"}, yn{"y"};
    GeneratedData out{Dataset(x, y, delta, xn, yn, {2}), Dataset(x, y, ones, xn, yn, {2})};
    return out;
  }
  const SkewTParams params = corr_scenario_skew_t();
  const detail::SkewTSampler sampler(params);
  const int n = s.n;
  Matrix x(n, 1), y(n, 1);
  Eigen::VectorXi delta(n), ones = Eigen::VectorXi::Ones(n);
  Rng rng(mix_seed(seed, 0xC0221ULL));
  for (int i = 0; i < n; ++i) {
    const Vector z = sampler.draw(rng);
    const double xv = z[0];
    const double yv = z[1] - 1.2 * xv * (xv < 0.0 ? 1.0 : 0.0);
    x(i, 0) = xv;
    y(i, 0) = yv;
    delta[i] = rng.uniform() < corr_missing_propensity(s.kind, xv) ? 1 : 0;
  }
  std::vector<std::string> xn{"x"}, yn{"y"};
  GeneratedData out{Dataset(x, y, delta, xn, yn, {}), Dataset(x, y, ones, xn, yn, {})};
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo study harness.
// ---------------------------------------------------------------------------

struct StudyRow {
  std::string method;
  std::string param;
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double mean_ci_length = std::numeric_limits<double>::quiet_NaN();
  int replications_used = 0;
  int failures = 0;
};

struct StudyReport {
  std::string scenario;
  int n = 0;
  int R = 0;
  int B = 0;
  int kappa = 0;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  std::vector<StudyRow> rows;
  // per method: replicate-level estimates of the reported components
  // (NaN where the replication failed); retained for paired comparisons
  std::vector<std::string> methods;
  std::vector<Matrix> replicates;  // R x n_components per method
  std::map<std::string, int> warning_counts;
};

struct StudyOptions {
  int jobs = 1;
  double alpha = 0.05;
  int kernel_order = 2;
  std::set<std::string> ci_methods;  // methods that compute coverage/length
  bool compute_ci_length = true;
  double failure_cap = 0.02;  // abort above this failure fraction per method
};

inline StudyReport run_study(const Scenario& s, const std::vector<std::string>& methods, int R,
                             int B, int kappa, std::uint64_t seed, const StudyOptions& opts = {}) {
  if (R < 10) throw ValidationError("run_study: need R >= 10");
  for (const auto& m : methods)
    if (m != "full" && m != "complete" && m != "nimpute" && m != "wgmm")
      throw ConfigError("run_study: unknown method '" + m + "'");

  const int n_methods = static_cast<int>(methods.size());
  const int n_comp = static_cast<int>(s.report_components.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<Matrix> estimates(static_cast<size_t>(n_methods), Matrix::Constant(R, n_comp, nan));
  std::vector<Matrix> covered(static_cast<size_t>(n_methods), Matrix::Constant(R, n_comp, nan));
  std::vector<Matrix> lengths(static_cast<size_t>(n_methods), Matrix::Constant(R, n_comp, nan));
  std::vector<WarningLog> rep_warnings(static_cast<size_t>(R));

  parallel_for(R, opts.jobs, [&](int rep) {
    const std::uint64_t rep_seed = mix_seed(seed, static_cast<std::uint64_t>(rep));
    WarningLog* wl = &rep_warnings[static_cast<size_t>(rep)];
    GeneratedData gen = generate(s, mix_seed(rep_seed, 1));

    for (int mi = 0; mi < n_methods; ++mi) {
      const std::string& method = methods[static_cast<size_t>(mi)];
      const bool want_ci = opts.ci_methods.count(method) > 0;
      try {
        if (method == "wgmm") {
          const EstimatingFunction g = make_estimating_function(s.estfun, gen.observed);
          const double h_prop =
              cv_bandwidth(gen.observed, CvTarget::Propensity, opts.kernel_order, wl);
          const WeightedGmm wg = weighted_gmm(gen.observed, g,
                                              KernelSpec{opts.kernel_order, h_prop}, {}, {}, wl);
          for (int c = 0; c < n_comp; ++c)
            estimates[static_cast<size_t>(mi)](rep, c) = wg.theta[s.report_components[static_cast<size_t>(c)]];
          if (want_ci) {
            const CalibrationResult ci = wgmm_ci_normal(wg, opts.alpha);
            for (int c = 0; c < n_comp; ++c) {
              const int pj = s.report_components[static_cast<size_t>(c)];
              covered[static_cast<size_t>(mi)](rep, c) =
                  (ci.intervals[static_cast<size_t>(pj)].lower <= s.truth[c] &&
                   s.truth[c] <= ci.intervals[static_cast<size_t>(pj)].upper)
                      ? 1.0
                      : 0.0;
              lengths[static_cast<size_t>(mi)](rep, c) =
                  ci.intervals[static_cast<size_t>(pj)].upper - ci.intervals[static_cast<size_t>(pj)].lower;
            }
          }
          continue;
        }

        ExtendedSample es = extended_from_complete(gen.full);  // placeholder shape
        const Dataset& base = method == "full" ? gen.full : gen.observed;
        const EstimatingFunction g = make_estimating_function(s.estfun, base);
        ELFit fit;
        if (method == "full") {
          es = extended_from_complete(gen.full);
          fit = mele(es, g, default_starts(es, g, 4, mix_seed(rep_seed, 4)));
        } else if (method == "complete") {
          const Dataset sub = gen.observed.subset(gen.observed.complete_rows());
          es = extended_from_complete(sub);
          fit = mele(es, g, default_starts(es, g, 4, mix_seed(rep_seed, 4)));
        } else {  // nimpute
          const double h = auto_bandwidth(gen.observed, CvTarget::CdfSmoothing, opts.kernel_order,
                                          BandwidthRule::HalvedCv, wl);
          const KernelSpec k{opts.kernel_order, h};
          es = impute(gen.observed, k, kappa, mix_seed(rep_seed, 2), wl);
          fit = mele(es, g, default_starts(es, g, 4, mix_seed(rep_seed, 4)));
        }
        for (int c = 0; c < n_comp; ++c)
          estimates[static_cast<size_t>(mi)](rep, c) = fit.theta_hat[s.report_components[static_cast<size_t>(c)]];

        if (want_ci) {
          BootstrapOptions bo;
          bo.jobs = 1;  // parallelism lives at the replication level
          bo.compute_intervals = opts.compute_ci_length;
          bo.profile_components = s.report_components;
          const CalibrationResult ci =
              bootstrap_calibrate(es, g, fit, B, opts.alpha, mix_seed(rep_seed, 3), bo, wl);
          for (int c = 0; c < n_comp; ++c) {
            const int pj = s.report_components[static_cast<size_t>(c)];
            const double rstat = profile_elr_statistic(es, g, fit, pj, s.truth[c]);
            covered[static_cast<size_t>(mi)](rep, c) = rstat <= ci.threshold ? 1.0 : 0.0;
            if (opts.compute_ci_length)
              lengths[static_cast<size_t>(mi)](rep, c) =
                  ci.intervals[static_cast<size_t>(c)].upper - ci.intervals[static_cast<size_t>(c)].lower;
          }
        }
      } catch (const Error&) {
        // leave NaN; counted as a failure below
      }
    }
  });

  StudyReport report;
  report.scenario = s.name;
  report.n = s.n;
  report.R = R;
  report.B = B;
  report.kappa = kappa;
  report.seed = seed;
  report.alpha = opts.alpha;
  report.methods = methods;
  report.replicates = estimates;
  for (const auto& wlog : rep_warnings)
    for (const auto& kv : wlog.counts()) report.warning_counts[kv.first] += kv.second;

  for (int mi = 0; mi < n_methods; ++mi) {
    int fail_rows = 0;
    for (int rep = 0; rep < R; ++rep)
      if (std::isnan(estimates[static_cast<size_t>(mi)](rep, 0))) ++fail_rows;
    if (fail_rows > opts.failure_cap * R)
      throw NonConvergenceError("run_study: method '" + methods[static_cast<size_t>(mi)] + "' failed " +
                                std::to_string(fail_rows) + "/" + std::to_string(R) +
                                " replications (above the abort cap)");
    for (int c = 0; c < n_comp; ++c) {
      StudyRow row;
      row.method = methods[static_cast<size_t>(mi)];
      row.param = s.report_names[static_cast<size_t>(c)];
      row.truth = s.truth[c];
      row.failures = fail_rows;
      long double sum = 0.0L, count = 0.0L;
      for (int rep = 0; rep < R; ++rep) {
        const double v = estimates[static_cast<size_t>(mi)](rep, c);
        if (!std::isnan(v)) {
          sum += v;
          count += 1.0L;
        }
      }
      const double mean = static_cast<double>(sum / count);
      long double ss = 0.0L;
      for (int rep = 0; rep < R; ++rep) {
        const double v = estimates[static_cast<size_t>(mi)](rep, c);
        if (!std::isnan(v)) {
          const long double dlt = v - mean;
          ss += dlt * dlt;
        }
      }
      const double var = static_cast<double>(ss / count);
      row.replications_used = static_cast<int>(count);
      row.bias = mean - s.truth[c];
      row.sd = std::sqrt(var);
      row.mse = row.bias * row.bias + var;
      long double cov_sum = 0.0L, cov_n = 0.0L, len_sum = 0.0L, len_n = 0.0L;
      for (int rep = 0; rep < R; ++rep) {
        const double cv = covered[static_cast<size_t>(mi)](rep, c);
        if (!std::isnan(cv)) {
          cov_sum += cv;
          cov_n += 1.0L;
        }
        const double lv = lengths[static_cast<size_t>(mi)](rep, c);
        if (!std::isnan(lv) && std::isfinite(lv)) {
          len_sum += lv;
          len_n += 1.0L;
        }
      }
      if (cov_n > 0) row.coverage = static_cast<double>(cov_sum / cov_n);
      if (len_n > 0) row.mean_ci_length = static_cast<double>(len_sum / len_n);
      report.rows.push_back(row);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization: CSV plus an aligned text table.
// ---------------------------------------------------------------------------

inline void write_study_csv(const std::string& path, const StudyReport& rep) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << "scenario,n,method,param,truth,bias,sd,mse,coverage,ci_length,replications,failures\n";
  char buf[64];
  auto num = [&](double v) {
    if (std::isnan(v)) return std::string("NA");
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rep.rows)
    out << rep.scenario << "," << rep.n << "," << r.method << "," << r.param << "," << num(r.truth)
        << "," << num(r.bias) << "," << num(r.sd) << "," << num(r.mse) << "," << num(r.coverage)
        << "," << num(r.mean_ci_length) << "," << r.replications_used << "," << r.failures << "\n";
}

inline void write_study_text(const std::string& path, const StudyReport& rep) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  char line[256];
  out << "Scenario " << rep.scenario << ", n = " << rep.n << ", R = " << rep.R << ", B = " << rep.B
      << ", kappa = " << rep.kappa << ", seed = " << rep.seed << "\n\n";
  std::snprintf(line, sizeof(line), "%-12s %-8s %-10s %-10s %-10s %-10s %-12s\n", "Method", "Param",
                "Bias", "Std. dev.", "MSE", "Coverage", "Length of CI");
  out << line;
  auto cell = [](double v, char* b, size_t nb) {
    if (std::isnan(v))
      std::snprintf(b, nb, "%s", "-");
    else
      std::snprintf(b, nb, "%.4f", v);
    return b;
  };
  for (const auto& r : rep.rows) {
    char c1[32], c2[32], c3[32], c4[32], c5[32];
    std::snprintf(line, sizeof(line), "%-12s %-8s %-10s %-10s %-10s %-10s %-12s\n", r.method.c_str(),
                  r.param.c_str(), cell(r.bias, c1, sizeof(c1)), cell(r.sd, c2, sizeof(c2)),
                  cell(r.mse, c3, sizeof(c3)), cell(r.coverage, c4, sizeof(c4)),
                  cell(r.mean_ci_length, c5, sizeof(c5)));
    out << line;
  }
  if (!rep.warning_counts.empty()) {
    out << "\nWarnings:\n";
    for (const auto& kv : rep.warning_counts) out << "  " << kv.first << ": " << kv.second << "\n";
  }
}

}  // namespace elmi
