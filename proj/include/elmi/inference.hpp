#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/el_core.hpp"
#include "elmi/kernel.hpp"
#include "elmi/stats.hpp"

namespace elmi {

// ---------------------------------------------------------------------------
// Plug-in estimates of the asymptotic matrices. GammaTilde is the empirical
// second moment of the imputed estimating functions; Gamma adds the
// kernel-estimated propensity/variance correction, so the two coincide
// exactly when nothing is missing.
// ---------------------------------------------------------------------------

struct AsymptoticEstimates {
  Matrix gamma_tilde;  // r x r
  Matrix gamma;        // r x r
  Matrix d_mean;       // r x p, E(dg/dtheta) plug-in
  Matrix v;            // p x p
  Matrix sigma;        // p x p
  Matrix omega;        // r x r
  // fixed-kappa variants (diagnostic; adds the kappa^{-1}(1-p) variance term)
  Matrix gamma_fixed_kappa;
  Matrix gamma_tilde_fixed_kappa;
  int clipped_eigenvalues = 0;
};

namespace detail {

inline Matrix symmetric_sqrt(const Matrix& m, int* clipped, WarningLog* warnings) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  Vector lam = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < 0.0) {
      lam[i] = 0.0;
      if (clipped != nullptr) ++(*clipped);
      warn(warnings, "gamma_eigenvalue_clipped");
    }
  }
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

inline AsymptoticEstimates estimate_asymptotics(const ExtendedSample& es, const EstimatingFunction& g,
                                                const Eigen::Ref<const Vector>& theta_hat,
                                                const KernelSpec& k, int kappa_for_diagnostic = 20,
                                                WarningLog* warnings = nullptr) {
  const Dataset& d = es.data;
  const int n = d.n();
  const int r = g.r;
  AsymptoticEstimates a;

  const Matrix G = imputed_estfun(es, g, theta_hat);
  a.gamma_tilde = G.transpose() * G / n;
  {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a.gamma_tilde);
    if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, eig.eigenvalues().maxCoeff()))
      throw ConditioningError("estimate_asymptotics: GammaTilde is not positive definite");
  }
  a.d_mean = imputed_estfun_jacobian_mean(es, g, theta_hat);

  // Kernel plug-ins for the conditional variance of g given X, weighted by
  // the estimated propensity.
  const PropensityEstimate prop = estimate_propensity(d, k);
  Matrix correction = Matrix::Zero(r, r);
  Matrix kappa_term = Matrix::Zero(r, r);
  Vector gbuf(r);
  for (int i = 0; i < n; ++i) {
    const ConditionalLaw law = conditional_law_with_fallback(d, k, d.x().row(i).transpose(), warnings);
    Vector m = Vector::Zero(r);
    Matrix second = Matrix::Zero(r, r);
    for (size_t l = 0; l < law.donors.size(); ++l) {
      const double w = law.weights[static_cast<Eigen::Index>(l)];
      if (w == 0.0) continue;
      g.eval_into(d.x().row(i).transpose(), d.y().row(law.donors[l]).transpose(), theta_hat, gbuf);
      m += w * gbuf;
      second += w * (gbuf * gbuf.transpose());
    }
    const Matrix var_i = second - m * m.transpose();
    const double p_i = prop(d.x().row(i).transpose());
    correction += (1.0 / p_i - p_i) * var_i;
    kappa_term += (1.0 - p_i) * var_i;
  }
  correction /= n;
  kappa_term /= n;
  a.gamma = a.gamma_tilde + correction;
  a.gamma = 0.5 * (a.gamma + a.gamma.transpose());
  a.gamma_fixed_kappa = a.gamma + kappa_term / kappa_for_diagnostic;
  a.gamma_tilde_fixed_kappa = a.gamma_tilde + kappa_term / kappa_for_diagnostic;

  const Matrix gt_inv_d = a.gamma_tilde.ldlt().solve(a.d_mean);  // GammaTilde^{-1} D
  a.v = (a.d_mean.transpose() * gt_inv_d).inverse();
  a.sigma = a.v * (gt_inv_d.transpose() * a.gamma * gt_inv_d) * a.v;
  a.sigma = 0.5 * (a.sigma + a.sigma.transpose());
  const Matrix sqrt_gamma = detail::symmetric_sqrt(a.gamma, &a.clipped_eigenvalues, warnings);
  const Matrix core = gt_inv_d * a.v * gt_inv_d.transpose();
  a.omega = sqrt_gamma * core * sqrt_gamma;
  a.omega = 0.5 * (a.omega + a.omega.transpose());
  return a;
}

// ---------------------------------------------------------------------------
// Confidence-set calibrations.
// ---------------------------------------------------------------------------

struct IntervalEstimate {
  double lower = 0.0;
  double upper = 0.0;
  bool lower_at_hull = false;  // profile hit the hull boundary before crossing
  bool upper_at_hull = false;
};

struct CalibrationResult {
  std::string method;  // normal | chisq-mix | bootstrap
  double alpha = 0.05;
  double threshold = 0.0;  // q*_alpha for ratio-based regions, z for normal
  std::vector<IntervalEstimate> intervals;
  std::vector<int> components;  // parameter indices the intervals refer to
  long draws = 0;               // B or M
  int discarded = 0;            // failed bootstrap resamples
  int redraws = 0;              // resamples redrawn for lack of complete rows
  int infeasible_at_theta_hat = 0;
  bool discard_warning = false;
};

inline CalibrationResult ci_normal(const ELFit& fit, const AsymptoticEstimates& asym, double alpha,
                                   int n) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("ci_normal: alpha outside (0,1]");
  CalibrationResult res;
  res.method = "normal";
  res.alpha = alpha;
  const double z = alpha >= 1.0 ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  res.threshold = z;
  const int p = static_cast<int>(fit.theta_hat.size());
  for (int j = 0; j < p; ++j) {
    const double se = std::sqrt(std::max(0.0, asym.sigma(j, j)) / n);
    res.intervals.push_back({fit.theta_hat[j] - z * se, fit.theta_hat[j] + z * se, false, false});
    res.components.push_back(j);
  }
  return res;
}

// Monte Carlo (1-alpha) quantile of Q' Omega Q with Q ~ N(0, I_r).
inline double chisq_mix_quantile(const Matrix& omega, double alpha, long draws, std::uint64_t seed) {
  if (draws < 1000) throw ValidationError("chisq_mix_quantile: need at least 1000 draws");
  if (omega.rows() != omega.cols()) throw ValidationError("chisq_mix_quantile: Omega not square");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (omega + omega.transpose()));
  Vector lam = eig.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-8 * scale)
      throw ValidationError("chisq_mix_quantile: Omega has a negative eigenvalue");
    lam[i] = std::max(lam[i], 0.0);
  }
  Rng rng(mix_seed(seed, 0xC41BULL));
  std::vector<double> vals(static_cast<size_t>(draws));
  const int r = static_cast<int>(lam.size());
  for (long m = 0; m < draws; ++m) {
    double acc = 0.0;
    for (int j = 0; j < r; ++j) {
      const double z = rng.normal();
      acc += lam[j] * z * z;
    }
    vals[static_cast<size_t>(m)] = acc;
  }
  return empirical_quantile(vals, 1.0 - alpha);
}

// ---------------------------------------------------------------------------
// Profile log-EL-ratio machinery: R_n(theta) = 2 ell_n(theta) - 2 ell_n(hat)
// with nuisance coordinates re-optimized.
// ---------------------------------------------------------------------------

// ell_n profiled over all coordinates except j (held at value v).
inline double profile_elr(const ExtendedSample& es, const EstimatingFunction& g, int j, double v,
                          Vector* nuisance_warm) {
  const int p = g.p;
  if (p == 1) {
    Vector th(1);
    th << v;
    return el_ratio(es, g, th);
  }
  auto expand = [&](const Vector& rest) {
    Vector th(p);
    int c = 0;
    for (int q = 0; q < p; ++q) th[q] = (q == j) ? v : rest[c++];
    return th;
  };
  const int n = es.data.n();
  auto objective = [&](const Vector& rest) { return el_ratio(es, g, expand(rest)) / n; };
  auto gradient = [&](const Vector& rest) {
    Vector full = detail::elr_gradient_scaled(es, g, expand(rest), 1e-10);
    if (!full.allFinite()) full.setZero();
    Vector red(p - 1);
    int c = 0;
    for (int q = 0; q < p; ++q)
      if (q != j) red[c++] = full[q];
    return red;
  };
  Vector start(p - 1);
  {
    int c = 0;
    for (int q = 0; q < p; ++q)
      if (q != j) start[c++] = (*nuisance_warm)[q];
  }
  OptimOptions oo;
  oo.gradient_tol = 1e-7;
  OptimResult br = bfgs_minimize(objective, gradient, start, oo);
  if (!std::isfinite(br.f)) {
    const OptimResult nm = nelder_mead(objective, start, 300 * p);
    if (std::isfinite(nm.f)) br = nm;
  }
  if (!std::isfinite(br.f)) return kInfeasibleLogElr;
  const Vector th = expand(br.x);
  for (int q = 0; q < p; ++q) (*nuisance_warm)[q] = th[q];
  return br.f * n;
}

// R_n at a full parameter value (region membership test).
inline double elr_statistic(const ExtendedSample& es, const EstimatingFunction& g, const ELFit& fit,
                            const Eigen::Ref<const Vector>& theta) {
  const double l = el_ratio(es, g, theta);
  return std::isfinite(l) ? 2.0 * (l - fit.logelr) : kInfeasibleLogElr;
}

inline bool elr_region_contains(const ExtendedSample& es, const EstimatingFunction& g,
                                const ELFit& fit, double q, const Eigen::Ref<const Vector>& theta) {
  return elr_statistic(es, g, fit, theta) <= q;
}

// Profile R_n for one coordinate (coverage checks without full intervals).
inline double profile_elr_statistic(const ExtendedSample& es, const EstimatingFunction& g,
                                    const ELFit& fit, int component, double value) {
  Vector warm = fit.theta_hat;
  const double l = profile_elr(es, g, component, value, &warm);
  return std::isfinite(l) ? 2.0 * (l - fit.logelr) : kInfeasibleLogElr;
}

// Per-coordinate profile confidence intervals {v : R_profile(v) <= q},
// endpoints located by bisection. A profile that becomes infeasible before
// crossing q reports the hull boundary with a flag.
inline CalibrationResult ci_elr(const ExtendedSample& es, const EstimatingFunction& g,
                                const ELFit& fit, double q, double alpha,
                                const std::vector<int>& components = {},
                                const std::string& method_tag = "elr") {
  if (!(q >= 0.0)) throw ValidationError("ci_elr: threshold must be nonnegative");
  CalibrationResult res;
  res.method = method_tag;
  res.alpha = alpha;
  res.threshold = q;
  std::vector<int> comps = components;
  if (comps.empty())
    for (int j = 0; j < g.p; ++j) comps.push_back(j);
  res.components = comps;

  for (int j : comps) {
    IntervalEstimate iv;
    const double center = fit.theta_hat[j];
    if (q == 0.0) {
      iv.lower = iv.upper = center;
      res.intervals.push_back(iv);
      continue;
    }
    for (int side = 0; side < 2; ++side) {
      const double dir = side == 0 ? -1.0 : 1.0;
      Vector warm = fit.theta_hat;
      auto stat = [&](double v) {
        const double l = profile_elr(es, g, j, v, &warm);
        return std::isfinite(l) ? 2.0 * (l - fit.logelr) : kInfeasibleLogElr;
      };
      // expand until R > q (infeasible counts as above q)
      double step = 0.25 * (1.0 + std::fabs(center));
      double inside = center;
      double outside = center + dir * step;
      double r_out = stat(outside);
      int expansions = 0;
      while (r_out <= q && expansions < 60) {
        inside = outside;
        step *= 2.0;
        outside = center + dir * step;
        r_out = stat(outside);
        ++expansions;
      }
      bool at_hull = false;
      if (r_out <= q) {
        // never crossed; report the last point reached and flag it
        at_hull = true;
      } else {
        const double tol = 1e-6 * (1.0 + std::fabs(center));
        bool saw_finite_cross = std::isfinite(r_out);
        while (std::fabs(outside - inside) > tol) {
          const double mid = 0.5 * (inside + outside);
          const double rm = stat(mid);
          if (rm <= q) {
            inside = mid;
          } else {
            outside = mid;
            if (std::isfinite(rm)) saw_finite_cross = true;
          }
        }
        at_hull = !saw_finite_cross;  // boundary reached only through infeasibility
      }
      const double endpoint = r_out <= q ? outside : 0.5 * (inside + outside);
      if (side == 0) {
        iv.lower = endpoint;
        iv.lower_at_hull = at_hull;
      } else {
        iv.upper = endpoint;
        iv.upper_at_hull = at_hull;
      }
    }
    res.intervals.push_back(iv);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reimputing bootstrap calibration (four steps): resample the extended
// sample, reimpute previously imputed rows from the resampled complete
// portion, recompute the EL ratio at theta_hat, and take the empirical
// quantile of the B ratio values.
// ---------------------------------------------------------------------------

struct BootstrapOptions {
  int jobs = 1;
  bool compute_intervals = true;
  std::vector<int> profile_components;  // empty = all coordinates
  MeleOptions mele;
};

inline CalibrationResult bootstrap_calibrate(const ExtendedSample& es, const EstimatingFunction& g,
                                             const ELFit& fit, int B, double alpha,
                                             std::uint64_t seed, const BootstrapOptions& opts = {},
                                             WarningLog* warnings = nullptr) {
  if (B < 100) throw ValidationError("bootstrap_calibrate: need B >= 100");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("bootstrap_calibrate: alpha outside (0,1)");
  const Dataset& d = es.data;
  const int n = d.n();

  std::vector<double> rstar(static_cast<size_t>(B), std::numeric_limits<double>::quiet_NaN());
  std::vector<int> status(static_cast<size_t>(B), 0);  // 0 ok, 1 discarded, 2 infeasible-at-theta
  std::vector<int> redraw_count(static_cast<size_t>(B), 0);

  parallel_for(B, opts.jobs, [&](int b) {
    const std::uint64_t bseed = mix_seed(seed, static_cast<std::uint64_t>(b));
    // step 1: simple random sample with replacement; resamples without a
    // complete row are redrawn (bounded per resample)
    std::vector<int> idx(static_cast<size_t>(n));
    bool has_complete = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Rng rng(mix_seed(bseed, 0xA001ULL + static_cast<std::uint64_t>(attempt)));
      has_complete = false;
      for (int i = 0; i < n; ++i) {
        idx[static_cast<size_t>(i)] = rng.uniform_int(n);
        if (d.delta()[idx[static_cast<size_t>(i)]] == 1) has_complete = true;
      }
      if (has_complete) break;
      ++redraw_count[static_cast<size_t>(b)];
    }
    if (!has_complete) {
      status[static_cast<size_t>(b)] = 1;
      return;
    }
    try {
      const Dataset bs = d.subset(idx);
      // step 2: reimpute the imputed portion from the resampled complete
      // portion, fresh draws, original bandwidth
      const ExtendedSample bs_es = impute(bs, es.kernel, std::max(1, es.kappa),
                                          mix_seed(bseed, 0xB002ULL), nullptr);
      // step 3: ratio at theta_hat against the resample MELE
      const double l_at_hat = el_ratio(bs_es, g, fit.theta_hat);
      const ELFit bs_fit = mele(bs_es, g, {fit.theta_hat}, opts.mele);
      if (std::isfinite(l_at_hat)) {
        rstar[static_cast<size_t>(b)] = 2.0 * (l_at_hat - bs_fit.logelr);
      } else {
        rstar[static_cast<size_t>(b)] = std::numeric_limits<double>::infinity();
        status[static_cast<size_t>(b)] = 2;
      }
    } catch (const NumericError&) {
      status[static_cast<size_t>(b)] = 1;
    }
  });

  CalibrationResult res;
  res.method = "bootstrap";
  res.alpha = alpha;
  res.draws = B;
  std::vector<double> values;
  values.reserve(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    res.redraws += redraw_count[static_cast<size_t>(b)];
    if (status[static_cast<size_t>(b)] == 1) {
      ++res.discarded;
      continue;
    }
    if (status[static_cast<size_t>(b)] == 2) ++res.infeasible_at_theta_hat;
    values.push_back(rstar[static_cast<size_t>(b)]);
  }
  if (values.empty()) throw NonConvergenceError("bootstrap_calibrate: every resample failed");
  if (res.discarded > B / 10) {
    res.discard_warning = true;
    warn(warnings, "bootstrap_discards_above_10_percent");
  }
  // step 4
  res.threshold = empirical_quantile(values, 1.0 - alpha);
  if (opts.compute_intervals) {
    CalibrationResult iv = ci_elr(es, g, fit, res.threshold, alpha, opts.profile_components,
                                  "bootstrap");
    res.intervals = std::move(iv.intervals);
    res.components = std::move(iv.components);
  }
  return res;
}

}  // namespace elmi
