#pragma once

#include <cmath>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/el_core.hpp"
#include "elmi/inference.hpp"
#include "elmi/kernel.hpp"
#include "elmi/stats.hpp"

namespace elmi {

// Empirical likelihood on the complete rows only.
inline ELFit el_complete_case(const Dataset& d, const EstimatingFunction& g,
                              std::vector<Vector> starts = {}, const MeleOptions& opts = {}) {
  if (d.n_complete() <= g.r)
    throw InsufficientDataError("el_complete_case: need more complete rows than equations");
  const Dataset sub = d.subset(d.complete_rows());
  const ExtendedSample es = extended_from_complete(sub);
  if (starts.empty()) starts = default_starts(es, g);
  return mele(es, g, starts, opts);
}

// Empirical likelihood on a fully observed dataset.
inline ELFit el_full_data(const Dataset& d, const EstimatingFunction& g,
                          std::vector<Vector> starts = {}, const MeleOptions& opts = {}) {
  if (!d.missing_rows().empty())
    throw ValidationError("el_full_data: dataset has missing rows");
  const ExtendedSample es = extended_from_complete(d);
  if (starts.empty()) starts = default_starts(es, g);
  return mele(es, g, starts, opts);
}

// ---------------------------------------------------------------------------
// Kernel-weighted IPW-GMM comparator: complete-case estimating functions
// inflated by inverse estimated propensities, quadratic form weighted by A_T.
// ---------------------------------------------------------------------------

struct WeightedGmm {
  Vector theta;
  Matrix a_t;
  int n_complete = 0;
  double objective = 0.0;
  bool converged = false;
  Matrix sigma;  // sandwich covariance on the per-complete-observation scale
  double clamp_active_fraction = 0.0;
  Vector propensities;  // at the complete rows
};

inline WeightedGmm weighted_gmm(const Dataset& d, const EstimatingFunction& g,
                                const KernelSpec& propensity_kernel, Matrix a_t = {},
                                std::vector<Vector> starts = {}, WarningLog* warnings = nullptr) {
  const int nc = d.n_complete();
  if (nc < g.p) throw InsufficientDataError("weighted_gmm: need n_c >= p");
  if (a_t.size() == 0) a_t = Matrix::Identity(g.r, g.r);
  if (a_t.rows() != g.r || a_t.cols() != g.r)
    throw ValidationError("weighted_gmm: A_T must be r x r");

  const PropensityEstimate prop = estimate_propensity(d, propensity_kernel);
  const auto& rows = d.complete_rows();
  Vector phat(nc);
  int clamped = 0;
  for (int i = 0; i < nc; ++i) {
    phat[i] = prop(d.x().row(rows[static_cast<size_t>(i)]).transpose());
    if (phat[i] <= prop.floor()) ++clamped;
  }
  WeightedGmm out;
  out.n_complete = nc;
  out.a_t = a_t;
  out.propensities = phat;
  out.clamp_active_fraction = static_cast<double>(clamped) / nc;
  if (out.clamp_active_fraction > 0.2) warn(warnings, "propensity_clamp_active_above_20_percent");

  auto moments = [&](const Vector& th) -> Vector {
    if (!g.admissible(th)) return Vector::Constant(g.r, std::numeric_limits<double>::quiet_NaN());
    Vector u = Vector::Zero(g.r);
    Vector buf(g.r);
    for (int i = 0; i < nc; ++i) {
      const int row = rows[static_cast<size_t>(i)];
      g.eval_into(d.x().row(row).transpose(), d.y().row(row).transpose(), th, buf);
      u += buf / phat[i];
    }
    return u / nc;
  };
  auto moments_jac = [&](const Vector& th) -> Matrix {
    Matrix j = Matrix::Zero(g.r, g.p);
    Matrix buf(g.r, g.p);
    for (int i = 0; i < nc; ++i) {
      const int row = rows[static_cast<size_t>(i)];
      g.jac_into(d.x().row(row).transpose(), d.y().row(row).transpose(), th, buf);
      j += buf / phat[i];
    }
    return j / nc;
  };
  auto objective = [&](const Vector& th) {
    const Vector u = moments(th);
    if (!u.allFinite()) return std::numeric_limits<double>::infinity();
    return static_cast<double>(u.transpose() * a_t * u);
  };
  auto gradient = [&](const Vector& th) -> Vector {
    const Vector u = moments(th);
    if (!u.allFinite()) return Vector::Zero(g.p);
    return 2.0 * moments_jac(th).transpose() * (a_t * u);
  };

  if (starts.empty()) {
    const ExtendedSample tmp = extended_from_complete(d.subset(rows));
    starts = default_starts(tmp, g);
  }

  double best = std::numeric_limits<double>::infinity();
  for (const Vector& s : starts) {
    if (!g.admissible(s)) continue;
    Vector cand;
    bool ok = false;
    if (g.r == g.p) {
      const RootResult root = newton_root(moments, moments_jac, s, 1e-11, 80);
      if (root.converged && g.admissible(root.x)) {
        cand = root.x;
        ok = true;
      }
    }
    if (!ok) {
      OptimOptions oo;
      oo.gradient_tol = 1e-8;
      const OptimResult br = bfgs_minimize(objective, gradient, s, oo);
      if (std::isfinite(br.f)) {
        cand = br.x;
        ok = true;
      }
    }
    if (!ok) continue;
    const double f = objective(cand);
    if (f < best) {
      best = f;
      out.theta = cand;
      out.converged = true;
    }
  }
  if (!out.converged) throw NonConvergenceError("weighted_gmm: optimizer failed from every start");
  out.objective = best;

  // kernel-plug-in sandwich: B S B' with B = (J'AJ)^{-1} J'A and
  // S = n_c^{-1} sum delta_i g g' / p-hat^2
  const Matrix J = moments_jac(out.theta);
  Matrix S = Matrix::Zero(g.r, g.r);
  {
    Vector buf(g.r);
    for (int i = 0; i < nc; ++i) {
      const int row = rows[static_cast<size_t>(i)];
      g.eval_into(d.x().row(row).transpose(), d.y().row(row).transpose(), out.theta, buf);
      S += (buf * buf.transpose()) / (phat[i] * phat[i]);
    }
    S /= nc;
  }
  const Matrix JtAJ = J.transpose() * a_t * J;
  const Matrix Bmat = JtAJ.ldlt().solve(J.transpose() * a_t);
  out.sigma = Bmat * S * Bmat.transpose();
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
  return out;
}

inline CalibrationResult wgmm_ci_normal(const WeightedGmm& wg, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("wgmm_ci_normal: alpha outside (0,1]");
  CalibrationResult res;
  res.method = "normal";
  res.alpha = alpha;
  const double z = alpha >= 1.0 ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  res.threshold = z;
  for (int j = 0; j < wg.theta.size(); ++j) {
    const double se = std::sqrt(std::max(0.0, wg.sigma(j, j)) / wg.n_complete);
    res.intervals.push_back({wg.theta[j] - z * se, wg.theta[j] + z * se, false, false});
    res.components.push_back(j);
  }
  return res;
}

}  // namespace elmi
