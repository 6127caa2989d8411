#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/imputation.hpp"
#include "elmi/optim.hpp"
#include "elmi/rng.hpp"

namespace elmi {

inline constexpr double kInfeasibleLogElr = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Inner problem: the Lagrange multiplier t maximizing the concave dual
// sum_i log(1 + t'G_i). The log is continued quadratically below 1/n
// (log-star) so the objective is globally defined; a solution found in the
// extension region, or no stationary point at all, means 0 is not interior
// to the convex hull of the rows and the EL constraint is infeasible.
// ---------------------------------------------------------------------------

struct LagrangeSolution {
  Vector t;
  double logelr = kInfeasibleLogElr;  // sum_i log(1 + t'G_i); +inf when infeasible
  bool feasible = false;
  int iterations = 0;
  Vector weights;  // p_i = 1 / (n (1 + t'G_i)); empty when infeasible
};

namespace detail {

struct LogStar {
  double z0;
  explicit LogStar(int n) : z0(1.0 / n) {}
  double value(double z) const {
    if (z >= z0) return std::log(z);
    return std::log(z0) - 1.5 + 2.0 * z / z0 - 0.5 * z * z / (z0 * z0);
  }
  double d1(double z) const { return z >= z0 ? 1.0 / z : 2.0 / z0 - z / (z0 * z0); }
  double d2(double z) const { return z >= z0 ? -1.0 / (z * z) : -1.0 / (z0 * z0); }
};

}  // namespace detail

inline LagrangeSolution solve_lagrange(const Eigen::Ref<const Matrix>& G,
                                       const Vector* warm_start = nullptr, double tol = 1e-10,
                                       int max_iterations = 100) {
  const int n = static_cast<int>(G.rows());
  const int r = static_cast<int>(G.cols());
  if (n <= r) throw InsufficientDataError("solve_lagrange: need n > r");
  const detail::LogStar ls(n);

  LagrangeSolution sol;
  sol.t = (warm_start != nullptr && warm_start->size() == r && warm_start->allFinite())
              ? *warm_start
              : Vector::Zero(r);

  Vector z = Vector::Ones(n) + G * sol.t;
  auto objective = [&](const Vector& zz) {
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += ls.value(zz[i]);
    return v;
  };
  double obj = objective(z);

  Vector w1(n), w2(n);
  bool converged = false;
  for (int it = 0; it < max_iterations; ++it) {
    sol.iterations = it;
    for (int i = 0; i < n; ++i) {
      w1[i] = ls.d1(z[i]);
      w2[i] = -ls.d2(z[i]);  // positive
    }
    const Vector grad = G.transpose() * w1;
    if (grad.norm() / n <= tol) {
      converged = true;
      break;
    }
    Matrix H = G.transpose() * w2.asDiagonal() * G;
    H.diagonal().array() += 1e-12 * (H.trace() / r + 1.0);
    Vector dir = H.ldlt().solve(grad);
    if (!dir.allFinite()) break;
    const double slope = grad.dot(dir);
    if (slope <= 0.0) break;
    // Terminal steps improve the objective by less than one ulp; accept the
    // full Newton step on gradient contraction instead.
    if (dir.norm() <= 1e-8 * (1.0 + sol.t.norm())) {
      const Vector t_new = sol.t + dir;
      const Vector z_new = Vector::Ones(n) + G * t_new;
      Vector w1_new(n);
      for (int i = 0; i < n; ++i) w1_new[i] = ls.d1(z_new[i]);
      if ((G.transpose() * w1_new).norm() < grad.norm()) {
        sol.t = t_new;
        z = z_new;
        obj = objective(z);
        continue;
      }
    }
    double a = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vector t_new = sol.t + a * dir;
      const Vector z_new = Vector::Ones(n) + G * t_new;
      const double obj_new = objective(z_new);
      if (std::isfinite(obj_new) && obj_new >= obj + 1e-4 * a * slope) {
        sol.t = t_new;
        z = z_new;
        obj = obj_new;
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) break;
  }

  // Polish on the plain log objective with a positivity-preserving line
  // search. When the surrogate optimum sits in the pure-log region this is a
  // no-op; when 0 is outside the hull the dual runs away and the weight-sum
  // identity below rejects it.
  (void)converged;
  if (z.minCoeff() > 0.0) {
    double obj = 0.0;
    for (int i = 0; i < n; ++i) obj += std::log(z[i]);
    for (int it = 0; it < 50; ++it) {
      const Vector w1 = z.cwiseInverse();
      const Vector grad = G.transpose() * w1;
      if (grad.norm() / n <= tol) break;
      Matrix H = G.transpose() * z.cwiseAbs2().cwiseInverse().asDiagonal() * G;
      H.diagonal().array() += 1e-12 * (H.trace() / r + 1.0);
      const Vector dir = H.ldlt().solve(grad);
      if (!dir.allFinite()) break;
      const double slope = grad.dot(dir);
      if (slope <= 0.0) break;
      if (dir.norm() <= 1e-8 * (1.0 + sol.t.norm())) {
        const Vector t_new = sol.t + dir;
        const Vector z_new = Vector::Ones(n) + G * t_new;
        if (z_new.minCoeff() > 0.0 &&
            (G.transpose() * Vector(z_new.cwiseInverse())).norm() < grad.norm()) {
          sol.t = t_new;
          z = z_new;
          obj = 0.0;
          for (int i = 0; i < n; ++i) obj += std::log(z[i]);
          continue;
        }
      }
      double a = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        const Vector t_new = sol.t + a * dir;
        const Vector z_new = Vector::Ones(n) + G * t_new;
        if (z_new.minCoeff() > 0.0) {
          double obj_new = 0.0;
          for (int i = 0; i < n; ++i) obj_new += std::log(z_new[i]);
          if (obj_new >= obj + 1e-4 * a * slope) {
            sol.t = t_new;
            z = z_new;
            obj = obj_new;
            accepted = true;
            break;
          }
        }
        a *= 0.5;
      }
      if (!accepted) break;
    }
  }

  // A genuine stationary point satisfies Q_n1 = 0 and, as a consequence,
  // sum_i p_i = 1; a runaway dual (hull violation) drives the weight sum to
  // zero instead.
  bool feasible = z.minCoeff() > 0.0;
  if (feasible) {
    const Vector w1 = z.cwiseInverse();
    feasible = (G.transpose() * w1).norm() / n <= 10.0 * tol &&
               std::fabs(w1.sum() / n - 1.0) <= 1e-6;
  }
  if (feasible) {
    sol.feasible = true;
    sol.logelr = 0.0;
    for (int i = 0; i < n; ++i) sol.logelr += std::log(z[i]);
    sol.weights = (1.0 / n) * z.cwiseInverse();
  } else {
    sol.feasible = false;
    sol.logelr = kInfeasibleLogElr;
    sol.t.setZero();
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Profile log-EL ratio and the maximum empirical likelihood estimator.
// ---------------------------------------------------------------------------

struct ELCandidate {
  Vector theta;
  double logelr = kInfeasibleLogElr;
  bool converged = false;
  int iterations = 0;
  std::string route;  // "score", "bfgs" or "bfgs+polytope"
};

struct ELFit {
  Vector theta_hat;
  Vector t;         // Lagrange multiplier at theta_hat
  Vector weights;   // p_i
  double logelr = kInfeasibleLogElr;
  bool converged = false;
  int iterations = 0;
  std::vector<ELCandidate> candidates;
};

// ell_n(theta); +inf when theta is inadmissible or the hull constraint fails.
inline double el_ratio(const ExtendedSample& es, const EstimatingFunction& g,
                       const Eigen::Ref<const Vector>& theta) {
  if (!g.admissible(theta)) return kInfeasibleLogElr;
  Matrix G;
  try {
    G = imputed_estfun(es, g, theta);
  } catch (const EvaluationError&) {
    return kInfeasibleLogElr;
  }
  return solve_lagrange(G).logelr;
}

struct MeleOptions {
  int max_outer_iterations = 200;
  double q2_tol = 1e-6;      // stationarity tolerance on Q_n2
  double inner_tol = 1e-10;  // tolerance on Q_n1
  double step_tol = 1e-9;
};

namespace detail {

// Gradient of ell_n(theta)/n, i.e. Q_n2(theta, t(theta)); returns NaN vector
// when infeasible.
inline Vector elr_gradient_scaled(const ExtendedSample& es, const EstimatingFunction& g,
                                  const Vector& theta, double inner_tol) {
  if (!g.admissible(theta)) return Vector::Constant(g.p, std::numeric_limits<double>::quiet_NaN());
  Matrix G;
  try {
    G = imputed_estfun(es, g, theta);
  } catch (const EvaluationError&) {
    return Vector::Constant(g.p, std::numeric_limits<double>::quiet_NaN());
  }
  const LagrangeSolution sol = solve_lagrange(G, nullptr, inner_tol);
  if (!sol.feasible) return Vector::Constant(g.p, std::numeric_limits<double>::quiet_NaN());
  const auto J = imputed_estfun_jacobian(es, g, theta);
  const int n = static_cast<int>(G.rows());
  Vector acc = Vector::Zero(g.p);
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 + sol.t.dot(G.row(i));
    acc += J[static_cast<size_t>(i)].transpose() * sol.t / z;
  }
  return acc / n;
}

}  // namespace detail

// Maximum empirical likelihood estimator via the nested formulation: exact
// inner t(theta), outer minimization of ell_n. Every start contributes a
// candidate; converged candidates compete on ell_n and the smallest wins.
inline ELFit mele(const ExtendedSample& es, const EstimatingFunction& g,
                  const std::vector<Vector>& starts, const MeleOptions& opts = {}) {
  if (starts.empty()) throw ValidationError("mele: need at least one start");
  const int n = es.data.n();
  ELFit fit;

  auto objective = [&](const Vector& th) { return el_ratio(es, g, th) / n; };
  auto gradient = [&](const Vector& th) {
    Vector q2 = detail::elr_gradient_scaled(es, g, th, opts.inner_tol);
    if (!q2.allFinite()) q2.setZero();  // only reachable at infeasible points
    return q2;
  };
  auto q2_norm = [&](const Vector& th) {
    const Vector q2 = detail::elr_gradient_scaled(es, g, th, opts.inner_tol);
    return q2.allFinite() ? q2.norm() : std::numeric_limits<double>::infinity();
  };

  for (const Vector& start : starts) {
    ELCandidate cand;
    cand.theta = start;
    if (!g.admissible(start)) {
      fit.candidates.push_back(cand);
      continue;
    }

    // Just-identified fast route: solve the score system mean g~(theta) = 0
    // directly; its root satisfies both equations of the MELE system with
    // t = 0 and attains ell_n = 0.
    if (g.r == g.p) {
      auto F = [&](const Vector& th) -> Vector {
        if (!g.admissible(th)) return Vector::Constant(g.r, std::numeric_limits<double>::quiet_NaN());
        try {
          return imputed_estfun(es, g, th).colwise().mean().transpose();
        } catch (const EvaluationError&) {
          return Vector::Constant(g.r, std::numeric_limits<double>::quiet_NaN());
        }
      };
      auto J = [&](const Vector& th) -> Matrix { return imputed_estfun_jacobian_mean(es, g, th); };
      const RootResult root = newton_root(F, J, start, 1e-11, 80);
      if (root.converged && g.admissible(root.x)) {
        const double lr = el_ratio(es, g, root.x);
        if (std::isfinite(lr)) {
          cand.theta = root.x;
          cand.logelr = lr;
          cand.converged = true;
          cand.iterations = root.iterations;
          cand.route = "score";
          fit.candidates.push_back(cand);
          continue;
        }
      }
    }

    OptimOptions oo;
    oo.max_iterations = opts.max_outer_iterations;
    oo.gradient_tol = opts.q2_tol;
    oo.step_tol = opts.step_tol;
    OptimResult br = bfgs_minimize(objective, gradient, start, oo);
    cand.iterations = br.iterations;
    cand.route = "bfgs";
    Vector th = br.x;
    if (!std::isfinite(br.f)) {
      fit.candidates.push_back(cand);
      continue;
    }
    if (q2_norm(th) > opts.q2_tol) {
      const OptimResult nm = nelder_mead(objective, th, 400 * g.p);
      if (std::isfinite(nm.f) && nm.f <= br.f) th = nm.x;
      cand.route = "bfgs+polytope";
      cand.iterations += nm.iterations;
    }
    const double lr = el_ratio(es, g, th);
    cand.theta = th;
    cand.logelr = lr;
    cand.converged = std::isfinite(lr) && q2_norm(th) <= opts.q2_tol;
    fit.candidates.push_back(cand);
  }

  const ELCandidate* best = nullptr;
  for (const auto& c : fit.candidates)
    if (c.converged && (best == nullptr || c.logelr < best->logelr)) best = &c;
  if (best == nullptr) {
    bool any_feasible = false;
    for (const auto& c : fit.candidates)
      if (std::isfinite(c.logelr)) any_feasible = true;
    throw NonConvergenceError(any_feasible
                                  ? "mele: no start converged (best stationarity above tolerance)"
                                  : "mele: EL constraint infeasible at every start (hull violation)");
  }

  fit.theta_hat = best->theta;
  fit.logelr = best->logelr;
  fit.converged = true;
  fit.iterations = best->iterations;
  const Matrix G = imputed_estfun(es, g, fit.theta_hat);
  const LagrangeSolution sol = solve_lagrange(G, nullptr, opts.inner_tol);
  fit.t = sol.t;
  fit.weights = sol.weights;
  return fit;
}

// Default multi-start rule: the complete-case estimate plus jittered copies.
inline std::vector<Vector> default_starts(const ExtendedSample& es, const EstimatingFunction& g,
                                          int extra = 4, std::uint64_t seed = 0x5EEDu) {
  Vector base = g.initial_guess ? g.initial_guess(es.data) : Vector::Zero(g.p);
  if (!base.allFinite() || !g.admissible(base)) base = Vector::Zero(g.p);
  std::vector<Vector> starts{base};
  Rng rng(mix_seed(seed, 0xD1CEu));
  for (int e = 0; e < extra; ++e) {
    Vector cand = base;
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      for (int j = 0; j < g.p; ++j)
        cand[j] = base[j] + 0.1 * (1.0 + std::fabs(base[j])) * rng.normal();
      ok = g.admissible(cand);
    }
    starts.push_back(ok ? cand : base);
  }
  return starts;
}

}  // namespace elmi
