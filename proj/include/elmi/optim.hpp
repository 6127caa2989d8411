#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "elmi/common.hpp"

namespace elmi {

// Generic dense optimizers for the outer solvers. Objectives may return
// +infinity to mark infeasible points; line searches back off.

using ObjectiveFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

struct OptimOptions {
  int max_iterations = 200;
  double gradient_tol = 1e-6;
  double step_tol = 1e-9;
};

struct OptimResult {
  Vector x;
  double f = std::numeric_limits<double>::infinity();
  Vector gradient;
  bool converged = false;
  int iterations = 0;
};

inline OptimResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& grad, const Vector& x0,
                                 const OptimOptions& opts = {}) {
  const int p = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;
  res.f = f(x0);
  if (!std::isfinite(res.f)) return res;  // infeasible start
  Vector g = grad(res.x);
  res.gradient = g;
  Matrix H = Matrix::Identity(p, p);  // inverse-Hessian approximation
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it;
    if (g.norm() <= opts.gradient_tol) {
      res.converged = true;
      return res;
    }
    Vector dir = -(H * g);
    if (!dir.allFinite() || dir.dot(g) >= 0.0) {
      H = Matrix::Identity(p, p);
      dir = -g;
    }
    const double max_step = 10.0 * (1.0 + res.x.norm());
    if (dir.norm() > max_step) dir *= max_step / dir.norm();
    // Armijo backtracking; +inf objective values simply shrink the step.
    const double slope = g.dot(dir);
    double t = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Vector x_new;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = res.x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) return res;  // stuck; caller may fall back
    const Vector s = x_new - res.x;
    if (s.norm() <= opts.step_tol * (1.0 + res.x.norm())) {
      res.x = x_new;
      res.f = f_new;
      res.gradient = grad(res.x);
      res.converged = res.gradient.norm() <= opts.gradient_tol;
      return res;
    }
    Vector g_new = grad(x_new);
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Vector Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
           (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    res.gradient = g;
  }
  res.converged = g.norm() <= opts.gradient_tol;
  return res;
}

// Derivative-free fallback: Nelder-Mead polytope search.
inline OptimResult nelder_mead(const ObjectiveFn& f, const Vector& x0, int max_iterations = 2000,
                               double ftol = 1e-12, double init_scale = 0.1) {
  const int p = static_cast<int>(x0.size());
  const int m = p + 1;
  std::vector<Vector> xs(static_cast<size_t>(m), x0);
  std::vector<double> fs(static_cast<size_t>(m));
  for (int j = 0; j < p; ++j)
    xs[static_cast<size_t>(j + 1)][j] += init_scale * (1.0 + std::fabs(x0[j]));
  for (int j = 0; j < m; ++j) fs[static_cast<size_t>(j)] = f(xs[static_cast<size_t>(j)]);

  auto order = [&] {
    std::vector<int> idx(static_cast<size_t>(m));
    for (int j = 0; j < m; ++j) idx[static_cast<size_t>(j)] = j;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return fs[static_cast<size_t>(a)] < fs[static_cast<size_t>(b)];
    });
    std::vector<Vector> xs2;
    std::vector<double> fs2;
    for (int j : idx) {
      xs2.push_back(xs[static_cast<size_t>(j)]);
      fs2.push_back(fs[static_cast<size_t>(j)]);
    }
    xs = std::move(xs2);
    fs = std::move(fs2);
  };

  OptimResult res;
  int it = 0;
  for (; it < max_iterations; ++it) {
    order();
    if (std::isfinite(fs[0]) && std::isfinite(fs.back()) &&
        fs.back() - fs[0] <= ftol * (1.0 + std::fabs(fs[0])))
      break;
    Vector centroid = Vector::Zero(p);
    for (int j = 0; j < m - 1; ++j) centroid += xs[static_cast<size_t>(j)];
    centroid /= (m - 1);
    const Vector& worst = xs.back();
    const Vector xr = centroid + (centroid - worst);
    const double fr = f(xr);
    if (fr < fs[0]) {
      const Vector xe = centroid + 2.0 * (centroid - worst);
      const double fe = f(xe);
      if (fe < fr) {
        xs.back() = xe;
        fs.back() = fe;
      } else {
        xs.back() = xr;
        fs.back() = fr;
      }
    } else if (fr < fs[static_cast<size_t>(m - 2)]) {
      xs.back() = xr;
      fs.back() = fr;
    } else {
      const Vector xc = centroid + 0.5 * ((fr < fs.back() ? xr : worst) - centroid);
      const double fc = f(xc);
      if (fc < std::min(fr, fs.back())) {
        xs.back() = xc;
        fs.back() = fc;
      } else {
        for (int j = 1; j < m; ++j) {
          xs[static_cast<size_t>(j)] = xs[0] + 0.5 * (xs[static_cast<size_t>(j)] - xs[0]);
          fs[static_cast<size_t>(j)] = f(xs[static_cast<size_t>(j)]);
        }
      }
    }
  }
  order();
  res.x = xs[0];
  res.f = fs[0];
  res.iterations = it;
  res.converged = std::isfinite(fs[0]);
  return res;
}

// Damped Newton on a square system F(x) = 0 with Jacobian; line search on
// ||F||^2. Used for just-identified score equations.
struct RootResult {
  Vector x;
  Vector residual;
  bool converged = false;
  int iterations = 0;
};

inline RootResult newton_root(const std::function<Vector(const Vector&)>& F,
                              const std::function<Matrix(const Vector&)>& J, const Vector& x0,
                              double tol = 1e-11, int max_iterations = 80) {
  RootResult res;
  res.x = x0;
  Vector Fx = F(res.x);
  if (!Fx.allFinite()) return res;
  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it;
    if (Fx.norm() <= tol) {
      res.converged = true;
      break;
    }
    const Matrix Jx = J(res.x);
    Vector step = Jx.fullPivLu().solve(-Fx);
    if (!step.allFinite()) break;
    double t = 1.0;
    const double base = Fx.squaredNorm();
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Vector x_new = res.x + t * step;
      const Vector F_new = F(x_new);
      if (F_new.allFinite() && F_new.squaredNorm() < base * (1.0 - 1e-4 * t)) {
        res.x = x_new;
        Fx = F_new;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  res.residual = Fx;
  res.converged = res.converged || Fx.norm() <= tol;
  return res;
}

}  // namespace elmi
