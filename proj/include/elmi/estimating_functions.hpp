#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "elmi/common.hpp"
#include "elmi/dataset.hpp"

namespace elmi {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Uniform interface for estimating functions g(z, theta): r equations,
// p parameters, analytic Jacobian, admissibility predicate and an optional
// complete-case starting value for the outer solvers.
// ---------------------------------------------------------------------------

struct EstimatingFunction {
  using EvalFn = std::function<void(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                                    const Eigen::Ref<const Vector>& theta, Eigen::Ref<Vector> out)>;
  using JacFn = std::function<void(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                                   const Eigen::Ref<const Vector>& theta, Eigen::Ref<Matrix> out)>;

  std::string name;
  int r = 0;  // number of equations
  int p = 0;  // parameter dimension, r >= p
  EvalFn eval_into;
  JacFn jac_into;
  std::function<bool(const Eigen::Ref<const Vector>&)> domain;  // theta admissibility
  std::function<Vector(const Dataset&)> initial_guess;          // complete-case start; optional

  bool admissible(const Eigen::Ref<const Vector>& theta) const {
    return domain ? domain(theta) : true;
  }

  Vector eval(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
              const Eigen::Ref<const Vector>& theta) const {
    Vector out(r);
    eval_into(x, y, theta, out);
    return out;
  }
  Matrix jac(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
             const Eigen::Ref<const Vector>& theta) const {
    Matrix out(r, p);
    jac_into(x, y, theta, out);
    return out;
  }
};

// g(z, theta) = y - theta; the mean functional.
inline EstimatingFunction mean_fn(int dim) {
  if (dim < 1) throw ValidationError("mean_fn: dim must be >= 1");
  EstimatingFunction g;
  g.name = "mean";
  g.r = g.p = dim;
  g.eval_into = [dim](const auto& /*x*/, const auto& y, const auto& theta, Eigen::Ref<Vector> out) {
    out = y.head(dim) - theta;
  };
  g.jac_into = [dim](const auto&, const auto&, const auto&, Eigen::Ref<Matrix> out) {
    out = -Matrix::Identity(dim, dim);
  };
  g.initial_guess = [dim](const Dataset& d) {
    Vector m = Vector::Zero(dim);
    for (int i : d.complete_rows()) m += d.y().row(i).head(dim).transpose();
    return Vector(m / d.n_complete());
  };
  return g;
}

// Five-equation correlation system with parameters
// (theta, mu_x, mu_y, sigma_x^2, sigma_y^2); scalar X and Y.
inline EstimatingFunction correlation_fn() {
  EstimatingFunction g;
  g.name = "correlation";
  g.r = g.p = 5;
  g.domain = [](const Eigen::Ref<const Vector>& th) { return th[3] > 0.0 && th[4] > 0.0; };
  g.eval_into = [](const auto& x, const auto& y, const auto& th, Eigen::Ref<Vector> out) {
    const double cx = x[0] - th[1];
    const double cy = y[0] - th[2];
    out[0] = cx;
    out[1] = cy;
    out[2] = cx * cx - th[3];
    out[3] = cy * cy - th[4];
    out[4] = cx * cy - th[0] * std::sqrt(th[3] * th[4]);
  };
  g.jac_into = [](const auto& x, const auto& y, const auto& th, Eigen::Ref<Matrix> out) {
    const double cx = x[0] - th[1];
    const double cy = y[0] - th[2];
    const double sx = std::sqrt(th[3]);
    const double sy = std::sqrt(th[4]);
    out.setZero();
    out(0, 1) = -1.0;
    out(1, 2) = -1.0;
    out(2, 1) = -2.0 * cx;
    out(2, 3) = -1.0;
    out(3, 2) = -2.0 * cy;
    out(3, 4) = -1.0;
    out(4, 0) = -sx * sy;
    out(4, 1) = -cy;
    out(4, 2) = -cx;
    out(4, 3) = -th[0] * sy / (2.0 * sx);
    out(4, 4) = -th[0] * sx / (2.0 * sy);
  };
  g.initial_guess = [](const Dataset& d) {
    double mx = 0, my = 0;
    const auto& rows = d.complete_rows();
    for (int i : rows) {
      mx += d.x()(i, 0);
      my += d.y()(i, 0);
    }
    const double nc = static_cast<double>(rows.size());
    mx /= nc;
    my /= nc;
    double vx = 0, vy = 0, cxy = 0;
    for (int i : rows) {
      const double ax = d.x()(i, 0) - mx;
      const double ay = d.y()(i, 0) - my;
      vx += ax * ax;
      vy += ay * ay;
      cxy += ax * ay;
    }
    vx /= nc;
    vy /= nc;
    cxy /= nc;
    Vector th(5);
    th << (vx > 0 && vy > 0 ? cxy / std::sqrt(vx * vy) : 0.0), mx, my, std::max(vx, 1e-8),
        std::max(vy, 1e-8);
    return th;
  };
  return g;
}

// Simple linear regression of x on y: g = (x - t1 - t2*y, xy - t1*y - t2*y^2).
inline EstimatingFunction linreg_fn() {
  EstimatingFunction g;
  g.name = "linreg";
  g.r = g.p = 2;
  g.eval_into = [](const auto& x, const auto& y, const auto& th, Eigen::Ref<Vector> out) {
    const double res = x[0] - th[0] - th[1] * y[0];
    out[0] = res;
    out[1] = res * y[0];
  };
  g.jac_into = [](const auto& /*x*/, const auto& y, const auto&, Eigen::Ref<Matrix> out) {
    out(0, 0) = -1.0;
    out(0, 1) = -y[0];
    out(1, 0) = -y[0];
    out(1, 1) = -y[0] * y[0];
  };
  g.initial_guess = [](const Dataset& d) {
    double mx = 0, my = 0;
    const auto& rows = d.complete_rows();
    const double nc = static_cast<double>(rows.size());
    for (int i : rows) {
      mx += d.x()(i, 0);
      my += d.y()(i, 0);
    }
    mx /= nc;
    my /= nc;
    double vy = 0, cxy = 0;
    for (int i : rows) {
      const double ay = d.y()(i, 0) - my;
      cxy += (d.x()(i, 0) - mx) * ay;
      vy += ay * ay;
    }
    Vector th(2);
    const double slope = vy > 0 ? cxy / vy : 0.0;
    th << mx - slope * my, slope;
    return th;
  };
  return g;
}

// Logistic-score system for a binary response in the X block with the
// possibly missing binary Y as a covariate: S = (1, X1, X2, Y),
// g = S * (X3 - pi(S'beta)).
struct LogisticLayout {
  int x1_col = 0;
  int x2_col = 1;
  int response_col = 2;  // binary, always observed
};

inline EstimatingFunction logistic_fn(LogisticLayout layout = {}) {
  EstimatingFunction g;
  g.name = "logistic";
  g.r = g.p = 4;
  auto build_s = [layout](const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                          Vector& s) {
    s[0] = 1.0;
    s[1] = x[layout.x1_col];
    s[2] = x[layout.x2_col];
    s[3] = y[0];
  };
  auto check_response = [layout](const Eigen::Ref<const Vector>& x) {
    const double v = x[layout.response_col];
    if (v != 0.0 && v != 1.0)
      throw DomainError("logistic_fn: response column value " + std::to_string(v) +
                        " is not binary");
    return v;
  };
  g.eval_into = [build_s, check_response](const auto& x, const auto& y, const auto& th,
                                          Eigen::Ref<Vector> out) {
    Vector s(4);
    build_s(x, y, s);
    const double resp = check_response(x);
    const double pi = sigmoid(s.dot(th));
    out = s * (resp - pi);
  };
  g.jac_into = [build_s, check_response](const auto& x, const auto& y, const auto& th,
                                         Eigen::Ref<Matrix> out) {
    Vector s(4);
    build_s(x, y, s);
    check_response(x);
    const double pi = sigmoid(s.dot(th));
    out = -(pi * (1.0 - pi)) * (s * s.transpose());
  };
  g.initial_guess = [layout](const Dataset& d) {
    // complete-case IRLS; falls back to zero on breakdown
    const auto& rows = d.complete_rows();
    const int m = static_cast<int>(rows.size());
    Matrix S(m, 4);
    Vector resp(m);
    for (int i = 0; i < m; ++i) {
      const int row = rows[static_cast<size_t>(i)];
      S(i, 0) = 1.0;
      S(i, 1) = d.x()(row, layout.x1_col);
      S(i, 2) = d.x()(row, layout.x2_col);
      S(i, 3) = d.y()(row, 0);
      resp[i] = d.x()(row, layout.response_col);
    }
    Vector beta = Vector::Zero(4);
    for (int it = 0; it < 50; ++it) {
      Vector eta = S * beta;
      Vector pi(m), w(m);
      for (int i = 0; i < m; ++i) {
        pi[i] = sigmoid(eta[i]);
        w[i] = pi[i] * (1.0 - pi[i]);
      }
      Matrix H = S.transpose() * w.asDiagonal() * S + 1e-10 * Matrix::Identity(4, 4);
      Vector gvec = S.transpose() * (resp - pi);
      Vector step = H.ldlt().solve(gvec);
      if (!step.allFinite()) return Vector(Vector::Zero(4));
      const double nrm = step.cwiseAbs().maxCoeff();
      if (nrm > 5.0) step *= 5.0 / nrm;
      beta += step;
      if (nrm < 1e-10) break;
    }
    if (!beta.allFinite() || beta.cwiseAbs().maxCoeff() > 50.0) return Vector(Vector::Zero(4));
    return beta;
  };
  return g;
}

// ---------------------------------------------------------------------------
// Registry for CLI selection; additional functions are registerable
// in-process.
// ---------------------------------------------------------------------------

using EstimatingFunctionFactory = std::function<EstimatingFunction(const Dataset&)>;

inline std::map<std::string, EstimatingFunctionFactory>& estimating_function_registry() {
  static std::map<std::string, EstimatingFunctionFactory> reg = {
      {"mean", [](const Dataset& d) { return mean_fn(d.dy()); }},
      {"correlation",
       [](const Dataset& d) {
         if (d.dx() != 1 || d.dy() != 1)
           throw ValidationError("correlation estimating function needs scalar x and y");
         return correlation_fn();
       }},
      {"linreg",
       [](const Dataset& d) {
         if (d.dx() != 1 || d.dy() != 1)
           throw ValidationError("linreg estimating function needs scalar x and y");
         return linreg_fn();
       }},
      {"logistic",
       [](const Dataset& d) {
         if (d.dx() != 3 || d.dy() != 1)
           throw ValidationError("logistic estimating function needs d_x = 3 and scalar y");
         return logistic_fn();
       }},
  };
  return reg;
}

inline void register_estimating_function(const std::string& name, EstimatingFunctionFactory f) {
  estimating_function_registry()[name] = std::move(f);
}

inline EstimatingFunction make_estimating_function(const std::string& name, const Dataset& d) {
  const auto& reg = estimating_function_registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw ConfigError("unknown estimating function '" + name + "'");
  return it->second(d);
}

}  // namespace elmi
