#include <catch2/catch_amalgamated.hpp>

#include "elmi/baselines.hpp"
#include "elmi/el_core.hpp"
#include "elmi/rng.hpp"
#include "elmi/stats.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace elmi;
using testutil::make_xy;

namespace {

Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<int>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = v[i];
  return m;
}

}  // namespace

TEST_CASE("solve_lagrange on canonical scalar instances") {
  SECTION("zero-mean rows need no tilt") {
    const LagrangeSolution s = solve_lagrange(column({-1, 0, 1}));
    REQUIRE(s.feasible);
    REQUIRE(s.t[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(s.logelr == Catch::Approx(0.0).margin(1e-12));
    for (int i = 0; i < 3; ++i) REQUIRE(s.weights[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));
  }
  SECTION("asymmetric rows match the bisection oracle") {
    const std::vector<double> g{-1.5, -0.5, 0.5};
    const LagrangeSolution s = solve_lagrange(column(g));
    const auto oracle = oracles::bisect_scalar_dual(g);
    REQUIRE(s.feasible);
    REQUIRE(oracle.feasible);
    REQUIRE(s.t[0] == Catch::Approx(oracle.t).margin(1e-10));
    REQUIRE(s.logelr == Catch::Approx(oracle.logelr).margin(1e-10));
    REQUIRE(s.logelr > 0.0);
    REQUIRE(s.t[0] > -2.0);
    REQUIRE(s.t[0] < 2.0 / 3.0);
  }
  SECTION("same-sign rows are infeasible") {
    const LagrangeSolution s = solve_lagrange(column({0.5, 1, 2}));
    REQUIRE_FALSE(s.feasible);
    REQUIRE(std::isinf(s.logelr));
  }
  SECTION("n <= r rejected") { REQUIRE_THROWS_AS(solve_lagrange(Matrix::Ones(1, 1)), InsufficientDataError); }
}

TEST_CASE("solve_lagrange matches the oracle on random scalar instances", "[property]") {
  Rng rng(99);
  int done = 0;
  while (done < 100) {
    const int n = 5 + rng.uniform_int(40);
    std::vector<double> g(static_cast<size_t>(n));
    for (auto& v : g) v = rng.normal() + 0.4 * rng.normal();
    bool pos = false, neg = false;
    for (double v : g) {
      pos = pos || v > 0;
      neg = neg || v < 0;
    }
    if (!(pos && neg)) continue;
    const auto oracle = oracles::bisect_scalar_dual(g);
    const LagrangeSolution s = solve_lagrange(column(g));
    REQUIRE(s.feasible == oracle.feasible);
    REQUIRE(s.t[0] == Catch::Approx(oracle.t).margin(1e-10));
    REQUIRE(s.logelr == Catch::Approx(oracle.logelr).margin(1e-10));
    ++done;
  }
}

TEST_CASE("solve_lagrange invariants at the solution", "[property]") {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30, r = 2;
    Matrix G(n, r);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < r; ++j) G(i, j) = rng.normal() + (j == 0 ? 0.2 : -0.1);
    const LagrangeSolution s = solve_lagrange(G);
    if (!s.feasible) continue;
    // weight identities
    REQUIRE(s.weights.sum() == Catch::Approx(1.0).margin(1e-10));
    REQUIRE((G.transpose() * s.weights).norm() <= 1e-8);
    for (int i = 0; i < n; ++i) REQUIRE(s.weights[i] > 0.0);
    // dual concavity: the Hessian at the solution is negative semidefinite
    Matrix H = Matrix::Zero(r, r);
    for (int i = 0; i < n; ++i) {
      const double z = 1.0 + s.t.dot(G.row(i));
      H -= G.row(i).transpose() * G.row(i) / (z * z);
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
    REQUIRE(eig.eigenvalues().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("el_ratio values on the three-point mean example") {
  const Dataset d = make_xy({0, 0, 0}, {1, 2, 3}, {1, 1, 1});
  const ExtendedSample es = extended_from_complete(d);
  const EstimatingFunction g = mean_fn(1);
  Vector th(1);
  th << 2.0;
  REQUIRE(el_ratio(es, g, th) == Catch::Approx(0.0).margin(1e-12));
  th << 2.5;
  const auto oracle = oracles::bisect_scalar_dual({1 - 2.5, 2 - 2.5, 3 - 2.5});
  REQUIRE(el_ratio(es, g, th) == Catch::Approx(oracle.logelr).margin(1e-10));
  REQUIRE(el_ratio(es, g, th) > 0.0);
  th << 3.5;  // outside the hull
  REQUIRE(std::isinf(el_ratio(es, g, th)));
}

TEST_CASE("mele solves the canonical cases") {
  SECTION("sample mean") {
    Rng rng(3);
    std::vector<double> ys;
    double mean = 0;
    for (int i = 0; i < 25; ++i) {
      ys.push_back(rng.normal() * 2 + 1);
      mean += ys.back();
    }
    mean /= 25;
    const Dataset d = make_xy(std::vector<double>(25, 0.0), ys, std::vector<int>(25, 1));
    const ExtendedSample es = extended_from_complete(d);
    const ELFit fit = mele(es, mean_fn(1), default_starts(es, mean_fn(1)));
    REQUIRE(fit.converged);
    REQUIRE(fit.theta_hat[0] == Catch::Approx(mean).margin(1e-8));
    REQUIRE(fit.logelr == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(fit.weights.sum() == Catch::Approx(1.0).margin(1e-10));
  }
  SECTION("over-identified toy matches a grid search oracle") {
    // g = (z - theta, z^2 - theta^2 - 1) on a fixed 20-point sample
    Rng rng(8);
    std::vector<double> zs;
    for (int i = 0; i < 20; ++i) zs.push_back(rng.normal() + 0.3);
    const Dataset d = make_xy(std::vector<double>(20, 0.0), zs, std::vector<int>(20, 1));
    EstimatingFunction g;
    g.name = "toy";
    g.r = 2;
    g.p = 1;
    g.eval_into = [](const auto&, const auto& y, const auto& th, Eigen::Ref<Vector> out) {
      out[0] = y[0] - th[0];
      out[1] = y[0] * y[0] - th[0] * th[0] - 1.0;
    };
    g.jac_into = [](const auto&, const auto&, const auto& th, Eigen::Ref<Matrix> out) {
      out(0, 0) = -1.0;
      out(1, 0) = -2.0 * th[0];
    };
    const ExtendedSample es = extended_from_complete(d);
    Vector s0(1);
    s0 << 0.0;
    const ELFit fit = mele(es, g, {s0});
    REQUIRE(fit.converged);
    double best_v = 0, best_f = std::numeric_limits<double>::infinity();
    for (double v = -3.0; v <= 3.0; v += 1e-4) {
      Vector th(1);
      th << v;
      const double f = el_ratio(es, g, th);
      if (f < best_f) {
        best_f = f;
        best_v = v;
      }
    }
    REQUIRE(fit.theta_hat[0] == Catch::Approx(best_v).margin(2e-4));
    REQUIRE(fit.logelr <= best_f + 1e-9);
  }
  SECTION("no feasible start raises the hull error") {
    const Dataset d = make_xy({0, 0, 0}, {1, 2, 3}, {1, 1, 1});
    const ExtendedSample es = extended_from_complete(d);
    EstimatingFunction g = mean_fn(1);
    g.domain = [](const Eigen::Ref<const Vector>& th) { return th[0] > 10.0; };  // forces infeasible
    Vector s0(1);
    s0 << 11.0;
    REQUIRE_THROWS_AS(mele(es, g, {s0}), NonConvergenceError);
  }
}

TEST_CASE("mele properties", "[property]") {
  SECTION("shift equivariance of the mean function") {
    Rng rng(4);
    std::vector<double> ys;
    for (int i = 0; i < 15; ++i) ys.push_back(rng.normal());
    std::vector<double> ys_shift;
    for (double v : ys) ys_shift.push_back(v + 5.25);
    const Dataset d1 = make_xy(std::vector<double>(15, 0.0), ys, std::vector<int>(15, 1));
    const Dataset d2 = make_xy(std::vector<double>(15, 0.0), ys_shift, std::vector<int>(15, 1));
    const ExtendedSample e1 = extended_from_complete(d1), e2 = extended_from_complete(d2);
    const ELFit f1 = mele(e1, mean_fn(1), default_starts(e1, mean_fn(1)));
    const ELFit f2 = mele(e2, mean_fn(1), default_starts(e2, mean_fn(1)));
    REQUIRE(f2.theta_hat[0] - f1.theta_hat[0] == Catch::Approx(5.25).margin(1e-9));
  }
  SECTION("profile is zero at the mean and rises toward the hull") {
    const std::vector<double> ys{0.2, 0.9, 1.4, 2.2, 3.1};
    const Dataset d = make_xy(std::vector<double>(5, 0.0), ys, std::vector<int>(5, 1));
    const ExtendedSample es = extended_from_complete(d);
    const EstimatingFunction g = mean_fn(1);
    double mean = 0;
    for (double v : ys) mean += v;
    mean /= 5;
    Vector th(1);
    th << mean;
    REQUIRE(el_ratio(es, g, th) == Catch::Approx(0.0).margin(1e-12));
    double prev = 0.0;
    for (double v = mean; v < 3.1; v += 0.05) {
      th << v;
      const double f = el_ratio(es, g, th);
      REQUIRE(f >= prev - 1e-12);
      prev = f;
    }
    double prev_dn = 0.0;
    for (double v = mean; v > 0.2; v -= 0.05) {
      th << v;
      const double f = el_ratio(es, g, th);
      REQUIRE(f >= prev_dn - 1e-12);
      prev_dn = f;
    }
  }
}

TEST_CASE("full-data Wilks percentile at n = 200", "[slow]") {
  // 2000 replications of 2 * ell_n(theta0) for the scalar mean; the 95th
  // percentile should sit near the chi-square(1) quantile
  Rng rng(2024);
  const int reps = 2000, n = 200;
  std::vector<double> stats;
  stats.reserve(reps);
  const EstimatingFunction g = mean_fn(1);
  Vector th0(1);
  th0 << 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    Matrix x(n, 1), y(n, 1);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 0.0;
      y(i, 0) = rng.normal();
    }
    const Dataset d = Dataset::from_arrays(x, y, Eigen::VectorXi::Ones(n));
    const ExtendedSample es = extended_from_complete(d);
    stats.push_back(2.0 * el_ratio(es, g, th0));
  }
  const double q95 = empirical_quantile(stats, 0.95);
  REQUIRE(q95 == Catch::Approx(chisq_quantile(0.95, 1)).margin(0.35));
}
