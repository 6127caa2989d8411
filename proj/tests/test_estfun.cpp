#include <catch2/catch_amalgamated.hpp>

#include "elmi/baselines.hpp"
#include "elmi/el_core.hpp"
#include "elmi/estimating_functions.hpp"
#include "elmi/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace elmi;
using testutil::make_xy;

TEST_CASE("mean function values and jacobian") {
  const EstimatingFunction g = mean_fn(1);
  Vector x(1), y(1), th(1);
  x << 0;
  y << 2;
  th << 2;
  REQUIRE(g.eval(x, y, th)[0] == 0.0);
  y << 3;
  th << 1;
  REQUIRE(g.eval(x, y, th)[0] == 2.0);
  REQUIRE(g.jac(x, y, th)(0, 0) == -1.0);

  const EstimatingFunction g2 = mean_fn(2);
  Vector y2(2), th2(2);
  y2 << 1, 5;
  th2 << 0.5, 4;
  REQUIRE(g2.eval(x, y2, th2)[1] == 1.0);
  REQUIRE((g2.jac(x, y2, th2) + Matrix::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("correlation system at a centered point") {
  const EstimatingFunction g = correlation_fn();
  Vector x(1), y(1), th(5);
  th << 0.3, 1.0, -2.0, 4.0, 9.0;  // theta, mu_x, mu_y, var_x, var_y
  x << 1.0;
  y << -2.0;
  const Vector v = g.eval(x, y, th);
  REQUIRE(v[0] == 0.0);
  REQUIRE(v[1] == 0.0);
  REQUIRE(v[2] == -4.0);
  REQUIRE(v[3] == -9.0);
  REQUIRE(v[4] == Catch::Approx(-0.3 * 2.0 * 3.0).margin(1e-14));

  // domain excludes nonpositive variances
  Vector bad = th;
  bad[3] = 0.0;
  REQUIRE_FALSE(g.admissible(bad));
  // the stated d/d sigma_x^2 of the fifth equation
  REQUIRE(g.jac(x, y, th)(4, 3) == Catch::Approx(-0.3 * 3.0 / (2.0 * 2.0)).margin(1e-14));
}

TEST_CASE("full-data correlation MELE equals plug-in moments and pearson") {
  Rng rng(21);
  std::vector<double> xs, ys;
  for (int i = 0; i < 40; ++i) {
    const double x = rng.normal();
    xs.push_back(x);
    ys.push_back(0.7 * x + 0.5 * rng.normal());
  }
  const Dataset d = make_xy(xs, ys, std::vector<int>(40, 1));
  const EstimatingFunction g = correlation_fn();
  const ELFit fit = el_full_data(d, g);
  const auto m = oracles::plugin_moments(xs, ys);
  REQUIRE(fit.theta_hat[0] == Catch::Approx(m.corr).margin(1e-6));
  REQUIRE(fit.theta_hat[1] == Catch::Approx(m.mean_x).margin(1e-6));
  REQUIRE(fit.theta_hat[2] == Catch::Approx(m.mean_y).margin(1e-6));
  REQUIRE(fit.theta_hat[3] == Catch::Approx(m.var_x).margin(1e-6));
  REQUIRE(fit.theta_hat[4] == Catch::Approx(m.var_y).margin(1e-6));
  // just-identified: the sample moment equations hold at theta-hat
  const ExtendedSample es = extended_from_complete(d);
  REQUIRE(imputed_estfun(es, g, fit.theta_hat).colwise().mean().norm() <= 1e-8);
}

TEST_CASE("linreg function and its closed-form oracle") {
  const EstimatingFunction g = linreg_fn();
  Vector x(1), y(1), th(2);
  x << 5.0;
  y << 2.0;
  th << 1.0, 2.0;
  const Matrix j = g.jac(x, y, th);
  REQUIRE(j(0, 0) == -1.0);
  REQUIRE(j(0, 1) == -2.0);
  REQUIRE(j(1, 0) == -2.0);
  REQUIRE(j(1, 1) == -4.0);

  SECTION("exact line recovers intercept and slope") {
    std::vector<double> ys = {0, 1, 2, 3, 4};
    std::vector<double> xs;
    for (double v : ys) xs.push_back(2.5 - 1.5 * v);
    const Dataset d = make_xy(xs, ys, std::vector<int>(5, 1));
    const ELFit fit = el_full_data(d, g);
    REQUIRE(fit.theta_hat[0] == Catch::Approx(2.5).margin(1e-9));
    REQUIRE(fit.theta_hat[1] == Catch::Approx(-1.5).margin(1e-9));
    REQUIRE(fit.logelr == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("noisy data matches ordinary least squares") {
    Rng rng(31);
    std::vector<double> xs, ys;
    for (int i = 0; i < 30; ++i) {
      const double y = rng.normal();
      ys.push_back(y);
      xs.push_back(1.0 + 2.0 * y + 0.3 * rng.normal());
    }
    const Dataset d = make_xy(xs, ys, std::vector<int>(30, 1));
    const ELFit fit = el_full_data(d, g);
    const Vector ols = oracles::ols_x_on_y(xs, ys);
    REQUIRE(fit.theta_hat[0] == Catch::Approx(ols[0]).margin(1e-6));
    REQUIRE(fit.theta_hat[1] == Catch::Approx(ols[1]).margin(1e-6));
  }
}

namespace {

Dataset logistic_fixture(int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, 3), y(n, 1);
  Eigen::VectorXi dl = Eigen::VectorXi::Ones(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = 0.5 * rng.normal();
    const double x2 = 3.0 + 0.5 * rng.normal();
    const double yv = rng.uniform() < sigmoid(-1 + x1 + 0.5 * x2) ? 1.0 : 0.0;
    const double x3 = rng.uniform() < sigmoid(-1 + x1 + x2 - 1.5 * yv) ? 1.0 : 0.0;
    x.row(i) << x1, x2, x3;
    y(i, 0) = yv;
  }
  return Dataset(x, y, dl, {"x1", "x2", "x3"}, {"y"}, {2});
}

}  // namespace

TEST_CASE("logistic score function") {
  const EstimatingFunction g = logistic_fn();
  Vector x(3), y(1), th = Vector::Zero(4);
  x << 0, 0, 1;
  y << 0;
  const Vector v = g.eval(x, y, th);
  REQUIRE(v[0] == Catch::Approx(0.5).margin(1e-14));
  REQUIRE(v[1] == 0.0);
  REQUIRE(v[2] == 0.0);
  REQUIRE(v[3] == 0.0);

  Vector xbad(3);
  xbad << 0, 0, 0.5;
  REQUIRE_THROWS_AS(g.eval(xbad, y, th), DomainError);

  SECTION("full-data MELE equals the IRLS oracle") {
    const Dataset d = logistic_fixture(200, 77);
    const ELFit fit = el_full_data(d, g);
    Matrix S(200, 4);
    Vector resp(200);
    for (int i = 0; i < 200; ++i) {
      S(i, 0) = 1.0;
      S(i, 1) = d.x()(i, 0);
      S(i, 2) = d.x()(i, 1);
      S(i, 3) = d.y()(i, 0);
      resp[i] = d.x()(i, 2);
    }
    const Vector mle = oracles::irls_logistic(S, resp);
    for (int j = 0; j < 4; ++j) REQUIRE(fit.theta_hat[j] == Catch::Approx(mle[j]).margin(1e-6));
  }
}

TEST_CASE("jacobians match central finite differences", "[property]") {
  Rng rng(513);
  auto check = [&](const EstimatingFunction& g, const Vector& x, const Vector& y,
                   const std::function<Vector()>& draw_theta, int reps) {
    for (int t = 0; t < reps; ++t) {
      const Vector th = draw_theta();
      auto f = [&](const Vector& tt) { return g.eval(x, y, tt); };
      const Matrix fd = oracles::fd_jacobian(f, th);
      REQUIRE(oracles::rel_error(g.jac(x, y, th), fd) <= 1e-6);
    }
  };
  Vector x1(1), y1(1);
  x1 << 0.7;
  y1 << -0.4;
  check(mean_fn(1), x1, y1, [&] { return Vector(Vector::Constant(1, rng.normal())); }, 25);
  check(linreg_fn(), x1, y1, [&] {
    Vector t(2);
    t << rng.normal(), rng.normal();
    return t;
  }, 25);
  check(correlation_fn(), x1, y1, [&] {
    Vector t(5);
    t << rng.normal() * 0.5, rng.normal(), rng.normal(), 0.5 + rng.uniform() * 2.0,
        0.5 + rng.uniform() * 2.0;
    return t;
  }, 25);
  Vector x3(3), yb(1);
  x3 << 0.3, 2.7, 1.0;
  yb << 1.0;
  check(logistic_fn(), x3, yb, [&] {
    Vector t(4);
    for (int j = 0; j < 4; ++j) t[j] = rng.normal();
    return t;
  }, 25);
}

TEST_CASE("registry lookups and custom registration") {
  const Dataset d = make_xy({1, 2}, {3, 4}, {1, 1});
  REQUIRE(make_estimating_function("mean", d).name == "mean");
  REQUIRE(make_estimating_function("correlation", d).r == 5);
  REQUIRE(make_estimating_function("linreg", d).p == 2);
  REQUIRE_THROWS_AS(make_estimating_function("nope", d), ConfigError);
  REQUIRE_THROWS_AS(make_estimating_function("logistic", d), ValidationError);

  register_estimating_function("mean_twice", [](const Dataset& dd) { return mean_fn(dd.dy()); });
  REQUIRE(make_estimating_function("mean_twice", d).r == 1);
}
