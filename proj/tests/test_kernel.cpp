#include <catch2/catch_amalgamated.hpp>

#include "elmi/kernel.hpp"
#include "elmi/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace elmi;
using testutil::make_xy;

TEST_CASE("kernel point values") {
  KernelSpec k2{2, 1.0};
  Vector u1(1);
  u1 << 0.0;
  REQUIRE(kernel_weight(k2, u1) == Catch::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
  Vector u2(2);
  u2 << 0.0, 0.0;
  REQUIRE(kernel_weight(k2, u2) == Catch::Approx(1.0 / (2.0 * M_PI)).epsilon(1e-12));
  REQUIRE_THROWS_AS(kernel_weight(KernelSpec{3, 1.0}, u1), ValidationError);
}

TEST_CASE("higher-order kernels satisfy the moment conditions by quadrature") {
  for (int q : {2, 4, 6}) {
    auto mom = [&](int l) {
      return oracles::simpson(
          [&](double u) { return std::pow(u, l) * kernel_weight_1d(q, u); }, -10.0, 10.0, 20000);
    };
    REQUIRE(mom(0) == Catch::Approx(1.0).margin(1e-6));
    for (int l = 1; l < q; ++l) REQUIRE(mom(l) == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(std::fabs(mom(q)) > 1e-3);
  }
}

namespace {

// Direct-summation oracle for the donor weights, mirroring the standardized
// product-kernel convention.
Vector direct_weights(const Dataset& d, const KernelSpec& k, double xstar) {
  std::vector<double> raw;
  for (int i : d.complete_rows()) {
    double w = 1.0;
    for (int c : d.continuous_x_cols())
      w *= kernel_weight_1d(k.order, (d.x()(i, c) - xstar) / (k.bandwidth * d.x_scales()[c]));
    raw.push_back(w);
  }
  Vector v(static_cast<Eigen::Index>(raw.size()));
  double s = 0;
  for (size_t i = 0; i < raw.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = std::max(raw[i], 0.0);
    s += std::max(raw[i], 0.0);
  }
  return Vector(v / s);
}

}  // namespace

TEST_CASE("conditional law weights match the direct-summation oracle") {
  const Dataset d = make_xy({0, 1, 2}, {1, 2, 3}, {1, 1, 1});
  const KernelSpec k{2, 1.0};
  Vector x0(1);
  x0 << 0.0;
  const ConditionalLaw law = conditional_law(d, k, x0);
  const Vector expect = direct_weights(d, k, 0.0);
  REQUIRE(law.weights.size() == 3);
  for (int l = 0; l < 3; ++l) REQUIRE(law.weights[l] == Catch::Approx(expect[l]).margin(1e-12));
  REQUIRE(law.weights.sum() == Catch::Approx(1.0).margin(1e-12));
  // weights decay with distance from the target
  REQUIRE(law.weights[0] > law.weights[1]);
  REQUIRE(law.weights[1] > law.weights[2]);
}

TEST_CASE("a fixture with unit standardized spacing reproduces the phi pattern") {
  // donors at 0, 1, 2 plus a missing row placed so the x standard deviation
  // is exactly 1; the weights at x* = 0 are then proportional to
  // phi(0), phi(1), phi(2)
  const double x4 = 1.0 + std::sqrt(96.0) / 6.0;
  const Dataset d = make_xy({0, 1, 2, x4}, {1, 2, 3, 0}, {1, 1, 1, 0});
  REQUIRE(d.x_scales()[0] == Catch::Approx(1.0).margin(1e-12));
  Vector x0(1);
  x0 << 0.0;
  const ConditionalLaw law = conditional_law(d, KernelSpec{2, 1.0}, x0);
  const double phi0 = kernel_weight_1d(2, 0), phi1 = kernel_weight_1d(2, 1), phi2 = kernel_weight_1d(2, 2);
  const double s = phi0 + phi1 + phi2;
  REQUIRE(law.weights[0] == Catch::Approx(phi0 / s).margin(1e-12));
  REQUIRE(law.weights[1] == Catch::Approx(phi1 / s).margin(1e-12));
  REQUIRE(law.weights[2] == Catch::Approx(phi2 / s).margin(1e-12));
}

TEST_CASE("conditional law degenerate and trivial cases") {
  SECTION("single donor is a one-point law") {
    const Dataset d = make_xy({0, 5}, {3.5, 0}, {1, 0});
    Vector x0(1);
    x0 << 5.0;
    const ConditionalLaw law = conditional_law(d, KernelSpec{2, 1.0}, x0);
    REQUIRE(law.donors == std::vector<int>{0});
    REQUIRE(law.weights[0] == 1.0);
    Vector ylo(1), yhi(1);
    ylo << 3.4;
    yhi << 3.5;
    REQUIRE(conditional_cdf(d, law, ylo) == 0.0);
    REQUIRE(conditional_cdf(d, law, yhi) == 1.0);
  }
  SECTION("identical donor x gives uniform weights") {
    const Dataset d = make_xy({1, 1, 1, 1}, {1, 2, 3, 4}, {1, 1, 1, 1});
    Vector x0(1);
    x0 << 1.0;
    const ConditionalLaw law = conditional_law(d, KernelSpec{2, 0.7}, x0);
    for (int l = 0; l < 4; ++l) REQUIRE(law.weights[l] == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("far target underflows to the degenerate-weights error") {
    const Dataset d = make_xy({0.0, 0.01, 4000.0}, {1, 2, 0}, {1, 1, 0});
    Vector far(1);
    far << 4000.0;
    REQUIRE_THROWS_AS(conditional_law(d, KernelSpec{2, 0.001}, far), DegenerateWeightsError);
    WarningLog wl;
    const ConditionalLaw law = conditional_law_with_fallback(d, KernelSpec{2, 0.001}, far, &wl);
    REQUIRE(law.uniform_fallback);
    REQUIRE(law.weights[0] == Catch::Approx(0.5));
    REQUIRE(wl.count("degenerate_weights_uniform") == 1);
  }
}

TEST_CASE("binary strata select donors exactly and pool on empty strata") {
  Matrix x(5, 2), y(5, 1);
  // continuous, binary
  x << 0.0, 0, 0.5, 0, 1.0, 1, 1.5, 1, 2.0, 1;
  y << 10, 20, 30, 40, 50;
  Eigen::VectorXi d(5);
  d << 1, 1, 1, 1, 0;
  const Dataset data = Dataset(x, y, d, {"xc", "xb"}, {"y"}, {1});
  const KernelSpec k{2, 1.0};

  Vector q(2);
  q << 1.0, 1.0;
  const ConditionalLaw law = conditional_law(data, k, q);
  REQUIRE(law.donors == std::vector<int>{2, 3});

  Vector q0(2);
  q0 << 1.0, 0.0;
  const ConditionalLaw law0 = conditional_law(data, k, q0);
  REQUIRE(law0.donors == std::vector<int>{0, 1});

  // a stratum with no donors: make all donors carry flag 0
  Eigen::VectorXi d2(5);
  d2 << 1, 1, 0, 0, 0;
  const Dataset data2 = Dataset(x, y, d2, {"xc", "xb"}, {"y"}, {1});
  REQUIRE_THROWS_AS(conditional_law(data2, k, q), NoDonorsError);
  WarningLog wl;
  const ConditionalLaw pooled = conditional_law_with_fallback(data2, k, q, &wl);
  REQUIRE(pooled.pooled_fallback);
  REQUIRE(pooled.donors == std::vector<int>{0, 1});
  REQUIRE(wl.count("empty_stratum_pooled") == 1);
}

TEST_CASE("conditional cdf totals, counting and monotonicity") {
  const Dataset d = make_xy({1, 1, 1}, {1, 2, 3}, {1, 1, 1});
  Vector x0(1);
  x0 << 1.0;
  const ConditionalLaw law = conditional_law(d, KernelSpec{2, 1.0}, x0);
  Vector y(1);
  y << std::numeric_limits<double>::infinity();
  REQUIRE(conditional_cdf(d, law, y) == 1.0);
  y << 0.0;
  REQUIRE(conditional_cdf(d, law, y) == 0.0);
  y << 2.0;
  REQUIRE(conditional_cdf(d, law, y) == Catch::Approx(2.0 / 3.0).margin(1e-12));

  SECTION("monotone nondecreasing, right-continuous steps") {
    double prev = -1.0;
    for (double yy = 0.0; yy <= 4.0; yy += 0.125) {
      Vector yv(1);
      yv << yy;
      const double f = conditional_cdf(d, law, yv);
      REQUIRE(f >= prev);
      prev = f;
    }
    Vector at(1), just_below(1);
    at << 2.0;
    just_below << 2.0 - 1e-12;
    REQUIRE(conditional_cdf(d, law, at) > conditional_cdf(d, law, just_below));
  }
}

TEST_CASE("nadaraya-watson conditional moments") {
  const Dataset d = make_xy({0, 1, 2}, {1, 2, 3}, {1, 1, 1});
  const KernelSpec k{2, 1.0};
  Vector x0(1);
  x0 << 0.0;
  auto one = [](const Vector&, const Vector&) {
    Vector v(1);
    v << 1.0;
    return v;
  };
  REQUIRE(nw_conditional_mean(d, k, one, x0)[0] == Catch::Approx(1.0).margin(1e-12));

  auto yfun = [](const Vector&, const Vector& y) { return Vector(y); };
  const Vector w = direct_weights(d, k, 0.0);
  const double expect = w[0] * 1 + w[1] * 2 + w[2] * 3;
  REQUIRE(nw_conditional_mean(d, k, yfun, x0)[0] == Catch::Approx(expect).margin(1e-12));

  const Dataset single = make_xy({0, 4}, {3.7, 0}, {1, 0});
  Vector x4(1);
  x4 << 4.0;
  REQUIRE(nw_conditional_mean(single, KernelSpec{2, 1.0}, yfun, x4)[0] == Catch::Approx(3.7).margin(1e-12));
}

TEST_CASE("propensity estimation") {
  SECTION("all observed gives one") {
    const Dataset d = make_xy({0, 1, 2}, {1, 2, 3}, {1, 1, 1});
    const PropensityEstimate p = estimate_propensity(d, KernelSpec{2, 1.0});
    Vector x0(1);
    x0 << 1.0;
    REQUIRE(p(x0) == 1.0);
  }
  SECTION("constant x averages delta") {
    const Dataset d = make_xy({2, 2, 2, 2}, {1, 2, 3, 4}, {1, 1, 0, 0});
    const PropensityEstimate p = estimate_propensity(d, KernelSpec{2, 1.0});
    Vector x0(1);
    x0 << 2.0;
    REQUIRE(p(x0) == Catch::Approx(0.5).margin(1e-12));
    Vector far(1);
    far << 37.0;
    REQUIRE(p(far) == Catch::Approx(0.5).margin(1e-12));  // falls back to the mean
  }
  SECTION("clamped to the floor") {
    // near x = 10 every local row has delta = 0, so the NW fit clamps
    const Dataset d = make_xy({0, 0.2, 10.0, 10.2}, {1, 2, 3, 4}, {1, 1, 0, 0});
    const PropensityEstimate p = estimate_propensity(d, KernelSpec{2, 0.05});
    Vector x0(1);
    x0 << 10.1;
    REQUIRE(p(x0) == Catch::Approx(kPropensityFloor));
  }
}

TEST_CASE("mechanism-b style propensity recovers the constant rate", "[slow]") {
  // MCAR at rate 0.65: the NW estimate averaged over the sample should sit
  // near 0.65 at n = 1000
  Rng rng(123);
  const int n = 1000;
  Matrix x(n, 1), y(n, 1);
  Eigen::VectorXi dl(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    y(i, 0) = rng.normal();
    dl[i] = rng.uniform() < 0.65 ? 1 : 0;
  }
  const Dataset d = Dataset::from_arrays(x, y, dl);
  const double h = cv_bandwidth(d, CvTarget::Propensity);
  const PropensityEstimate p = estimate_propensity(d, KernelSpec{2, h});
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += p(d.x().row(i).transpose());
  mean /= n;
  REQUIRE(mean == Catch::Approx(0.65).margin(0.05));
}

TEST_CASE("bandwidth rules") {
  REQUIRE(halved_bandwidth(1.0) == 0.5);
  REQUIRE(halved_bandwidth(1.5) == 0.75);
  REQUIRE(halved_bandwidth(1.8) == Catch::Approx(0.9).margin(1e-15));
  REQUIRE_THROWS_AS(halved_bandwidth(0.0), ValidationError);
}

TEST_CASE("cross-validation bandwidth selection") {
  SECTION("insufficient data errors") {
    const Dataset d = make_xy({0, 1, 2}, {1, 2, 3}, {1, 1, 0});
    REQUIRE_THROWS_AS(cv_bandwidth(d, CvTarget::CdfSmoothing), InsufficientDataError);
    REQUIRE_THROWS_AS(cv_bandwidth(d, CvTarget::Propensity), InsufficientDataError);
  }
  SECTION("returned bandwidth minimizes the cv score over the grid") {
    Rng rng(5);
    const int n = 60;
    std::vector<double> xs, ys;
    std::vector<int> dl;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      xs.push_back(x);
      ys.push_back(x + 0.3 * rng.normal());
      dl.push_back(rng.uniform() < 0.7 ? 1 : 0);
    }
    dl[0] = 1;
    const Dataset d = make_xy(xs, ys, dl);
    for (CvTarget target : {CvTarget::CdfSmoothing, CvTarget::Propensity}) {
      const double h = cv_bandwidth(d, target);
      const double score_h = cv_score(d, target, KernelSpec{2, h});
      const int n_ref = target == CvTarget::CdfSmoothing ? d.n_complete() : d.n();
      for (double g : detail::cv_grid(n_ref, 1))
        REQUIRE(score_h <= cv_score(d, target, KernelSpec{2, g}) + 1e-12);
    }
  }
  SECTION("duplicating the data does not increase the bandwidth") {
    Rng rng(11);
    std::vector<double> xs, ys;
    std::vector<int> dl;
    for (int i = 0; i < 40; ++i) {
      const double x = rng.normal();
      xs.push_back(x);
      ys.push_back(0.5 * x + 0.4 * rng.normal());
      dl.push_back(1);
    }
    const Dataset d = make_xy(xs, ys, dl);
    std::vector<double> xs2 = xs, ys2 = ys;
    std::vector<int> dl2 = dl;
    xs2.insert(xs2.end(), xs.begin(), xs.end());
    ys2.insert(ys2.end(), ys.begin(), ys.end());
    dl2.insert(dl2.end(), dl.begin(), dl.end());
    const Dataset d2 = make_xy(xs2, ys2, dl2);
    const double h1 = cv_bandwidth(d, CvTarget::CdfSmoothing);
    const double h2 = cv_bandwidth(d2, CvTarget::CdfSmoothing);
    REQUIRE(h2 <= h1 + 1e-12);
  }
  SECTION("flat criterion returns the grid midpoint with a warning") {
    // identical y for all donors makes the cdf criterion constant in h
    const Dataset d = make_xy({0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5, 5.5},
                              {2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2},
                              {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    WarningLog wl;
    const double h = cv_bandwidth(d, CvTarget::CdfSmoothing, 2, &wl);
    REQUIRE(wl.count("cv_flat_criterion") == 1);
    const auto grid = detail::cv_grid(d.n_complete(), 1);
    REQUIRE(h == grid[grid.size() / 2]);
  }
}

TEST_CASE("second-order kernels never need readjustment", "[property]") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> xs, ys;
    std::vector<int> dl;
    for (int i = 0; i < 15; ++i) {
      xs.push_back(rng.normal() * 2.0);
      ys.push_back(rng.normal());
      dl.push_back(i < 10 ? 1 : 0);
    }
    const Dataset d = make_xy(xs, ys, dl);
    Vector x0(1);
    x0 << rng.normal();
    const ConditionalLaw law = conditional_law(d, KernelSpec{2, 0.8}, x0);
    const double s = law.raw_weights.sum();
    for (Eigen::Index l = 0; l < law.weights.size(); ++l) {
      REQUIRE(law.raw_weights[l] >= 0.0);
      REQUIRE(law.weights[l] == Catch::Approx(law.raw_weights[l] / s).margin(1e-14));
    }
  }
}
