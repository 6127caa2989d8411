#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/dataset.hpp"
#include "elmi/kernel_spec.hpp"

namespace elmi {

// ---------------------------------------------------------------------------
// Kernel conditional law at a target point: donor indices (complete rows in
// the matching binary stratum), raw kernel weights and the readjusted
// weights (negatives zeroed, rescaled to sum one).
// ---------------------------------------------------------------------------

struct ConditionalLaw {
  std::vector<int> donors;       // dataset row indices, all with delta = 1
  Vector raw_weights;            // kernel weights before readjustment
  Vector weights;                // nonnegative, sums to 1
  std::vector<int> stratum;      // binary X column values at the target
  bool pooled_fallback = false;  // stratum was empty, pooled across strata
  bool uniform_fallback = false; // weights degenerate, replaced by uniform
};

namespace detail {

inline std::vector<int> donors_in_stratum(const Dataset& d, const std::vector<int>& stratum) {
  std::vector<int> out;
  for (int i : d.complete_rows()) {
    bool match = true;
    const auto& bc = d.binary_x_cols();
    for (size_t b = 0; b < bc.size(); ++b) {
      if (static_cast<int>(d.x()(i, bc[b])) != stratum[b]) {
        match = false;
        break;
      }
    }
    if (match) out.push_back(i);
  }
  return out;
}

// Product kernel over continuous coordinates only, standardized per column.
inline double kernel_at(const Dataset& d, const KernelSpec& k, int donor_row,
                        const Eigen::Ref<const Vector>& xstar) {
  double w = 1.0;
  for (int c : d.continuous_x_cols()) {
    const double u = (d.x()(donor_row, c) - xstar[c]) / (k.bandwidth * d.x_scales()[c]);
    w *= kernel_weight_1d(k.order, u);
  }
  return w;
}

inline Vector readjust_weights(const Vector& raw) {
  Vector adj = raw.cwiseMax(0.0);
  const double s = adj.sum();
  if (s <= 0.0) throw DegenerateWeightsError("all kernel weights zero or negative at target point");
  adj /= s;
  return adj;
}

}  // namespace detail

// Strict form: throws NoDonorsError on an empty stratum and
// DegenerateWeightsError when every raw weight is <= 0.
inline ConditionalLaw conditional_law(const Dataset& d, const KernelSpec& k,
                                      const Eigen::Ref<const Vector>& xstar,
                                      const std::vector<int>& stratum) {
  k.validate();
  if (xstar.size() != d.dx()) throw ValidationError("conditional_law: target dimension mismatch");
  ConditionalLaw law;
  law.stratum = stratum;
  law.donors = detail::donors_in_stratum(d, stratum);
  if (law.donors.empty()) throw NoDonorsError("no donors in stratum");
  const int m = static_cast<int>(law.donors.size());
  law.raw_weights.resize(m);
  for (int l = 0; l < m; ++l) law.raw_weights[l] = detail::kernel_at(d, k, law.donors[l], xstar);
  law.weights = detail::readjust_weights(law.raw_weights);
  return law;
}

inline ConditionalLaw conditional_law(const Dataset& d, const KernelSpec& k,
                                      const Eigen::Ref<const Vector>& xstar) {
  return conditional_law(d, k, xstar, d.stratum_of_point(xstar));
}

// Fallback form used by imputation and plug-in estimation: an empty stratum
// pools across strata, degenerate weights fall back to uniform over donors.
// Both events are recorded on the law and in the warning log.
inline ConditionalLaw conditional_law_with_fallback(const Dataset& d, const KernelSpec& k,
                                                    const Eigen::Ref<const Vector>& xstar,
                                                    WarningLog* warnings = nullptr) {
  k.validate();
  ConditionalLaw law;
  law.stratum = d.stratum_of_point(xstar);
  law.donors = detail::donors_in_stratum(d, law.stratum);
  if (law.donors.empty()) {
    law.donors = d.complete_rows();
    law.pooled_fallback = true;
    warn(warnings, "empty_stratum_pooled");
  }
  const int m = static_cast<int>(law.donors.size());
  law.raw_weights.resize(m);
  for (int l = 0; l < m; ++l) law.raw_weights[l] = detail::kernel_at(d, k, law.donors[l], xstar);
  Vector adj = law.raw_weights.cwiseMax(0.0);
  const double s = adj.sum();
  if (s > 0.0) {
    law.weights = adj / s;
  } else {
    law.weights = Vector::Constant(m, 1.0 / m);
    law.uniform_fallback = true;
    warn(warnings, "degenerate_weights_uniform");
  }
  return law;
}

// F-hat(y | x*) = sum_l w_l I(Y_l <= y), componentwise indicator.
inline double conditional_cdf(const Dataset& d, const ConditionalLaw& law,
                              const Eigen::Ref<const Vector>& y) {
  if (y.size() != d.dy()) throw ValidationError("conditional_cdf: y dimension mismatch");
  double acc = 0.0;
  for (size_t l = 0; l < law.donors.size(); ++l) {
    const int row = law.donors[l];
    bool le = true;
    for (int c = 0; c < d.dy(); ++c) {
      if (d.y()(row, c) > y[c]) {
        le = false;
        break;
      }
    }
    if (le) acc += law.weights[static_cast<Eigen::Index>(l)];
  }
  return acc;
}

// Nadaraya-Watson conditional moment: integral of f(x*, y) against the
// estimated conditional law.
inline Vector nw_conditional_mean(const Dataset& d, const KernelSpec& k,
                                  const std::function<Vector(const Vector&, const Vector&)>& f,
                                  const Eigen::Ref<const Vector>& xstar,
                                  WarningLog* warnings = nullptr) {
  const ConditionalLaw law = conditional_law_with_fallback(d, k, xstar, warnings);
  const Vector xv = xstar;
  Vector acc;
  for (size_t l = 0; l < law.donors.size(); ++l) {
    const Vector fv = f(xv, d.y().row(law.donors[l]).transpose());
    if (acc.size() == 0)
      acc = law.weights[static_cast<Eigen::Index>(l)] * fv;
    else
      acc += law.weights[static_cast<Eigen::Index>(l)] * fv;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Kernel propensity estimate: NW regression of delta on X over all rows,
// clamped to [eps, 1].
// ---------------------------------------------------------------------------

inline constexpr double kPropensityFloor = 1e-3;

class PropensityEstimate {
 public:
  PropensityEstimate(const Dataset& d, KernelSpec k, double floor = kPropensityFloor)
      : data_(&d), kernel_(k), floor_(floor) {
    kernel_.validate();
    if (d.n() < 2) throw InsufficientDataError("estimate_propensity: need n >= 2");
    mean_delta_ = d.delta().cast<double>().mean();
  }

  double operator()(const Eigen::Ref<const Vector>& x) const {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < data_->n(); ++j) {
      const double w = detail::kernel_at(*data_, kernel_, j, x);
      num += w * data_->delta()[j];
      den += w;
    }
    double p = den != 0.0 ? num / den : mean_delta_;
    if (!std::isfinite(p)) p = mean_delta_;
    return std::clamp(p, floor_, 1.0);
  }

  double floor() const { return floor_; }

 private:
  const Dataset* data_;
  KernelSpec kernel_;
  double floor_;
  double mean_delta_;
};

inline PropensityEstimate estimate_propensity(const Dataset& d, const KernelSpec& k) {
  return PropensityEstimate(d, k);
}

// ---------------------------------------------------------------------------
// Cross-validation bandwidth selection on a 40-point log grid spanning
// [0.05, 5] x Silverman pilot scale (coordinates are standardized, so the
// pilot is dimension- and sample-size-driven only).
// ---------------------------------------------------------------------------

enum class CvTarget { CdfSmoothing, Propensity };

namespace detail {

inline std::vector<double> cv_grid(int n_ref, int d_cont) {
  const double silverman =
      std::pow(4.0 / (d_cont + 2.0), 1.0 / (d_cont + 4.0)) * std::pow(n_ref, -1.0 / (d_cont + 4.0));
  std::vector<double> grid(40);
  const double lo = std::log(0.05 * silverman), hi = std::log(5.0 * silverman);
  for (int i = 0; i < 40; ++i) grid[static_cast<size_t>(i)] = std::exp(lo + (hi - lo) * i / 39.0);
  return grid;
}

// Integral over y of {I(a <= y) - sum_j w_j I(v_j <= y)}^2 for a scalar
// component; exact piecewise evaluation over the pooled breakpoints.
inline double cdf_cv_integral(double a, std::vector<std::pair<double, double>>& donors) {
  donors.emplace_back(a, 0.0);  // breakpoint only
  std::sort(donors.begin(), donors.end(),
            [](const auto& p, const auto& q) { return p.first < q.first; });
  double acc = 0.0;   // running F-hat
  double total = 0.0;
  for (size_t k = 0; k + 1 < donors.size(); ++k) {
    acc += donors[k].second;
    const double ind = donors[k].first >= a ? 1.0 : 0.0;
    const double diff = ind - acc;
    total += diff * diff * (donors[k + 1].first - donors[k].first);
  }
  return total;
}

}  // namespace detail

// Leave-one-out CV score at a single bandwidth. Exposed so tests can verify
// the argmin property directly.
inline double cv_score(const Dataset& d, CvTarget target, const KernelSpec& k) {
  if (target == CvTarget::CdfSmoothing) {
    // Bowman-Hall-Prvan criterion for distribution functions, on complete
    // cases, averaged over Y components; leave-one-out within the stratum.
    const auto& comp = d.complete_rows();
    double total = 0.0;
    int used = 0;
    std::vector<std::pair<double, double>> donors;
    for (int i : comp) {
      const auto stratum = d.stratum_of_row(i);
      const auto in_stratum = detail::donors_in_stratum(d, stratum);
      std::vector<int> loo;
      for (int j : in_stratum)
        if (j != i) loo.push_back(j);
      if (loo.empty()) continue;
      Vector raw(static_cast<Eigen::Index>(loo.size()));
      for (size_t l = 0; l < loo.size(); ++l)
        raw[static_cast<Eigen::Index>(l)] = detail::kernel_at(d, k, loo[l], d.x().row(i).transpose());
      Vector w = raw.cwiseMax(0.0);
      const double s = w.sum();
      if (s > 0.0)
        w /= s;
      else
        w = Vector::Constant(raw.size(), 1.0 / static_cast<double>(raw.size()));
      double row_score = 0.0;
      for (int c = 0; c < d.dy(); ++c) {
        donors.clear();
        for (size_t l = 0; l < loo.size(); ++l)
          donors.emplace_back(d.y()(loo[l], c), w[static_cast<Eigen::Index>(l)]);
        row_score += detail::cdf_cv_integral(d.y()(i, c), donors);
      }
      total += row_score / d.dy();
      ++used;
    }
    if (used == 0) throw InsufficientDataError("cv_score: no usable leave-one-out rows");
    return total / used;
  }
  // Propensity: leave-one-out squared-error CV of the NW regression of delta
  // on X over all rows.
  double total = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < d.n(); ++j) {
      if (j == i) continue;
      const double w = detail::kernel_at(d, k, j, d.x().row(i).transpose());
      num += w * d.delta()[j];
      den += w;
    }
    double fit = den != 0.0 ? num / den : d.delta().cast<double>().mean();
    if (!std::isfinite(fit)) fit = d.delta().cast<double>().mean();
    const double r = d.delta()[i] - fit;
    total += r * r;
  }
  return total / d.n();
}

inline double cv_bandwidth(const Dataset& d, CvTarget target, int order = 2,
                           WarningLog* warnings = nullptr) {
  const int n_ref = target == CvTarget::CdfSmoothing ? d.n_complete() : d.n();
  if (n_ref < 10)
    throw InsufficientDataError("cv_bandwidth: need at least 10 " +
                                std::string(target == CvTarget::CdfSmoothing ? "complete rows" : "rows"));
  const int d_cont = std::max<int>(1, static_cast<int>(d.continuous_x_cols().size()));
  const auto grid = detail::cv_grid(n_ref, d_cont);
  std::vector<double> scores(grid.size());
  for (size_t gi = 0; gi < grid.size(); ++gi)
    scores[gi] = cv_score(d, target, KernelSpec{order, grid[gi]});
  const auto mn = std::min_element(scores.begin(), scores.end());
  const auto mx = std::max_element(scores.begin(), scores.end());
  if (*mx - *mn <= 1e-12 * (std::fabs(*mx) + 1e-12)) {
    warn(warnings, "cv_flat_criterion");
    return grid[grid.size() / 2];
  }
  return grid[static_cast<size_t>(mn - scores.begin())];
}

// Bandwidth rule applied on top of cross-validation. The default halves the
// CV bandwidth from a second-order kernel; the alternative runs CV with the
// (higher-order) kernel itself and keeps the minimizer.
enum class BandwidthRule { HalvedCv, HighOrderCv };

inline double auto_bandwidth(const Dataset& d, CvTarget target, int order,
                             BandwidthRule rule = BandwidthRule::HalvedCv,
                             WarningLog* warnings = nullptr) {
  if (rule == BandwidthRule::HighOrderCv) return cv_bandwidth(d, target, order, warnings);
  return halved_bandwidth(cv_bandwidth(d, target, 2, warnings));
}

}  // namespace elmi
