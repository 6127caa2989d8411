#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/dataset.hpp"
#include "elmi/estimating_functions.hpp"
#include "elmi/kernel.hpp"
#include "elmi/rng.hpp"

namespace elmi {

// ---------------------------------------------------------------------------
// ExtendedSample: the dataset plus, for every missing row, kappa donor row
// indices drawn once from the estimated conditional law. Draws are stored by
// index so imputed Y values are exactly donor values, and all downstream
// evaluations at any theta reuse the same draws.
// ---------------------------------------------------------------------------

struct ExtendedSample {
  Dataset data;
  int kappa = 0;
  KernelSpec kernel;
  std::uint64_t rng_seed = 0;
  // draws[j] holds the kappa donor row indices for missing_rows()[j]
  std::vector<std::vector<int>> draws;
  int pooled_fallbacks = 0;
  int uniform_fallbacks = 0;

  const Dataset& d() const { return data; }

  const std::vector<int>& draws_for_row(int row) const {
    const auto& mr = data.missing_rows();
    for (size_t j = 0; j < mr.size(); ++j)
      if (mr[j] == row) return draws[j];
    throw ValidationError("draws_for_row: row " + std::to_string(row) + " is not a missing row");
  }
};

// Builds an ExtendedSample without imputation (all rows complete, or callers
// that only need full-data EL machinery).
inline ExtendedSample extended_from_complete(const Dataset& d) {
  if (!d.missing_rows().empty())
    throw ValidationError("extended_from_complete: dataset has missing rows");
  return ExtendedSample{d, 1, KernelSpec{}, 0, {}, 0, 0};
}

// kappa independent categorical draws per missing row, with per-row RNG
// substreams hash(seed, row) so results do not depend on evaluation order or
// worker count.
inline ExtendedSample impute(const Dataset& d, const KernelSpec& k, int kappa, std::uint64_t seed,
                             WarningLog* warnings = nullptr) {
  k.validate();
  if (kappa < 1) throw ValidationError("impute: kappa must be >= 1");
  ExtendedSample es{d, kappa, k, seed, {}, 0, 0};
  const auto& missing = d.missing_rows();
  es.draws.resize(missing.size());
  for (size_t j = 0; j < missing.size(); ++j) {
    const int i = missing[j];
    const ConditionalLaw law =
        conditional_law_with_fallback(d, k, d.x().row(i).transpose(), warnings);
    if (law.pooled_fallback) ++es.pooled_fallbacks;
    if (law.uniform_fallback) ++es.uniform_fallbacks;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto& row_draws = es.draws[j];
    row_draws.resize(static_cast<size_t>(kappa));
    for (int v = 0; v < kappa; ++v) row_draws[static_cast<size_t>(v)] = law.donors[rng.categorical(law.weights)];
  }
  return es;
}

// ---------------------------------------------------------------------------
// Imputed estimating functions, Eq.-style averaging: complete rows evaluate
// g directly, missing rows average g over the kappa stored donors.
// ---------------------------------------------------------------------------

inline Matrix imputed_estfun(const ExtendedSample& es, const EstimatingFunction& g,
                             const Eigen::Ref<const Vector>& theta) {
  const Dataset& d = es.data;
  Matrix G(d.n(), g.r);
  Vector buf(g.r), acc(g.r);
  for (int i = 0; i < d.n(); ++i) {
    if (d.delta()[i] == 1) {
      g.eval_into(d.x().row(i).transpose(), d.y().row(i).transpose(), theta, buf);
      G.row(i) = buf;
    }
  }
  for (size_t j = 0; j < d.missing_rows().size(); ++j) {
    const int i = d.missing_rows()[j];
    acc.setZero();
    for (int donor : es.draws[j]) {
      g.eval_into(d.x().row(i).transpose(), d.y().row(donor).transpose(), theta, buf);
      acc += buf;
    }
    G.row(i) = acc / static_cast<double>(es.draws[j].size());
  }
  if (!G.allFinite()) {
    for (int i = 0; i < d.n(); ++i)
      if (!G.row(i).allFinite())
        throw EvaluationError("imputed_estfun: non-finite g at row " + std::to_string(i));
  }
  return G;
}

// Same averaging applied to the Jacobian; returns an n-vector of r x p blocks.
inline std::vector<Matrix> imputed_estfun_jacobian(const ExtendedSample& es,
                                                   const EstimatingFunction& g,
                                                   const Eigen::Ref<const Vector>& theta) {
  const Dataset& d = es.data;
  std::vector<Matrix> J(static_cast<size_t>(d.n()));
  Matrix buf(g.r, g.p);
  for (int i = 0; i < d.n(); ++i) {
    if (d.delta()[i] == 1) {
      g.jac_into(d.x().row(i).transpose(), d.y().row(i).transpose(), theta, buf);
      J[static_cast<size_t>(i)] = buf;
    }
  }
  for (size_t j = 0; j < d.missing_rows().size(); ++j) {
    const int i = d.missing_rows()[j];
    Matrix acc = Matrix::Zero(g.r, g.p);
    for (int donor : es.draws[j]) {
      g.jac_into(d.x().row(i).transpose(), d.y().row(donor).transpose(), theta, buf);
      acc += buf;
    }
    J[static_cast<size_t>(i)] = acc / static_cast<double>(es.draws[j].size());
  }
  for (int i = 0; i < d.n(); ++i)
    if (!J[static_cast<size_t>(i)].allFinite())
      throw EvaluationError("imputed_estfun_jacobian: non-finite value at row " + std::to_string(i));
  return J;
}

// Mean over rows of the imputed Jacobians (the Q_n2 building block).
inline Matrix imputed_estfun_jacobian_mean(const ExtendedSample& es, const EstimatingFunction& g,
                                           const Eigen::Ref<const Vector>& theta) {
  const auto J = imputed_estfun_jacobian(es, g, theta);
  Matrix acc = Matrix::Zero(g.r, g.p);
  for (const auto& Ji : J) acc += Ji;
  return acc / static_cast<double>(J.size());
}

// ---------------------------------------------------------------------------
// Plain-text extended-sample file: key=value header plus one donor index
// list per missing row. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline void save_extended_sample(const std::string& path, const ExtendedSample& es,
                                 const std::string& base_csv, const std::string& columns_path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", es.kernel.bandwidth);
  out << "elmi_extended_sample_v1\n";
  out << "base_csv=" << base_csv << "\n";
  out << "columns=" << columns_path << "\n";
  out << "n=" << es.data.n() << "\n";
  out << "n_complete=" << es.data.n_complete() << "\n";
  out << "kappa=" << es.kappa << "\n";
  out << "seed=" << es.rng_seed << "\n";
  out << "kernel_order=" << es.kernel.order << "\n";
  out << "bandwidth=" << buf << "\n";
  const auto& mr = es.data.missing_rows();
  for (size_t j = 0; j < mr.size(); ++j) {
    out << "draws_row_" << mr[j] << "=";
    for (size_t v = 0; v < es.draws[j].size(); ++v) out << (v ? " " : "") << es.draws[j][v];
    out << "\n";
  }
}

inline ExtendedSample load_extended_sample(const std::string& path, WarningLog* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open extended-sample file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "elmi_extended_sample_v1")
    throw ParseError(path + ": bad magic line, expected elmi_extended_sample_v1");
  std::map<std::string, std::string> kv;
  std::vector<std::pair<int, std::vector<int>>> draw_lines;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path + ": expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key.rfind("draws_row_", 0) == 0) {
      const int row = std::stoi(key.substr(10));
      std::vector<int> idx;
      std::istringstream ss(val);
      int v;
      while (ss >> v) idx.push_back(v);
      draw_lines.emplace_back(row, std::move(idx));
    } else {
      kv[key] = val;
    }
  }
  for (const char* req : {"base_csv", "columns", "n", "kappa", "seed", "kernel_order", "bandwidth"})
    if (kv.find(req) == kv.end()) throw ParseError(path + ": missing key '" + std::string(req) + "'");

  const ColumnConfig cfg = load_column_config(kv["columns"]);
  Dataset d = load_csv(kv["base_csv"], cfg, warnings);
  if (d.n() != std::stoi(kv["n"]))
    throw ValidationError(path + ": base csv has " + std::to_string(d.n()) + " rows, file recorded " + kv["n"]);

  ExtendedSample es{std::move(d), std::stoi(kv["kappa"]),
                    KernelSpec{std::stoi(kv["kernel_order"]), std::strtod(kv["bandwidth"].c_str(), nullptr)},
                    std::stoull(kv["seed"]), {}, 0, 0};
  const auto& mr = es.data.missing_rows();
  es.draws.resize(mr.size());
  if (draw_lines.size() != mr.size())
    throw ValidationError(path + ": file has " + std::to_string(draw_lines.size()) +
                          " draw lines but dataset has " + std::to_string(mr.size()) + " missing rows");
  for (const auto& [row, idx] : draw_lines) {
    bool placed = false;
    for (size_t j = 0; j < mr.size(); ++j) {
      if (mr[j] == row) {
        if (static_cast<int>(idx.size()) != es.kappa)
          throw ValidationError(path + ": draw list for row " + std::to_string(row) +
                                " has wrong length");
        for (int donor : idx)
          if (donor < 0 || donor >= es.data.n() || es.data.delta()[donor] != 1)
            throw ValidationError(path + ": donor index " + std::to_string(donor) +
                                  " is not a complete row");
        es.draws[j] = idx;
        placed = true;
        break;
      }
    }
    if (!placed)
      throw ValidationError(path + ": draws_row_" + std::to_string(row) +
                            " does not match a missing row");
  }
  return es;
}

}  // namespace elmi
