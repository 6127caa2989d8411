#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace elmi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Error hierarchy. Input/validation errors map to CLI exit code 2, numeric
// failures to exit code 3.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// exit code 2 family
class ValidationError : public Error {
 public:
  using Error::Error;
};
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// exit code 3 family
class NumericError : public Error {
 public:
  using Error::Error;
};
class NoDonorsError : public NumericError {
 public:
  using NumericError::NumericError;
};
class DegenerateWeightsError : public NumericError {
 public:
  using NumericError::NumericError;
};
class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};
class EvaluationError : public NumericError {
 public:
  using NumericError::NumericError;
};
class NonConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};
class ConditioningError : public NumericError {
 public:
  using NumericError::NumericError;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) != nullptr) return 2;
  return 3;
}

// ---------------------------------------------------------------------------
// Warning accumulation. Warnings are non-fatal; callers that care pass a log,
// everything else passes nullptr. EL_MISSING_LOG >= 1 echoes to stderr.
// ---------------------------------------------------------------------------

inline int log_verbosity() {
  static const int level = [] {
    const char* v = std::getenv("EL_MISSING_LOG");
    return v != nullptr ? std::atoi(v) : 0;
  }();
  return level;
}

class WarningLog {
 public:
  void add(const std::string& key, const std::string& detail = {}) {
    std::lock_guard<std::mutex> lock(mu_);
    counts_[key] += 1;
    if (!detail.empty() && details_.size() < 1000) details_.emplace_back(key, detail);
  }
  int count(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }
  int total() const {
    std::lock_guard<std::mutex> lock(mu_);
    int t = 0;
    for (const auto& kv : counts_) t += kv.second;
    return t;
  }
  std::map<std::string, int> counts() const {
    std::lock_guard<std::mutex> lock(mu_);
    return counts_;
  }
  void merge(const WarningLog& other) {
    auto oc = other.counts();
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& kv : oc) counts_[kv.first] += kv.second;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, int> counts_;
  std::vector<std::pair<std::string, std::string>> details_;
};

void warn(WarningLog* log, const std::string& key, const std::string& detail = {});

inline void warn(WarningLog* log, const std::string& key, const std::string& detail) {
  if (log != nullptr) log->add(key, detail);
  if (log_verbosity() >= 1) {
    std::string line = "[elmi] warning: " + key;
    if (!detail.empty()) line += " (" + detail + ")";
    line += "\n";
    std::fputs(line.c_str(), stderr);
  }
}

// ---------------------------------------------------------------------------
// Deterministic task parallelism: tasks write to preallocated slots indexed by
// task id, so results are independent of worker count and scheduling.
// ---------------------------------------------------------------------------

inline void parallel_for(int n_tasks, int jobs, const std::function<void(int)>& body) {
  if (n_tasks <= 0) return;
  if (jobs < 1) jobs = 1;
  const int workers = std::min(jobs, n_tasks);
  if (workers == 1) {
    for (int i = 0; i < n_tasks; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_tasks) break;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace elmi
