#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cipherpipe {

/// Base class for every error raised by the library. The stage tag names the
/// pipeline step that failed ("segment", "cluster", ...) so the CLI can report
/// it without parsing messages.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, std::string stage = {})
      : std::runtime_error(what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Raised when an EM loop observes its objective going down by more than the
/// allowed relative tolerance. Indicates a bug, not bad input.
class EmMonotonicityError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a stream index
/// (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Objective trace of one EM run. `record` throws EmMonotonicityError when the
/// new value drops below the previous one by more than `rel_tol` relative.
class EmTrace {
 public:
  explicit EmTrace(std::string label = {}, double rel_tol = 1e-9)
      : label_(std::move(label)), rel_tol_(rel_tol) {}

  void record(double objective);

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t iterations() const noexcept { return values_.size(); }
  double last() const;
  bool monotone() const;
  const std::string& label() const noexcept { return label_; }

  /// Relative improvement of the most recent step, or +inf with < 2 values.
  double last_relative_gain() const;

 private:
  std::string label_;
  double rel_tol_;
  std::vector<double> values_;
};

/// Process-wide tally of EM runs, read by the acceptance suite to confirm
/// that every loop it triggered stayed monotone.
struct EmAudit {
  std::uint64_t runs = 0;
  std::uint64_t iterations = 0;
  std::uint64_t violations = 0;
};
EmAudit em_audit();
void reset_em_audit();

double log_sum_exp(const double* values, std::size_t n);

}  // namespace cipherpipe
