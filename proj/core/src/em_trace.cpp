#include "cipherpipe/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace cipherpipe {
namespace {

std::atomic<std::uint64_t> g_runs{0};
std::atomic<std::uint64_t> g_iterations{0};
std::atomic<std::uint64_t> g_violations{0};

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void EmTrace::record(double objective) {
  if (values_.empty()) {
    g_runs.fetch_add(1, std::memory_order_relaxed);
  } else {
    g_iterations.fetch_add(1, std::memory_order_relaxed);
    const double prev = values_.back();
    const double slack = rel_tol_ * std::max(1.0, std::abs(prev));
    if (objective < prev - slack) {
      g_violations.fetch_add(1, std::memory_order_relaxed);
      values_.push_back(objective);
      std::ostringstream msg;
      msg.precision(17);
      msg << "EM objective decreased in " << (label_.empty() ? "EM" : label_)
          << " at iteration " << values_.size() - 1 << ": " << prev << " -> "
          << objective;
      throw EmMonotonicityError(msg.str(), label_);
    }
  }
  values_.push_back(objective);
}

double EmTrace::last() const {
  return values_.empty() ? -std::numeric_limits<double>::infinity()
                         : values_.back();
}

bool EmTrace::monotone() const {
  for (std::size_t i = 1; i < values_.size(); ++i) {
    const double slack = rel_tol_ * std::max(1.0, std::abs(values_[i - 1]));
    if (values_[i] < values_[i - 1] - slack) return false;
  }
  return true;
}

double EmTrace::last_relative_gain() const {
  if (values_.size() < 2) return std::numeric_limits<double>::infinity();
  const double prev = values_[values_.size() - 2];
  const double cur = values_.back();
  return (cur - prev) / std::max(1.0, std::abs(prev));
}

EmAudit em_audit() {
  return {g_runs.load(), g_iterations.load(), g_violations.load()};
}

void reset_em_audit() {
  g_runs = 0;
  g_iterations = 0;
  g_violations = 0;
}

double log_sum_exp(const double* values, std::size_t n) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) hi = std::max(hi, values[i]);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(values[i] - hi);
  return hi + std::log(acc);
}

}  // namespace cipherpipe
