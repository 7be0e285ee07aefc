#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "cipherpipe/char_lm.hpp"

namespace cipherpipe {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Plaintext lattice of an n-gram LM with its log-probabilities scaled by an
/// exponent. A state is (prefix, current letter): for a bigram model the
/// prefix is a single dummy value, for a trigram model it is the previous
/// letter or the boundary. Emissions are supplied per position as a T x V
/// matrix of log-densities log P(x_t | e).
class LmLattice {
 public:
  LmLattice(const NGramLM& lm, double exponent);

  int letters() const noexcept { return V_; }
  int prefixes() const noexcept { return P_; }
  double exponent() const noexcept { return exponent_; }

  struct Posteriors {
    RowMatrix gamma;  ///< T x V, P(e_t = e | x), rows sum to 1
    double log_likelihood = 0.0;
  };

  /// Forward-backward with per-step rescaling. The log-likelihood is
  /// log sum_E exp(exponent * log P(E)) prod_t P(x_t | e_t).
  Posteriors forward_backward(const RowMatrix& log_emissions) const;
  double log_likelihood(const RowMatrix& log_emissions) const;

  /// Highest-scoring letter sequence; ties go to the lower state index at
  /// every step. `score` receives exponent * log P(E) + sum log P(x_t | e_t).
  std::vector<int> viterbi(const RowMatrix& log_emissions, double* score = nullptr) const;

  /// Score of a given letter sequence under the same objective.
  double path_score(std::span<const int> letters, const RowMatrix& log_emissions) const;

 private:
  int next_prefix(int b) const noexcept { return P_ == 1 ? 0 : b; }
  void check(const RowMatrix& log_emissions) const;
  // Rescales each emission row by its maximum; returns the sum of maxima.
  double scaled_emissions(const RowMatrix& log_emissions, RowMatrix& out) const;

  int V_ = 0;
  int P_ = 1;
  double exponent_ = 1.0;
  int start_prefix_ = 0;
  std::vector<double> log_init_;   // V
  std::vector<double> log_trans_;  // (P*V) x V
  std::vector<double> init_;
  std::vector<double> trans_;
};

}  // namespace cipherpipe
