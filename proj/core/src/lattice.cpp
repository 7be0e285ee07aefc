#include "cipherpipe/lattice.hpp"

#include <cmath>
#include <limits>

#include "cipherpipe/common.hpp"

namespace cipherpipe {

LmLattice::LmLattice(const NGramLM& lm, double exponent)
    : V_(lm.letters()), P_(lm.order() == 2 ? 1 : lm.letters() + 1), exponent_(exponent) {
  if (!(exponent > 0.0) || !std::isfinite(exponent)) {
    throw Error("LM exponent must be positive", "decipher");
  }
  start_prefix_ = P_ == 1 ? 0 : V_;
  const std::size_t start = lm.start_history();
  log_init_.resize(V_);
  for (int b = 0; b < V_; ++b) log_init_[b] = exponent * lm.logprob(start, b);

  log_trans_.resize(static_cast<std::size_t>(P_) * V_ * V_);
  for (int p = 0; p < P_; ++p) {
    for (int b = 0; b < V_; ++b) {
      const std::size_t hist = P_ == 1 ? static_cast<std::size_t>(b)
                                       : static_cast<std::size_t>(p) * (V_ + 1) + b;
      double* dst = log_trans_.data() + (static_cast<std::size_t>(p) * V_ + b) * V_;
      for (int c = 0; c < V_; ++c) dst[c] = exponent * lm.logprob(hist, c);
    }
  }
  init_.resize(log_init_.size());
  trans_.resize(log_trans_.size());
  for (std::size_t i = 0; i < init_.size(); ++i) init_[i] = std::exp(log_init_[i]);
  for (std::size_t i = 0; i < trans_.size(); ++i) trans_[i] = std::exp(log_trans_[i]);
}

void LmLattice::check(const RowMatrix& log_emissions) const {
  if (log_emissions.cols() != V_) {
    throw Error("emission matrix has " + std::to_string(log_emissions.cols()) +
                    " columns, lattice has " + std::to_string(V_) + " letters",
                "decipher");
  }
}

double LmLattice::scaled_emissions(const RowMatrix& log_emissions, RowMatrix& out) const {
  out.resize(log_emissions.rows(), V_);
  double offset = 0.0;
  for (Eigen::Index t = 0; t < log_emissions.rows(); ++t) {
    const double m = log_emissions.row(t).maxCoeff();
    if (!std::isfinite(m)) {
      throw Error("position " + std::to_string(t) + " has no finite emission density",
                  "decipher");
    }
    offset += m;
    out.row(t) = (log_emissions.row(t).array() - m).exp();
  }
  return offset;
}

LmLattice::Posteriors LmLattice::forward_backward(const RowMatrix& log_emissions) const {
  check(log_emissions);
  const Eigen::Index T = log_emissions.rows();
  const std::size_t S = static_cast<std::size_t>(P_) * V_;
  Posteriors out;
  out.gamma = RowMatrix::Zero(T, V_);
  if (T == 0) return out;

  RowMatrix emit;
  double log_like = scaled_emissions(log_emissions, emit);

  // alpha[t] is normalised to sum 1; scale[t] holds the normaliser.
  std::vector<double> alpha(static_cast<std::size_t>(T) * S, 0.0);
  std::vector<double> scale(static_cast<std::size_t>(T), 0.0);
  {
    double* a0 = alpha.data() + static_cast<std::size_t>(start_prefix_) * V_;
    double z = 0.0;
    for (int b = 0; b < V_; ++b) {
      a0[b] = init_[b] * emit(0, b);
      z += a0[b];
    }
    scale[0] = z;
  }
  for (Eigen::Index t = 0;; ++t) {
    const double z = scale[t];
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw Error("lattice forward pass underflowed at position " + std::to_string(t),
                  "decipher");
    }
    double* at = alpha.data() + static_cast<std::size_t>(t) * S;
    const double inv = 1.0 / z;
    for (std::size_t s = 0; s < S; ++s) at[s] *= inv;
    log_like += std::log(z);
    if (t + 1 == T) break;

    double* an = at + S;
    for (std::size_t s = 0; s < S; ++s) {
      const double a = at[s];
      if (a == 0.0) continue;
      const int b = static_cast<int>(s % V_);
      const double* w = trans_.data() + s * V_;
      double* dst = an + static_cast<std::size_t>(next_prefix(b)) * V_;
      for (int c = 0; c < V_; ++c) dst[c] += a * w[c];
    }
    const double* e = emit.data() + (t + 1) * V_;
    double zn = 0.0;
    for (int p = 0; p < P_; ++p) {
      double* row = an + static_cast<std::size_t>(p) * V_;
      for (int c = 0; c < V_; ++c) {
        row[c] *= e[c];
        zn += row[c];
      }
    }
    scale[t + 1] = zn;
  }
  out.log_likelihood = log_like;

  // Backward pass with the same scale factors; gamma from alpha * beta.
  std::vector<double> beta(S, 1.0), prev(S, 0.0), weighted(S, 0.0);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double* at = alpha.data() + static_cast<std::size_t>(t) * S;
    double g = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const double v = at[s] * beta[s];
      out.gamma(t, static_cast<Eigen::Index>(s % V_)) += v;
      g += v;
    }
    if (g > 0.0) out.gamma.row(t) /= g;
    if (t == 0) break;

    // weighted(p', c) = emit(t, c) * beta_t(p', c) / scale[t]
    const double* e = emit.data() + t * V_;
    const double inv = 1.0 / scale[t];
    for (int p = 0; p < P_; ++p) {
      for (int c = 0; c < V_; ++c) {
        const std::size_t s = static_cast<std::size_t>(p) * V_ + c;
        weighted[s] = e[c] * beta[s] * inv;
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      const int b = static_cast<int>(s % V_);
      const double* w = trans_.data() + s * V_;
      const double* nxt = weighted.data() + static_cast<std::size_t>(next_prefix(b)) * V_;
      double acc = 0.0;
      for (int c = 0; c < V_; ++c) acc += w[c] * nxt[c];
      prev[s] = acc;
    }
    beta.swap(prev);
  }
  return out;
}

double LmLattice::log_likelihood(const RowMatrix& log_emissions) const {
  check(log_emissions);
  const Eigen::Index T = log_emissions.rows();
  if (T == 0) return 0.0;
  const std::size_t S = static_cast<std::size_t>(P_) * V_;
  RowMatrix emit;
  double log_like = scaled_emissions(log_emissions, emit);
  std::vector<double> cur(S, 0.0), next(S, 0.0);
  for (int b = 0; b < V_; ++b) {
    cur[static_cast<std::size_t>(start_prefix_) * V_ + b] = init_[b] * emit(0, b);
  }
  for (Eigen::Index t = 0;; ++t) {
    double z = 0.0;
    for (double v : cur) z += v;
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw Error("lattice forward pass underflowed at position " + std::to_string(t),
                  "decipher");
    }
    for (double& v : cur) v /= z;
    log_like += std::log(z);
    if (t + 1 == T) break;
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const double a = cur[s];
      if (a == 0.0) continue;
      const int b = static_cast<int>(s % V_);
      const double* w = trans_.data() + s * V_;
      double* dst = next.data() + static_cast<std::size_t>(next_prefix(b)) * V_;
      for (int c = 0; c < V_; ++c) dst[c] += a * w[c];
    }
    const double* e = emit.data() + (t + 1) * V_;
    for (std::size_t s = 0; s < S; ++s) next[s] *= e[s % V_];
    cur.swap(next);
  }
  return log_like;
}

std::vector<int> LmLattice::viterbi(const RowMatrix& log_emissions, double* score) const {
  check(log_emissions);
  const Eigen::Index T = log_emissions.rows();
  if (T == 0) {
    if (score) *score = 0.0;
    return {};
  }
  const std::size_t S = static_cast<std::size_t>(P_) * V_;
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  std::vector<double> cur(S, kNeg), next(S, kNeg);
  std::vector<std::uint32_t> back(static_cast<std::size_t>(T) * S, 0);
  for (int b = 0; b < V_; ++b) {
    cur[static_cast<std::size_t>(start_prefix_) * V_ + b] =
        log_init_[b] + log_emissions(0, b);
  }
  for (Eigen::Index t = 1; t < T; ++t) {
    std::fill(next.begin(), next.end(), kNeg);
    std::uint32_t* bp = back.data() + static_cast<std::size_t>(t) * S;
    for (std::size_t s = 0; s < S; ++s) {
      const double a = cur[s];
      if (a == kNeg) continue;
      const int b = static_cast<int>(s % V_);
      const double* w = log_trans_.data() + s * V_;
      const std::size_t base = static_cast<std::size_t>(next_prefix(b)) * V_;
      for (int c = 0; c < V_; ++c) {
        const double v = a + w[c];
        if (v > next[base + c]) {
          next[base + c] = v;
          bp[base + c] = static_cast<std::uint32_t>(s);
        }
      }
    }
    for (std::size_t s = 0; s < S; ++s) next[s] += log_emissions(t, static_cast<Eigen::Index>(s % V_));
    cur.swap(next);
  }
  std::size_t best = 0;
  for (std::size_t s = 1; s < S; ++s) {
    if (cur[s] > cur[best]) best = s;
  }
  if (cur[best] == kNeg) throw Error("no plaintext has non-zero probability", "decipher");
  if (score) *score = cur[best];
  std::vector<int> path(static_cast<std::size_t>(T));
  std::size_t s = best;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    path[static_cast<std::size_t>(t)] = static_cast<int>(s % V_);
    if (t > 0) s = back[static_cast<std::size_t>(t) * S + s];
  }
  return path;
}

double LmLattice::path_score(std::span<const int> letters,
                             const RowMatrix& log_emissions) const {
  check(log_emissions);
  if (static_cast<Eigen::Index>(letters.size()) != log_emissions.rows()) {
    throw Error("path length differs from emission count", "decipher");
  }
  double total = 0.0;
  int prefix = start_prefix_;
  for (std::size_t t = 0; t < letters.size(); ++t) {
    const int c = letters[t];
    if (c < 0 || c >= V_) throw Error("letter id out of range", "decipher");
    if (t == 0) {
      total += log_init_[c];
    } else {
      const int b = letters[t - 1];
      total += log_trans_[(static_cast<std::size_t>(prefix) * V_ + b) * V_ + c];
      prefix = next_prefix(b);
    }
    total += log_emissions(static_cast<Eigen::Index>(t), c);
  }
  return total;
}

}  // namespace cipherpipe
