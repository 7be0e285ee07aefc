#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cipherpipe/char_lm.hpp"
#include "cipherpipe/cluster_gmm.hpp"
#include "cipherpipe/lattice.hpp"

namespace cipherpipe {

/// P(c | e): rows are plaintext letters, columns cipher symbols.
struct ChannelMatrix {
  Eigen::MatrixXd p;

  int rows() const noexcept { return static_cast<int>(p.rows()); }
  int cols() const noexcept { return static_cast<int>(p.cols()); }
  bool rows_normalized(double tol = 1e-9) const;

  static ChannelMatrix uniform(int letters, int symbols);
  /// Rows drawn from a symmetric Dirichlet(concentration) around uniform.
  static ChannelMatrix random(int letters, int symbols, double concentration, Rng& rng);
  /// P(c | e) = 1 where mapping[e] == c, spread evenly over unmapped rows.
  static ChannelMatrix from_mapping(const std::vector<int>& letter_to_symbol, int symbols);
};

nlohmann::json to_json(const ChannelMatrix& channel, const Alphabet& alphabet);
ChannelMatrix channel_from_json(const nlohmann::json& j);
void write_channel(const std::filesystem::path& path, const ChannelMatrix& channel,
                   const Alphabet& alphabet);
ChannelMatrix read_channel(const std::filesystem::path& path);

/// T x V matrix of log P(c_t | e).
RowMatrix channel_log_emissions(const Transcription& t, const ChannelMatrix& channel);

struct ChannelEmOptions {
  std::uint64_t seed = 1;
  int restarts = 100;
  int max_iters = 200;
  double tol = 1e-7;
  double lm_exponent = 1.0;
  double init_concentration = 1.0;     ///< Dirichlet parameter of random inits
  std::optional<ChannelMatrix> init;   ///< restart 0 starts here when set
  /// When set, every restart is Viterbi-decoded (at gold_decode_exponent) and
  /// its NED against this plaintext is recorded.
  std::vector<int> gold;
  double gold_decode_exponent = 1.0;
};

struct RestartRecord {
  std::uint64_t seed = 0;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::optional<double> ned;  ///< against gold, when known
};

struct ChannelEmResult {
  ChannelMatrix channel;
  double log_likelihood = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::vector<RestartRecord> restarts;
};

/// One EM run from a given channel; log P(C) is checked to be non-decreasing.
ChannelEmResult channel_em_from(const Transcription& transcription, const LmLattice& lattice,
                                ChannelMatrix init, int max_iters, double tol);

/// Best of `restarts` EM runs by log P(C).
ChannelEmResult channel_em(const Transcription& transcription, const NGramLM& lm,
                           const ChannelEmOptions& options);

/// log sum_E P(E)^exponent P(C | E).
double channel_log_likelihood(const Transcription& transcription, const NGramLM& lm,
                              const ChannelMatrix& channel, double lm_exponent = 1.0);

struct DeciphermentResult {
  std::vector<int> plaintext;
  std::string text;
  double log_likelihood = 0.0;  ///< training objective of the model
  double score = 0.0;           ///< decoding objective of the returned plaintext
  std::uint64_t seed = 0;
  int iterations = 0;
};

nlohmann::json to_json(const DeciphermentResult& r);
void write_result(const std::filesystem::path& path, const DeciphermentResult& r);

/// argmax_E exponent * log P(E) + log P(C | E).
DeciphermentResult viterbi_decode(const Transcription& transcription, const NGramLM& lm,
                                  const ChannelMatrix& channel, double lm_exponent = 1.0);

struct Decipher3Options {
  ChannelEmOptions em;
  double decode_exponent = 1.0;
};

struct Decipher3Result {
  DeciphermentResult result;
  ChannelEmResult em;
};

Decipher3Result decipher3(const Transcription& transcription, const NGramLM& lm,
                          const Decipher3Options& options);

/// Channel EM under `seed_lm` first; its best channel becomes restart 0 of the
/// run under `lm`. Both models must share one alphabet.
Decipher3Result decipher3_seeded(const Transcription& transcription, const NGramLM& lm,
                                 const NGramLM& seed_lm, Decipher3Options options,
                                 const ChannelEmOptions& seed_options);

}  // namespace cipherpipe
