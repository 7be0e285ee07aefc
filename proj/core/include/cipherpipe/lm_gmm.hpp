#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cipherpipe/char_lm.hpp"
#include "cipherpipe/cluster_gmm.hpp"
#include "cipherpipe/glyph_features.hpp"
#include "cipherpipe/lattice.hpp"
#include "cipherpipe/noisy_channel.hpp"

namespace cipherpipe {

/// simplified: one Gaussian per plaintext letter, no channel.
/// full: K Gaussians (cipher symbols) behind a channel P(c | e).
enum class LmGmmVariant { simplified, full };
const char* to_string(LmGmmVariant v) noexcept;
LmGmmVariant lmgmm_variant_from_string(const std::string& name);

struct LmGmmModel {
  LmGmmVariant variant = LmGmmVariant::simplified;
  GaussianSet gaussians;
  std::optional<ChannelMatrix> channel;
  double lm_exponent = 3.0;
  double objective = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> trace;
};

nlohmann::json to_json(const LmGmmModel& model);
LmGmmModel lmgmm_model_from_json(const nlohmann::json& j);

struct InitSpec {
  LmGmmVariant variant = LmGmmVariant::simplified;
  GaussianSet gaussians;
  std::optional<ChannelMatrix> channel;
  std::uint64_t seed = 0;
  std::string provenance;
};

struct InitOptions {
  CovarianceSpec covariance;
  double floor = 1e-6;
  double noise_scale = 0.1;
  std::uint64_t seed = 1;
};

/// Simplified-variant start: Gaussians from the features grouped by decoded
/// letter, each mean moved by N(0, (noise_scale * group std)^2) per dimension.
/// Letters without vectors start at the global mean plus noise scaled by the
/// global std; groups of one vector take the global variance.
InitSpec init_from_3stage(const FeatureMatrix& features, std::span<const int> decoded,
                          int letters, const InitOptions& options);

/// Full-variant start: Gaussians from the features grouped by cluster id and
/// the channel learned by the 3-stage run.
InitSpec init_full_from_3stage(const FeatureMatrix& features, const Transcription& transcription,
                               const ChannelMatrix& channel, const InitOptions& options);

/// T x V log P(g_t | e) for the model's variant.
RowMatrix lmgmm_log_emissions(const FeatureMatrix& features, const GaussianSet& gaussians,
                              const std::optional<ChannelMatrix>& channel);

struct LmGmmOptions {
  LmGmmVariant variant = LmGmmVariant::simplified;
  double lm_exponent = 3.0;
  int max_iters = 100;
  double tol = 1e-7;
};

/// EM on log sum_E P(E)^exponent prod_t P(g_t | e_t), checked to be
/// non-decreasing every iteration.
LmGmmModel lmgmm_em(const FeatureMatrix& features, const NGramLM& lm, const InitSpec& init,
                    const LmGmmOptions& options);

double lmgmm_objective(const FeatureMatrix& features, const NGramLM& lm, const LmGmmModel& model);

DeciphermentResult lmgmm_decode(const FeatureMatrix& features, const NGramLM& lm,
                                const LmGmmModel& model);

struct Decipher2Options {
  LmGmmOptions em;
  InitOptions init;
  int restarts = 50;
};

struct Decipher2Result {
  DeciphermentResult result;
  LmGmmModel model;
  std::vector<RestartRecord> diagnostics;
  std::string provenance;
};

/// Restarts from the 3-stage solution with fresh noise; the highest-objective
/// model is decoded. `gold` fills the per-restart NED column when given. The
/// full variant also needs the 3-stage transcription and channel.
Decipher2Result decipher2(const FeatureMatrix& features, const NGramLM& lm,
                          std::span<const int> decoded3, const Decipher2Options& options,
                          std::span<const int> gold = {},
                          const Transcription* transcription = nullptr,
                          const ChannelMatrix* channel3 = nullptr);

/// CSV with header seed,loglik,ned; the ned column is left out when any
/// record lacks it.
void scatter_dump(std::span<const RestartRecord> diagnostics, const std::filesystem::path& path);

}  // namespace cipherpipe
