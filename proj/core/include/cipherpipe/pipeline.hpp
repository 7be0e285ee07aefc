#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cipherpipe/cluster_gmm.hpp"
#include "cipherpipe/glyph_features.hpp"
#include "cipherpipe/lm_gmm.hpp"
#include "cipherpipe/noisy_channel.hpp"
#include "cipherpipe/segmenter.hpp"

namespace cipherpipe {

enum class DecipherMode { three_stage, two_stage };

/// Everything a run needs. Paths are taken as given (relative paths resolve
/// against the working directory).
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";

  // Inputs. A transcription short-circuits segmentation and clustering; a
  // manifest skips segmentation; external features skip SimMat.
  std::filesystem::path page;
  int threshold = 128;
  std::filesystem::path manifest;
  std::filesystem::path features;
  std::filesystem::path transcription;
  std::filesystem::path gold_plaintext;
  std::filesystem::path gold_transcription;
  std::filesystem::path gold_manifest;

  SegmentationParams segmentation;

  std::string extractor = "simmat";  ///< simmat | rawpixel | external
  int rawpixel_block = 5;
  int pca_dims = 0;  ///< 0 keeps the raw features

  int K = 0;
  std::string covariance = "auto";  ///< "auto" tries every option
  int gmm_restarts = 10;
  int gmm_max_iters = 200;
  double gmm_tol = 1e-6;

  // LM: a saved model, or corpus files plus an alphabet to train one.
  std::filesystem::path lm;
  std::vector<std::filesystem::path> lm_corpus;
  std::filesystem::path alphabet;
  int lm_order = 2;
  double lm_delta = 0.1;

  DecipherMode mode = DecipherMode::three_stage;
  int channel_restarts = 100;
  int channel_max_iters = 200;
  double channel_tol = 1e-7;
  double train_exponent = 1.0;
  double decode_exponent = 1.0;
  double init_concentration = 1.0;
  /// With a trigram LM, > 0 first runs this many bigram EM restarts and
  /// starts the trigram run from the best bigram channel. Needs lm_corpus.
  int bigram_seed_restarts = 0;

  std::string lmgmm_variant = "simplified";
  double lmgmm_exponent = 3.0;
  int lmgmm_restarts = 50;
  int lmgmm_max_iters = 100;
  double lmgmm_tol = 1e-7;
  double lmgmm_noise = 0.1;
  std::string lmgmm_covariance = "spherical";

  /// Throws on missing inputs or out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
/// Unknown keys are an error.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig read_pipeline_config(const std::filesystem::path& path);

/// Writes manifest, features, transcription, model dumps, channel, results,
/// metrics and summary.json into config.out_dir and returns the summary.
/// Stage runtimes go to timing.json so the summary is reproducible byte for
/// byte.
nlohmann::json run_pipeline(const PipelineConfig& config);

/// Builds an LM from the config (load or train).
NGramLM pipeline_lm(const PipelineConfig& config);
/// Same, at a given order; a saved LM is only used when the orders match.
NGramLM pipeline_lm(const PipelineConfig& config, int order);

/// "auto" or a covariance name; `auto` runs model selection.
GmmModel fit_transcription_model(const FeatureMatrix& features, const PipelineConfig& config,
                                 nlohmann::json* report = nullptr);

}  // namespace cipherpipe
