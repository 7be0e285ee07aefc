#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cipherpipe/common.hpp"
#include "cipherpipe/glyph_features.hpp"

namespace cipherpipe {

enum class CovarianceMode { diagonal, spherical, fixed };

struct CovarianceSpec {
  CovarianceMode mode = CovarianceMode::diagonal;
  double fixed_variance = 1.0;  ///< used by CovarianceMode::fixed only

  std::string name() const;  ///< "diagonal", "spherical", "fixed:0.1"
  static CovarianceSpec parse(const std::string& name);
  friend bool operator==(const CovarianceSpec&, const CovarianceSpec&) = default;
};

/// The four fixed variances plus diagonal and spherical.
std::vector<CovarianceSpec> default_covariance_options();

/// A set of axis-aligned Gaussians. Variances are stored per component and
/// dimension whatever the mode; spherical rows are constant, fixed ones hold
/// the fixed value everywhere.
struct GaussianSet {
  CovarianceSpec covariance;
  Eigen::MatrixXd means;      ///< K x d
  Eigen::MatrixXd variances;  ///< K x d
  double floor = 1e-6;

  Eigen::Index size() const noexcept { return means.rows(); }
  Eigen::Index dim() const noexcept { return means.cols(); }

  /// n x K matrix of log N(x_t; mu_k, Sigma_k).
  Eigen::MatrixXd log_densities(const Eigen::MatrixXd& x) const;

  /// Weighted M-step for every component: `resp` is n x K. Components whose
  /// total weight is zero keep their parameters. Variances are clamped at the
  /// floor; fixed variances are left alone.
  void maximize(const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp);
};

nlohmann::json to_json(const GaussianSet& g);
GaussianSet gaussian_set_from_json(const nlohmann::json& j);

struct GmmModel {
  GaussianSet gaussians;
  Eigen::VectorXd weights;  ///< P(Z), sums to 1
  double log_likelihood = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> trace;

  int K() const noexcept { return static_cast<int>(weights.size()); }
};

nlohmann::json to_json(const GmmModel& model);
GmmModel gmm_model_from_json(const nlohmann::json& j);

struct GmmOptions {
  int K = 2;
  CovarianceSpec covariance;
  std::uint64_t seed = 1;
  int restarts = 10;
  int max_iters = 200;
  double tol = 1e-6;  ///< relative log-likelihood improvement to stop
  double floor = 1e-6;
};

/// EM for a K-component mixture from distance-weighted seeded means; the
/// restart with the highest log-likelihood wins.
GmmModel gmm_fit(const FeatureMatrix& features, const GmmOptions& options);

/// Total log P(G) of the features under the model.
double gmm_log_likelihood(const GmmModel& model, const FeatureMatrix& features);

struct Transcription {
  std::vector<int> ids;
  int K = 0;

  friend bool operator==(const Transcription&, const Transcription&) = default;
};

nlohmann::json to_json(const Transcription& t);
Transcription transcription_from_json(const nlohmann::json& j);
void write_transcription(const std::filesystem::path& path, const Transcription& t);
Transcription read_transcription(const std::filesystem::path& path);

/// id_t = argmax_k w_k N(g_t; mu_k, Sigma_k), lowest index on ties.
Transcription gmm_assign(const GmmModel& model, const FeatureMatrix& features);

struct ModelScore {
  std::string covariance;
  double log_likelihood;
};

struct ModelSelection {
  GmmModel best;
  std::vector<ModelScore> scores;
};

/// Fits one model per covariance option and keeps the one with the highest
/// log-likelihood on the features.
ModelSelection model_selection(const FeatureMatrix& features, GmmOptions base,
                               const std::vector<CovarianceSpec>& options);

}  // namespace cipherpipe
