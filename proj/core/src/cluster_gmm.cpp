#include "cipherpipe/cluster_gmm.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

std::string format_variance(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// Distance-weighted (k-means++) choice of K data rows.
Eigen::MatrixXd seed_means(const Eigen::MatrixXd& x, int K, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd means(K, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  means.row(0) = x.row(pick(rng));
  Eigen::VectorXd d2 = (x.rowwise() - means.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0 && std::isfinite(total)) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        target -= d2(chosen);
        if (target < 0.0) break;
      }
    } else {
      chosen = pick(rng);
    }
    means.row(k) = x.row(chosen);
    d2 = d2.cwiseMin((x.rowwise() - means.row(k)).rowwise().squaredNorm());
  }
  return means;
}

Eigen::MatrixXd initial_variances(const Eigen::MatrixXd& x, int K,
                                  const CovarianceSpec& cov, double floor) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd var =
      ((x.rowwise() - mean).array().square().colwise().sum() /
       static_cast<double>(x.rows()))
          .matrix();
  var = var.cwiseMax(floor);
  Eigen::MatrixXd out(K, x.cols());
  switch (cov.mode) {
    case CovarianceMode::diagonal:
      out = var.replicate(K, 1);
      break;
    case CovarianceMode::spherical:
      out.setConstant(std::max(floor, var.mean()));
      break;
    case CovarianceMode::fixed:
      out.setConstant(cov.fixed_variance);
      break;
  }
  return out;
}

// log P(G) plus the n x K log joint table log w_k + log N(g_t | k).
double e_step(const GaussianSet& g, const Eigen::VectorXd& weights,
              const Eigen::MatrixXd& x, Eigen::MatrixXd& resp) {
  resp = g.log_densities(x);
  const Eigen::ArrayXd log_w = weights.array().log();
  double total = 0.0;
  for (Eigen::Index t = 0; t < resp.rows(); ++t) {
    resp.row(t).array() += log_w.transpose();
    const double norm = log_sum_exp(resp.row(t).eval().data(), resp.cols());
    total += norm;
    resp.row(t) = (resp.row(t).array() - norm).exp().matrix();
  }
  return total;
}

GmmModel fit_once(const Eigen::MatrixXd& x, const GmmOptions& opt,
                  std::uint64_t seed) {
  Rng rng(seed);
  GmmModel model;
  model.seed = seed;
  model.gaussians.covariance = opt.covariance;
  model.gaussians.floor = opt.floor;
  model.gaussians.means = seed_means(x, opt.K, rng);
  model.gaussians.variances = initial_variances(x, opt.K, opt.covariance, opt.floor);
  model.weights = Eigen::VectorXd::Constant(opt.K, 1.0 / opt.K);

  EmTrace trace("gmm");
  Eigen::MatrixXd resp;
  trace.record(e_step(model.gaussians, model.weights, x, resp));
  for (int it = 0; it < opt.max_iters; ++it) {
    model.weights = resp.colwise().sum().transpose() / static_cast<double>(x.rows());
    model.gaussians.maximize(x, resp);
    trace.record(e_step(model.gaussians, model.weights, x, resp));
    if (trace.last_relative_gain() < opt.tol) break;
  }
  model.log_likelihood = trace.last();
  model.iterations = static_cast<int>(trace.iterations()) - 1;
  model.trace = trace.values();
  return model;
}

}  // namespace

std::string CovarianceSpec::name() const {
  switch (mode) {
    case CovarianceMode::diagonal: return "diagonal";
    case CovarianceMode::spherical: return "spherical";
    case CovarianceMode::fixed: return "fixed:" + format_variance(fixed_variance);
  }
  return "diagonal";
}

CovarianceSpec CovarianceSpec::parse(const std::string& name) {
  if (name == "diagonal" || name == "diag") return {CovarianceMode::diagonal, 1.0};
  if (name == "spherical") return {CovarianceMode::spherical, 1.0};
  if (name.rfind("fixed:", 0) == 0) {
    double v = 0.0;
    try {
      v = std::stod(name.substr(6));
    } catch (const std::exception&) {
      throw Error("bad fixed variance in '" + name + "'", "cluster");
    }
    if (!(v > 0)) throw Error("fixed variance must be positive", "cluster");
    return {CovarianceMode::fixed, v};
  }
  throw Error("unknown covariance mode '" + name + "'", "cluster");
}

std::vector<CovarianceSpec> default_covariance_options() {
  return {{CovarianceMode::diagonal, 1.0},   {CovarianceMode::spherical, 1.0},
          {CovarianceMode::fixed, 1.0},      {CovarianceMode::fixed, 0.1},
          {CovarianceMode::fixed, 0.01},     {CovarianceMode::fixed, 0.001}};
}

Eigen::MatrixXd GaussianSet::log_densities(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim()) {
    throw Error("feature dimension " + std::to_string(x.cols()) +
                    " does not match model dimension " + std::to_string(dim()),
                "cluster");
  }
  const Eigen::Index n = x.rows(), K = size(), d = dim();
  Eigen::MatrixXd out(n, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::RowVectorXd inv = variances.row(k).cwiseInverse();
    const double log_norm =
        -0.5 * (d * kLog2Pi + variances.row(k).array().log().sum());
    for (Eigen::Index t = 0; t < n; ++t) {
      double q = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double diff = x(t, j) - means(k, j);
        q += diff * diff * inv(j);
      }
      out(t, k) = log_norm - 0.5 * q;
    }
  }
  return out;
}

void GaussianSet::maximize(const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp) {
  const Eigen::Index K = size(), d = dim();
  for (Eigen::Index k = 0; k < K; ++k) {
    const double nk = resp.col(k).sum();
    if (!(nk > 0.0)) continue;
    const Eigen::RowVectorXd mu = (resp.col(k).transpose() * x) / nk;
    means.row(k) = mu;
    if (covariance.mode == CovarianceMode::fixed) continue;
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const double r = resp(t, k);
      if (r == 0.0) continue;
      var += r * (x.row(t) - mu).array().square().matrix();
    }
    var /= nk;
    if (covariance.mode == CovarianceMode::diagonal) {
      variances.row(k) = var.cwiseMax(floor);
    } else {
      variances.row(k).setConstant(std::max(floor, var.mean()));
    }
  }
}

nlohmann::json to_json(const GaussianSet& g) {
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json vars;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    means.push_back(std::vector<double>(g.means.row(k).begin(), g.means.row(k).end()));
  }
  switch (g.covariance.mode) {
    case CovarianceMode::diagonal:
      vars = nlohmann::json::array();
      for (Eigen::Index k = 0; k < g.size(); ++k) {
        vars.push_back(
            std::vector<double>(g.variances.row(k).begin(), g.variances.row(k).end()));
      }
      break;
    case CovarianceMode::spherical:
      vars = nlohmann::json::array();
      for (Eigen::Index k = 0; k < g.size(); ++k) vars.push_back(g.variances(k, 0));
      break;
    case CovarianceMode::fixed:
      vars = g.covariance.fixed_variance;
      break;
  }
  return {{"covariance", g.covariance.name()},
          {"floor", g.floor},
          {"means", means},
          {"variances", vars}};
}

GaussianSet gaussian_set_from_json(const nlohmann::json& j) {
  GaussianSet g;
  g.covariance = CovarianceSpec::parse(j.at("covariance").get<std::string>());
  g.floor = j.value("floor", 1e-6);
  const auto& means = j.at("means");
  const Eigen::Index K = static_cast<Eigen::Index>(means.size());
  const Eigen::Index d = K > 0 ? static_cast<Eigen::Index>(means.at(0).size()) : 0;
  g.means.resize(K, d);
  g.variances.resize(K, d);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (static_cast<Eigen::Index>(means.at(k).size()) != d) {
      throw Error("ragged Gaussian means", "cluster");
    }
    for (Eigen::Index i = 0; i < d; ++i) g.means(k, i) = means.at(k).at(i).get<double>();
  }
  const auto& vars = j.at("variances");
  switch (g.covariance.mode) {
    case CovarianceMode::diagonal:
      for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index i = 0; i < d; ++i) {
          g.variances(k, i) = vars.at(k).at(i).get<double>();
        }
      }
      break;
    case CovarianceMode::spherical:
      for (Eigen::Index k = 0; k < K; ++k) {
        g.variances.row(k).setConstant(vars.at(k).get<double>());
      }
      break;
    case CovarianceMode::fixed:
      g.variances.setConstant(g.covariance.fixed_variance);
      break;
  }
  return g;
}

nlohmann::json to_json(const GmmModel& m) {
  nlohmann::json j = to_json(m.gaussians);
  j["K"] = m.K();
  j["dim"] = m.gaussians.dim();
  j["weights"] = std::vector<double>(m.weights.begin(), m.weights.end());
  j["log_likelihood"] = m.log_likelihood;
  j["iterations"] = m.iterations;
  j["seed"] = m.seed;
  return j;
}

GmmModel gmm_model_from_json(const nlohmann::json& j) {
  GmmModel m;
  m.gaussians = gaussian_set_from_json(j);
  const auto w = j.at("weights").get<std::vector<double>>();
  m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  if (m.weights.size() != m.gaussians.size()) {
    throw Error("GMM weights and means disagree on K", "cluster");
  }
  m.log_likelihood = j.value("log_likelihood", 0.0);
  m.iterations = j.value("iterations", 0);
  m.seed = j.value("seed", std::uint64_t{0});
  return m;
}

GmmModel gmm_fit(const FeatureMatrix& features, const GmmOptions& options) {
  const auto& x = features.rows;
  if (options.K < 1) throw Error("K must be >= 1", "cluster");
  if (x.cols() < 1) throw Error("features must have dimension >= 1", "cluster");
  if (x.rows() < options.K) {
    throw Error("need at least K=" + std::to_string(options.K) +
                    " feature vectors, got " + std::to_string(x.rows()),
                "cluster");
  }
  if (options.restarts < 1) throw Error("restarts must be >= 1", "cluster");
  if (options.covariance.mode == CovarianceMode::fixed &&
      !(options.covariance.fixed_variance > 0)) {
    throw Error("fixed variance must be positive", "cluster");
  }
  bool all_same = true;
  for (Eigen::Index t = 1; t < x.rows() && all_same; ++t) {
    all_same = x.row(t) == x.row(0);
  }
  if (all_same) {
    spdlog::warn("cluster: all feature vectors are identical; "
                 "the data supports a single cluster");
  }

  std::vector<GmmModel> fits(options.restarts);
  parallel_for(fits.size(), [&](std::size_t r) {
    fits[r] = fit_once(x, options, derive_seed(options.seed, r));
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < fits.size(); ++r) {
    if (fits[r].log_likelihood > fits[best].log_likelihood) best = r;
  }
  spdlog::debug("cluster: {} restarts, best log-likelihood {:.6f} (restart {})",
                options.restarts, fits[best].log_likelihood, best);
  return std::move(fits[best]);
}

double gmm_log_likelihood(const GmmModel& model, const FeatureMatrix& features) {
  Eigen::MatrixXd resp;
  return e_step(model.gaussians, model.weights, features.rows, resp);
}

Transcription gmm_assign(const GmmModel& model, const FeatureMatrix& features) {
  const Eigen::MatrixXd logp = model.gaussians.log_densities(features.rows);
  const Eigen::ArrayXd log_w = model.weights.array().log();
  Transcription out;
  out.K = model.K();
  out.ids.resize(features.count());
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    int arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < out.K; ++k) {
      const double s = log_w(k) + logp(t, k);
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    out.ids[t] = arg;
  }
  return out;
}

nlohmann::json to_json(const Transcription& t) {
  return {{"K", t.K}, {"ids", t.ids}};
}

Transcription transcription_from_json(const nlohmann::json& j) {
  Transcription t;
  t.K = j.at("K").get<int>();
  t.ids = j.at("ids").get<std::vector<int>>();
  for (int id : t.ids) {
    if (id < 0 || id >= t.K) {
      throw Error("transcription id " + std::to_string(id) + " outside [0, K)",
                  "cluster");
    }
  }
  return t;
}

void write_transcription(const std::filesystem::path& path, const Transcription& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write transcription '" + path.string() + "'");
  out << to_json(t).dump() << '\n';
}

Transcription read_transcription(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read transcription '" + path.string() + "'");
  return transcription_from_json(nlohmann::json::parse(in));
}

ModelSelection model_selection(const FeatureMatrix& features, GmmOptions base,
                               const std::vector<CovarianceSpec>& options) {
  if (options.empty()) throw Error("model selection needs at least one option", "cluster");
  ModelSelection out;
  std::size_t best = 0;
  std::vector<GmmModel> models;
  for (std::size_t i = 0; i < options.size(); ++i) {
    base.covariance = options[i];
    models.push_back(gmm_fit(features, base));
    const double ll = gmm_log_likelihood(models.back(), features);
    out.scores.push_back({options[i].name(), ll});
    spdlog::info("cluster: covariance {} log-likelihood {:.6f}", options[i].name(), ll);
    if (ll > out.scores[best].log_likelihood) best = i;
  }
  out.best = std::move(models[best]);
  return out;
}

}  // namespace cipherpipe
