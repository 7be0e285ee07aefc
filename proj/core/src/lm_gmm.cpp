#include "cipherpipe/lm_gmm.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <random>

#include "cipherpipe/eval_metrics.hpp"
#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

struct GroupStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  Eigen::Index count = 0;
};

GroupStats stats_of(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows) {
  GroupStats s;
  s.count = static_cast<Eigen::Index>(rows.size());
  s.mean = Eigen::RowVectorXd::Zero(x.cols());
  s.var = Eigen::RowVectorXd::Zero(x.cols());
  if (rows.empty()) return s;
  for (auto r : rows) s.mean += x.row(r);
  s.mean /= static_cast<double>(rows.size());
  for (auto r : rows) s.var += (x.row(r) - s.mean).array().square().matrix();
  s.var /= static_cast<double>(rows.size());
  return s;
}

// Gaussians from grouped rows with noisy means; shared by both variants.
GaussianSet grouped_gaussians(const Eigen::MatrixXd& x, std::span<const int> group_of, int groups,
                              const InitOptions& o) {
  if (static_cast<Eigen::Index>(group_of.size()) != x.rows()) {
    throw Error("init labels (" + std::to_string(group_of.size()) +
                    ") do not match the feature count (" + std::to_string(x.rows()) + ")",
                "lmgmm");
  }
  if (!(o.noise_scale >= 0.0)) throw Error("noise scale must be >= 0", "lmgmm");
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(groups));
  std::vector<Eigen::Index> all(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const int g = group_of[static_cast<std::size_t>(t)];
    if (g < 0 || g >= groups) throw Error("init label out of range", "lmgmm");
    members[static_cast<std::size_t>(g)].push_back(t);
    all[static_cast<std::size_t>(t)] = t;
  }
  const GroupStats global = stats_of(x, all);
  Rng rng(o.seed);
  std::normal_distribution<double> z(0.0, 1.0);

  GaussianSet gs;
  gs.covariance = o.covariance;
  gs.floor = o.floor;
  gs.means.resize(groups, x.cols());
  gs.variances.resize(groups, x.cols());
  for (int g = 0; g < groups; ++g) {
    const auto& m = members[static_cast<std::size_t>(g)];
    const GroupStats s = m.empty() ? global : stats_of(x, m);
    const Eigen::RowVectorXd spread = (m.empty() ? global.var : s.var).cwiseSqrt();
    Eigen::RowVectorXd mean = s.mean;
    if (o.noise_scale > 0.0) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) mean(j) += o.noise_scale * spread(j) * z(rng);
    }
    gs.means.row(g) = mean;
    const Eigen::RowVectorXd var = (m.size() < 2 ? global.var : s.var).cwiseMax(o.floor);
    switch (o.covariance.mode) {
      case CovarianceMode::diagonal:
        gs.variances.row(g) = var;
        break;
      case CovarianceMode::spherical:
        gs.variances.row(g).setConstant(std::max(o.floor, var.mean()));
        break;
      case CovarianceMode::fixed:
        gs.variances.row(g).setConstant(o.covariance.fixed_variance);
        break;
    }
  }
  return gs;
}

void check_model(const FeatureMatrix& f, const NGramLM& lm, LmGmmVariant variant,
                 const GaussianSet& g, const std::optional<ChannelMatrix>& channel) {
  if (f.count() == 0) throw Error("no feature vectors", "lmgmm");
  if (g.dim() != f.dim()) {
    throw Error("Gaussian dimension " + std::to_string(g.dim()) + " differs from feature dimension " +
                    std::to_string(f.dim()),
                "lmgmm");
  }
  if (variant == LmGmmVariant::simplified) {
    if (g.size() != lm.letters()) {
      throw Error("simplified LM-GMM needs one Gaussian per letter", "lmgmm");
    }
  } else {
    if (!channel) throw Error("full LM-GMM needs a channel", "lmgmm");
    if (channel->rows() != lm.letters() || channel->cols() != g.size()) {
      throw Error("channel shape does not match letters x Gaussians", "lmgmm");
    }
  }
}

RowMatrix full_emissions(const Eigen::MatrixXd& log_n, const ChannelMatrix& channel) {
  const Eigen::Index T = log_n.rows(), K = log_n.cols(), V = channel.rows();
  const Eigen::MatrixXd log_ch = channel.p.array().log().matrix();
  RowMatrix out(T, V);
  std::vector<double> buf(static_cast<std::size_t>(K));
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index e = 0; e < V; ++e) {
      for (Eigen::Index c = 0; c < K; ++c) buf[c] = log_ch(e, c) + log_n(t, c);
      out(t, e) = log_sum_exp(buf.data(), buf.size());
    }
  }
  return out;
}

}  // namespace

const char* to_string(LmGmmVariant v) noexcept {
  return v == LmGmmVariant::simplified ? "simplified" : "full";
}

LmGmmVariant lmgmm_variant_from_string(const std::string& name) {
  if (name == "simplified") return LmGmmVariant::simplified;
  if (name == "full") return LmGmmVariant::full;
  throw Error("unknown LM-GMM variant '" + name + "'", "lmgmm");
}

nlohmann::json to_json(const LmGmmModel& m) {
  nlohmann::json j = {{"variant", to_string(m.variant)},
                      {"lm_exponent", m.lm_exponent},
                      {"objective", m.objective},
                      {"iterations", m.iterations},
                      {"seed", m.seed},
                      {"gaussians", to_json(m.gaussians)}};
  if (m.channel) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index e = 0; e < m.channel->p.rows(); ++e) {
      rows.push_back(std::vector<double>(m.channel->p.row(e).begin(), m.channel->p.row(e).end()));
    }
    j["channel"] = {{"matrix", rows}};
  }
  return j;
}

LmGmmModel lmgmm_model_from_json(const nlohmann::json& j) {
  LmGmmModel m;
  m.variant = lmgmm_variant_from_string(j.at("variant").get<std::string>());
  m.lm_exponent = j.value("lm_exponent", 3.0);
  m.objective = j.value("objective", 0.0);
  m.iterations = j.value("iterations", 0);
  m.seed = j.value("seed", std::uint64_t{0});
  m.gaussians = gaussian_set_from_json(j.at("gaussians"));
  if (j.contains("channel")) m.channel = channel_from_json(j.at("channel"));
  return m;
}

InitSpec init_from_3stage(const FeatureMatrix& features, std::span<const int> decoded,
                          int letters, const InitOptions& options) {
  InitSpec init;
  init.variant = LmGmmVariant::simplified;
  init.gaussians = grouped_gaussians(features.rows, decoded, letters, options);
  init.seed = options.seed;
  init.provenance = "3stage-plaintext";
  return init;
}

InitSpec init_full_from_3stage(const FeatureMatrix& features, const Transcription& transcription,
                               const ChannelMatrix& channel, const InitOptions& options) {
  if (channel.cols() != transcription.K) {
    throw Error("3-stage channel does not match the transcription K", "lmgmm");
  }
  InitSpec init;
  init.variant = LmGmmVariant::full;
  init.gaussians = grouped_gaussians(features.rows, transcription.ids, transcription.K, options);
  init.channel = channel;
  init.seed = options.seed;
  init.provenance = "3stage-clusters+channel";
  return init;
}

RowMatrix lmgmm_log_emissions(const FeatureMatrix& features, const GaussianSet& gaussians,
                              const std::optional<ChannelMatrix>& channel) {
  const Eigen::MatrixXd log_n = gaussians.log_densities(features.rows);
  if (!channel) return log_n;
  return full_emissions(log_n, *channel);
}

LmGmmModel lmgmm_em(const FeatureMatrix& features, const NGramLM& lm, const InitSpec& init,
                    const LmGmmOptions& options) {
  if (init.variant != options.variant) throw Error("init variant differs from EM variant", "lmgmm");
  const auto channel_init =
      options.variant == LmGmmVariant::full ? init.channel : std::optional<ChannelMatrix>{};
  check_model(features, lm, options.variant, init.gaussians, channel_init);

  LmGmmModel model;
  model.variant = options.variant;
  model.gaussians = init.gaussians;
  model.channel = channel_init;
  model.lm_exponent = options.lm_exponent;
  model.seed = init.seed;

  const LmLattice lattice(lm, options.lm_exponent);
  const auto& x = features.rows;
  const Eigen::Index T = x.rows();
  EmTrace trace("lmgmm");

  Eigen::MatrixXd log_n = model.gaussians.log_densities(x);
  RowMatrix emissions = model.channel ? full_emissions(log_n, *model.channel) : RowMatrix(log_n);
  auto post = lattice.forward_backward(emissions);
  trace.record(post.log_likelihood);
  bool floor_logged = false;
  for (int it = 0; it < options.max_iters; ++it) {
    if (!model.channel) {
      model.gaussians.maximize(x, post.gamma);
    } else {
      ChannelMatrix& ch = *model.channel;
      const Eigen::Index V = ch.rows(), K = ch.cols();
      Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(V, K);
      Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(T, K);
      const Eigen::MatrixXd log_ch = ch.p.array().log().matrix();
      for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index e = 0; e < V; ++e) {
          const double g = post.gamma(t, e);
          if (g == 0.0) continue;
          for (Eigen::Index c = 0; c < K; ++c) {
            const double r = g * std::exp(log_ch(e, c) + log_n(t, c) - emissions(t, e));
            counts(e, c) += r;
            resp(t, c) += r;
          }
        }
      }
      for (Eigen::Index e = 0; e < V; ++e) {
        const double n = counts.row(e).sum();
        if (n > 0.0) ch.p.row(e) = counts.row(e) / n;
      }
      model.gaussians.maximize(x, resp);
    }
    if (!floor_logged && model.gaussians.covariance.mode != CovarianceMode::fixed &&
        (model.gaussians.variances.array() <= model.gaussians.floor).any()) {
      spdlog::debug("lmgmm: variance floor engaged at iteration {}", it + 1);
      floor_logged = true;
    }
    log_n = model.gaussians.log_densities(x);
    emissions = model.channel ? full_emissions(log_n, *model.channel) : RowMatrix(log_n);
    post = lattice.forward_backward(emissions);
    trace.record(post.log_likelihood);
    if (trace.last_relative_gain() < options.tol) break;
  }
  model.objective = trace.last();
  model.iterations = static_cast<int>(trace.iterations()) - 1;
  model.trace = trace.values();
  return model;
}

double lmgmm_objective(const FeatureMatrix& features, const NGramLM& lm, const LmGmmModel& model) {
  check_model(features, lm, model.variant, model.gaussians, model.channel);
  return LmLattice(lm, model.lm_exponent)
      .log_likelihood(lmgmm_log_emissions(features, model.gaussians, model.channel));
}

DeciphermentResult lmgmm_decode(const FeatureMatrix& features, const NGramLM& lm,
                                const LmGmmModel& model) {
  check_model(features, lm, model.variant, model.gaussians, model.channel);
  const LmLattice lattice(lm, model.lm_exponent);
  DeciphermentResult out;
  out.plaintext =
      lattice.viterbi(lmgmm_log_emissions(features, model.gaussians, model.channel), &out.score);
  out.text = lm.alphabet().render(out.plaintext);
  out.log_likelihood = model.objective;
  out.seed = model.seed;
  out.iterations = model.iterations;
  return out;
}

Decipher2Result decipher2(const FeatureMatrix& features, const NGramLM& lm,
                          std::span<const int> decoded3, const Decipher2Options& options,
                          std::span<const int> gold, const Transcription* transcription,
                          const ChannelMatrix* channel3) {
  if (options.restarts < 1) throw Error("restarts must be >= 1", "lmgmm");
  const bool full = options.em.variant == LmGmmVariant::full;
  if (full && (!transcription || !channel3)) {
    throw Error("full LM-GMM init needs the 3-stage transcription and channel", "lmgmm");
  }
  std::vector<LmGmmModel> models(static_cast<std::size_t>(options.restarts));
  std::vector<RestartRecord> records(models.size());
  std::string provenance;
  parallel_for(models.size(), [&](std::size_t r) {
    InitOptions io = options.init;
    io.seed = derive_seed(options.init.seed, r);
    const InitSpec init = full ? init_full_from_3stage(features, *transcription, *channel3, io)
                               : init_from_3stage(features, decoded3, lm.letters(), io);
    if (r == 0) provenance = init.provenance;
    models[r] = lmgmm_em(features, lm, init, options.em);
    records[r] = {io.seed, models[r].objective, models[r].iterations, {}};
    if (!gold.empty()) {
      records[r].ned = ned(lmgmm_decode(features, lm, models[r]).plaintext, gold);
    }
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < models.size(); ++r) {
    if (models[r].objective > models[best].objective) best = r;
  }
  Decipher2Result out;
  out.model = std::move(models[best]);
  out.result = lmgmm_decode(features, lm, out.model);
  out.diagnostics = std::move(records);
  out.provenance = provenance;
  return out;
}

void scatter_dump(std::span<const RestartRecord> diagnostics, const std::filesystem::path& path) {
  bool with_ned = true;
  for (const auto& r : diagnostics) with_ned = with_ned && r.ned.has_value();
  std::ofstream out(path);
  if (!out) throw Error("cannot write scatter file '" + path.string() + "'", "lmgmm");
  out.precision(17);
  out << (with_ned ? "seed,loglik,ned\n" : "seed,loglik\n");
  for (const auto& r : diagnostics) {
    out << r.seed << ',' << r.log_likelihood;
    if (with_ned) out << ',' << *r.ned;
    out << '\n';
  }
}

}  // namespace cipherpipe
