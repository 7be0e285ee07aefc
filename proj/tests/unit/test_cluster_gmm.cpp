#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/cluster_gmm.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

using namespace cipherpipe;

namespace {

FeatureMatrix clouds(const std::vector<Eigen::VectorXd>& centres, int per, double sd,
                     std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  const auto d = centres.front().size();
  FeatureMatrix f;
  f.rows.resize(static_cast<Eigen::Index>(centres.size()) * per, d);
  Eigen::Index row = 0;
  for (const auto& c : centres) {
    for (int i = 0; i < per; ++i, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) f.rows(row, j) = c(j) + n(rng);
    }
  }
  return f;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

}  // namespace

TEST_CASE("covariance names") {
  CHECK(CovarianceSpec::parse("diagonal").mode == CovarianceMode::diagonal);
  CHECK(CovarianceSpec::parse("spherical").mode == CovarianceMode::spherical);
  const auto f = CovarianceSpec::parse("fixed:0.01");
  CHECK(f.mode == CovarianceMode::fixed);
  CHECK(f.fixed_variance == doctest::Approx(0.01));
  CHECK(CovarianceSpec::parse(f.name()) == f);
  CHECK_THROWS_AS(CovarianceSpec::parse("full"), Error);
  CHECK_THROWS_AS(CovarianceSpec::parse("fixed:-1"), Error);
  CHECK(default_covariance_options().size() == 6);
}

TEST_CASE("K = 1 gives the sample mean") {
  const auto f = clouds({vec({1.0, -2.0})}, 50, 0.5, 3);
  GmmOptions o;
  o.K = 1;
  o.covariance = CovarianceSpec::parse("fixed:1");
  const auto m = gmm_fit(f, o);
  CHECK(m.weights(0) == doctest::Approx(1.0));
  CHECK((m.gaussians.means.row(0).transpose() - f.rows.colwise().mean().transpose()).norm() <
        1e-9);
}

TEST_CASE("two separated clouds are recovered") {
  const auto a = vec({0.0, 0.0, 0.0});
  const auto b = vec({10.0, 10.0, -10.0});
  const auto f = clouds({a, b}, 60, 1.0, 5);
  for (const auto& cov : default_covariance_options()) {
    GmmOptions o;
    o.K = 2;
    o.covariance = cov;
    o.seed = 7;
    const auto m = gmm_fit(f, o);
    const double sep = (a - b).norm();
    const Eigen::VectorXd m0 = m.gaussians.means.row(0).transpose();
    const Eigen::VectorXd m1 = m.gaussians.means.row(1).transpose();
    const double d = std::min(std::max((m0 - a).norm(), (m1 - b).norm()),
                              std::max((m0 - b).norm(), (m1 - a).norm()));
    CHECK_MESSAGE(d < 0.1 * sep, cov.name());
  }
}

TEST_CASE("likelihood trace never decreases") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureMatrix f;
    f.rows.resize(40, 4);
    for (Eigen::Index i = 0; i < f.rows.size(); ++i) f.rows.data()[i] = u(rng);
    for (const auto& cov : default_covariance_options()) {
      GmmOptions o;
      o.K = 3;
      o.covariance = cov;
      o.seed = static_cast<std::uint64_t>(trial);
      o.restarts = 2;
      const auto m = gmm_fit(f, o);
      for (std::size_t i = 1; i < m.trace.size(); ++i) {
        CHECK(m.trace[i] >= m.trace[i - 1] - 1e-9 * std::abs(m.trace[i - 1]));
      }
    }
  }
}

TEST_CASE("assignment rules") {
  GmmModel m;
  m.gaussians.covariance = CovarianceSpec::parse("fixed:1");
  m.gaussians.means.resize(3, 2);
  m.gaussians.means << 0, 0, 4, 0, 0, 4;
  m.gaussians.variances = Eigen::MatrixXd::Ones(3, 2);
  m.weights = Eigen::VectorXd::Constant(3, 1.0 / 3);

  FeatureMatrix f;
  f.rows = m.gaussians.means;
  const auto t = gmm_assign(m, f);
  CHECK(t.ids == std::vector<int>{0, 1, 2});
  CHECK(t.K == 3);

  f.rows.resize(1, 2);
  f.rows << 2, 0;  // equidistant from components 0 and 1
  CHECK(gmm_assign(m, f).ids == std::vector<int>{0});
}

TEST_CASE("assignment equals direct posterior evaluation") {
  Rng rng(13);
  std::uniform_real_distribution<double> u(-2, 2);
  std::uniform_real_distribution<double> var(0.2, 2.0);
  GmmModel m;
  m.gaussians.covariance.mode = CovarianceMode::diagonal;
  m.gaussians.means.resize(3, 2);
  m.gaussians.variances.resize(3, 2);
  for (Eigen::Index i = 0; i < 6; ++i) {
    m.gaussians.means.data()[i] = u(rng);
    m.gaussians.variances.data()[i] = var(rng);
  }
  m.weights = vec({0.2, 0.5, 0.3});
  FeatureMatrix f;
  f.rows.resize(5, 2);
  for (Eigen::Index i = 0; i < 10; ++i) f.rows.data()[i] = u(rng);

  const auto t = gmm_assign(m, f);
  double total = 0;
  for (int i = 0; i < 5; ++i) {
    int best = 0;
    double best_p = -1;
    double sum = 0;
    for (int k = 0; k < 3; ++k) {
      double p = m.weights(k);
      for (int j = 0; j < 2; ++j) {
        const double v = m.gaussians.variances(k, j);
        const double z = f.rows(i, j) - m.gaussians.means(k, j);
        p *= std::exp(-0.5 * z * z / v) / std::sqrt(2 * std::numbers::pi * v);
      }
      sum += p;
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    total += std::log(sum);
    CHECK(t.ids[i] == best);
  }
  CHECK(gmm_log_likelihood(m, f) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("label permutation permutes the transcription") {
  const auto f = clouds({vec({0, 0}), vec({5, 0}), vec({0, 5})}, 20, 0.7, 17);
  GmmOptions o;
  o.K = 3;
  o.covariance.mode = CovarianceMode::diagonal;
  const auto m = gmm_fit(f, o);
  const auto t = gmm_assign(m, f);
  const std::vector<int> perm{2, 0, 1};
  GmmModel p = m;
  for (int k = 0; k < 3; ++k) {
    p.gaussians.means.row(perm[k]) = m.gaussians.means.row(k);
    p.gaussians.variances.row(perm[k]) = m.gaussians.variances.row(k);
    p.weights(perm[k]) = m.weights(k);
  }
  const auto tp = gmm_assign(p, f);
  for (std::size_t i = 0; i < t.ids.size(); ++i) CHECK(tp.ids[i] == perm[t.ids[i]]);
  CHECK(gmm_assign(m, f) == t);
}

TEST_CASE("fit is reproducible and checks its input") {
  const auto f = clouds({vec({0, 0}), vec({3, 3})}, 15, 1.0, 19);
  GmmOptions o;
  o.K = 2;
  o.seed = 4;
  const auto a = gmm_fit(f, o);
  const auto b = gmm_fit(f, o);
  CHECK(a.gaussians.means == b.gaussians.means);
  CHECK(a.log_likelihood == b.log_likelihood);
  o.K = 31;
  CHECK_THROWS_AS(gmm_fit(f, o), Error);
}

TEST_CASE("model selection") {
  // Spherical clouds with variance 0.01: fixed:0.01 should beat the other
  // fixed values.
  const auto f = clouds({vec({0, 0, 0}), vec({2, 2, 2})}, 80, 0.1, 23);
  GmmOptions o;
  o.K = 2;
  const auto single = model_selection(f, o, {CovarianceSpec::parse("fixed:0.1")});
  CHECK(single.best.gaussians.covariance.name() == "fixed:0.1");
  CHECK(single.scores.size() == 1);

  std::vector<CovarianceSpec> fixed;
  for (const char* n : {"fixed:1", "fixed:0.1", "fixed:0.01", "fixed:0.001"}) {
    fixed.push_back(CovarianceSpec::parse(n));
  }
  const auto sel = model_selection(f, o, fixed);
  CHECK(sel.best.gaussians.covariance.name() == "fixed:0.01");
  CHECK(sel.scores.size() == 4);
}

TEST_CASE("model and transcription JSON round trip") {
  const auto f = clouds({vec({0, 0}), vec({3, 3})}, 10, 1.0, 29);
  for (const auto& cov : default_covariance_options()) {
    GmmOptions o;
    o.K = 2;
    o.covariance = cov;
    const auto m = gmm_fit(f, o);
    const auto back = gmm_model_from_json(to_json(m));
    CHECK(back.gaussians.covariance == m.gaussians.covariance);
    CHECK((back.gaussians.means - m.gaussians.means).norm() == doctest::Approx(0.0));
    CHECK(gmm_assign(back, f) == gmm_assign(m, f));
  }
  const Transcription t{{0, 1, 1, 0}, 2};
  const auto path = std::filesystem::temp_directory_path() / "cipherpipe_tr_rt.json";
  write_transcription(path, t);
  CHECK(read_transcription(path) == t);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(transcription_from_json({{"K", 2}, {"ids", {0, 2}}}), Error);
}
