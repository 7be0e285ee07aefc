#include "cipherpipe/noisy_channel.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

#include "cipherpipe/eval_metrics.hpp"
#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

void check_transcription(const Transcription& t) {
  if (t.ids.empty()) throw Error("transcription is empty", "decipher");
  if (t.K < 1) throw Error("transcription K must be >= 1", "decipher");
  for (int id : t.ids) {
    if (id < 0 || id >= t.K) throw Error("transcription id outside [0, K)", "decipher");
  }
}

void check_dims(const Transcription& t, const ChannelMatrix& ch, int letters) {
  if (ch.rows() != letters || ch.cols() != t.K) {
    throw Error("channel is " + std::to_string(ch.rows()) + "x" + std::to_string(ch.cols()) +
                    ", expected " + std::to_string(letters) + "x" + std::to_string(t.K),
                "decipher");
  }
}

}  // namespace

bool ChannelMatrix::rows_normalized(double tol) const {
  for (Eigen::Index e = 0; e < p.rows(); ++e) {
    if (std::abs(p.row(e).sum() - 1.0) > tol) return false;
    if ((p.row(e).array() < 0.0).any()) return false;
  }
  return true;
}

ChannelMatrix ChannelMatrix::uniform(int letters, int symbols) {
  return {Eigen::MatrixXd::Constant(letters, symbols, 1.0 / symbols)};
}

ChannelMatrix ChannelMatrix::random(int letters, int symbols, double concentration, Rng& rng) {
  if (!(concentration > 0.0)) throw Error("Dirichlet concentration must be positive", "decipher");
  std::gamma_distribution<double> g(concentration, 1.0);
  ChannelMatrix ch{Eigen::MatrixXd(letters, symbols)};
  for (int e = 0; e < letters; ++e) {
    double sum = 0.0;
    for (int c = 0; c < symbols; ++c) {
      ch.p(e, c) = g(rng) + 1e-300;
      sum += ch.p(e, c);
    }
    ch.p.row(e) /= sum;
  }
  return ch;
}

ChannelMatrix ChannelMatrix::from_mapping(const std::vector<int>& letter_to_symbol,
                                          int symbols) {
  ChannelMatrix ch{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(letter_to_symbol.size()),
                                         symbols)};
  for (std::size_t e = 0; e < letter_to_symbol.size(); ++e) {
    const int c = letter_to_symbol[e];
    if (c >= 0 && c < symbols) {
      ch.p(static_cast<Eigen::Index>(e), c) = 1.0;
    } else {
      ch.p.row(static_cast<Eigen::Index>(e)).setConstant(1.0 / symbols);
    }
  }
  return ch;
}

nlohmann::json to_json(const ChannelMatrix& channel, const Alphabet& alphabet) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index e = 0; e < channel.p.rows(); ++e) {
    rows.push_back(std::vector<double>(channel.p.row(e).begin(), channel.p.row(e).end()));
  }
  std::vector<std::string> row_labels;
  for (int e = 0; e < channel.rows(); ++e) {
    row_labels.push_back(e < alphabet.size() ? utf8_encode(alphabet.letter(e))
                                             : std::to_string(e));
  }
  std::vector<std::string> col_labels;
  for (int c = 0; c < channel.cols(); ++c) col_labels.push_back("c" + std::to_string(c));
  return {{"rows", row_labels}, {"cols", col_labels}, {"matrix", rows}};
}

ChannelMatrix channel_from_json(const nlohmann::json& j) {
  const auto& m = j.at("matrix");
  const auto R = static_cast<Eigen::Index>(m.size());
  const auto C = R > 0 ? static_cast<Eigen::Index>(m.at(0).size()) : 0;
  ChannelMatrix ch{Eigen::MatrixXd(R, C)};
  for (Eigen::Index r = 0; r < R; ++r) {
    if (static_cast<Eigen::Index>(m.at(r).size()) != C) {
      throw Error("ragged channel matrix", "decipher");
    }
    for (Eigen::Index c = 0; c < C; ++c) ch.p(r, c) = m.at(r).at(c).get<double>();
  }
  if (!ch.rows_normalized(1e-6)) throw Error("channel rows do not sum to 1", "decipher");
  return ch;
}

void write_channel(const std::filesystem::path& path, const ChannelMatrix& channel,
                   const Alphabet& alphabet) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write channel '" + path.string() + "'", "decipher");
  out << to_json(channel, alphabet).dump() << '\n';
}

ChannelMatrix read_channel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read channel '" + path.string() + "'", "decipher");
  return channel_from_json(nlohmann::json::parse(in));
}

RowMatrix channel_log_emissions(const Transcription& t, const ChannelMatrix& channel) {
  const Eigen::MatrixXd logp = channel.p.array().log().matrix();
  RowMatrix out(static_cast<Eigen::Index>(t.ids.size()), channel.rows());
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = logp.col(t.ids[i]).transpose();
  }
  return out;
}

ChannelEmResult channel_em_from(const Transcription& transcription, const LmLattice& lattice,
                                ChannelMatrix channel, int max_iters, double tol) {
  check_transcription(transcription);
  check_dims(transcription, channel, lattice.letters());
  EmTrace trace("channel");
  auto post = lattice.forward_backward(channel_log_emissions(transcription, channel));
  trace.record(post.log_likelihood);
  Eigen::MatrixXd counts(channel.rows(), channel.cols());
  for (int it = 0; it < max_iters; ++it) {
    counts.setZero();
    for (std::size_t t = 0; t < transcription.ids.size(); ++t) {
      counts.col(transcription.ids[t]) += post.gamma.row(static_cast<Eigen::Index>(t)).transpose();
    }
    for (Eigen::Index e = 0; e < counts.rows(); ++e) {
      const double n = counts.row(e).sum();
      if (n > 0.0) channel.p.row(e) = counts.row(e) / n;
    }
    post = lattice.forward_backward(channel_log_emissions(transcription, channel));
    trace.record(post.log_likelihood);
    if (trace.last_relative_gain() < tol) break;
  }
  ChannelEmResult out;
  out.channel = std::move(channel);
  out.log_likelihood = trace.last();
  out.iterations = static_cast<int>(trace.iterations()) - 1;
  return out;
}

ChannelEmResult channel_em(const Transcription& transcription, const NGramLM& lm,
                           const ChannelEmOptions& options) {
  check_transcription(transcription);
  if (options.restarts < 1) throw Error("restarts must be >= 1", "decipher");
  if (options.init) check_dims(transcription, *options.init, lm.letters());
  const LmLattice lattice(lm, options.lm_exponent);
  std::vector<ChannelEmResult> runs(static_cast<std::size_t>(options.restarts));
  parallel_for(runs.size(), [&](std::size_t r) {
    const std::uint64_t seed = derive_seed(options.seed, r);
    Rng rng(seed);
    ChannelMatrix init = (r == 0 && options.init)
                             ? *options.init
                             : ChannelMatrix::random(lm.letters(), transcription.K,
                                                     options.init_concentration, rng);
    runs[r] = channel_em_from(transcription, lattice, std::move(init), options.max_iters,
                              options.tol);
    runs[r].seed = seed;
  });
  std::vector<std::optional<double>> neds(runs.size());
  if (!options.gold.empty()) {
    const LmLattice decoder(lm, options.gold_decode_exponent);
    parallel_for(runs.size(), [&](std::size_t r) {
      neds[r] = ned(decoder.viterbi(channel_log_emissions(transcription, runs[r].channel)),
                    options.gold);
    });
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].log_likelihood > runs[best].log_likelihood) best = r;
  }
  ChannelEmResult out = runs[best];
  for (std::size_t r = 0; r < runs.size(); ++r) {
    out.restarts.push_back({runs[r].seed, runs[r].log_likelihood, runs[r].iterations, neds[r]});
  }
  spdlog::debug("decipher: {} channel EM restarts, best log P(C) {:.4f}", runs.size(),
                out.log_likelihood);
  return out;
}

double channel_log_likelihood(const Transcription& transcription, const NGramLM& lm,
                              const ChannelMatrix& channel, double lm_exponent) {
  check_transcription(transcription);
  check_dims(transcription, channel, lm.letters());
  return LmLattice(lm, lm_exponent)
      .log_likelihood(channel_log_emissions(transcription, channel));
}

nlohmann::json to_json(const DeciphermentResult& r) {
  return {{"plaintext", r.text},
          {"loglik", r.log_likelihood},
          {"score", r.score},
          {"seed", r.seed},
          {"iterations", r.iterations}};
}

void write_result(const std::filesystem::path& path, const DeciphermentResult& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write result '" + path.string() + "'", "decipher");
  out << to_json(r).dump(2) << '\n';
}

DeciphermentResult viterbi_decode(const Transcription& transcription, const NGramLM& lm,
                                  const ChannelMatrix& channel, double lm_exponent) {
  check_transcription(transcription);
  check_dims(transcription, channel, lm.letters());
  const LmLattice lattice(lm, lm_exponent);
  const RowMatrix emissions = channel_log_emissions(transcription, channel);
  DeciphermentResult out;
  out.plaintext = lattice.viterbi(emissions, &out.score);
  out.text = lm.alphabet().render(out.plaintext);
  out.log_likelihood = lattice.log_likelihood(emissions);
  return out;
}

Decipher3Result decipher3(const Transcription& transcription, const NGramLM& lm,
                          const Decipher3Options& options) {
  Decipher3Result out;
  out.em = channel_em(transcription, lm, options.em);
  out.result = viterbi_decode(transcription, lm, out.em.channel, options.decode_exponent);
  out.result.log_likelihood = out.em.log_likelihood;
  out.result.seed = out.em.seed;
  out.result.iterations = out.em.iterations;
  return out;
}

Decipher3Result decipher3_seeded(const Transcription& transcription, const NGramLM& lm,
                                 const NGramLM& seed_lm, Decipher3Options options,
                                 const ChannelEmOptions& seed_options) {
  if (seed_lm.letters() != lm.letters())
    throw Error("seed LM alphabet differs from the main LM", "decipher");
  const auto seeded = channel_em(transcription, seed_lm, seed_options);
  spdlog::debug("seed channel loglik {:.4f} under order {}", seeded.log_likelihood,
                seed_lm.order());
  options.em.init = seeded.channel;
  return decipher3(transcription, lm, options);
}

}  // namespace cipherpipe
