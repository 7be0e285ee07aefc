#include "cipherpipe/char_lm.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "cipherpipe/common.hpp"

namespace cipherpipe {
namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void check_order(int order) {
  if (order != 2 && order != 3) {
    throw Error("LM order must be 2 or 3, got " + std::to_string(order), "lm");
  }
}

}  // namespace

NGramLM::NGramLM(int order, Alphabet alphabet, double delta, std::vector<double> logprobs)
    : order_(order), alphabet_(std::move(alphabet)), delta_(delta),
      logprobs_(std::move(logprobs)) {
  check_order(order_);
  history_count_ = ipow(static_cast<std::size_t>(letters()) + 1, order_ - 1);
  if (logprobs_.size() != history_count_ * letters()) {
    throw Error("LM table has " + std::to_string(logprobs_.size()) +
                    " entries, expected " + std::to_string(history_count_ * letters()),
                "lm");
  }
}

std::size_t NGramLM::start_history() const noexcept {
  const std::size_t b = boundary();
  return order_ == 2 ? b : b * (b + 1) + b;
}

std::size_t NGramLM::history_index(std::span<const int> context) const {
  std::size_t h = start_history();
  for (int c : context) {
    if (c < 0 || c >= letters()) throw Error("history symbol out of range", "lm");
    h = advance(h, c);
  }
  return h;
}

std::string NGramLM::history_label(std::size_t history) const {
  const std::size_t base = static_cast<std::size_t>(letters()) + 1;
  std::u32string label(static_cast<std::size_t>(order_ - 1), U'^');
  for (int pos = order_ - 2; pos >= 0; --pos) {
    const std::size_t sym = history % base;
    history /= base;
    if (sym < static_cast<std::size_t>(letters())) {
      label[static_cast<std::size_t>(pos)] = alphabet_.letter(static_cast<int>(sym));
    }
  }
  return utf8_encode(label);
}

NGramLM lm_train(std::span<const std::vector<int>> sequences, const Alphabet& alphabet,
                 int order, double delta) {
  check_order(order);
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw Error("smoothing delta must be a finite value >= 0", "lm");
  }
  const int V = alphabet.size();
  const std::size_t H = ipow(static_cast<std::size_t>(V) + 1, order - 1);
  std::vector<double> counts(H * V, 0.0);
  std::size_t total = 0;
  NGramLM shape(order, alphabet, delta, std::vector<double>(H * V, 0.0));
  for (const auto& seq : sequences) {
    std::size_t h = shape.start_history();
    for (int c : seq) {
      if (c < 0 || c >= V) throw Error("corpus symbol out of range", "lm");
      counts[h * V + c] += 1.0;
      h = shape.advance(h, c);
      ++total;
    }
  }
  if (total == 0) throw Error("LM training corpus is empty after normalization", "lm");

  std::vector<double> logprobs(H * V);
  for (std::size_t h = 0; h < H; ++h) {
    double row = 0.0;
    for (int c = 0; c < V; ++c) row += counts[h * V + c];
    const double denom = row + delta * V;
    for (int c = 0; c < V; ++c) {
      logprobs[h * V + c] = denom > 0.0 ? std::log((counts[h * V + c] + delta) / denom)
                                        : -std::log(static_cast<double>(V));
    }
  }
  return NGramLM(order, alphabet, delta, std::move(logprobs));
}

NGramLM lm_train_text(std::span<const std::string> texts, const Alphabet& alphabet,
                      int order, double delta) {
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) seqs.push_back(alphabet.normalize(t));
  return lm_train(seqs, alphabet, order, delta);
}

double lm_logprob(const NGramLM& lm, std::span<const int> sequence) {
  double total = 0.0;
  std::size_t h = lm.start_history();
  for (int c : sequence) {
    if (c < 0 || c >= lm.letters()) {
      throw Error("symbol id " + std::to_string(c) + " outside the LM alphabet", "lm");
    }
    total += lm.logprob(h, c);
    h = lm.advance(h, c);
  }
  return total;
}

double lm_logprob(const NGramLM& lm, std::string_view text) {
  const auto ids = lm.alphabet().parse(text);
  return lm_logprob(lm, std::span<const int>(ids));
}

std::vector<double> unigram_frequencies(std::span<const std::vector<int>> sequences,
                                        int letters) {
  std::vector<double> f(static_cast<std::size_t>(letters), 0.0);
  double n = 0.0;
  for (const auto& s : sequences) {
    for (int c : s) {
      f.at(static_cast<std::size_t>(c)) += 1.0;
      n += 1.0;
    }
  }
  if (n > 0) {
    for (double& v : f) v /= n;
  }
  return f;
}

nlohmann::json to_json(const NGramLM& lm) {
  nlohmann::json rows = nlohmann::json::object();
  for (std::size_t h = 0; h < lm.history_count(); ++h) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < lm.letters(); ++c) {
      // JSON has no -inf; zero probabilities (delta = 0) are written as null.
      if (std::isfinite(lm.row(h)[c])) {
        row.push_back(lm.row(h)[c]);
      } else {
        row.push_back(nullptr);
      }
    }
    rows[lm.history_label(h)] = std::move(row);
  }
  return {{"order", lm.order()},
          {"alphabet", lm.alphabet().utf8()},
          {"alphabet_name", lm.alphabet().name()},
          {"delta", lm.delta()},
          {"logprobs", rows}};
}

NGramLM lm_from_json(const nlohmann::json& j) {
  const int order = j.at("order").get<int>();
  check_order(order);
  const Alphabet alphabet = Alphabet::from_utf8(j.value("alphabet_name", std::string("lm")),
                                                j.at("alphabet").get<std::string>());
  const int V = alphabet.size();
  const std::size_t H = ipow(static_cast<std::size_t>(V) + 1, order - 1);
  NGramLM shape(order, alphabet, 0.0, std::vector<double>(H * V, 0.0));
  std::vector<double> table(H * V);
  const auto& rows = j.at("logprobs");
  for (std::size_t h = 0; h < H; ++h) {
    const auto key = shape.history_label(h);
    if (!rows.contains(key)) throw Error("LM file lacks history '" + key + "'", "lm");
    const auto& row = rows.at(key);
    if (!row.is_array() || row.size() != static_cast<std::size_t>(V)) {
      throw Error("LM history '" + key + "' has the wrong width", "lm");
    }
    for (int c = 0; c < V; ++c) {
      table[h * V + c] = row[c].is_null() ? -std::numeric_limits<double>::infinity()
                                          : row[c].get<double>();
    }
  }
  return NGramLM(order, alphabet, j.value("delta", 0.0), std::move(table));
}

void write_lm(const std::filesystem::path& path, const NGramLM& lm) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write LM '" + path.string() + "'", "lm");
  out << to_json(lm).dump() << '\n';
}

NGramLM read_lm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read LM '" + path.string() + "'", "lm");
  return lm_from_json(nlohmann::json::parse(in));
}

}  // namespace cipherpipe
