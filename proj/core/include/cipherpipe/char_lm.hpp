#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cipherpipe/alphabet.hpp"

namespace cipherpipe {

/// Character n-gram model (n = 2 or 3) with additive smoothing. Histories are
/// the previous n-1 letters; before the start of a sequence the boundary
/// symbol (id V) pads the history. There is no end symbol.
class NGramLM {
 public:
  NGramLM() = default;
  NGramLM(int order, Alphabet alphabet, double delta, std::vector<double> logprobs);

  int order() const noexcept { return order_; }
  int letters() const noexcept { return alphabet_.size(); }
  int boundary() const noexcept { return alphabet_.size(); }
  double delta() const noexcept { return delta_; }
  const Alphabet& alphabet() const noexcept { return alphabet_; }

  /// (V+1)^(n-1).
  std::size_t history_count() const noexcept { return history_count_; }

  /// History index of the context (older first); missing leading entries are
  /// boundary symbols.
  std::size_t history_index(std::span<const int> context) const;
  /// Index of the history reached after appending `next` to history `h`.
  std::size_t advance(std::size_t h, int next) const noexcept {
    return order_ == 2 ? static_cast<std::size_t>(next)
                       : (h % (letters() + 1)) * (letters() + 1) + next;
  }
  std::size_t start_history() const noexcept;

  double logprob(std::size_t history, int letter) const noexcept {
    return logprobs_[history * letters() + letter];
  }
  const double* row(std::size_t history) const noexcept {
    return logprobs_.data() + history * letters();
  }
  const std::vector<double>& table() const noexcept { return logprobs_; }

  /// Text key of a history, boundary written as '^'.
  std::string history_label(std::size_t history) const;

 private:
  int order_ = 2;
  Alphabet alphabet_;
  double delta_ = 0.1;
  std::size_t history_count_ = 0;
  std::vector<double> logprobs_;  // history_count x V
};

/// Counts over each sequence (each starting from the boundary history) with
/// additive-delta smoothing. With delta = 0 a history never seen in training
/// gets the uniform distribution.
NGramLM lm_train(std::span<const std::vector<int>> sequences, const Alphabet& alphabet,
                 int order, double delta = 0.1);
/// Normalises each text with the alphabet and trains on the results.
NGramLM lm_train_text(std::span<const std::string> texts, const Alphabet& alphabet,
                      int order, double delta = 0.1);

double lm_logprob(const NGramLM& lm, std::span<const int> sequence);
/// Strict: every code point must be in the LM alphabet.
double lm_logprob(const NGramLM& lm, std::string_view text);

/// Frequencies of letters in the training text, used by the synthesizer.
std::vector<double> unigram_frequencies(std::span<const std::vector<int>> sequences,
                                        int letters);

nlohmann::json to_json(const NGramLM& lm);
NGramLM lm_from_json(const nlohmann::json& j);
void write_lm(const std::filesystem::path& path, const NGramLM& lm);
NGramLM read_lm(const std::filesystem::path& path);

}  // namespace cipherpipe
