#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cipherpipe {

/// Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
std::size_t edit_distance(std::u32string_view a, std::u32string_view b);

/// edit_distance(hyp, ref) / |ref|; throws on an empty reference.
double ned(std::span<const int> hyp, std::span<const int> ref);
/// Same on UTF-8 strings, compared code point by code point.
double ned(std::string_view hyp, std::string_view ref);

enum class AlignOp { match, substitute, insert, remove };

struct AlignedPair {
  AlignOp op;
  int hyp_pos;  ///< -1 for an insertion (symbol only in ref)
  int ref_pos;  ///< -1 for a removal (symbol only in hyp)
};

/// One minimum-cost alignment. Ties prefer the diagonal, then removal.
std::vector<AlignedPair> align(std::span<const int> hyp, std::span<const int> ref);

/// A symbol sequence over a list of named types.
struct SymbolSequence {
  std::vector<std::string> types;
  std::vector<int> ids;
};

/// Whitespace-separated tokens; a text with a single token is split into its
/// characters instead.
SymbolSequence parse_symbols(std::string_view text);

enum class NedoaMethod { em, exhaustive };

struct NedoaOptions {
  NedoaMethod method = NedoaMethod::em;
  int restarts = 20;
  std::uint64_t seed = 1;
  int max_iters = 100;
};

struct NedoaResult {
  double score = 0.0;
  /// mapping[c] = gold type id for every cluster id seen in the input, -1
  /// for ids that never occur.
  std::vector<int> mapping;
  /// Per-iteration scores of the winning EM restart.
  std::vector<double> trace;
};

/// Minimum NED over many-to-one maps from cluster ids to gold types.
/// `gold_types` is the number of gold symbol types.
NedoaResult nedoa(std::span<const int> auto_ids, std::span<const int> gold_ids,
                  int gold_types, const NedoaOptions& options = {});

/// The largest instance the exhaustive method accepts.
inline constexpr int kExhaustiveMaxTypes = 6;

/// Applies a mapping to cluster ids.
std::vector<int> apply_mapping(std::span<const int> ids, std::span<const int> mapping);

/// {score, mapping: {"c0": "z", ...}, confusion: {"c0": {"z": 1}, ...}}.
nlohmann::json nedoa_report(const NedoaResult& result, std::span<const int> auto_ids,
                            const SymbolSequence& gold,
                            const std::vector<std::string>& auto_names = {});

}  // namespace cipherpipe
