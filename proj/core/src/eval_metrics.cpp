#include "cipherpipe/eval_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "cipherpipe/alphabet.hpp"
#include "cipherpipe/common.hpp"
#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

template <typename A, typename B>
std::size_t levenshtein(const A& a, const B& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

int count_types(std::span<const int> ids) {
  int hi = -1;
  for (int v : ids) {
    if (v < 0) throw Error("negative symbol id", "eval");
    hi = std::max(hi, v);
  }
  return hi + 1;
}

struct NedoaRun {
  double score;
  std::vector<int> mapping;
  std::vector<double> trace;
};

double mapped_ned(std::span<const int> auto_ids, std::span<const int> gold,
                  std::span<const int> mapping) {
  const auto mapped = apply_mapping(auto_ids, mapping);
  return ned(mapped, gold);
}

NedoaRun em_from(std::span<const int> auto_ids, std::span<const int> gold, int gold_types,
                 std::vector<int> mapping, int max_iters) {
  NedoaRun run{mapped_ned(auto_ids, gold, mapping), mapping, {}};
  run.trace.push_back(run.score);
  const int K = static_cast<int>(mapping.size());
  std::vector<int> counts(static_cast<std::size_t>(K) * gold_types);
  for (int it = 0; it < max_iters; ++it) {
    const auto mapped = apply_mapping(auto_ids, mapping);
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& p : align(mapped, gold)) {
      if (p.op == AlignOp::match || p.op == AlignOp::substitute) {
        ++counts[static_cast<std::size_t>(auto_ids[p.hyp_pos]) * gold_types + gold[p.ref_pos]];
      }
    }
    std::vector<int> next = mapping;
    for (int c = 0; c < K; ++c) {
      if (mapping[c] < 0) continue;
      const int* row = counts.data() + static_cast<std::size_t>(c) * gold_types;
      int best = mapping[c];
      for (int g = 0; g < gold_types; ++g) {
        if (row[g] > row[best]) best = g;
      }
      next[c] = best;
    }
    if (next == mapping) break;
    const double s = mapped_ned(auto_ids, gold, next);
    if (s > run.score + 1e-12) {
      throw Error("NEDoA EM score increased; alignment remap is broken", "eval");
    }
    mapping = std::move(next);
    run.trace.push_back(s);
    if (s < run.score) {
      run.score = s;
      run.mapping = mapping;
    } else {
      break;
    }
  }
  return run;
}

std::vector<int> frequency_rank_mapping(std::span<const int> auto_ids,
                                        std::span<const int> gold, int K, int G) {
  auto ranks = [](std::span<const int> ids, int n) {
    std::vector<int> freq(static_cast<std::size_t>(n), 0);
    for (int v : ids) ++freq[static_cast<std::size_t>(v)];
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return freq[a] > freq[b]; });
    return std::pair{order, freq};
  };
  const auto [auto_order, auto_freq] = ranks(auto_ids, K);
  const auto [gold_order, gold_freq] = ranks(gold, G);
  std::vector<int> mapping(static_cast<std::size_t>(K), -1);
  for (int r = 0; r < K; ++r) {
    const int c = auto_order[r];
    if (auto_freq[c] == 0) continue;
    mapping[c] = gold_order[std::min(r, G - 1)];
  }
  return mapping;
}

NedoaRun exhaustive(std::span<const int> auto_ids, std::span<const int> gold, int K, int G) {
  std::vector<int> observed;
  std::vector<bool> seen(static_cast<std::size_t>(K), false);
  for (int v : auto_ids) seen[v] = true;
  for (int c = 0; c < K; ++c) {
    if (seen[c]) observed.push_back(c);
  }
  if (static_cast<int>(observed.size()) > kExhaustiveMaxTypes || G > kExhaustiveMaxTypes) {
    throw Error("exhaustive NEDoA is limited to " + std::to_string(kExhaustiveMaxTypes) +
                    " cluster and gold types",
                "eval");
  }
  std::vector<int> mapping(static_cast<std::size_t>(K), -1);
  for (int c : observed) mapping[c] = 0;
  NedoaRun best{std::numeric_limits<double>::infinity(), mapping, {}};
  // Odometer over G^|observed|.
  while (true) {
    const double s = mapped_ned(auto_ids, gold, mapping);
    if (s < best.score) {
      best.score = s;
      best.mapping = mapping;
    }
    std::size_t k = 0;
    for (; k < observed.size(); ++k) {
      int& m = mapping[observed[k]];
      if (++m < G) break;
      m = 0;
    }
    if (k == observed.size()) break;
  }
  best.trace.push_back(best.score);
  return best;
}

}  // namespace

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  return levenshtein(a, b);
}

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  return levenshtein(a, b);
}

double ned(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw Error("NED reference is empty", "eval");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double ned(std::string_view hyp, std::string_view ref) {
  const auto h = utf8_decode(hyp);
  const auto r = utf8_decode(ref);
  if (r.empty()) throw Error("NED reference is empty", "eval");
  return static_cast<double>(edit_distance(h, r)) / static_cast<double>(r.size());
}

std::vector<AlignedPair> align(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1),
                           at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  std::vector<AlignedPair> out;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = hyp[i - 1] == ref[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        out.push_back({same ? AlignOp::match : AlignOp::substitute, static_cast<int>(i - 1),
                       static_cast<int>(j - 1)});
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.push_back({AlignOp::remove, static_cast<int>(i - 1), -1});
      --i;
    } else {
      out.push_back({AlignOp::insert, -1, static_cast<int>(j - 1)});
      --j;
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

SymbolSequence parse_symbols(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  if (tokens.size() == 1) {
    const auto chars = utf8_decode(tokens[0]);
    tokens.clear();
    for (char32_t c : chars) tokens.push_back(utf8_encode(c));
  }
  SymbolSequence out;
  std::map<std::string, int> index;
  for (auto& t : tokens) {
    auto [it, inserted] = index.try_emplace(t, static_cast<int>(out.types.size()));
    if (inserted) out.types.push_back(t);
    out.ids.push_back(it->second);
  }
  return out;
}

std::vector<int> apply_mapping(std::span<const int> ids, std::span<const int> mapping) {
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int c = ids[i];
    if (c < 0 || static_cast<std::size_t>(c) >= mapping.size() || mapping[c] < 0) {
      throw Error("cluster id " + std::to_string(c) + " has no mapping", "eval");
    }
    out[i] = mapping[c];
  }
  return out;
}

NedoaResult nedoa(std::span<const int> auto_ids, std::span<const int> gold_ids, int gold_types,
                  const NedoaOptions& options) {
  if (auto_ids.empty() || gold_ids.empty()) {
    throw Error("NEDoA needs non-empty sequences", "eval");
  }
  const int K = count_types(auto_ids);
  const int G = std::max(gold_types, count_types(gold_ids));
  NedoaRun best;
  if (options.method == NedoaMethod::exhaustive) {
    best = exhaustive(auto_ids, gold_ids, K, G);
  } else {
    if (options.restarts < 1) throw Error("NEDoA restarts must be >= 1", "eval");
    std::vector<NedoaRun> runs(static_cast<std::size_t>(options.restarts));
    const auto first = frequency_rank_mapping(auto_ids, gold_ids, K, G);
    parallel_for(runs.size(), [&](std::size_t r) {
      std::vector<int> init = first;
      if (r > 0) {
        Rng rng(derive_seed(options.seed, r));
        std::uniform_int_distribution<int> pick(0, G - 1);
        for (int& m : init) {
          if (m >= 0) m = pick(rng);
        }
      }
      runs[r] = em_from(auto_ids, gold_ids, G, std::move(init), options.max_iters);
    });
    std::size_t b = 0;
    for (std::size_t r = 1; r < runs.size(); ++r) {
      if (runs[r].score < runs[b].score) b = r;
    }
    best = std::move(runs[b]);
  }
  return {best.score, std::move(best.mapping), std::move(best.trace)};
}

nlohmann::json nedoa_report(const NedoaResult& result, std::span<const int> auto_ids,
                            const SymbolSequence& gold,
                            const std::vector<std::string>& auto_names) {
  auto name = [&](int c) {
    return static_cast<std::size_t>(c) < auto_names.size() ? auto_names[c]
                                                           : "c" + std::to_string(c);
  };
  nlohmann::json mapping = nlohmann::json::object();
  for (std::size_t c = 0; c < result.mapping.size(); ++c) {
    if (result.mapping[c] >= 0) mapping[name(static_cast<int>(c))] = gold.types.at(result.mapping[c]);
  }
  nlohmann::json confusion = nlohmann::json::object();
  const auto mapped = apply_mapping(auto_ids, result.mapping);
  for (const auto& p : align(mapped, gold.ids)) {
    if (p.op == AlignOp::match || p.op == AlignOp::substitute) {
      auto& cell = confusion[name(auto_ids[p.hyp_pos])][gold.types.at(gold.ids[p.ref_pos])];
      cell = cell.is_null() ? 1 : cell.get<int>() + 1;
    }
  }
  return {{"score", result.score}, {"mapping", mapping}, {"confusion", confusion}};
}

}  // namespace cipherpipe
