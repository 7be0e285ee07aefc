#include "cipherpipe/synth_cipher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cipherpipe/common.hpp"
#include "cipherpipe/glyph_features.hpp"

namespace cipherpipe {
namespace {

void stamp_disc(PageBitmap& bmp, double cx, double cy, int r) {
  const int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
  const int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
  for (int y = std::max(0, y0); y <= std::min(bmp.height() - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(bmp.width() - 1, x1); ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r * r + 0.25) bmp.set(x, y, true);
    }
  }
}

std::vector<bool> glyph_mask(const PageBitmap& glyph) {
  const auto g = normalize_glyph(glyph).grid;
  std::vector<bool> mask(g.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = g.values[i] >= 0.5;
  return mask;
}

double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> largest_remainder(std::span<const double> share, int total) {
  std::vector<int> n(share.size());
  std::vector<std::pair<double, std::size_t>> rest;
  int used = 0;
  for (std::size_t i = 0; i < share.size(); ++i) {
    const double want = share[i] * total;
    n[i] = static_cast<int>(std::floor(want));
    used += n[i];
    rest.push_back({want - n[i], i});
  }
  std::stable_sort(rest.begin(), rest.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++n[rest[k % rest.size()].second];
  return n;
}

}  // namespace

const char* to_string(WidthMode mode) noexcept {
  return mode == WidthMode::fixed ? "fixed" : "variable";
}

WidthMode width_mode_from_string(const std::string& name) {
  if (name == "fixed") return WidthMode::fixed;
  if (name == "variable") return WidthMode::variable;
  throw Error("unknown width mode '" + name + "'", "synth");
}

GlyphSet make_glyph_set(const GlyphSetOptions& o) {
  if (o.count < 1) throw Error("glyph count must be >= 1", "synth");
  if (o.min_strokes < 1 || o.max_strokes < o.min_strokes) {
    throw Error("bad stroke range", "synth");
  }
  const int min_w = o.mode == WidthMode::fixed ? o.width : o.min_width;
  const int max_w = o.mode == WidthMode::fixed ? o.width : o.max_width;
  if (min_w < 4 * o.brush_radius || max_w < min_w || o.height < 4 * o.brush_radius) {
    throw Error("glyph box too small for the brush", "synth");
  }
  Rng rng(o.seed);
  std::uniform_int_distribution<int> strokes(o.min_strokes, o.max_strokes);
  std::uniform_int_distribution<int> width(min_w, max_w);
  GlyphSet set;
  set.mode = o.mode;
  std::vector<std::vector<bool>> masks;
  const int r = o.brush_radius;
  int attempts = 0;
  while (set.size() < o.count) {
    if (++attempts > 20000 + 200 * o.count) {
      throw Error("could not generate " + std::to_string(o.count) + " distinct glyphs", "synth");
    }
    const int w = width(rng);
    PageBitmap bmp(w, o.height);
    std::uniform_real_distribution<double> ux(r, w - 1 - r), uy(r, o.height - 1 - r);
    const int n = strokes(rng);
    double px = ux(rng), py = uy(rng);
    double lo_x = px, hi_x = px, lo_y = py, hi_y = py;
    for (int s = 0; s < n; ++s) {
      const double qx = ux(rng), qy = uy(rng);
      const double len = std::hypot(qx - px, qy - py);
      const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
      for (int k = 0; k <= steps; ++k) {
        const double f = static_cast<double>(k) / steps;
        stamp_disc(bmp, px + f * (qx - px), py + f * (qy - py), r);
      }
      px = qx;
      py = qy;
      lo_x = std::min(lo_x, px);
      hi_x = std::max(hi_x, px);
      lo_y = std::min(lo_y, py);
      hi_y = std::max(hi_y, py);
    }
    // Ink should fill most of the box so normalisation keeps shapes comparable.
    if (hi_x - lo_x < 0.6 * (w - 2 * r) || hi_y - lo_y < 0.6 * (o.height - 2 * r)) continue;
    auto mask = glyph_mask(bmp);
    bool distinct = true;
    for (std::size_t i = 0; i < masks.size() && distinct; ++i) {
      distinct = iou(mask, masks[i]) <= o.max_overlap;
    }
    if (!distinct) continue;
    masks.push_back(std::move(mask));
    set.glyphs.push_back(std::move(bmp));
  }
  return set;
}

CipherKey make_key(std::span<const int> used, int letters, int symbols, KeyMode mode,
                   std::uint64_t seed, std::span<const double> frequencies) {
  if (used.empty()) throw Error("no plaintext letters to encipher", "synth");
  std::vector<int> letters_used(used.begin(), used.end());
  std::sort(letters_used.begin(), letters_used.end());
  if (std::adjacent_find(letters_used.begin(), letters_used.end()) != letters_used.end()) {
    throw Error("duplicate letter in key alphabet", "synth");
  }
  for (int e : letters_used) {
    if (e < 0 || e >= letters) throw Error("key letter outside alphabet", "synth");
  }
  const int U = static_cast<int>(letters_used.size());
  if (mode == KeyMode::simple && symbols != U) {
    throw Error("simple substitution needs K = " + std::to_string(U) + " glyphs, got " +
                    std::to_string(symbols),
                "synth");
  }
  if (symbols < U) {
    throw Error("K = " + std::to_string(symbols) + " is smaller than the " +
                    std::to_string(U) + " letters to encipher",
                "synth");
  }
  Rng rng(seed);
  std::vector<int> perm(static_cast<std::size_t>(symbols));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<int> count(static_cast<std::size_t>(U), 1);
  if (mode == KeyMode::homophonic && symbols > U) {
    std::vector<double> share(static_cast<std::size_t>(U), 1.0 / U);
    if (!frequencies.empty()) {
      double total = 0.0;
      for (int i = 0; i < U; ++i) total += frequencies[letters_used[i]];
      if (total > 0.0) {
        for (int i = 0; i < U; ++i) share[i] = frequencies[letters_used[i]] / total;
      }
    }
    // Every letter holds one glyph; the extra ones follow frequency.
    const auto extra = largest_remainder(share, symbols - U);
    for (int i = 0; i < U; ++i) count[i] += extra[i];
  }

  CipherKey key;
  key.mode = mode;
  key.letters = letters;
  key.symbols = symbols;
  key.glyphs.assign(static_cast<std::size_t>(letters), {});
  key.weights.assign(static_cast<std::size_t>(letters), {});
  key.letter_of.assign(static_cast<std::size_t>(symbols), -1);
  std::size_t next = 0;
  for (int i = 0; i < U; ++i) {
    const int e = letters_used[i];
    for (int k = 0; k < count[i]; ++k) {
      const int g = perm[next++];
      key.glyphs[e].push_back(g);
      key.letter_of[g] = e;
    }
    key.weights[e].assign(key.glyphs[e].size(), 1.0 / static_cast<double>(key.glyphs[e].size()));
  }
  return key;
}

std::vector<int> encipher(std::span<const int> plaintext, const CipherKey& key,
                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out;
  out.reserve(plaintext.size());
  for (int e : plaintext) {
    if (e < 0 || e >= key.letters || key.glyphs[e].empty()) {
      throw Error("plaintext letter id " + std::to_string(e) + " has no cipher glyph", "synth");
    }
    const auto& g = key.glyphs[e];
    if (g.size() == 1) {
      out.push_back(g[0]);
    } else {
      std::discrete_distribution<std::size_t> pick(key.weights[e].begin(), key.weights[e].end());
      out.push_back(g[pick(rng)]);
    }
  }
  return out;
}

nlohmann::json to_json(const CipherKey& key, const Alphabet& alphabet) {
  nlohmann::json map = nlohmann::json::object();
  for (int e = 0; e < key.letters; ++e) {
    if (key.glyphs[e].empty()) continue;
    map[utf8_encode(alphabet.letter(e))] = {{"glyphs", key.glyphs[e]},
                                            {"weights", key.weights[e]}};
  }
  return {{"mode", key.mode == KeyMode::simple ? "simple" : "homophonic"},
          {"symbols", key.symbols},
          {"letter_of_glyph", key.letter_of},
          {"map", map}};
}

RenderedPage render_page(std::span<const int> glyph_ids, const GlyphSet& glyphs,
                         const LayoutOptions& layout) {
  if (layout.spacing < 0) throw Error("spacing must be >= 0", "synth");
  if (layout.chars_per_line < 1) throw Error("chars_per_line must be >= 1", "synth");
  if (glyphs.size() == 0) throw Error("empty glyph set", "synth");
  for (int id : glyph_ids) {
    if (id < 0 || id >= glyphs.size()) throw Error("glyph id outside the glyph set", "synth");
  }
  const int n = static_cast<int>(glyph_ids.size());
  const int lines = std::max(1, (n + layout.chars_per_line - 1) / layout.chars_per_line);
  if (layout.max_lines >= 0 && lines > layout.max_lines) {
    throw Error("text needs " + std::to_string(lines) + " lines, layout allows " +
                    std::to_string(layout.max_lines),
                "synth");
  }
  Rng rng(layout.seed);
  std::uniform_int_distribution<int> jitter(-layout.jitter, layout.jitter);
  const int gh = glyphs.height();
  const bool fixed = glyphs.mode == WidthMode::fixed;
  int max_glyph_w = 0;
  for (const auto& g : glyphs.glyphs) max_glyph_w = std::max(max_glyph_w, g.width());

  // Slot geometry first, then the page size.
  struct Slot {
    int x;
    int advance;
    int space;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  int page_w = 1;
  for (int line = 0; line < lines; ++line) {
    int x = 0;
    for (int i = line * layout.chars_per_line;
         i < std::min(n, (line + 1) * layout.chars_per_line); ++i) {
      const int w = fixed ? max_glyph_w : glyphs.glyphs[glyph_ids[i]].width();
      const int space = fixed ? layout.spacing
                              : std::max(0, layout.spacing + (layout.jitter > 0 ? jitter(rng) : 0));
      slots[i] = {x, w + space, space};
      x += w + space;
    }
    page_w = std::max(page_w, x);
  }
  if (fixed) page_w = layout.chars_per_line * (max_glyph_w + layout.spacing);
  const int page_h = 2 * layout.margin + lines * gh + (lines - 1) * layout.line_gap;

  RenderedPage out;
  out.page = PageBitmap(page_w, page_h);
  out.lines = lines;
  out.gold_transcription.K = glyphs.size();
  for (int i = 0; i < n; ++i) {
    const int line = i / layout.chars_per_line;
    const int top = layout.margin + line * (gh + layout.line_gap);
    const auto& g = glyphs.glyphs[glyph_ids[i]];
    const Slot& s = slots[i];
    const int gx = s.x + s.space / 2 + (fixed ? (max_glyph_w - g.width()) / 2 : 0);
    for (int y = 0; y < g.height(); ++y) {
      for (int x = 0; x < g.width(); ++x) {
        if (g.ink(x, y)) out.page.set(gx + x, top + y, true);
      }
    }
    Cell cell;
    cell.row_index = line;
    cell.x_start = s.x;
    cell.x_end = s.x + s.advance;
    cell.y_top = top;
    cell.y_bottom = top + gh;
    cell.left = CutCurve::vertical(cell.x_start);
    cell.right = CutCurve::vertical(cell.x_end);
    out.gold_cells.push_back(cell);
    out.gold_transcription.ids.push_back(glyph_ids[i]);
  }
  if (layout.flip_probability > 0.0) {
    std::bernoulli_distribution flip(layout.flip_probability);
    for (int y = 0; y < page_h; ++y) {
      for (int x = 0; x < page_w; ++x) {
        if (flip(rng)) out.page.set(x, y, !out.page.ink(x, y));
      }
    }
  }
  return out;
}

std::vector<int> pick_passage(std::span<const int> text, std::size_t length, int distinct,
                              std::uint64_t seed) {
  if (length == 0 || text.size() < length) {
    throw Error("source text is shorter than the requested passage", "synth");
  }
  const std::size_t starts = text.size() - length + 1;
  Rng rng(seed);
  const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, starts - 1)(rng);
  int hi = 0;
  for (int v : text) hi = std::max(hi, v);
  std::vector<int> counts(static_cast<std::size_t>(hi) + 1, 0);
  int types = 0;
  auto add = [&](int v, int d) {
    int& c = counts[static_cast<std::size_t>(v)];
    if (c == 0 && d > 0) ++types;
    c += d;
    if (c == 0) --types;
  };
  // Sliding window over all starts; report the first hit at or after offset
  // (wrapping around).
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < length; ++i) add(text[i], 1);
  for (std::size_t s = 0;; ++s) {
    if (types == distinct) hits.push_back(s);
    if (s + 1 == starts) break;
    add(text[s], -1);
    add(text[s + length], 1);
  }
  if (hits.empty()) {
    throw Error("no " + std::to_string(length) + "-letter window has exactly " +
                    std::to_string(distinct) + " letter types",
                "synth");
  }
  auto it = std::lower_bound(hits.begin(), hits.end(), offset);
  const std::size_t start = it == hits.end() ? hits.front() : *it;
  return {text.begin() + static_cast<std::ptrdiff_t>(start),
          text.begin() + static_cast<std::ptrdiff_t>(start + length)};
}

std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocabulary '" + path.string() + "'", "synth");
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    words.push_back(line.substr(b, e - b + 1));
  }
  if (words.empty()) throw Error("vocabulary '" + path.string() + "' is empty", "synth");
  return words;
}

std::vector<int> zipf_text(const std::vector<std::vector<int>>& words, std::size_t min_length,
                           double exponent, std::uint64_t seed) {
  if (words.empty()) throw Error("empty vocabulary", "synth");
  std::vector<double> w(words.size());
  for (std::size_t r = 0; r < w.size(); ++r) {
    w[r] = words[r].empty() ? 0.0 : std::pow(static_cast<double>(r + 1), -exponent);
  }
  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<int> out;
  while (out.size() < min_length) {
    const auto& word = words[pick(rng)];
    out.insert(out.end(), word.begin(), word.end());
  }
  out.resize(min_length);
  return out;
}

SynthCipher synth_cipher(std::span<const int> plaintext, const Alphabet& alphabet,
                         SynthOptions options, std::span<const double> frequencies) {
  if (plaintext.empty()) throw Error("empty plaintext", "synth");
  std::vector<int> used(plaintext.begin(), plaintext.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  const int K = options.symbols > 0 ? options.symbols : static_cast<int>(used.size());

  SynthCipher s;
  s.alphabet = alphabet;
  s.plaintext.assign(plaintext.begin(), plaintext.end());
  s.key = make_key(used, alphabet.size(), K, options.key_mode, derive_seed(options.seed, 2),
                   frequencies);
  options.glyphs.count = K;
  options.glyphs.seed = derive_seed(options.seed, 1);
  s.glyphs = make_glyph_set(options.glyphs);
  const auto ids = encipher(plaintext, s.key, derive_seed(options.seed, 3));
  options.layout.seed = derive_seed(options.seed, 4);
  s.rendered = render_page(ids, s.glyphs, options.layout);
  return s;
}

void write_synth(const std::filesystem::path& dir, const SynthCipher& s) {
  std::filesystem::create_directories(dir);
  save_page(dir / "page.png", s.rendered.page);
  write_manifest(dir / "gold_manifest.json", s.rendered.gold_cells);
  write_transcription(dir / "gold_transcription.json", s.rendered.gold_transcription);
  std::ofstream key(dir / "key.json");
  key << to_json(s.key, s.alphabet).dump(2) << '\n';
  std::ofstream plain(dir / "plaintext.txt");
  plain << s.alphabet.render(s.plaintext) << '\n';
  if (!key || !plain) throw Error("cannot write synthetic cipher to '" + dir.string() + "'", "synth");
}

nlohmann::json to_json(const SynthOptions& o) {
  return {{"seed", o.seed},
          {"key_mode", o.key_mode == KeyMode::simple ? "simple" : "homophonic"},
          {"symbols", o.symbols},
          {"glyphs",
           {{"mode", to_string(o.glyphs.mode)},
            {"width", o.glyphs.width},
            {"height", o.glyphs.height},
            {"min_width", o.glyphs.min_width},
            {"max_width", o.glyphs.max_width},
            {"min_strokes", o.glyphs.min_strokes},
            {"max_strokes", o.glyphs.max_strokes},
            {"brush_radius", o.glyphs.brush_radius},
            {"max_overlap", o.glyphs.max_overlap}}},
          {"layout",
           {{"chars_per_line", o.layout.chars_per_line},
            {"spacing", o.layout.spacing},
            {"jitter", o.layout.jitter},
            {"line_gap", o.layout.line_gap},
            {"margin", o.layout.margin},
            {"max_lines", o.layout.max_lines},
            {"flip_probability", o.layout.flip_probability}}}};
}

SynthOptions synth_options_from_json(const nlohmann::json& j) {
  SynthOptions o;
  o.seed = j.value("seed", o.seed);
  const std::string km = j.value("key_mode", std::string("simple"));
  if (km != "simple" && km != "homophonic") throw Error("unknown key mode '" + km + "'", "synth");
  o.key_mode = km == "simple" ? KeyMode::simple : KeyMode::homophonic;
  o.symbols = j.value("symbols", o.symbols);
  if (j.contains("glyphs")) {
    const auto& g = j.at("glyphs");
    o.glyphs.mode = width_mode_from_string(g.value("mode", std::string("fixed")));
    o.glyphs.width = g.value("width", o.glyphs.width);
    o.glyphs.height = g.value("height", o.glyphs.height);
    o.glyphs.min_width = g.value("min_width", o.glyphs.min_width);
    o.glyphs.max_width = g.value("max_width", o.glyphs.max_width);
    o.glyphs.min_strokes = g.value("min_strokes", o.glyphs.min_strokes);
    o.glyphs.max_strokes = g.value("max_strokes", o.glyphs.max_strokes);
    o.glyphs.brush_radius = g.value("brush_radius", o.glyphs.brush_radius);
    o.glyphs.max_overlap = g.value("max_overlap", o.glyphs.max_overlap);
  }
  if (j.contains("layout")) {
    const auto& l = j.at("layout");
    o.layout.chars_per_line = l.value("chars_per_line", o.layout.chars_per_line);
    o.layout.spacing = l.value("spacing", o.layout.spacing);
    o.layout.jitter = l.value("jitter", o.layout.jitter);
    o.layout.line_gap = l.value("line_gap", o.layout.line_gap);
    o.layout.margin = l.value("margin", o.layout.margin);
    o.layout.max_lines = l.value("max_lines", o.layout.max_lines);
    o.layout.flip_probability = l.value("flip_probability", o.layout.flip_probability);
  }
  return o;
}

}  // namespace cipherpipe
