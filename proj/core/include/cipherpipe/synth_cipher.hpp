#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cipherpipe/alphabet.hpp"
#include "cipherpipe/cluster_gmm.hpp"
#include "cipherpipe/page_model.hpp"
#include "cipherpipe/segmenter.hpp"

namespace cipherpipe {

enum class WidthMode { fixed, variable };
const char* to_string(WidthMode mode) noexcept;
WidthMode width_mode_from_string(const std::string& name);

struct GlyphSetOptions {
  int count = 22;
  WidthMode mode = WidthMode::fixed;
  int width = 60;       ///< fixed mode glyph box width
  int height = 80;
  int min_width = 30;   ///< variable mode range
  int max_width = 76;
  int min_strokes = 3;
  int max_strokes = 6;
  int brush_radius = 4;
  double max_overlap = 0.6;  ///< largest allowed IoU between normalised glyphs
  std::uint64_t seed = 1;
};

/// Procedural glyphs: one connected polyline per glyph drawn with a round
/// brush inside its box.
struct GlyphSet {
  WidthMode mode = WidthMode::fixed;
  std::vector<PageBitmap> glyphs;

  int size() const noexcept { return static_cast<int>(glyphs.size()); }
  int height() const noexcept { return glyphs.empty() ? 0 : glyphs.front().height(); }
};

GlyphSet make_glyph_set(const GlyphSetOptions& options);

enum class KeyMode { simple, homophonic };

/// Plaintext letter -> glyph ids. In simple mode every used letter has one
/// glyph; in homophonic mode several, picked with the listed weights.
struct CipherKey {
  KeyMode mode = KeyMode::simple;
  int letters = 0;
  int symbols = 0;
  std::vector<std::vector<int>> glyphs;      ///< per letter, empty if unused
  std::vector<std::vector<double>> weights;  ///< per letter, sums to 1
  std::vector<int> letter_of;                ///< glyph id -> letter id
};

/// `used` lists the plaintext letter ids that get glyphs. Homophonic mode
/// shares `symbols` glyphs out in proportion to `frequencies` (indexed by
/// letter id, each letter at least one glyph).
CipherKey make_key(std::span<const int> used, int letters, int symbols, KeyMode mode,
                   std::uint64_t seed, std::span<const double> frequencies = {});

std::vector<int> encipher(std::span<const int> plaintext, const CipherKey& key,
                          std::uint64_t seed);

nlohmann::json to_json(const CipherKey& key, const Alphabet& alphabet);

struct LayoutOptions {
  int chars_per_line = 40;
  int spacing = 12;       ///< blank columns added to each glyph's advance
  int jitter = 0;         ///< variable mode: uniform +-jitter on the spacing
  int line_gap = 30;
  int margin = 20;        ///< top and bottom
  int max_lines = -1;     ///< -1 = unlimited
  double flip_probability = 0.0;  ///< salt-and-pepper scan noise
  std::uint64_t seed = 1;
};

struct RenderedPage {
  PageBitmap page{1, 1};
  Manifest gold_cells;
  Transcription gold_transcription;
  int lines = 0;
};

/// Left-to-right, top-to-bottom placement. Fixed-width sets use one advance
/// for every glyph so the page is chars_per_line advances wide.
RenderedPage render_page(std::span<const int> glyph_ids, const GlyphSet& glyphs,
                         const LayoutOptions& layout);

/// A window of `length` letters from `text` containing exactly `distinct`
/// letter types, starting from a seeded position.
std::vector<int> pick_passage(std::span<const int> text, std::size_t length, int distinct,
                              std::uint64_t seed);

/// Word list with '#' comment lines removed.
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

/// Concatenated words drawn with P(rank r) proportional to 1 / (r + 1)^exponent
/// until at least `min_length` letters exist; the result is cut to that length.
std::vector<int> zipf_text(const std::vector<std::vector<int>>& words, std::size_t min_length,
                           double exponent, std::uint64_t seed);

struct SynthCipher {
  Alphabet alphabet;
  std::vector<int> plaintext;
  CipherKey key;
  GlyphSet glyphs;
  RenderedPage rendered;
};

struct SynthOptions {
  GlyphSetOptions glyphs;
  LayoutOptions layout;
  KeyMode key_mode = KeyMode::simple;
  int symbols = 0;  ///< homophonic glyph count; 0 = number of used letters
  std::uint64_t seed = 1;
};

SynthCipher synth_cipher(std::span<const int> plaintext, const Alphabet& alphabet,
                         SynthOptions options,
                         std::span<const double> frequencies = {});

/// page.png, gold_manifest.json, gold_transcription.json, key.json,
/// plaintext.txt.
void write_synth(const std::filesystem::path& dir, const SynthCipher& s);

nlohmann::json to_json(const SynthOptions& options);
SynthOptions synth_options_from_json(const nlohmann::json& j);

}  // namespace cipherpipe
