#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/char_lm.hpp>
#include <cipherpipe/glyph_features.hpp>
#include <cipherpipe/segmenter.hpp>
#include <cipherpipe/synth_cipher.hpp>

#include <algorithm>
#include <set>

using namespace cipherpipe;

namespace {

std::vector<int> heldout() {
  return english_alphabet().normalize(
      read_text_file(std::string(CIPHERPIPE_DATA_DIR) + "/corpus/english/heldout.txt"));
}

std::vector<int> used_letters(std::span<const int> text) {
  std::vector<int> u(text.begin(), text.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

double iou(const Grid& a, const Grid& b) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool x = a.values[i] > 0.5, y = b.values[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("simple key is a bijection on the used letters") {
  const auto passage = pick_passage(heldout(), 653, 22, 3);
  CHECK(passage.size() == 653);
  const auto used = used_letters(passage);
  REQUIRE(used.size() == 22);
  const auto key = make_key(used, 26, 22, KeyMode::simple, 1);
  CHECK(key.symbols == 22);
  std::set<int> glyphs;
  for (int e : used) {
    REQUIRE(key.glyphs[e].size() == 1);
    glyphs.insert(key.glyphs[e][0]);
    CHECK(key.letter_of[key.glyphs[e][0]] == e);
  }
  CHECK(glyphs.size() == 22);
}

TEST_CASE("homophonic key with one glyph per letter is a simple key") {
  const auto used = used_letters(heldout());
  const int n = static_cast<int>(used.size());
  const auto freq = unigram_frequencies(std::vector<std::vector<int>>{heldout()}, 26);
  const auto h = make_key(used, 26, n, KeyMode::homophonic, 4, freq);
  for (int e : used) CHECK(h.glyphs[e].size() == 1);

  const auto wide = make_key(used, 26, n + 10, KeyMode::homophonic, 4, freq);
  CHECK(wide.symbols == n + 10);
  std::size_t total = 0;
  for (int e : used) {
    CHECK(wide.glyphs[e].size() >= 1);
    total += wide.glyphs[e].size();
  }
  CHECK(total == static_cast<std::size_t>(n + 10));
  // The most frequent letter gets at least as many glyphs as the rarest.
  const auto most = *std::max_element(used.begin(), used.end(),
                                      [&](int a, int b) { return freq[a] < freq[b]; });
  const auto least = *std::min_element(used.begin(), used.end(),
                                       [&](int a, int b) { return freq[a] < freq[b]; });
  CHECK(wide.glyphs[most].size() >= wide.glyphs[least].size());
  CHECK_THROWS_AS(make_key(used, 26, n - 1, KeyMode::simple, 1), Error);
}

TEST_CASE("gold transcription inverts to the plaintext") {
  const auto passage = pick_passage(heldout(), 200, 20, 5);
  for (auto mode : {KeyMode::simple, KeyMode::homophonic}) {
    SynthOptions o;
    o.seed = 5;
    o.key_mode = mode;
    o.symbols = mode == KeyMode::simple ? 0 : 24;
    const auto freq = unigram_frequencies(std::vector<std::vector<int>>{passage}, 26);
    const auto s = synth_cipher(passage, english_alphabet(), o, freq);
    REQUIRE(s.rendered.gold_transcription.ids.size() == passage.size());
    for (std::size_t i = 0; i < passage.size(); ++i) {
      CHECK(s.key.letter_of[s.rendered.gold_transcription.ids[i]] == passage[i]);
    }
  }
}

TEST_CASE("gold cells cover all ink without overlapping") {
  const auto passage = pick_passage(heldout(), 150, 18, 2);
  for (auto width : {WidthMode::fixed, WidthMode::variable}) {
    SynthOptions o;
    o.seed = 2;
    o.glyphs.mode = width;
    o.layout.chars_per_line = 30;
    o.layout.jitter = width == WidthMode::variable ? 4 : 0;
    const auto s = synth_cipher(passage, english_alphabet(), o);
    const auto& page = s.rendered.page;
    std::vector<int> owner(static_cast<std::size_t>(page.width()) * page.height(), 0);
    for (const auto& c : s.rendered.gold_cells) {
      for (int y = c.y_top; y < c.y_bottom; ++y) {
        for (int x = c.left.x_at(y); x < c.right.x_at(y); ++x) {
          ++owner[static_cast<std::size_t>(y) * page.width() + x];
        }
      }
    }
    int uncovered = 0, doubled = 0;
    for (int y = 0; y < page.height(); ++y) {
      for (int x = 0; x < page.width(); ++x) {
        const int k = owner[static_cast<std::size_t>(y) * page.width() + x];
        doubled += k > 1;
        uncovered += page.ink(x, y) && k == 0;
      }
    }
    CHECK(doubled == 0);
    CHECK(uncovered == 0);
    CHECK(s.rendered.gold_cells.size() == passage.size());
  }
}

TEST_CASE("synthesis is deterministic") {
  const auto passage = pick_passage(heldout(), 80, 15, 6);
  SynthOptions o;
  o.seed = 6;
  o.layout.flip_probability = 0.001;
  const auto a = synth_cipher(passage, english_alphabet(), o);
  const auto b = synth_cipher(passage, english_alphabet(), o);
  CHECK(a.rendered.page == b.rendered.page);
  CHECK(a.rendered.gold_cells == b.rendered.gold_cells);
  o.seed = 7;
  CHECK_FALSE(synth_cipher(passage, english_alphabet(), o).rendered.page == a.rendered.page);
}

TEST_CASE("glyphs are distinct enough") {
  for (auto mode : {WidthMode::fixed, WidthMode::variable}) {
    GlyphSetOptions o;
    o.count = 22;
    o.mode = mode;
    o.seed = 8;
    const auto set = make_glyph_set(o);
    REQUIRE(set.size() == 22);
    std::vector<Grid> norm;
    for (const auto& g : set.glyphs) norm.push_back(normalize_glyph(g).grid);
    for (int i = 0; i < 22; ++i) {
      if (mode == WidthMode::fixed) CHECK(set.glyphs[i].width() == o.width);
      for (int j = i + 1; j < 22; ++j) CHECK(iou(norm[i], norm[j]) <= o.max_overlap + 1e-12);
    }
  }
}

TEST_CASE("pick_passage and zipf_text") {
  const auto text = heldout();
  const auto p = pick_passage(text, 300, 20, 1);
  CHECK(used_letters(p).size() == 20);
  CHECK(std::search(text.begin(), text.end(), p.begin(), p.end()) != text.end());
  CHECK_THROWS_AS(pick_passage(text, 300, 2, 1), Error);

  const auto en = english_alphabet();
  const std::vector<std::vector<int>> words{en.parse("ab"), en.parse("cd"), en.parse("ef")};
  const auto z = zipf_text(words, 1000, 1.0, 3);
  CHECK(z.size() == 1000);
  int a = 0, e = 0;
  for (int v : z) {
    a += v == 0;
    e += v == 4;
  }
  CHECK(a > e);
  CHECK(zipf_text(words, 1000, 1.0, 3) == z);

  const auto vocab = load_vocabulary(std::string(CIPHERPIPE_DATA_DIR) + "/corpus/latin/vocabulary.txt");
  CHECK(vocab.size() > 100);
  for (const auto& w : vocab) CHECK(w.find('#') == std::string::npos);
}

TEST_CASE("synth options JSON round trip") {
  SynthOptions o;
  o.glyphs.mode = WidthMode::variable;
  o.layout.chars_per_line = 33;
  o.key_mode = KeyMode::homophonic;
  o.symbols = 30;
  o.seed = 12;
  const auto back = synth_options_from_json(to_json(o));
  CHECK(back.glyphs.mode == WidthMode::variable);
  CHECK(back.layout.chars_per_line == 33);
  CHECK(back.key_mode == KeyMode::homophonic);
  CHECK(back.symbols == 30);
  CHECK(back.seed == 12);
  CHECK(to_json(back) == to_json(o));
}
