#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cipherpipe {

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
std::string utf8_encode(char32_t c);

/// Ordered set of plaintext letters. Letter ids are positions in the set, so
/// "alphabet order" tie-breaks are id order.
class Alphabet {
 public:
  Alphabet() = default;
  Alphabet(std::string name, std::u32string letters);

  static Alphabet from_utf8(std::string name, std::string_view letters);

  const std::string& name() const noexcept { return name_; }
  int size() const noexcept { return static_cast<int>(letters_.size()); }
  char32_t letter(int id) const { return letters_.at(static_cast<std::size_t>(id)); }
  const std::u32string& letters() const noexcept { return letters_; }
  std::string utf8() const { return utf8_encode(letters_); }

  /// Id of `c`, or -1.
  int index(char32_t c) const noexcept;

  /// Lowercases and drops everything outside the alphabet.
  std::vector<int> normalize(std::string_view text) const;
  /// Strict conversion; throws on any symbol outside the alphabet.
  std::vector<int> parse(std::string_view text) const;
  std::string render(std::span<const int> ids) const;

  friend bool operator==(const Alphabet& a, const Alphabet& b) {
    return a.letters_ == b.letters_;
  }

 private:
  std::string name_;
  std::u32string letters_;
  std::vector<int> ascii_;  // fast path for code points < 128
};

Alphabet english_alphabet();
/// Reads {"name": ..., "letters": "..."}.
Alphabet load_alphabet(const std::filesystem::path& path);

char32_t to_lower(char32_t c) noexcept;

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cipherpipe
