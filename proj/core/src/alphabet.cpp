#include "cipherpipe/alphabet.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

#include "cipherpipe/common.hpp"

namespace cipherpipe {

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const auto c0 = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (c0 < 0x80) {
      cp = c0;
    } else if ((c0 & 0xE0) == 0xC0) {
      cp = c0 & 0x1F;
      extra = 1;
    } else if ((c0 & 0xF0) == 0xE0) {
      cp = c0 & 0x0F;
      extra = 2;
    } else if ((c0 & 0xF8) == 0xF0) {
      cp = c0 & 0x07;
      extra = 3;
    } else {
      throw Error("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= text.size()) {
        throw Error("truncated UTF-8 sequence at offset " + std::to_string(i));
      }
      const auto ck = static_cast<unsigned char>(text[i + k]);
      if ((ck & 0xC0) != 0x80) {
        throw Error("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      }
      cp = (cp << 6) | (ck & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string utf8_encode(char32_t c) {
  std::string out;
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  for (char32_t c : text) out += utf8_encode(c);
  return out;
}

char32_t to_lower(char32_t c) noexcept {
  if (c >= U'A' && c <= U'Z') return c + 32;
  // Latin-1 capitals (except the multiplication sign).
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

Alphabet::Alphabet(std::string name, std::u32string letters)
    : name_(std::move(name)), letters_(std::move(letters)), ascii_(128, -1) {
  if (letters_.empty()) throw Error("alphabet '" + name_ + "' is empty");
  for (std::size_t i = 0; i < letters_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (letters_[i] == letters_[j]) {
        throw Error("alphabet '" + name_ + "' repeats letter '" +
                    utf8_encode(letters_[i]) + "'");
      }
    }
    if (letters_[i] < 128) ascii_[letters_[i]] = static_cast<int>(i);
  }
}

Alphabet Alphabet::from_utf8(std::string name, std::string_view letters) {
  return Alphabet(std::move(name), utf8_decode(letters));
}

int Alphabet::index(char32_t c) const noexcept {
  if (c < 128) return ascii_.empty() ? -1 : ascii_[c];
  for (std::size_t i = 0; i < letters_.size(); ++i) {
    if (letters_[i] == c) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> Alphabet::normalize(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char32_t c : utf8_decode(text)) {
    const int id = index(to_lower(c));
    if (id >= 0) out.push_back(id);
  }
  return out;
}

std::vector<int> Alphabet::parse(std::string_view text) const {
  std::vector<int> out;
  for (char32_t c : utf8_decode(text)) {
    const int id = index(c);
    if (id < 0) {
      throw Error("symbol '" + utf8_encode(c) + "' is not in alphabet '" + name_ + "'");
    }
    out.push_back(id);
  }
  return out;
}

std::string Alphabet::render(std::span<const int> ids) const {
  std::u32string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= size()) {
      throw Error("letter id " + std::to_string(id) + " outside alphabet '" + name_ + "'");
    }
    out.push_back(letters_[static_cast<std::size_t>(id)]);
  }
  return utf8_encode(out);
}

Alphabet english_alphabet() {
  return Alphabet("english", U"abcdefghijklmnopqrstuvwxyz");
}

Alphabet load_alphabet(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read alphabet '" + path.string() + "'");
  const auto j = nlohmann::json::parse(in);
  return Alphabet::from_utf8(j.value("name", path.stem().string()),
                             j.at("letters").get<std::string>());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace cipherpipe
