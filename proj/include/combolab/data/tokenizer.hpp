#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace combolab::data {

inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kBos = 4;
inline constexpr int kUnk = 5;
inline constexpr int kSpecialCount = 6;

enum class TokenizerMode { Byte, Char, WordList };

std::string to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view text);

class Tokenizer {
public:
    // 256 byte tokens after the specials.
    static Tokenizer byte_level();
    // One token per distinct UTF-8 code point in `texts`, sorted by code point.
    static Tokenizer char_level(std::span<const std::string> texts);
    // Whitespace-separated words; text outside the list maps to [UNK].
    static Tokenizer word_list(std::vector<std::string> words);

    TokenizerMode mode() const { return mode_; }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }

    std::vector<int> encode(std::string_view text) const;
    // Specials render as their bracketed names; word-list tokens are joined by spaces.
    std::string decode(std::span<const int> ids) const;

    std::string to_json() const;
    static Tokenizer from_json(std::string_view json);

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
        return a.mode_ == b.mode_ && a.tokens_ == b.tokens_;
    }

private:
    Tokenizer(TokenizerMode mode, std::vector<std::string> tokens);

    TokenizerMode mode_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Splits UTF-8 into code-point substrings; malformed bytes become single-byte pieces.
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace combolab::data
