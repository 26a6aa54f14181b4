#include "combolab/data/tokenizer.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace combolab::data {

namespace {

const std::vector<std::string>& special_names() {
    static const std::vector<std::string> names{"[PAD]", "[MASK]", "[CLS]", "[SEP]", "[BOS]", "[UNK]"};
    return names;
}

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

std::uint32_t code_point(std::string_view c) {
    const auto b = [&](std::size_t i) { return static_cast<unsigned char>(c[i]); };
    switch (c.size()) {
        case 2: return ((b(0) & 0x1Fu) << 6) | (b(1) & 0x3Fu);
        case 3: return ((b(0) & 0x0Fu) << 12) | ((b(1) & 0x3Fu) << 6) | (b(2) & 0x3Fu);
        case 4: return ((b(0) & 0x07u) << 18) | ((b(1) & 0x3Fu) << 12) | ((b(2) & 0x3Fu) << 6) | (b(3) & 0x3Fu);
        default: return b(0);
    }
}

}  // namespace

std::string to_string(TokenizerMode mode) {
    switch (mode) {
        case TokenizerMode::Byte: return "byte";
        case TokenizerMode::Char: return "char";
        case TokenizerMode::WordList: return "word-list";
    }
    return "?";
}

TokenizerMode parse_tokenizer_mode(std::string_view text) {
    if (text == "byte") return TokenizerMode::Byte;
    if (text == "char") return TokenizerMode::Char;
    if (text == "word-list") return TokenizerMode::WordList;
    throw std::invalid_argument(fmt::format("unknown tokenizer mode '{}' (byte, char, word-list)", text));
}

std::vector<std::string> utf8_chars(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size();) {
        std::size_t n = utf8_length(static_cast<unsigned char>(text[i]));
        if (i + n > text.size()) n = 1;
        for (std::size_t k = 1; k < n; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                n = 1;
                break;
            }
        }
        out.emplace_back(text.substr(i, n));
        i += n;
    }
    return out;
}

Tokenizer::Tokenizer(TokenizerMode mode, std::vector<std::string> tokens)
    : mode_(mode), tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw std::invalid_argument(fmt::format("duplicate token '{}' in vocabulary", tokens_[i]));
        }
    }
}

Tokenizer Tokenizer::byte_level() {
    std::vector<std::string> tokens = special_names();
    for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
    return Tokenizer(TokenizerMode::Byte, std::move(tokens));
}

Tokenizer Tokenizer::char_level(std::span<const std::string> texts) {
    std::set<std::pair<std::uint32_t, std::string>> chars;
    for (const auto& t : texts) {
        for (auto& c : utf8_chars(t)) chars.emplace(code_point(c), std::move(c));
    }
    std::vector<std::string> tokens = special_names();
    for (const auto& [cp, c] : chars) {
        if (std::find(tokens.begin(), tokens.end(), c) == tokens.end()) tokens.push_back(c);
    }
    return Tokenizer(TokenizerMode::Char, std::move(tokens));
}

Tokenizer Tokenizer::word_list(std::vector<std::string> words) {
    std::vector<std::string> tokens = special_names();
    for (auto& w : words) {
        if (w.empty() || w.find_first_of(" \t\n\r") != std::string::npos) {
            throw std::invalid_argument(fmt::format("word-list entry '{}' is empty or contains whitespace", w));
        }
        tokens.push_back(std::move(w));
    }
    return Tokenizer(TokenizerMode::WordList, std::move(tokens));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    auto lookup = [&](const std::string& piece) {
        auto it = index_.find(piece);
        ids.push_back(it == index_.end() || is_special(it->second) ? kUnk : it->second);
    };
    switch (mode_) {
        case TokenizerMode::Byte:
            for (unsigned char b : text) ids.push_back(kSpecialCount + b);
            break;
        case TokenizerMode::Char:
            for (const auto& c : utf8_chars(text)) lookup(c);
            break;
        case TokenizerMode::WordList: {
            std::istringstream in{std::string(text)};
            std::string word;
            while (in >> word) lookup(word);
            break;
        }
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw std::out_of_range(fmt::format("token id {} outside vocabulary of {}", id, tokens_.size()));
        }
        if (mode_ == TokenizerMode::WordList && i > 0) out += ' ';
        out += tokens_[id];
    }
    return out;
}

std::string Tokenizer::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["mode"] = to_string(mode_);
    // Byte vocabularies are implied by the mode.
    j["tokens"] = mode_ == TokenizerMode::Byte
                      ? nlohmann::json::array()
                      : nlohmann::json(std::vector<std::string>(tokens_.begin() + kSpecialCount, tokens_.end()));
    return j.dump();
}

Tokenizer Tokenizer::from_json(std::string_view json) {
    const auto j = nlohmann::json::parse(json);
    const TokenizerMode mode = parse_tokenizer_mode(j.at("mode").get<std::string>());
    if (mode == TokenizerMode::Byte) return byte_level();
    std::vector<std::string> tokens = special_names();
    for (const auto& t : j.at("tokens")) tokens.push_back(t.get<std::string>());
    return Tokenizer(mode, std::move(tokens));
}

}  // namespace combolab::data
