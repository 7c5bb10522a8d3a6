#pragma once

// Tokens, vocabularies and the text normalization shared by the decoder,
// the corpus pipeline and the BLEU evaluator.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "mutarjem/error.hpp"

namespace mutarjem {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

namespace detail {

inline bool is_ascii(std::string_view s) {
  for (unsigned char c : s)
    if (c >= 0x80) return false;
  return true;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace detail

/// Canonical composition (NFC). ASCII input is returned untouched.
inline std::string normalize_nfc(std::string_view text) {
  if (detail::is_ascii(text)) return std::string(text);
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));
  const auto input = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  const icu::UnicodeString composed = nfc->normalize(input, status);
  if (U_FAILURE(status)) throw Error(std::string("NFC normalization failed: ") + u_errorName(status));
  std::string out;
  composed.toUTF8String(out);
  return out;
}

/// Decodes UTF-8 into code points; ill-formed sequences become U+FFFD.
inline std::vector<char32_t> code_points(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    out.push_back(c < 0 ? char32_t{0xFFFD} : static_cast<char32_t>(c));
  }
  return out;
}

inline bool is_valid_utf8(std::string_view text) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) return false;
  }
  return true;
}

/// Strips leading and trailing ASCII whitespace.
inline std::string_view trim(std::string_view text) {
  while (!text.empty() && detail::is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && detail::is_space(text.back())) text.remove_suffix(1);
  return text;
}

/// Splits on ASCII whitespace, dropping empty pieces.
inline std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    if (j > i) pieces.push_back(text.substr(i, j - i));
    i = j;
  }
  return pieces;
}

/// NFC-normalizes, then splits on whitespace.
inline std::vector<std::string> normalized_words(std::string_view text) {
  const std::string nfc = normalize_nfc(text);
  std::vector<std::string> words;
  for (auto piece : split_whitespace(nfc)) words.emplace_back(piece);
  return words;
}

/// Bijective token <-> id map. Ids 0..3 are always PAD, BOS, EOS, UNK.
/// Immutable once built.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  /// `tokens[i]` gets id i; the first four entries are the specials.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials)
      throw FormatError("vocabulary needs at least the four special tokens PAD, BOS, EOS, UNK");
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
      auto& tok = tokens_[id];
      tok = normalize_nfc(tok);
      if (tok.empty()) throw FormatError("vocabulary entry " + std::to_string(id) + " is empty");
      for (char c : tok)
        if (detail::is_space(c))
          throw FormatError("vocabulary entry " + std::to_string(id) + " contains whitespace");
      if (!index_.emplace(tok, static_cast<TokenId>(id)).second)
        throw FormatError("duplicate vocabulary token '" + tok + "' at id " + std::to_string(id));
    }
  }

  /// Prepends the conventional special spellings <pad> <s> </s> <unk>.
  static Vocabulary with_specials(const std::vector<std::string>& words) {
    std::vector<std::string> all{"<pad>", "<s>", "</s>", "<unk>"};
    all.insert(all.end(), words.begin(), words.end());
    return Vocabulary(std::move(all));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId pad() const noexcept { return kPad; }
  TokenId bos() const noexcept { return kBos; }
  TokenId eos() const noexcept { return kEos; }
  TokenId unk() const noexcept { return kUnk; }

  bool contains(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }
  bool is_special(TokenId id) const noexcept { return id >= 0 && id < static_cast<TokenId>(kNumSpecials); }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id_or_unk(std::string_view token) const { return find(token).value_or(kUnk); }

  const std::string& token(TokenId id) const {
    if (!contains(id)) throw FormatError("invalid token id " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> index_;
};

/// Whitespace tokenization after NFC; misses map to UNK. No BOS/EOS added.
inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  const std::string nfc = normalize_nfc(text);
  TokenSeq ids;
  for (auto piece : split_whitespace(nfc)) ids.push_back(vocab.id_or_unk(piece));
  return ids;
}

/// Joins tokens with single spaces. PAD, BOS and EOS are dropped; UNK is kept.
inline std::string detokenize(std::span<const TokenId> seq, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : seq) {
    const std::string& tok = vocab.token(id);
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

/// One token per line, line number = id. A trailing CR is stripped.
inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocabulary file '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace mutarjem
