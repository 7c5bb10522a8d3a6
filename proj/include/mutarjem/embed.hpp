#pragma once

// Sentence-embedding port and cosine similarity for bitext filtering.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutarjem/error.hpp"
#include "mutarjem/hash.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_)
      if (!std::isfinite(v)) throw FormatError("embedding has a non-finite entry");
  }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }

  double norm() const {
    double sq = 0.0;
    for (double v : values_) sq += v * v;
    return std::sqrt(sq);
  }

  /// Copy scaled to unit L2 norm. Throws on the zero vector.
  EmbeddingVector unit() const {
    const double n = norm();
    if (!(n > 0.0)) throw FormatError("cannot normalize a zero embedding");
    std::vector<double> out(values_);
    for (double& v : out) v /= n;
    return EmbeddingVector(std::move(out));
  }

  EmbeddingVector scaled(double factor) const {
    std::vector<double> out(values_);
    for (double& v : out) v *= factor;
    return EmbeddingVector(std::move(out));
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

/// dot(u, v) / (|u| |v|), clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim())
    throw ConfigError("embedding dimensions differ: " + std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw ConfigError("cosine similarity of a zero vector is undefined");
  double dot = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) dot += u.values()[i] * v.values()[i];
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

/// Source of unit-norm sentence embeddings. Implementations must allow
/// concurrent calls.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  /// Stable identifier, used to key caches.
  virtual std::string name() const = 0;
  virtual bool supports(std::string_view lang) const = 0;
  virtual EmbeddingVector embed(std::string_view text, std::string_view lang) const = 0;

  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, std::string_view lang) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t, lang));
    return out;
  }
};

/// Deterministic offline provider: hashed character-trigram term frequencies
/// (text padded with one space on each side), 256 buckets, L2-normalized.
/// The language code only gates support; it does not enter the hash, so the
/// same string embeds identically in every language.
class LocalNgramProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDim = 256;
  static constexpr std::size_t kOrder = 3;

  /// Languages the offline provider accepts by default.
  static std::set<std::string, std::less<>> default_languages() {
    return {"ar", "bg", "cs", "da", "de", "el", "en", "es", "fr", "hi", "it", "ko", "pt", "ru", "tr"};
  }

  LocalNgramProvider() : languages_(default_languages()) {}
  /// An empty set accepts every language.
  explicit LocalNgramProvider(std::set<std::string, std::less<>> languages) : languages_(std::move(languages)) {}

  std::string name() const override { return "local-char3-256"; }

  bool supports(std::string_view lang) const override {
    return languages_.empty() || languages_.find(lang) != languages_.end();
  }

  EmbeddingVector embed(std::string_view text, std::string_view lang) const override {
    if (!supports(lang)) throw UnsupportedLanguageError(std::string(lang));
    const std::vector<char32_t> cps = padded_code_points(text);
    std::vector<double> tf(kDim, 0.0);
    for (std::size_t b : buckets_of(cps)) tf[b] += 1.0;
    return EmbeddingVector(std::move(tf)).unit();
  }

  /// Bucket index of every trigram of `text`, in order. Exposed for tests.
  static std::vector<std::size_t> buckets(std::string_view text) { return buckets_of(padded_code_points(text)); }

 private:
  static std::vector<char32_t> padded_code_points(std::string_view text) {
    const std::string nfc = normalize_nfc(text);
    const auto words = split_whitespace(nfc);
    if (words.empty()) throw ConfigError("cannot embed empty text");
    std::string joined = " ";
    for (auto w : words) {
      joined += w;
      joined += ' ';
    }
    return code_points(joined);
  }

  static std::vector<std::size_t> buckets_of(const std::vector<char32_t>& cps) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + kOrder <= cps.size(); ++i) {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (std::size_t j = 0; j < kOrder; ++j) {
        const char32_t c = cps[i + j];
        const char bytes[4] = {static_cast<char>(c & 0xff), static_cast<char>((c >> 8) & 0xff),
                               static_cast<char>((c >> 16) & 0xff), static_cast<char>((c >> 24) & 0xff)};
        h = fnv1a(std::string_view(bytes, 4), h);
      }
      out.push_back(static_cast<std::size_t>(h % kDim));
    }
    return out;
  }

  std::set<std::string, std::less<>> languages_;
};

/// Memoizes another provider's vectors on disk under <dir>/embeddings/,
/// one JSON file per content hash of (provider, lang, text).
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  CachingEmbeddingProvider(std::shared_ptr<const EmbeddingProvider> inner, std::filesystem::path cache_dir)
      : inner_(std::move(inner)), dir_(std::move(cache_dir) / "embeddings") {
    std::filesystem::create_directories(dir_);
  }

  std::string name() const override { return inner_->name(); }
  bool supports(std::string_view lang) const override { return inner_->supports(lang); }

  EmbeddingVector embed(std::string_view text, std::string_view lang) const override {
    const auto path = entry_path(text, lang);
    if (auto hit = read_entry(path, text, lang)) return *std::move(hit);
    EmbeddingVector v = inner_->embed(text, lang);
    write_entry(path, text, lang, v);
    return v;
  }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, std::string_view lang) const override {
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::string> misses;
    std::vector<std::size_t> miss_index;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto hit = read_entry(entry_path(texts[i], lang), texts[i], lang)) {
        out[i] = *std::move(hit);
      } else {
        misses.push_back(texts[i]);
        miss_index.push_back(i);
      }
    }
    if (!misses.empty()) {
      auto fresh = inner_->embed_batch(misses, lang);
      for (std::size_t j = 0; j < fresh.size(); ++j) {
        write_entry(entry_path(misses[j], lang), misses[j], lang, fresh[j]);
        out[miss_index[j]] = std::move(fresh[j]);
      }
    }
    return out;
  }

 private:
  std::filesystem::path entry_path(std::string_view text, std::string_view lang) const {
    std::uint64_t h = fnv1a(inner_->name());
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(lang, h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(text, h);
    return dir_ / (to_hex(h) + ".json");
  }

  static std::optional<EmbeddingVector> read_entry(const std::filesystem::path& path, std::string_view text,
                                                   std::string_view lang) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
      const auto doc = nlohmann::json::parse(in);
      if (doc.at("text").get<std::string>() != text || doc.at("lang").get<std::string>() != lang) return std::nullopt;
      return EmbeddingVector(doc.at("values").get<std::vector<double>>());
    } catch (const std::exception&) {
      return std::nullopt;  // corrupt entry: recompute
    }
  }

  static void write_entry(const std::filesystem::path& path, std::string_view text, std::string_view lang,
                          const EmbeddingVector& v) {
    const nlohmann::json doc = {{"text", text},
                                {"lang", lang},
                                {"values", std::vector<double>(v.values().begin(), v.values().end())}};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp);
      out << doc.dump();
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
  }

  std::shared_ptr<const EmbeddingProvider> inner_;
  std::filesystem::path dir_;
};

}  // namespace mutarjem
