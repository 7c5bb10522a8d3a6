#pragma once

// The conditional translation model port: anything that can return
// P(w | source, prefix) for the next target position. Sequence scoring and
// every search strategy are built on top of that single call.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutarjem/distribution.hpp"
#include "mutarjem/error.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

template <class M>
concept ConditionalModel = requires(const M& model, std::span<const TokenId> ids) {
  { model.vocabulary() } -> std::convertible_to<const Vocabulary&>;
  { model.next_token(ids, ids) } -> std::same_as<NextTokenDistribution>;
};

/// Runtime-polymorphic model handle for the CLI. Implementations must be safe
/// for concurrent next_token calls.
class ModelPort {
 public:
  virtual ~ModelPort() = default;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual NextTokenDistribution next_token(std::span<const TokenId> source,
                                           std::span<const TokenId> prefix) const = 0;
};

/// Checked entry point: the prefix must start with BOS.
template <ConditionalModel Model>
NextTokenDistribution next_token_distribution(const Model& model, std::span<const TokenId> source,
                                              std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix.front() != Vocabulary::kBos) throw ConfigError("target prefix must begin with BOS");
  NextTokenDistribution dist = model.next_token(source, prefix);
  if (dist.size() != model.vocabulary().size())
    throw FormatError("model returned " + std::to_string(dist.size()) + " probabilities for a vocabulary of " +
                      std::to_string(model.vocabulary().size()));
  return dist;
}

/// Sum of per-step log-probabilities of `target` (BOS ... EOS). A zero-probability
/// step yields -infinity.
template <ConditionalModel Model>
double sequence_logprob(const Model& model, std::span<const TokenId> source, std::span<const TokenId> target) {
  if (target.size() < 2 || target.front() != Vocabulary::kBos || target.back() != Vocabulary::kEos)
    throw ConfigError("target must begin with BOS and end with EOS");
  double total = 0.0;
  for (std::size_t t = 1; t < target.size(); ++t)
    total += next_token_distribution(model, source, target.first(t)).log_prob(target[t]);
  return total;
}

struct ScoredSequence {
  TokenSeq ids;
  double logprob = 0.0;

  friend bool operator==(const ScoredSequence&, const ScoredSequence&) = default;
};

/// Ranking used everywhere a list of sequences is returned: higher log-probability
/// first, ties broken lexicographically by ids.
inline bool ranks_before(double score_a, std::span<const TokenId> a, double score_b, std::span<const TokenId> b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

inline constexpr std::size_t kMaxEnumerationVocab = 8;
inline constexpr std::size_t kMaxEnumerationLength = 6;

/// Every EOS-terminated sequence whose length (BOS and EOS included) is at most
/// `max_len`, each once, ranked by `ranks_before`. Brute force; tiny models only.
template <ConditionalModel Model>
std::vector<ScoredSequence> enumerate_ranked_sequences(const Model& model, std::span<const TokenId> source,
                                                       std::size_t max_len) {
  const std::size_t vocab_size = model.vocabulary().size();
  if (vocab_size > kMaxEnumerationVocab || max_len > kMaxEnumerationLength)
    throw ConfigError("enumeration limited to |V| <= 8 and max_len <= 6 (got |V|=" + std::to_string(vocab_size) +
                      ", max_len=" + std::to_string(max_len) + ")");
  std::vector<ScoredSequence> out;
  if (max_len < 2) return out;

  TokenSeq prefix{Vocabulary::kBos};
  auto visit = [&](auto&& self, double score) -> void {
    const NextTokenDistribution dist = next_token_distribution(model, source, prefix);
    for (TokenId tok = 0; tok < static_cast<TokenId>(vocab_size); ++tok) {
      const double next = score + dist.log_prob(tok);
      prefix.push_back(tok);
      if (tok == Vocabulary::kEos)
        out.push_back({prefix, next});
      else if (prefix.size() + 1 <= max_len)
        self(self, next);
      prefix.pop_back();
    }
  };
  visit(visit, 0.0);

  std::sort(out.begin(), out.end(), [](const ScoredSequence& a, const ScoredSequence& b) {
    return ranks_before(a.logprob, a.ids, b.logprob, b.ids);
  });
  return out;
}

/// Table-driven toy model keyed on (source string, last `order` prefix ids).
/// Lookup order: exact source, then the "*" wildcard, then the fallback
/// distribution. Immutable and safe for concurrent use.
class TableModel final : public ModelPort {
 public:
  static constexpr int kMaxOrder = 3;
  static constexpr const char* kAnySource = "*";

  struct Entry {
    std::string source;
    TokenSeq context;
    NextTokenDistribution dist;
  };

  TableModel(Vocabulary vocab, int order, std::vector<Entry> entries, NextTokenDistribution fallback)
      : vocab_(std::move(vocab)), order_(order), fallback_(std::move(fallback)) {
    if (order_ < 1 || order_ > kMaxOrder)
      throw ConfigError("table model order must be in [1, 3], got " + std::to_string(order_));
    check_size(fallback_, "default");
    for (auto& e : entries) {
      if (e.context.empty() || e.context.size() > static_cast<std::size_t>(order_))
        throw FormatError("table entry prefix must hold 1.." + std::to_string(order_) + " ids");
      for (TokenId id : e.context)
        if (!vocab_.contains(id)) throw FormatError("table entry prefix has invalid token id " + std::to_string(id));
      check_size(e.dist, "entry");
      table_.insert_or_assign(Key{std::move(e.source), std::move(e.context)}, std::move(e.dist));
    }
  }

  /// Uniform over every token except PAD.
  static NextTokenDistribution uniform_without_pad(std::size_t vocab_size) {
    std::vector<double> w(vocab_size, 1.0);
    w[Vocabulary::kPad] = 0.0;
    return NextTokenDistribution::normalized(std::move(w));
  }

  const Vocabulary& vocabulary() const override { return vocab_; }
  int order() const noexcept { return order_; }
  const NextTokenDistribution& fallback() const noexcept { return fallback_; }

  NextTokenDistribution next_token(std::span<const TokenId> source, std::span<const TokenId> prefix) const override {
    const std::size_t n = std::min(prefix.size(), static_cast<std::size_t>(order_));
    TokenSeq context(prefix.end() - static_cast<std::ptrdiff_t>(n), prefix.end());
    const std::string src = detokenize(source, vocab_);
    if (auto it = table_.find(Key{src, context}); it != table_.end()) return it->second;
    if (auto it = table_.find(Key{kAnySource, std::move(context)}); it != table_.end()) return it->second;
    return fallback_;
  }

  /// Parses {"vocab", "order", "entries": [{"source", "prefix", "probs"}], "default"}.
  /// Probabilities are keyed by token string; absent tokens get zero. Each
  /// table must sum to 1 within 1e-6 and is then renormalized exactly.
  static TableModel from_json(const nlohmann::json& doc) {
    try {
      Vocabulary vocab(doc.at("vocab").get<std::vector<std::string>>());
      const int order = doc.at("order").get<int>();
      std::vector<Entry> entries;
      for (const auto& e : doc.value("entries", nlohmann::json::array())) {
        entries.push_back(Entry{e.at("source").get<std::string>(), e.at("prefix").get<TokenSeq>(),
                                parse_probs(e.at("probs"), vocab)});
      }
      NextTokenDistribution fallback =
          doc.contains("default") ? parse_probs(doc.at("default"), vocab) : uniform_without_pad(vocab.size());
      return TableModel(std::move(vocab), order, std::move(entries), std::move(fallback));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("malformed table model: ") + ex.what());
    }
  }

  static TableModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read model file '" + path + "'");
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("model file '" + path + "' is not valid JSON: " + ex.what());
    }
    return from_json(doc);
  }

  nlohmann::json to_json() const {
    auto probs_json = [this](const NextTokenDistribution& d) {
      nlohmann::json obj = nlohmann::json::object();
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d.probs()[i] > 0.0) obj[vocab_.tokens()[i]] = d.probs()[i];
      return obj;
    };
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [key, dist] : table_)
      entries.push_back({{"source", key.first}, {"prefix", key.second}, {"probs", probs_json(dist)}});
    return {{"vocab", vocab_.tokens()}, {"order", order_}, {"entries", entries}, {"default", probs_json(fallback_)}};
  }

 private:
  using Key = std::pair<std::string, TokenSeq>;

  static NextTokenDistribution parse_probs(const nlohmann::json& obj, const Vocabulary& vocab) {
    std::vector<double> probs(vocab.size(), 0.0);
    double total = 0.0;
    for (const auto& [tok, p] : obj.items()) {
      const auto id = vocab.find(normalize_nfc(tok));
      if (!id) throw FormatError("probability given for unknown token '" + tok + "'");
      const double value = p.get<double>();
      if (!(value >= 0.0 && value <= 1.0)) throw FormatError("probability for '" + tok + "' outside [0, 1]");
      probs[static_cast<std::size_t>(*id)] = value;
      total += value;
    }
    if (std::abs(total - 1.0) > 1e-6) throw FormatError("table probabilities sum to " + std::to_string(total));
    return NextTokenDistribution::normalized(std::move(probs));
  }

  void check_size(const NextTokenDistribution& d, const char* what) const {
    if (d.size() != vocab_.size())
      throw FormatError(std::string(what) + " distribution has " + std::to_string(d.size()) +
                        " entries for a vocabulary of " + std::to_string(vocab_.size()));
  }

  Vocabulary vocab_;
  int order_;
  std::map<Key, NextTokenDistribution> table_;
  NextTokenDistribution fallback_;
};

}  // namespace mutarjem
