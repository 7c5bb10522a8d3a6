#pragma once

// Greedy search, beam search and top-k / nucleus sampling over any
// ConditionalModel, with the no-repeat-n-gram constraint.
//
// Length: a hypothesis' ids, BOS and EOS included, never exceed seq_length.
// Ties: lower token id wins; hypotheses tie-break lexicographically by ids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mutarjem/distribution.hpp"
#include "mutarjem/error.hpp"
#include "mutarjem/model.hpp"
#include "mutarjem/rng.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

enum class SearchMethod { greedy, beam, sampling };

inline std::string_view to_string(SearchMethod m) {
  switch (m) {
    case SearchMethod::greedy: return "greedy";
    case SearchMethod::beam: return "beam";
    case SearchMethod::sampling: return "sampling";
  }
  return "?";
}

inline SearchMethod parse_search_method(std::string_view name) {
  if (name == "greedy") return SearchMethod::greedy;
  if (name == "beam") return SearchMethod::beam;
  if (name == "sampling") return SearchMethod::sampling;
  throw ConfigError("unknown search method '" + std::string(name) + "' (expected greedy, beam or sampling)");
}

struct DecodeConfig {
  SearchMethod method = SearchMethod::greedy;
  std::size_t n_beam = 5;
  std::size_t top_k = 0;  // 0 disables
  double top_p = 1.0;     // 1 disables
  std::size_t no_repeat_ngram_size = 0;
  std::size_t max_outputs = 1;
  std::size_t seq_length = 256;
  std::uint64_t seed = 0;
  // Final beam ranking by score / (generated tokens)^length_penalty. 0 = off.
  double length_penalty = 0.0;

  void validate() const {
    if (n_beam < 1) throw ConfigError("n_beam must be at least 1");
    if (max_outputs < 1) throw ConfigError("max_outputs must be at least 1");
    if (seq_length < 2) throw ConfigError("seq_length must leave room for BOS and one token");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
    if (!std::isfinite(length_penalty)) throw ConfigError("length_penalty must be finite");
    if (method == SearchMethod::greedy && max_outputs != 1)
      throw ConfigError("greedy search produces exactly one output; max_outputs=" + std::to_string(max_outputs));
    if (method == SearchMethod::beam && max_outputs > n_beam)
      throw ConfigError("max_outputs (" + std::to_string(max_outputs) + ") cannot exceed n_beam (" +
                        std::to_string(n_beam) + ")");
  }
};

struct Hypothesis {
  TokenSeq ids;
  double score = 0.0;     // cumulative log-probability
  bool finished = false;  // EOS emitted or length cap hit
  bool capped = false;    // stopped by seq_length without EOS

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

/// Keeps the k most probable tokens (ties: lower id) and renormalizes.
inline NextTokenDistribution truncate_top_k(const NextTokenDistribution& dist, std::size_t k) {
  if (k < 1 || k > dist.size())
    throw ConfigError("top_k must be in [1, " + std::to_string(dist.size()) + "], got " + std::to_string(k));
  if (k == dist.size()) return dist;
  std::vector<double> kept(dist.size(), 0.0);
  const auto ranked = dist.ranked_ids();
  for (std::size_t i = 0; i < k; ++i) kept[ranked[i]] = dist[ranked[i]];
  return NextTokenDistribution::normalized(std::move(kept));
}

/// Keeps the shortest most-probable prefix whose cumulative mass reaches p.
inline NextTokenDistribution truncate_top_p(const NextTokenDistribution& dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top_p must be in (0, 1], got " + std::to_string(p));
  if (p == 1.0) return dist;
  // Absorbs summation error so that, e.g., 0.5 + 0.3 still reaches p = 0.8.
  constexpr double kSlack = 1e-12;
  std::vector<double> kept(dist.size(), 0.0);
  double cumulative = 0.0;
  for (TokenId id : dist.ranked_ids()) {
    kept[id] = dist[id];
    cumulative += dist[id];
    if (cumulative >= p - kSlack) break;
  }
  return NextTokenDistribution::normalized(std::move(kept));
}

/// Zeroes every token that would complete an n-gram already present in
/// `prefix`. If that bans all remaining mass, the input is returned unchanged.
inline NextTokenDistribution apply_no_repeat_ngram(std::span<const TokenId> prefix, const NextTokenDistribution& dist,
                                                   std::size_t n) {
  if (n == 0 || prefix.size() < n) return dist;
  const auto tail = prefix.last(n - 1);
  std::vector<double> masked(dist.probs().begin(), dist.probs().end());
  bool banned_any = false;
  for (std::size_t start = 0; start + n <= prefix.size(); ++start) {
    if (std::equal(tail.begin(), tail.end(), prefix.begin() + static_cast<std::ptrdiff_t>(start))) {
      masked[static_cast<std::size_t>(prefix[start + n - 1])] = 0.0;
      banned_any = true;
    }
  }
  if (!banned_any) return dist;
  if (std::accumulate(masked.begin(), masked.end(), 0.0) <= 0.0) return dist;
  return NextTokenDistribution::normalized(std::move(masked));
}

/// True if some n-gram occurs twice in `ids`.
inline bool has_repeated_ngram(std::span<const TokenId> ids, std::size_t n) {
  if (n == 0 || ids.size() < n) return false;
  std::set<std::vector<TokenId>> seen;
  for (std::size_t i = 0; i + n <= ids.size(); ++i)
    if (!seen.emplace(ids.begin() + static_cast<std::ptrdiff_t>(i), ids.begin() + static_cast<std::ptrdiff_t>(i + n))
             .second)
      return true;
  return false;
}

namespace detail {

template <ConditionalModel Model>
NextTokenDistribution constrained_step(const Model& model, std::span<const TokenId> source,
                                       std::span<const TokenId> prefix, const DecodeConfig& cfg) {
  NextTokenDistribution dist = next_token_distribution(model, source, prefix);
  if (cfg.no_repeat_ngram_size > 0) return apply_no_repeat_ngram(prefix, dist, cfg.no_repeat_ngram_size);
  return dist;
}

inline TokenId sample_token(const NextTokenDistribution& dist, RandomStream& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  TokenId last_positive = 0;
  for (TokenId id = 0; id < static_cast<TokenId>(dist.size()); ++id) {
    if (dist[id] <= 0.0) continue;
    last_positive = id;
    cumulative += dist[id];
    if (u < cumulative) return id;
  }
  return last_positive;
}

inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b, double length_penalty) {
  if (length_penalty == 0.0) return ranks_before(a.score, a.ids, b.score, b.ids);
  auto adjusted = [length_penalty](const Hypothesis& h) {
    return h.score / std::pow(static_cast<double>(h.ids.size() - 1), length_penalty);
  };
  return ranks_before(adjusted(a), a.ids, adjusted(b), b.ids);
}

}  // namespace detail

/// Argmax at every step; exactly one hypothesis.
template <ConditionalModel Model>
std::vector<Hypothesis> greedy_decode(const Model& model, std::span<const TokenId> source, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.max_outputs != 1) throw ConfigError("greedy search produces exactly one output");
  Hypothesis hyp{{Vocabulary::kBos}, 0.0, false, false};
  while (hyp.ids.size() < cfg.seq_length) {
    const NextTokenDistribution dist = detail::constrained_step(model, source, hyp.ids, cfg);
    const TokenId tok = dist.argmax();
    hyp.score += dist.log_prob(tok);
    hyp.ids.push_back(tok);
    if (tok == Vocabulary::kEos) {
      hyp.finished = true;
      return {hyp};
    }
  }
  hyp.finished = hyp.capped = true;
  return {hyp};
}

/// Beam search over summed log-probabilities. Each step keeps the n_beam best
/// expansions; selected EOS expansions move to the finished pool. Search ends
/// when the pool holds n_beam hypotheses or the live beams reach seq_length.
/// Returns up to max_outputs hypotheses: EOS-finished ones first, length-capped
/// ones only filling the remaining slots.
template <ConditionalModel Model>
std::vector<Hypothesis> beam_decode(const Model& model, std::span<const TokenId> source, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.n_beam < cfg.max_outputs) throw ConfigError("n_beam must be at least max_outputs");

  struct Candidate {
    TokenSeq ids;
    double score;
  };
  std::vector<Candidate> live{{{Vocabulary::kBos}, 0.0}};
  std::vector<Hypothesis> pool;

  while (!live.empty() && live.front().ids.size() < cfg.seq_length && pool.size() < cfg.n_beam) {
    std::vector<Candidate> expansions;
    for (const Candidate& parent : live) {
      const NextTokenDistribution dist = detail::constrained_step(model, source, parent.ids, cfg);
      for (TokenId tok = 0; tok < static_cast<TokenId>(dist.size()); ++tok) {
        if (dist[tok] <= 0.0) continue;
        Candidate next{parent.ids, parent.score + dist.log_prob(tok)};
        next.ids.push_back(tok);
        expansions.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(cfg.n_beam, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(),
                      [](const Candidate& a, const Candidate& b) { return ranks_before(a.score, a.ids, b.score, b.ids); });
    expansions.resize(keep);

    live.clear();
    for (Candidate& c : expansions) {
      if (c.ids.back() == Vocabulary::kEos)
        pool.push_back(Hypothesis{std::move(c.ids), c.score, true, false});
      else
        live.push_back(std::move(c));
    }
  }

  auto before = [&cfg](const Hypothesis& a, const Hypothesis& b) {
    return detail::hypothesis_before(a, b, cfg.length_penalty);
  };
  std::sort(pool.begin(), pool.end(), before);
  if (pool.size() > cfg.max_outputs) pool.resize(cfg.max_outputs);

  if (pool.size() < cfg.max_outputs) {
    std::vector<Hypothesis> capped;
    for (Candidate& c : live)
      if (c.ids.size() >= cfg.seq_length) capped.push_back(Hypothesis{std::move(c.ids), c.score, true, true});
    std::sort(capped.begin(), capped.end(), before);
    for (auto& h : capped) {
      if (pool.size() == cfg.max_outputs) break;
      pool.push_back(std::move(h));
    }
  }
  return pool;
}

/// Draws max_outputs independent sequences. Per step: no-repeat mask, top-k
/// (if top_k > 0; values above |V| act as |V|), then top-p (if top_p < 1), then
/// sample. Sample i uses RandomStream::split(seed, i). Scores are model
/// log-probabilities after the no-repeat mask, before truncation.
template <ConditionalModel Model>
std::vector<Hypothesis> sample_decode(const Model& model, std::span<const TokenId> source, const DecodeConfig& cfg) {
  cfg.validate();
  const std::size_t vocab_size = model.vocabulary().size();
  std::vector<Hypothesis> out;
  out.reserve(cfg.max_outputs);
  for (std::size_t i = 0; i < cfg.max_outputs; ++i) {
    RandomStream rng = RandomStream::split(cfg.seed, i);
    Hypothesis hyp{{Vocabulary::kBos}, 0.0, false, false};
    while (hyp.ids.size() < cfg.seq_length) {
      const NextTokenDistribution dist = detail::constrained_step(model, source, hyp.ids, cfg);
      NextTokenDistribution shortlist = dist;
      if (cfg.top_k > 0) shortlist = truncate_top_k(shortlist, std::min(cfg.top_k, vocab_size));
      if (cfg.top_p < 1.0) shortlist = truncate_top_p(shortlist, cfg.top_p);
      const TokenId tok = detail::sample_token(shortlist, rng);
      hyp.score += dist.log_prob(tok);
      hyp.ids.push_back(tok);
      if (tok == Vocabulary::kEos) {
        hyp.finished = true;
        break;
      }
    }
    if (!hyp.finished) hyp.finished = hyp.capped = true;
    out.push_back(std::move(hyp));
  }
  return out;
}

/// Dispatches on cfg.method.
template <ConditionalModel Model>
std::vector<Hypothesis> decode(const Model& model, std::span<const TokenId> source, const DecodeConfig& cfg) {
  switch (cfg.method) {
    case SearchMethod::greedy: return greedy_decode(model, source, cfg);
    case SearchMethod::beam: return beam_decode(model, source, cfg);
    case SearchMethod::sampling: return sample_decode(model, source, cfg);
  }
  throw ConfigError("unknown search method");
}

}  // namespace mutarjem
