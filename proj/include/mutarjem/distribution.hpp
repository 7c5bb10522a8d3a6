#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mutarjem/error.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

/// Probability vector over the vocabulary for the next target position.
/// Every entry lies in [0, 1] and the entries sum to 1 within kSumTolerance.
class NextTokenDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Takes probabilities that already sum to one; throws otherwise.
  static NextTokenDistribution from_probs(std::vector<double> probs) {
    check_entries(probs);
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (std::abs(total - 1.0) > kSumTolerance)
      throw FormatError("distribution sums to " + std::to_string(total) + ", expected 1");
    return NextTokenDistribution(std::move(probs));
  }

  /// Scales non-negative weights to sum to one. At least one weight must be positive.
  static NextTokenDistribution normalized(std::vector<double> weights) {
    for (double w : weights)
      if (!std::isfinite(w) || w < 0.0) throw FormatError("distribution weights must be finite and non-negative");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw FormatError("distribution has no probability mass");
    for (double& w : weights) w /= total;
    return NextTokenDistribution(std::move(weights));
  }

  /// Converts (possibly unnormalized) log-probabilities. Shifting by the
  /// maximum keeps very negative inputs from underflowing to an all-zero vector.
  static NextTokenDistribution from_logprobs(std::span<const double> logprobs) {
    if (logprobs.empty()) throw FormatError("empty log-probability vector");
    double max_lp = -std::numeric_limits<double>::infinity();
    for (double lp : logprobs) {
      if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity())
        throw FormatError("log-probabilities must be finite or -inf");
      max_lp = std::max(max_lp, lp);
    }
    if (max_lp == -std::numeric_limits<double>::infinity()) throw FormatError("all log-probabilities are -inf");
    std::vector<double> weights(logprobs.size());
    std::transform(logprobs.begin(), logprobs.end(), weights.begin(),
                   [max_lp](double lp) { return std::exp(lp - max_lp); });
    return normalized(std::move(weights));
  }

  static NextTokenDistribution uniform(std::size_t size) {
    if (size == 0) throw FormatError("uniform distribution over an empty vocabulary");
    return NextTokenDistribution(std::vector<double>(size, 1.0 / static_cast<double>(size)));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](TokenId id) const { return probs_.at(static_cast<std::size_t>(id)); }
  double log_prob(TokenId id) const { return std::log((*this)[id]); }
  std::span<const double> probs() const noexcept { return probs_; }

  /// Token ids ordered by descending probability, ties by lower id.
  std::vector<TokenId> ranked_ids() const {
    std::vector<TokenId> ids(probs_.size());
    std::iota(ids.begin(), ids.end(), TokenId{0});
    std::stable_sort(ids.begin(), ids.end(), [this](TokenId a, TokenId b) {
      return probs_[static_cast<std::size_t>(a)] > probs_[static_cast<std::size_t>(b)];
    });
    return ids;
  }

  /// Highest-probability token, ties by lower id.
  TokenId argmax() const {
    return static_cast<TokenId>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

  friend bool operator==(const NextTokenDistribution&, const NextTokenDistribution&) = default;

 private:
  explicit NextTokenDistribution(std::vector<double> probs) : probs_(std::move(probs)) {}

  static void check_entries(const std::vector<double>& probs) {
    if (probs.empty()) throw FormatError("empty distribution");
    for (double p : probs)
      if (!(p >= 0.0 && p <= 1.0)) throw FormatError("probability " + std::to_string(p) + " outside [0, 1]");
  }

  std::vector<double> probs_;
};

}  // namespace mutarjem
