#pragma once

// Corpus BLEU-4 with a single reference, NFC + whitespace tokens, no smoothing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mutarjem/error.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

inline constexpr std::size_t kBleuOrder = 4;

struct BleuReport {
  double score = 0.0;  // [0, 100]
  std::array<double, kBleuOrder> precisions{};
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

namespace detail {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

inline NgramCounts count_ngrams(const std::vector<std::string>& words, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::vector<std::string_view> gram(words.begin() + static_cast<std::ptrdiff_t>(i),
                                       words.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[std::move(gram)];
  }
  return counts;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size())
    throw ConfigError("hypothesis count " + std::to_string(hyps.size()) + " differs from reference count " +
                      std::to_string(refs.size()));
  if (hyps.empty()) throw ConfigError("BLEU needs at least one sentence pair");

  BleuReport r;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto hw = normalized_words(hyps[s]);
    const auto rw = normalized_words(refs[s]);
    r.hyp_len += hw.size();
    r.ref_len += rw.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const auto hc = detail::count_ngrams(hw, n);
      const auto rc = detail::count_ngrams(rw, n);
      for (const auto& [gram, c] : hc) {
        r.totals[n - 1] += c;
        if (auto it = rc.find(gram); it != rc.end()) r.matches[n - 1] += std::min(c, it->second);
      }
    }
  }

  double log_sum = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    r.precisions[n] = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (r.matches[n] == 0)
      any_zero = true;
    else
      log_sum += std::log(r.precisions[n]);
  }
  if (r.hyp_len < r.ref_len)
    r.brevity_penalty = r.hyp_len == 0 ? 0.0 : std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len));
  if (any_zero) return r;
  // Exact 100 when every precision and BP are 1.
  if (log_sum == 0.0 && r.brevity_penalty == 1.0) {
    r.score = 100.0;
    return r;
  }
  r.score = 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(kBleuOrder));
  return r;
}

/// One entry per line; CR before LF is stripped; no entry for a final newline.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

/// Twelve decimals with trailing zeros dropped: 100, 0, 43.573826221233.
inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", score);
  std::string s(buf);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

}  // namespace mutarjem
