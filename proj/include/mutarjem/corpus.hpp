#pragma once

// Bitext ingestion, similarity scoring, filtering policies (sim / random / all)
// and train/dev/test split generation.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutarjem/embed.hpp"
#include "mutarjem/error.hpp"
#include "mutarjem/rng.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

struct ParallelRecord {
  std::string source;
  std::string target;
  std::optional<double> sim;
  std::size_t line_no = 0;  // 1-based line in the originating file

  friend bool operator==(const ParallelRecord&, const ParallelRecord&) = default;
};

enum class FilterKind { sim, random, all };

inline std::string_view to_string(FilterKind k) {
  switch (k) {
    case FilterKind::sim: return "sim";
    case FilterKind::random: return "random";
    case FilterKind::all: return "all";
  }
  return "?";
}

inline FilterKind parse_filter_kind(std::string_view name) {
  if (name == "sim") return FilterKind::sim;
  if (name == "random" || name == "rand") return FilterKind::random;
  if (name == "all") return FilterKind::all;
  throw ConfigError("unknown filter policy '" + std::string(name) + "' (expected sim, random or all)");
}

struct FilterPolicy {
  FilterKind kind = FilterKind::sim;
  double lo = 0.70;
  double hi = 0.99;
  std::size_t n = 1'000'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(-1.0 <= lo && lo <= hi && hi <= 1.0)) throw ConfigError("filter bounds must satisfy -1 <= lo <= hi <= 1");
    if (n < 1) throw ConfigError("filter cap n must be at least 1");
  }

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)}, {"lo", lo}, {"hi", hi}, {"n", n}, {"seed", seed}};
  }
};

enum class ResourceClass { high, low };

inline ResourceClass parse_resource_class(std::string_view name) {
  if (name == "high") return ResourceClass::high;
  if (name == "low") return ResourceClass::low;
  throw ConfigError("unknown resource class '" + std::string(name) + "' (expected high or low)");
}

inline std::string_view to_string(ResourceClass r) { return r == ResourceClass::high ? "high" : "low"; }

/// Unset sizes follow the resource-class rule in make_splits.
struct SplitSpec {
  std::optional<std::size_t> dev_size;
  std::optional<std::size_t> test_size;
  std::optional<std::size_t> train_cap;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Ingestion

inline constexpr double kMaxMalformedFraction = 0.10;

/// Streams records from "source TAB target [TAB sim]" lines. Lines without a
/// tab, with an empty side, invalid UTF-8, extra columns or an unparsable sim
/// are counted and skipped.
class BitextReader {
 public:
  explicit BitextReader(std::istream& in) : in_(in) {}

  std::optional<ParallelRecord> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++lines_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (auto rec = parse_line(line, lines_)) return rec;
      ++malformed_;
    }
    return std::nullopt;
  }

  std::size_t lines() const noexcept { return lines_; }
  std::size_t malformed() const noexcept { return malformed_; }

  static std::optional<ParallelRecord> parse_line(std::string_view line, std::size_t line_no) {
    if (!is_valid_utf8(line)) return std::nullopt;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3) return std::nullopt;
    const auto src = trim(cols[0]);
    const auto tgt = trim(cols[1]);
    if (src.empty() || tgt.empty()) return std::nullopt;
    ParallelRecord rec{std::string(src), std::string(tgt), std::nullopt, line_no};
    if (cols.size() == 3) {
      const auto field = trim(cols[2]);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc{} || ptr != field.data() + field.size() || !(value >= -1.0 && value <= 1.0))
        return std::nullopt;
      rec.sim = value;
    }
    return rec;
  }

 private:
  std::istream& in_;
  std::size_t lines_ = 0;
  std::size_t malformed_ = 0;
};

struct IngestResult {
  std::vector<ParallelRecord> records;
  std::size_t lines = 0;
  std::size_t malformed = 0;
};

/// Reads a whole TSV file. More than 10% malformed lines is an error.
inline IngestResult ingest_bitext(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read bitext file '" + path.string() + "'");
  BitextReader reader(in);
  IngestResult result;
  while (auto rec = reader.next()) result.records.push_back(std::move(*rec));
  result.lines = reader.lines();
  result.malformed = reader.malformed();
  if (result.lines > 0 &&
      static_cast<double>(result.malformed) > kMaxMalformedFraction * static_cast<double>(result.lines))
    throw FormatError("'" + path.string() + "' has " + std::to_string(result.malformed) + " malformed lines out of " +
                      std::to_string(result.lines) + " (limit 10%)");
  return result;
}

// ---------------------------------------------------------------------------
// Scoring

/// Sets sim = cosine(embed(source, src_lang), embed(target, tgt_lang)) on every
/// record. Work is split into contiguous chunks across `threads` workers and
/// written back by position, so the result does not depend on scheduling.
inline std::vector<ParallelRecord> score_pairs(std::vector<ParallelRecord> records, const EmbeddingProvider& provider,
                                               std::string_view src_lang, std::string_view tgt_lang,
                                               std::size_t threads = 1) {
  for (auto lang : {src_lang, tgt_lang})
    if (!provider.supports(lang))
      throw ConfigError("embedding provider does not support language '" + std::string(lang) +
                        "'; use filter policy 'random' or 'all' for this pair");

  auto score_range = [&](std::size_t begin, std::size_t end) {
    std::vector<std::string> sources, targets;
    for (std::size_t i = begin; i < end; ++i) {
      sources.push_back(records[i].source);
      targets.push_back(records[i].target);
    }
    const auto us = provider.embed_batch(sources, src_lang);
    const auto vs = provider.embed_batch(targets, tgt_lang);
    for (std::size_t i = begin; i < end; ++i) records[i].sim = cosine_similarity(us[i - begin], vs[i - begin]);
  };

  threads = std::max<std::size_t>(1, std::min(threads, records.size()));
  if (threads <= 1) {
    try {
      score_range(0, records.size());
    } catch (const UnsupportedLanguageError& ex) {
      throw ConfigError(std::string(ex.what()) + "; use filter policy 'random' or 'all' for this pair");
    }
    return records;
  }

  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (records.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(records.size(), begin + chunk);
    workers.emplace_back([&, t, begin, end] {
      try {
        if (begin < end) score_range(begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const UnsupportedLanguageError& ex) {
      throw ConfigError(std::string(ex.what()) + "; use filter policy 'random' or 'all' for this pair");
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Filtering

enum class RejectReason { band, duplicate, cap, sample };

struct Rejection {
  ParallelRecord record;
  RejectReason reason;
};

struct FilterResult {
  std::vector<ParallelRecord> kept;
  std::vector<Rejection> rejected;

  std::size_t count(RejectReason r) const {
    return static_cast<std::size_t>(
        std::count_if(rejected.begin(), rejected.end(), [r](const Rejection& x) { return x.reason == r; }));
  }
};

/// Keeps records with lo <= sim <= hi whose source and target differ, then the
/// n highest-sim of those (ties: lower line_no), sorted by descending sim.
inline FilterResult filter_sim(const std::vector<ParallelRecord>& records, const FilterPolicy& policy) {
  policy.validate();
  FilterResult out;
  std::vector<ParallelRecord> band;
  for (const auto& r : records) {
    if (!r.sim) throw ConfigError("record at line " + std::to_string(r.line_no) + " has no similarity score");
    if (r.source == r.target)
      out.rejected.push_back({r, RejectReason::duplicate});
    else if (*r.sim < policy.lo || *r.sim > policy.hi)
      out.rejected.push_back({r, RejectReason::band});
    else
      band.push_back(r);
  }
  std::stable_sort(band.begin(), band.end(), [](const ParallelRecord& a, const ParallelRecord& b) {
    if (*a.sim != *b.sim) return *a.sim > *b.sim;
    return a.line_no < b.line_no;
  });
  for (std::size_t i = 0; i < band.size(); ++i) {
    if (i < policy.n)
      out.kept.push_back(std::move(band[i]));
    else
      out.rejected.push_back({std::move(band[i]), RejectReason::cap});
  }
  return out;
}

/// Uniform sample of min(n, count) records without replacement, in input order.
inline FilterResult filter_random(const std::vector<ParallelRecord>& records, const FilterPolicy& policy) {
  policy.validate();
  FilterResult out;
  if (policy.n >= records.size()) {
    out.kept = records;
    return out;
  }
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  chosen.reserve(policy.n);
  RandomStream rng(policy.seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), policy.n, rng.engine());
  std::vector<bool> keep(records.size(), false);
  for (auto i : chosen) keep[i] = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep[i])
      out.kept.push_back(records[i]);
    else
      out.rejected.push_back({records[i], RejectReason::sample});
  }
  return out;
}

inline FilterResult apply_filter(const std::vector<ParallelRecord>& records, const FilterPolicy& policy) {
  switch (policy.kind) {
    case FilterKind::sim: return filter_sim(records, policy);
    case FilterKind::random: return filter_random(records, policy);
    case FilterKind::all: {
      policy.validate();
      return FilterResult{records, {}};
    }
  }
  throw ConfigError("unknown filter policy");
}

// ---------------------------------------------------------------------------
// Splits

inline constexpr std::size_t kHighResourceHoldout = 2000;
inline constexpr std::size_t kHighResourceTrainCap = 1'000'000;
inline constexpr std::size_t kLowResourceLargeHoldout = 200;
inline constexpr std::size_t kLowResourceSmallHoldout = 100;
inline constexpr std::size_t kLowResourceThreshold = 15'000;

/// Dev/test size for a pool of `pool` records: 2000 for high-resource; for
/// low-resource 200 if more than 15K records remain after a 200/200 holdout,
/// otherwise 100.
inline std::size_t holdout_size(ResourceClass rc, std::size_t pool) {
  if (rc == ResourceClass::high) return kHighResourceHoldout;
  const std::size_t remaining = pool > 2 * kLowResourceLargeHoldout ? pool - 2 * kLowResourceLargeHoldout : 0;
  return remaining > kLowResourceThreshold ? kLowResourceLargeHoldout : kLowResourceSmallHoldout;
}

struct Splits {
  std::vector<ParallelRecord> train;
  std::vector<ParallelRecord> dev;
  std::vector<ParallelRecord> test;
  std::size_t duplicates_dropped = 0;  // repeated (source, target) pairs removed first
  std::size_t train_capped = 0;        // remainder records beyond train_cap
};

/// Removes repeated (source, target) pairs, draws dev and test uniformly
/// without replacement, and leaves the rest (first train_cap of them, in input
/// order) as train. Each split keeps input order.
inline Splits make_splits(const std::vector<ParallelRecord>& records, const SplitSpec& spec, ResourceClass rc) {
  Splits out;
  std::vector<const ParallelRecord*> pool;
  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& r : records) {
    if (seen.emplace(r.source, r.target).second)
      pool.push_back(&r);
    else
      ++out.duplicates_dropped;
  }

  const std::size_t dev_size = spec.dev_size.value_or(holdout_size(rc, pool.size()));
  const std::size_t test_size = spec.test_size.value_or(holdout_size(rc, pool.size()));
  const std::optional<std::size_t> train_cap =
      spec.train_cap ? spec.train_cap
                     : (rc == ResourceClass::high ? std::optional<std::size_t>(kHighResourceTrainCap) : std::nullopt);
  if (pool.size() < dev_size + test_size + 1)
    throw ConfigError("need at least " + std::to_string(dev_size + test_size + 1) + " distinct records for dev=" +
                      std::to_string(dev_size) + " test=" + std::to_string(test_size) + ", got " +
                      std::to_string(pool.size()));

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng.engine());

  // 0 = train, 1 = dev, 2 = test
  std::vector<unsigned char> role(pool.size(), 0);
  for (std::size_t i = 0; i < dev_size; ++i) role[order[i]] = 1;
  for (std::size_t i = dev_size; i < dev_size + test_size; ++i) role[order[i]] = 2;

  for (std::size_t i = 0; i < pool.size(); ++i) {
    switch (role[i]) {
      case 1: out.dev.push_back(*pool[i]); break;
      case 2: out.test.push_back(*pool[i]); break;
      default:
        if (train_cap && out.train.size() >= *train_cap)
          ++out.train_capped;
        else
          out.train.push_back(*pool[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_sim(double sim) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", sim);
  return buf;
}

/// Writes "source TAB target" lines, plus a sim column (6 decimals) when asked.
inline void write_tsv(const std::filesystem::path& path, const std::vector<ParallelRecord>& records,
                      bool with_sim = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& r : records) {
    out << r.source << '\t' << r.target;
    if (with_sim) {
      if (!r.sim) throw ConfigError("record at line " + std::to_string(r.line_no) + " has no similarity score");
      out << '\t' << format_sim(*r.sim);
    }
    out << '\n';
  }
}

/// Writes <pair>.train.tsv, <pair>.dev.tsv, <pair>.test.tsv and
/// <pair>.manifest.json into `dir`. `manifest` is extended with split counts.
inline void write_splits(const std::filesystem::path& dir, std::string_view pair, const Splits& splits,
                         nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  const std::string stem(pair);
  write_tsv(dir / (stem + ".train.tsv"), splits.train);
  write_tsv(dir / (stem + ".dev.tsv"), splits.dev);
  write_tsv(dir / (stem + ".test.tsv"), splits.test);
  manifest["pair"] = stem;
  manifest["counts"]["train"] = splits.train.size();
  manifest["counts"]["dev"] = splits.dev.size();
  manifest["counts"]["test"] = splits.test.size();
  manifest["skip_counts"]["duplicate_pairs"] = splits.duplicates_dropped;
  manifest["skip_counts"]["train_capped"] = splits.train_capped;
  std::ofstream out(dir / (stem + ".manifest.json"), std::ios::binary);
  if (!out) throw Error("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

}  // namespace mutarjem
