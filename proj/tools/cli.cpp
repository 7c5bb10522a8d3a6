#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "mutarjem/mutarjem.hpp"

namespace mutarjem::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kModelUrlEnv = "MUTARJEM_MODEL_URL";
constexpr const char* kEmbedUrlEnv = "MUTARJEM_EMBED_URL";

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

struct GenerateOptions {
  std::size_t seq_length = 256;
  std::string search_method = "greedy";
  std::size_t n_beam = 5;
  std::size_t top_k = 50;
  double top_p = 0.95;
  std::size_t no_repeat_ngram_size = 0;
  std::size_t max_outputs = 1;
  double length_penalty = 0.0;
  std::uint64_t seed = 0;
  std::string cache_dir;
  std::string logging_file;
  std::string model_path;
  std::string model_url;
  std::string vocab_path;

  DecodeConfig decode_config() const {
    DecodeConfig cfg;
    cfg.method = parse_search_method(search_method);
    cfg.seq_length = seq_length;
    cfg.n_beam = n_beam;
    cfg.top_k = top_k;
    cfg.top_p = top_p;
    cfg.no_repeat_ngram_size = no_repeat_ngram_size;
    cfg.max_outputs = max_outputs;
    cfg.length_penalty = length_penalty;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct TranslateOptions {
  std::string text;
  std::string input_file;
  std::size_t batch_size = 8;
  std::string output_dir;
};

struct ScoreOptions {
  std::string hyp_file;
  std::string ref_file;
};

struct CorpusOptions {
  std::string input;
  std::string output;
  std::string output_dir;
  std::string pair;
  std::string src_lang = "en";
  std::string tgt_lang = "ar";
  std::string policy = "sim";
  double lo = 0.70;
  double hi = 0.99;
  std::size_t n = 1'000'000;
  std::string resource = "high";
  std::uint64_t seed = 0;
  std::optional<std::size_t> dev_size;
  std::optional<std::size_t> test_size;
  std::optional<std::size_t> train_cap;
  std::size_t threads = 4;
  std::string embed_url;
  std::string cache_dir;
  std::string logging_file;
};

std::shared_ptr<spdlog::logger> make_logger(const std::string& logging_file, std::ostream& err) {
  spdlog::sink_ptr sink;
  if (!logging_file.empty())
    sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>(logging_file, false);
  else
    sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("mutarjem", std::move(sink));
  logger->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  logger->set_level(spdlog::level::info);
  logger->flush_on(spdlog::level::info);
  return logger;
}

// --- Model wiring -----------------------------------------------------------

struct LoadedModel {
  std::shared_ptr<const ModelPort> model;
  std::string source;
};

void write_remote_metadata(const fs::path& cache_dir, const std::string& url, const Vocabulary& vocab) {
  fs::create_directories(cache_dir);
  std::string joined;
  for (const auto& t : vocab.tokens()) joined += t + '\n';
  const nlohmann::json meta = {{"url", url}, {"vocab_size", vocab.size()}, {"vocab_hash", to_hex(fnv1a(joined))}};
  std::ofstream out(cache_dir / "model.json");
  out << meta.dump(2) << '\n';
}

/// Prints the "Loading model from" line once the source is known, then loads.
LoadedModel load_model(const GenerateOptions& opt, std::ostream& out, spdlog::logger& log) {
  if (!opt.model_path.empty()) {
    if (!opt.model_url.empty()) throw ConfigError("pass either --model or --model_url, not both");
    out << "Loading model from " << opt.model_path << '\n';
    auto model = std::make_shared<TableModel>(TableModel::load(opt.model_path));
    log.info("table model {} loaded: |V|={}, order={}", opt.model_path, model->vocabulary().size(), model->order());
    return {std::move(model), opt.model_path};
  }
  std::string url = opt.model_url;
  if (url.empty()) url = env(kModelUrlEnv).value_or("");
  if (url.empty())
    throw ConfigError(std::string("no model given: pass --model <table.json>, or --model_url / ") + kModelUrlEnv +
                      " together with --vocab");
  if (opt.vocab_path.empty()) throw ConfigError("a remote model needs --vocab <file> matching its output layer");
  out << "Loading model from " << url << '\n';
  Vocabulary vocab = load_vocabulary(opt.vocab_path);
  if (!opt.cache_dir.empty()) write_remote_metadata(opt.cache_dir, url, vocab);
  log.info("remote model at {} with |V|={}", url, vocab.size());
  return {std::make_shared<HttpModel>(std::move(vocab), url), url};
}

std::vector<std::string> translate_one(const ModelPort& model, const std::string& text, const DecodeConfig& cfg) {
  const TokenSeq source = tokenize(text, model.vocabulary());
  std::vector<std::string> targets;
  for (const auto& hyp : decode(model, source, cfg)) targets.push_back(detokenize(hyp.ids, model.vocabulary()));
  return targets;
}

// --- Commands -----------------------------------------------------------------

int run_interactive(const GenerateOptions& opt, std::istream& in, std::ostream& out, std::ostream& err) {
  auto log = make_logger(opt.logging_file, err);
  out << "Mutarjem Interactive CLI\n";
  const DecodeConfig cfg = opt.decode_config();
  const LoadedModel loaded = load_model(opt, out, *log);
  log->info("decoding with method={} n_beam={} max_outputs={} seq_length={}", to_string(cfg.method), cfg.n_beam,
            cfg.max_outputs, cfg.seq_length);

  std::string line;
  while (true) {
    out << "Type your source text or (q) to STOP:\n" << std::flush;
    if (!std::getline(in, line)) break;
    const auto text = trim(line);
    if (text == "q") break;
    if (text.empty()) continue;
    const auto targets = translate_one(*loaded.model, std::string(text), cfg);
    for (std::size_t i = 0; i < targets.size(); ++i) out << "target" << (i + 1) << ": " << targets[i] << '\n';
    out << std::flush;
  }
  return 0;
}

int run_translate(const GenerateOptions& opt, const TranslateOptions& topt, std::ostream& out, std::ostream& err) {
  if (topt.text.empty() == topt.input_file.empty())
    throw ConfigError("translate needs exactly one of --text or --input_file");
  if (topt.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  auto log = make_logger(opt.logging_file, err);
  const DecodeConfig cfg = opt.decode_config();

  out << "Mutarjem Translate CLI\n";
  if (!topt.text.empty())
    out << "Translate from input sentence\n";
  else
    out << "Translate from " << fs::path(topt.input_file).filename().string() << '\n';

  std::vector<std::string> sources;
  if (!topt.input_file.empty()) sources = read_lines(topt.input_file);

  const LoadedModel loaded = load_model(opt, out, *log);

  if (!topt.text.empty()) {
    const auto targets = translate_one(*loaded.model, topt.text, cfg);
    if (targets.size() == 1) {
      out << "target: " << targets.front() << '\n';
    } else {
      for (std::size_t i = 0; i < targets.size(); ++i) out << "target" << (i + 1) << ": " << targets[i] << '\n';
    }
    return 0;
  }

  // Each batch decodes concurrently; results are stored by line index.
  std::vector<std::vector<std::string>> results(sources.size());
  for (std::size_t start = 0; start < sources.size(); start += topt.batch_size) {
    const std::size_t end = std::min(sources.size(), start + topt.batch_size);
    std::vector<std::future<std::vector<std::string>>> jobs;
    for (std::size_t i = start; i < end; ++i)
      jobs.push_back(std::async(std::launch::async, [&, i] { return translate_one(*loaded.model, sources[i], cfg); }));
    for (std::size_t i = start; i < end; ++i) results[i] = jobs[i - start].get();
    log->info("translated {}/{} sentences", end, sources.size());
  }

  nlohmann::json doc = nlohmann::json::array();
  for (std::size_t i = 0; i < sources.size(); ++i)
    doc.push_back({{"id", i}, {"source", sources[i]}, {"targets", results[i]}});

  const fs::path input(topt.input_file);
  const fs::path dir = topt.output_dir.empty() ? input.parent_path() : fs::path(topt.output_dir);
  if (!dir.empty()) fs::create_directories(dir);
  const fs::path target = dir / (input.stem().string() + ".json");
  std::ofstream file(target, std::ios::binary);
  if (!file) throw Error("cannot write '" + target.string() + "'");
  file << doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  file.close();
  out << "Translation is saved in " << target.string() << '\n';
  return 0;
}

int run_score(const ScoreOptions& opt, std::ostream& out) {
  out << "Mutarjem Score CLI\n";
  out << "hyp_file=" << opt.hyp_file << '\n';
  out << "ref_file=" << opt.ref_file << '\n';
  const auto hyps = read_lines(opt.hyp_file);
  const auto refs = read_lines(opt.ref_file);
  if (hyps.size() != refs.size())
    throw ConfigError("hyp_file has " + std::to_string(hyps.size()) + " lines but ref_file has " +
                      std::to_string(refs.size()));
  const BleuReport report = corpus_bleu(hyps, refs);
  out << "bleu score: " << format_score(report.score) << '\n';
  return 0;
}

// --- corpus ---------------------------------------------------------------------

std::shared_ptr<const EmbeddingProvider> make_provider(const CorpusOptions& opt, spdlog::logger& log) {
  std::string url = opt.embed_url;
  if (url.empty()) url = env(kEmbedUrlEnv).value_or("");
  std::shared_ptr<const EmbeddingProvider> provider;
  if (url.empty())
    provider = std::make_shared<LocalNgramProvider>();
  else
    provider = std::make_shared<RemoteEmbeddingProvider>(url);
  log.info("embedding provider: {}", provider->name());
  if (!opt.cache_dir.empty()) provider = std::make_shared<CachingEmbeddingProvider>(provider, opt.cache_dir);
  return provider;
}

FilterPolicy make_policy(const CorpusOptions& opt) {
  FilterPolicy p;
  p.kind = parse_filter_kind(opt.policy);
  p.lo = opt.lo;
  p.hi = opt.hi;
  p.n = opt.n;
  p.seed = opt.seed;
  p.validate();
  return p;
}

SplitSpec make_split_spec(const CorpusOptions& opt) {
  SplitSpec s;
  s.dev_size = opt.dev_size;
  s.test_size = opt.test_size;
  s.train_cap = opt.train_cap;
  s.seed = opt.seed;
  return s;
}

std::string pair_name(const CorpusOptions& opt) {
  return opt.pair.empty() ? opt.src_lang + "-" + opt.tgt_lang : opt.pair;
}

IngestResult ingest_logged(const std::string& path, spdlog::logger& log) {
  IngestResult r = ingest_bitext(path);
  log.info("read {} records from {} ({} malformed lines skipped)", r.records.size(), path, r.malformed);
  return r;
}

bool all_scored(const std::vector<ParallelRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const ParallelRecord& r) { return r.sim.has_value(); });
}

int run_corpus_score(const CorpusOptions& opt, std::ostream& out, std::ostream& err) {
  auto log = make_logger(opt.logging_file, err);
  auto in = ingest_logged(opt.input, *log);
  const auto provider = make_provider(opt, *log);
  const auto scored = score_pairs(std::move(in.records), *provider, opt.src_lang, opt.tgt_lang, opt.threads);
  write_tsv(opt.output, scored, true);
  out << "scored " << scored.size() << " pairs -> " << opt.output << '\n';
  return 0;
}

int run_corpus_filter(const CorpusOptions& opt, std::ostream& out, std::ostream& err) {
  auto log = make_logger(opt.logging_file, err);
  const auto in = ingest_logged(opt.input, *log);
  const FilterPolicy policy = make_policy(opt);
  const FilterResult result = apply_filter(in.records, policy);
  write_tsv(opt.output, result.kept, all_scored(result.kept) && !result.kept.empty());
  out << "kept " << result.kept.size() << " of " << in.records.size() << " pairs (policy " << to_string(policy.kind)
      << ") -> " << opt.output << '\n';
  return 0;
}

int run_corpus_split(const CorpusOptions& opt, std::ostream& out, std::ostream& err) {
  auto log = make_logger(opt.logging_file, err);
  const auto in = ingest_logged(opt.input, *log);
  const ResourceClass rc = parse_resource_class(opt.resource);
  const Splits splits = make_splits(in.records, make_split_spec(opt), rc);
  nlohmann::json manifest = {{"resource_class", to_string(rc)},
                             {"seeds", {{"split", opt.seed}}},
                             {"skip_counts", {{"malformed_lines", in.malformed}}}};
  write_splits(opt.output_dir, pair_name(opt), splits, std::move(manifest));
  out << "train=" << splits.train.size() << " dev=" << splits.dev.size() << " test=" << splits.test.size() << " -> "
      << opt.output_dir << '\n';
  return 0;
}

int run_corpus_build(const CorpusOptions& opt, std::ostream& out, std::ostream& err) {
  auto log = make_logger(opt.logging_file, err);
  auto in = ingest_logged(opt.input, *log);
  const FilterPolicy policy = make_policy(opt);
  const ResourceClass rc = parse_resource_class(opt.resource);
  const std::string pair = pair_name(opt);
  fs::create_directories(opt.output_dir);

  std::vector<ParallelRecord> records = std::move(in.records);
  if (policy.kind == FilterKind::sim) {
    const auto provider = make_provider(opt, *log);
    records = score_pairs(std::move(records), *provider, opt.src_lang, opt.tgt_lang, opt.threads);
    write_tsv(fs::path(opt.output_dir) / (pair + ".scored.tsv"), records, true);
    // Filter on the scores as written so a rerun from the scored file agrees.
    for (auto& r : records) r.sim = std::stod(format_sim(*r.sim));
  }
  const FilterResult filtered = apply_filter(records, policy);
  log->info("filter kept {} of {} records", filtered.kept.size(), records.size());
  const Splits splits = make_splits(filtered.kept, make_split_spec(opt), rc);

  nlohmann::json manifest = {
      {"resource_class", to_string(rc)},
      {"policy", policy.to_json()},
      {"seeds", {{"filter", policy.seed}, {"split", opt.seed}}},
      {"input", {{"lines", in.lines}, {"records", records.size()}}},
      {"skip_counts",
       {{"malformed_lines", in.malformed},
        {"filter_band", filtered.count(RejectReason::band)},
        {"filter_duplicate", filtered.count(RejectReason::duplicate)},
        {"filter_cap", filtered.count(RejectReason::cap)},
        {"filter_sample", filtered.count(RejectReason::sample)}}}};
  write_splits(opt.output_dir, pair, splits, std::move(manifest));
  out << "train=" << splits.train.size() << " dev=" << splits.dev.size() << " test=" << splits.test.size() << " -> "
      << opt.output_dir << '\n';
  return 0;
}

// --- Argument surface -------------------------------------------------------------

void add_generate_options(CLI::App* cmd, GenerateOptions& o) {
  cmd->add_option("-s,--seq_length", o.seq_length, "maximum target length, BOS and EOS included")->capture_default_str();
  cmd->add_option("-m,--search_method", o.search_method, "greedy, beam or sampling")
      ->check(CLI::IsMember({"greedy", "beam", "sampling"}))
      ->capture_default_str();
  cmd->add_option("--n_beam", o.n_beam, "beam width")->capture_default_str();
  cmd->add_option("-k,--top_k", o.top_k, "top-k sampling cutoff (0 disables)")->capture_default_str();
  cmd->add_option("-p,--top_p", o.top_p, "nucleus sampling mass (1 disables)")->capture_default_str();
  cmd->add_option("--no_repeat_ngram_size", o.no_repeat_ngram_size, "forbid repeating n-grams of this size")
      ->capture_default_str();
  cmd->add_option("-o,--max_outputs", o.max_outputs, "number of hypotheses to output")->capture_default_str();
  cmd->add_option("--length_penalty", o.length_penalty, "final beam ranking by score / length^alpha (0 = off)");
  cmd->add_option("--seed", o.seed, "sampling seed")->capture_default_str();
  cmd->add_option("-c,--cache_dir", o.cache_dir, "cache directory");
  cmd->add_option("-l,--logging_file", o.logging_file, "log file (default: stderr)");
  cmd->add_option("--model", o.model_path, "table model JSON file");
  cmd->add_option("--model_url", o.model_url, std::string("served model base URL (or ") + kModelUrlEnv + ")");
  cmd->add_option("--vocab", o.vocab_path, "vocabulary file for a served model");
}

void add_corpus_common(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("-i,--input", o.input, "input TSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("-l,--logging_file", o.logging_file, "log file (default: stderr)");
}

void add_embedding_options(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("--src_lang", o.src_lang, "source language code")->capture_default_str();
  cmd->add_option("--tgt_lang", o.tgt_lang, "target language code")->capture_default_str();
  cmd->add_option("--embed_url", o.embed_url, std::string("embedding service base URL (or ") + kEmbedUrlEnv + ")");
  cmd->add_option("-c,--cache_dir", o.cache_dir, "embedding cache directory");
  cmd->add_option("--threads", o.threads, "scoring worker threads")->capture_default_str();
}

void add_filter_options(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("--policy", o.policy, "sim, random or all")
      ->check(CLI::IsMember({"sim", "random", "all"}))
      ->capture_default_str();
  cmd->add_option("--lo", o.lo, "lower similarity bound (inclusive)")->capture_default_str();
  cmd->add_option("--hi", o.hi, "upper similarity bound (inclusive)")->capture_default_str();
  cmd->add_option("-n,--max_pairs", o.n, "selection cap")->capture_default_str();
}

void add_split_options(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("--output_dir", o.output_dir, "directory for split files")->required();
  cmd->add_option("--pair", o.pair, "file name prefix (default: <src_lang>-<tgt_lang>)");
  cmd->add_option("--resource", o.resource, "high or low")
      ->check(CLI::IsMember({"high", "low"}))
      ->capture_default_str();
  cmd->add_option("--dev_size", o.dev_size, "override the dev size");
  cmd->add_option("--test_size", o.test_size, "override the test size");
  cmd->add_option("--train_cap", o.train_cap, "override the train cap");
}

// CLI11 short names are single characters; "-bs" is rewritten to its long form.
void rewrite_multichar_shorts(std::vector<std::string>& args) {
  for (auto& a : args) {
    if (a == "-bs")
      a = "--batch_size";
    else if (a.rfind("-bs=", 0) == 0)
      a = "--batch_size=" + a.substr(4);
  }
}

}  // namespace

int run(std::vector<std::string> args, std::istream& in, std::ostream& out, std::ostream& err) {
  rewrite_multichar_shorts(args);

  CLI::App app{"Mutarjem machine translation toolkit", "mutarjem"};
  app.require_subcommand(1);

  GenerateOptions gen;
  TranslateOptions tr;
  ScoreOptions sc;
  CorpusOptions co;

  auto* interactive = app.add_subcommand("interactive", "translate sentences typed at a prompt");
  add_generate_options(interactive, gen);

  auto* translate = app.add_subcommand("translate", "translate a sentence or a file of sentences");
  add_generate_options(translate, gen);
  translate->add_option("-t,--text", tr.text, "text to translate");
  translate->add_option("-f,--input_file,--file", tr.input_file, "file with one source sentence per line")
      ->check(CLI::ExistingFile);
  translate->add_option("--batch_size", tr.batch_size, "sentences translated per iteration (also -bs)")
      ->capture_default_str();
  translate->add_option("--output_dir", tr.output_dir, "where <stem>.json is written (default: next to the input)");

  auto* score = app.add_subcommand("score", "corpus BLEU of a hypothesis file against a reference file");
  score->add_option("-p,--hyp_file", sc.hyp_file, "hypothesis file")->required();
  score->add_option("-g,--ref_file", sc.ref_file, "reference file")->required();

  auto* corpus = app.add_subcommand("corpus", "parallel-corpus scoring, filtering and splitting");
  corpus->require_subcommand(1);
  auto* c_score = corpus->add_subcommand("score", "append a similarity column to a bitext TSV");
  add_corpus_common(c_score, co);
  add_embedding_options(c_score, co);
  c_score->add_option("-o,--output", co.output, "scored TSV")->required();

  auto* c_filter = corpus->add_subcommand("filter", "apply a sim, random or all policy");
  add_corpus_common(c_filter, co);
  add_filter_options(c_filter, co);
  c_filter->add_option("--seed", co.seed, "sampling seed")->capture_default_str();
  c_filter->add_option("-o,--output", co.output, "kept TSV")->required();

  auto* c_split = corpus->add_subcommand("split", "write train/dev/test splits and a manifest");
  add_corpus_common(c_split, co);
  add_split_options(c_split, co);
  c_split->add_option("--src_lang", co.src_lang, "source language code")->capture_default_str();
  c_split->add_option("--tgt_lang", co.tgt_lang, "target language code")->capture_default_str();
  c_split->add_option("--seed", co.seed, "split seed")->capture_default_str();

  auto* c_build = corpus->add_subcommand("build", "ingest, score, filter and split in one run");
  add_corpus_common(c_build, co);
  add_embedding_options(c_build, co);
  add_filter_options(c_build, co);
  add_split_options(c_build, co);
  c_build->add_option("--seed", co.seed, "filter and split seed")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*interactive) return run_interactive(gen, in, out, err);
    if (*translate) return run_translate(gen, tr, out, err);
    if (*score) return run_score(sc, out);
    if (*c_score) return run_corpus_score(co, out, err);
    if (*c_filter) return run_corpus_filter(co, out, err);
    if (*c_split) return run_corpus_split(co, out, err);
    if (*c_build) return run_corpus_build(co, out, err);
  } catch (const std::exception& ex) {
    out << std::flush;
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mutarjem::cli
